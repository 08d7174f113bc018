#include "gpmm/kernels.hpp"

#include "gpmm/mesh.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gpmm {

namespace {

class ScalarGauss final : public ScalarKernel {
public:
    explicit ScalarGauss(double sigma) : inv_sigma_sq_(1.0 / (sigma * sigma)) {
        if (!(sigma > 0.0)) throw UsageError("sgauss: sigma must be positive");
    }
    double operator()(const Point3& x, const Point3& y) const override {
        return std::exp(-(x - y).squaredNorm() * inv_sigma_sq_);
    }

private:
    double inv_sigma_sq_;
};

class ScalarConst final : public ScalarKernel {
public:
    explicit ScalarConst(double v) : value_(v) {}
    double operator()(const Point3&, const Point3&) const override { return value_; }

private:
    double value_;
};

class GaussKernel final : public MatrixKernel {
public:
    GaussKernel(double s, double sigma) : s_(s), inv_sigma_sq_(1.0 / (sigma * sigma)) {
        if (!(s > 0.0)) throw UsageError("gauss: scale s must be positive");
        if (!(sigma > 0.0)) throw UsageError("gauss: sigma must be positive");
    }
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        const double g = s_ * std::exp(-(x - y).squaredNorm() * inv_sigma_sq_);
        return Matrix3::Identity() * g;
    }

private:
    double s_, inv_sigma_sq_;
};

class DiagKernel final : public MatrixKernel {
public:
    DiagKernel(const Matrix3& A, ScalarKernelPtr l) : A_(A), l_(std::move(l)) {
        if ((A_ - A_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + A_.cwiseAbs().maxCoeff()))
            throw UsageError("diag: A must be symmetric");
        Eigen::SelfAdjointEigenSolver<Matrix3> es(A_);
        if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
            throw UsageError("diag: A must be positive semi-definite");
    }
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        return A_ * (*l_)(x, y);
    }

private:
    Matrix3 A_;
    ScalarKernelPtr l_;
};

class SumKernel final : public MatrixKernel {
public:
    explicit SumKernel(std::vector<MatrixKernelPtr> terms) : terms_(std::move(terms)) {
        if (terms_.empty()) throw UsageError("sum: needs at least one operand");
    }
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        Matrix3 k = Matrix3::Zero();
        for (const auto& t : terms_) k += (*t)(x, y);
        return k;
    }

private:
    std::vector<MatrixKernelPtr> terms_;
};

class ScaleKernel final : public MatrixKernel {
public:
    ScaleKernel(double c, MatrixKernelPtr k) : c_(c), k_(std::move(k)) {
        if (!(c > 0.0)) throw UsageError("scale: factor must be positive");
    }
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        return c_ * (*k_)(x, y);
    }

private:
    double c_;
    MatrixKernelPtr k_;
};

class ProductKernel final : public MatrixKernel {
public:
    ProductKernel(MatrixKernelPtr a, MatrixKernelPtr b) : a_(std::move(a)), b_(std::move(b)) {}
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        return (*a_)(x, y).cwiseProduct((*b_)(x, y));
    }

private:
    MatrixKernelPtr a_, b_;
};

class AnisotropicKernel final : public MatrixKernel {
public:
    AnisotropicKernel(const Matrix3& R, const Vector3& S, MatrixKernelPtr inner)
        : inner_(std::move(inner)) {
        if ((R.transpose() * R - Matrix3::Identity()).cwiseAbs().maxCoeff() > 1e-8)
            throw UsageError("anisotropic: R is not orthonormal");
        if (!(S.minCoeff() > 0.0)) throw UsageError("anisotropic: S entries must be positive");
        rs_ = R * S.asDiagonal();
    }
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        return rs_ * (*inner_)(x, y) * rs_.transpose();
    }

private:
    Matrix3 rs_;
    MatrixKernelPtr inner_;
};

class LocalizeKernel final : public MatrixKernel {
public:
    LocalizeKernel(WeightFunction w, MatrixKernelPtr inner)
        : w_(std::move(w)), inner_(std::move(inner)) {}
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        return w_(x) * w_(y) * (*inner_)(x, y);
    }

private:
    WeightFunction w_;
    MatrixKernelPtr inner_;
};

class SpatiallyVaryingKernel final : public MatrixKernel {
public:
    explicit SpatiallyVaryingKernel(std::vector<KernelRegion> regions)
        : regions_(std::move(regions)) {
        if (regions_.empty()) throw UsageError("spatially_varying: needs at least one region");
    }
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        Matrix3 k = Matrix3::Zero();
        double wx_sum = 0.0, wy_sum = 0.0;
        for (const auto& region : regions_) {
            const double wx = region.weight(x);
            const double wy = region.weight(y);
            wx_sum += wx;
            wy_sum += wy;
            if (wx != 0.0 && wy != 0.0) k += wx * wy * (*region.kernel)(x, y);
        }
        if (std::abs(wx_sum - 1.0) > 1e-6 || std::abs(wy_sum - 1.0) > 1e-6)
            throw UsageError("spatially_varying: weights do not form a partition of unity");
        return k;
    }

private:
    std::vector<KernelRegion> regions_;
};

class EmpiricalKernel final : public MatrixKernel {
public:
    explicit EmpiricalKernel(DeformationFieldSetPtr set) : set_(std::move(set)) {}
    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        const int jx = set_->nearest_reference(x);
        const int jy = set_->nearest_reference(y);
        const double norm = 1.0 / static_cast<double>(set_->field_count() - 1);
        return norm * set_->centered_at(jx) * set_->centered_at(jy).transpose();
    }

private:
    DeformationFieldSetPtr set_;
};

}  // namespace

ScalarKernelPtr scalar_gauss(double sigma) { return std::make_shared<ScalarGauss>(sigma); }
ScalarKernelPtr scalar_const(double value) { return std::make_shared<ScalarConst>(value); }

MatrixKernelPtr gauss_kernel(double s, double sigma) {
    return std::make_shared<GaussKernel>(s, sigma);
}

MatrixKernelPtr diag_kernel(const Matrix3& A, ScalarKernelPtr l) {
    return std::make_shared<DiagKernel>(A, std::move(l));
}

MatrixKernelPtr sum_kernel(std::vector<MatrixKernelPtr> terms) {
    return std::make_shared<SumKernel>(std::move(terms));
}

MatrixKernelPtr scale_kernel(double c, MatrixKernelPtr k) {
    return std::make_shared<ScaleKernel>(c, std::move(k));
}

MatrixKernelPtr product_kernel(MatrixKernelPtr a, MatrixKernelPtr b) {
    return std::make_shared<ProductKernel>(std::move(a), std::move(b));
}

MatrixKernelPtr anisotropic_kernel(const Matrix3& R, const Vector3& S, MatrixKernelPtr inner) {
    return std::make_shared<AnisotropicKernel>(R, S, std::move(inner));
}

MatrixKernelPtr multiscale_kernel(double s, double sigma, int levels) {
    if (levels < 1) throw UsageError("multiscale: levels must be >= 1");
    std::vector<MatrixKernelPtr> terms;
    terms.reserve(levels);
    for (int i = 1; i <= levels; ++i)
        terms.push_back(gauss_kernel(s / i, sigma / i));
    return sum_kernel(std::move(terms));
}

MatrixKernelPtr localize_kernel(WeightFunction w, MatrixKernelPtr inner) {
    return std::make_shared<LocalizeKernel>(std::move(w), std::move(inner));
}

MatrixKernelPtr spatially_varying_kernel(std::vector<KernelRegion> regions) {
    return std::make_shared<SpatiallyVaryingKernel>(std::move(regions));
}

WeightFunction weight_const(double c) {
    return [c](const Point3&) { return c; };
}

WeightFunction weight_plane(const Vector3& normal, double offset, double width) {
    const Vector3 n = normal.normalized();
    if (width == 0.0) {
        return [n, offset](const Point3& x) { return n.dot(x) >= offset ? 1.0 : 0.0; };
    }
    return [n, offset, width](const Point3& x) {
        return 1.0 / (1.0 + std::exp(-(n.dot(x) - offset) / width));
    };
}

WeightFunction weight_complement(WeightFunction w) {
    return [w = std::move(w)](const Point3& x) { return 1.0 - w(x); };
}

// ---------------------------------------------------------------------------
// Deformation field sets

struct DeformationFieldSet::KdTree {
    struct Node {
        int axis = -1;      // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;
    };
    std::vector<Node> nodes;
    std::vector<int> order;
    const std::vector<Point3>* points = nullptr;

    int build(int begin, int end) {
        const int id = static_cast<int>(nodes.size());
        nodes.emplace_back();
        if (end - begin <= 8) {
            nodes[id].begin = begin;
            nodes[id].end = end;
            return id;
        }
        Point3 lo = Point3::Constant(std::numeric_limits<double>::infinity());
        Point3 hi = -lo;
        for (int i = begin; i < end; ++i) {
            lo = lo.cwiseMin((*points)[order[i]]);
            hi = hi.cwiseMax((*points)[order[i]]);
        }
        int axis = 0;
        (hi - lo).maxCoeff(&axis);
        const int mid = (begin + end) / 2;
        std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                         [&](int a, int b) {
                             const double pa = (*points)[a][axis], pb = (*points)[b][axis];
                             if (pa != pb) return pa < pb;
                             return a < b;
                         });
        nodes[id].axis = axis;
        nodes[id].split = (*points)[order[mid]][axis];
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes[id].left = l;
        nodes[id].right = r;
        return id;
    }

    void search(int id, const Point3& q, int& best, double& best_sq) const {
        const Node& node = nodes[id];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int p = order[i];
                const double d = (q - (*points)[p]).squaredNorm();
                if (d < best_sq || (d == best_sq && p < best)) {
                    best_sq = d;
                    best = p;
                }
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search(near, q, best, best_sq);
        if (delta * delta <= best_sq) search(far, q, best, best_sq);
    }
};

DeformationFieldSet::DeformationFieldSet(std::vector<Point3> reference_points,
                                         std::vector<std::vector<Vector3>> fields)
    : points_(std::move(reference_points)), n_fields_(fields.size()) {
    if (n_fields_ < 2) throw UsageError("deformation set needs at least 2 fields");
    if (points_.empty()) throw UsageError("deformation set has no reference points");
    const std::size_t N = points_.size();
    for (const auto& f : fields)
        if (f.size() != N) throw UsageError("deformation fields disagree on the point set");

    means_.resize(3, static_cast<Eigen::Index>(N));
    means_.setZero();
    for (const auto& f : fields)
        for (std::size_t j = 0; j < N; ++j) means_.col(j) += f[j];
    means_ /= static_cast<double>(n_fields_);

    centered_.resize(3 * static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(n_fields_));
    for (std::size_t i = 0; i < n_fields_; ++i)
        for (std::size_t j = 0; j < N; ++j)
            centered_.block<3, 1>(3 * j, i) = fields[i][j] - means_.col(j);

    tree_ = std::make_unique<KdTree>();
    tree_->points = &points_;
    tree_->order.resize(N);
    std::iota(tree_->order.begin(), tree_->order.end(), 0);
    tree_->build(0, static_cast<int>(N));
}

DeformationFieldSet::~DeformationFieldSet() = default;

int DeformationFieldSet::nearest_reference(const Point3& x) const {
    int best = std::numeric_limits<int>::max();
    double best_sq = std::numeric_limits<double>::infinity();
    tree_->search(0, x, best, best_sq);
    return best;
}

Vector3 DeformationFieldSet::mean_at(int point_index) const { return means_.col(point_index); }

Eigen::Matrix<double, 3, Eigen::Dynamic> DeformationFieldSet::centered_at(int point_index) const {
    return centered_.block(3 * point_index, 0, 3, centered_.cols());
}

DeformationFieldSetPtr load_deformation_set(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw UsageError("cannot open deformation-set manifest: " + manifest_path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("bad JSON in " + manifest_path + ": " + e.what());
    }
    if (!manifest.contains("reference") || !manifest.contains("fields"))
        throw UsageError(manifest_path + ": manifest needs 'reference' and 'fields'");

    const auto base = std::filesystem::path(manifest_path).parent_path();
    const auto ref_path = base / manifest["reference"].get<std::string>();
    const TriangleMesh reference = read_ply(ref_path.string());

    std::vector<std::vector<Vector3>> fields;
    std::vector<Point3> ref_points;
    for (const auto& entry : manifest["fields"]) {
        const auto csv_path = base / entry.get<std::string>();
        std::ifstream csv(csv_path);
        if (!csv) throw UsageError("cannot open displacement CSV: " + csv_path.string());
        std::vector<Point3> pts;
        std::vector<Vector3> disp;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(csv, line)) {
            ++lineno;
            if (line.empty()) continue;
            if (lineno == 1 && line.find("dx") != std::string::npos) continue;  // header
            std::istringstream ls(line);
            double v[6];
            char comma;
            ls >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3] >> comma >> v[4] >>
                comma >> v[5];
            if (!ls)
                throw UsageError(csv_path.string() + ":" + std::to_string(lineno) +
                                 ": expected x,y,z,dx,dy,dz");
            pts.emplace_back(v[0], v[1], v[2]);
            disp.emplace_back(v[3], v[4], v[5]);
        }
        if (ref_points.empty()) {
            ref_points = pts;
        } else if (pts.size() != ref_points.size()) {
            throw UsageError(csv_path.string() + ": point count differs between fields");
        } else {
            for (std::size_t j = 0; j < pts.size(); ++j)
                if ((pts[j] - ref_points[j]).norm() > 1e-9)
                    throw UsageError(csv_path.string() + ": reference points differ between fields");
        }
        fields.push_back(std::move(disp));
    }
    if (ref_points.size() != reference.vertices().size())
        throw UsageError(manifest_path + ": field points do not match the reference mesh");
    return std::make_shared<DeformationFieldSet>(std::move(ref_points), std::move(fields));
}

MatrixKernelPtr empirical_kernel(DeformationFieldSetPtr set) {
    return std::make_shared<EmpiricalKernel>(std::move(set));
}

MeanFunction empirical_mean(DeformationFieldSetPtr set) {
    return [set = std::move(set)](const Point3& x) -> Vector3 {
        return set->mean_at(set->nearest_reference(x));
    };
}

}  // namespace gpmm
