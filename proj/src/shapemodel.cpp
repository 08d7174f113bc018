#include "gpmm/shapemodel.hpp"

#include "gpmm/model_io.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace gpmm {

VectorXd DiscreteModel::instance(const VectorXd& alpha) const {
    if (alpha.size() != variances.size())
        throw UsageError("coefficient length does not match model rank");
    return mean + basis * alpha;
}

TriangleMesh DiscreteModel::instance_mesh(const VectorXd& alpha,
                                          const TriangleMesh& topology) const {
    if (topology.vertices().size() != points.size())
        throw UsageError("mesh topology does not match the model points");
    const VectorXd s = instance(alpha);
    std::vector<Point3> verts(points.size());
    for (std::size_t i = 0; i < verts.size(); ++i) verts[i] = s.segment<3>(3 * i);
    return TriangleMesh(std::move(verts), topology.triangles());
}

namespace {

// largest-magnitude entry of each column made positive
void fix_column_signs(MatrixXd& basis) {
    for (int j = 0; j < basis.cols(); ++j) {
        int at = 0;
        basis.col(j).cwiseAbs().maxCoeff(&at);
        if (basis(at, j) < 0.0) basis.col(j) = -basis.col(j);
    }
}

}  // namespace

DiscreteModel discretize(const LowRankGP& gp, const std::vector<Point3>& points) {
    if (points.empty()) throw UsageError("discretize needs at least one point");
    DiscreteModel model;
    model.points = points;
    model.variances = gp.eigenvalues();

    // the discrete mean carries the warped positions' offsets only; stacked
    // per the x,y,z-interleaved layout
    model.mean = gp.mean_vector(points);
    for (std::size_t i = 0; i < points.size(); ++i) model.mean.segment<3>(3 * i) += points[i];

    // keep the model's eigenfunction signs so instance(alpha) tracks
    // evaluate(gp, alpha) exactly; only PCA-built bases get sign-fixed
    model.basis = gp.basis_matrix(points);
    for (int j = 0; j < model.basis.cols(); ++j)
        model.basis.col(j) *= std::sqrt(gp.eigenvalues()[j]);
    return model;
}

DiscreteModel build_pca(const std::vector<Point3>& reference_points,
                        const std::vector<std::vector<Vector3>>& fields) {
    const std::size_t n = fields.size();
    if (n < 2) throw UsageError("PCA needs at least 2 examples");
    const std::size_t N = reference_points.size();
    if (N == 0) throw UsageError("PCA needs reference points");
    for (const auto& f : fields)
        if (f.size() != N) throw UsageError("deformation fields disagree on the point set");

    // shape vectors s_i = x + u_i, stacked
    MatrixXd S(3 * N, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < N; ++j)
            S.block<3, 1>(3 * j, i) = reference_points[j] + fields[i][j];

    const VectorXd mean = S.rowwise().mean();
    MatrixXd centered = S.colwise() - mean;

    // Gram trick: eigenvectors of (1/(n-1)) D^T D lift to covariance
    // eigenvectors D v / |D v|
    const MatrixXd gram = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");

    const double cutoff = 1e-10 * std::max(es.eigenvalues().maxCoeff(), 0.0);
    std::vector<int> keep;
    for (int i = static_cast<int>(n) - 1; i >= 0; --i)
        if (es.eigenvalues()[i] > cutoff && es.eigenvalues()[i] > 0.0) keep.push_back(i);

    DiscreteModel model;
    model.points = reference_points;
    model.mean = mean;
    model.variances.resize(static_cast<Eigen::Index>(keep.size()));
    model.basis.resize(3 * static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const double variance = es.eigenvalues()[keep[j]];
        model.variances[j] = variance;
        VectorXd direction = centered * es.eigenvectors().col(keep[j]);
        direction /= direction.norm();
        model.basis.col(j) = std::sqrt(variance) * direction;
    }
    fix_column_signs(model.basis);
    return model;
}

void save_discrete_model(const DiscreteModel& model, const std::string& path) {
    nlohmann::json manifest;
    manifest["format"] = "gpmm-discrete-model";
    manifest["version"] = 1;
    manifest["points"] = model.points.size();
    manifest["rank"] = model.rank();
    manifest["layout"] = "point-major xyz-interleaved, basis column-major";
    const std::string base = std::filesystem::path(path).filename().string();
    manifest["points_file"] = base + ".points";
    manifest["mean_file"] = base + ".mean";
    manifest["basis_file"] = base + ".basis";
    manifest["variances_file"] = base + ".var";
    {
        std::ofstream out(path);
        if (!out) throw UsageError("cannot write model manifest: " + path);
        out << manifest.dump(2) << '\n';
    }
    std::vector<double> pts(3 * model.points.size());
    for (std::size_t i = 0; i < model.points.size(); ++i)
        for (int k = 0; k < 3; ++k) pts[3 * i + k] = model.points[i][k];
    write_doubles(path + ".points", pts.data(), pts.size());
    write_doubles(path + ".mean", model.mean.data(), model.mean.size());
    write_doubles(path + ".basis", model.basis.data(), model.basis.size());
    write_doubles(path + ".var", model.variances.data(), model.variances.size());
}

DiscreteModel load_discrete_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open model manifest: " + path);
    nlohmann::json manifest;
    in >> manifest;
    if (manifest.value("format", "") != "gpmm-discrete-model")
        throw UsageError(path + " is not a discrete model manifest");
    const std::string dir = std::filesystem::path(path).parent_path().string();
    auto sidecar = [&](const char* key) {
        const auto name = manifest.at(key).get<std::string>();
        const auto near = std::filesystem::path(dir) / name;
        return read_doubles(std::filesystem::exists(near) ? near.string() : name);
    };
    DiscreteModel model;
    const auto pts = sidecar("points_file");
    model.points.resize(pts.size() / 3);
    for (std::size_t i = 0; i < model.points.size(); ++i)
        model.points[i] = Point3(pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]);
    const auto mean = sidecar("mean_file");
    model.mean = Eigen::Map<const VectorXd>(mean.data(), mean.size());
    const auto var = sidecar("variances_file");
    model.variances = Eigen::Map<const VectorXd>(var.data(), var.size());
    const auto basis = sidecar("basis_file");
    if (basis.size() != mean.size() * var.size())
        throw UsageError("basis sidecar has unexpected size");
    model.basis = Eigen::Map<const MatrixXd>(basis.data(), mean.size(), var.size());
    return model;
}

double specificity(const DiscreteModel& model, const TriangleMesh& topology,
                   const std::vector<TriangleMesh>& training, std::size_t n_samples,
                   std::uint64_t seed) {
    if (training.empty()) throw UsageError("specificity needs a nonempty training set");
    if (n_samples == 0) throw UsageError("specificity needs n_samples >= 1");
    Rng rng = make_rng(seed);
    double acc = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        const VectorXd alpha = standard_normal(model.rank(), rng);
        const TriangleMesh sample = model.instance_mesh(alpha, topology);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& example : training) {
            const auto d = surface_distance_symmetric(sample, example, 1000, seed + s);
            best = std::min(best, d.mean);
        }
        acc += best;
    }
    return acc / static_cast<double>(n_samples);
}

double compactness(const DiscreteModel& model, int m) {
    if (m < 0) throw UsageError("compactness needs m >= 0");
    m = std::min(m, model.rank());
    return model.variances.head(m).sum();
}

double generalization(const TriangleMesh& held_out, const Fitter& fitter,
                      std::size_t n_samples, std::uint64_t seed) {
    const TriangleMesh fitted = fitter(held_out);
    return surface_distance_symmetric(fitted, held_out, n_samples, seed).mean;
}

}  // namespace gpmm
