#include "gpmm/lowrank.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>

namespace gpmm {

// ---------------------------------------------------------------------------
// DomainSampler

DomainSampler DomainSampler::surface(TriangleMesh mesh) {
    DomainSampler s;
    s.kind_ = Kind::Surface;
    s.mesh_ = std::make_shared<TriangleMesh>(std::move(mesh));
    if (s.mesh_->empty()) throw UsageError("surface sampler over an empty mesh");
    return s;
}

DomainSampler DomainSampler::image_box(ScalarImage image) {
    DomainSampler s;
    s.kind_ = Kind::ImageBox;
    s.image_ = std::make_shared<ScalarImage>(std::move(image));
    return s;
}

DomainSampler DomainSampler::explicit_points(std::vector<Point3> points) {
    if (points.empty()) throw UsageError("explicit sampler needs at least one point");
    DomainSampler s;
    s.kind_ = Kind::Explicit;
    s.points_ = std::move(points);
    return s;
}

DomainSampler DomainSampler::gaussian_1d(double s2) {
    if (!(s2 > 0.0)) throw UsageError("gaussian_1d sampler needs s2 > 0");
    DomainSampler s;
    s.kind_ = Kind::Gaussian1D;
    s.s2_ = s2;
    return s;
}

const TriangleMesh& DomainSampler::mesh() const {
    if (!mesh_) throw UsageError("sampler has no mesh");
    return *mesh_;
}

const ScalarImage& DomainSampler::image() const {
    if (!image_) throw UsageError("sampler has no image");
    return *image_;
}

std::vector<Point3> DomainSampler::draw(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw UsageError("sampler draw needs n >= 1");
    switch (kind_) {
        case Kind::Surface:
            return sample_surface_points(*mesh_, n, seed);
        case Kind::ImageBox: {
            const auto centers = image_->masked_voxel_centers();
            if (centers.empty()) throw UsageError("image mask leaves no voxels to sample");
            Rng rng = make_rng(seed);
            std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
            std::vector<Point3> pts(n);
            for (std::size_t i = 0; i < n; ++i) pts[i] = centers[pick(rng)];
            return pts;
        }
        case Kind::Explicit: {
            if (n == points_.size()) return points_;
            if (n > points_.size())
                throw UsageError("explicit sampler holds fewer points than requested");
            std::vector<Point3> pts = points_;
            Rng rng = make_rng(seed);
            std::shuffle(pts.begin(), pts.end(), rng);
            pts.resize(n);
            return pts;
        }
        case Kind::Gaussian1D: {
            Rng rng = make_rng(seed);
            std::normal_distribution<double> normal(0.0, std::sqrt(s2_));
            std::vector<Point3> pts(n);
            for (std::size_t i = 0; i < n; ++i) pts[i] = Point3(normal(rng), 0.0, 0.0);
            return pts;
        }
    }
    throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Gram assembly and eigensolvers

MatrixXd assemble_gram(const MatrixKernel& kernel, const std::vector<Point3>& points) {
    const std::size_t n = points.size();
    MatrixXd K(3 * n, 3 * n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t j = i; j < n; ++j) {
                const Matrix3 block = kernel(points[i], points[j]);
                K.block<3, 3>(3 * i, 3 * j) = block;
                if (j != i) K.block<3, 3>(3 * j, 3 * i) = block.transpose();
            }
        }
    });
    return K;
}

EigResult dense_symmetric_eig(const MatrixXd& K, int r) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(K);
    if (es.info() != Eigen::Success) throw NumericError("dense eigendecomposition failed");
    const int d = static_cast<int>(K.rows());
    r = std::min(r, d);
    EigResult result;
    result.values.resize(r);
    result.vectors.resize(d, r);
    for (int i = 0; i < r; ++i) {
        result.values[i] = es.eigenvalues()[d - 1 - i];
        result.vectors.col(i) = es.eigenvectors().col(d - 1 - i);
    }
    return result;
}

namespace {

MatrixXd thin_q(const MatrixXd& Y) {
    Eigen::HouseholderQR<MatrixXd> qr(Y);
    return qr.householderQ() * MatrixXd::Identity(Y.rows(), Y.cols());
}

}  // namespace

EigResult randomized_symmetric_eig(const MatrixXd& K, int r, const RsvdOptions& opts, Rng& rng) {
    const int d = static_cast<int>(K.rows());
    const int l = std::min(d, r + opts.oversampling);
    if (l >= d) return dense_symmetric_eig(K, r);

    MatrixXd omega(d, l);
    {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int j = 0; j < l; ++j)
            for (int i = 0; i < d; ++i) omega(i, j) = normal(rng);
    }
    MatrixXd Q = thin_q(K * omega);
    for (int p = 0; p < opts.power_iterations; ++p) Q = thin_q(K * Q);

    MatrixXd B = Q.transpose() * K * Q;
    B = 0.5 * (B + B.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(B);
    if (es.info() != Eigen::Success) throw NumericError("randomized eigendecomposition failed");

    EigResult result;
    result.values.resize(r);
    result.vectors.resize(d, r);
    for (int i = 0; i < r; ++i) {
        result.values[i] = es.eigenvalues()[l - 1 - i];
        result.vectors.col(i) = Q * es.eigenvectors().col(l - 1 - i);
    }
    return result;
}

Eigen::LLT<MatrixXd> cholesky_with_jitter(const MatrixXd& K) {
    Eigen::LLT<MatrixXd> llt(K);
    if (llt.info() == Eigen::Success) return llt;
    double jitter = 1e-10 * K.trace();
    if (!(jitter > 0.0)) jitter = 1e-12;
    for (int attempt = 0; attempt < 3; ++attempt) {
        MatrixXd J = K;
        J.diagonal().array() += jitter;
        llt.compute(J);
        if (llt.info() == Eigen::Success) return llt;
        jitter *= 10.0;
    }
    throw NumericError("Cholesky failed even after jitter escalation (kernel not PSD?)");
}

// ---------------------------------------------------------------------------
// LowRankGP

LowRankGP::LowRankGP(MatrixKernelPtr kernel, MeanFunction base_mean, std::vector<Point3> points,
                     VectorXd eigenvalues, VectorXd lambda_mat, MatrixXd extension,
                     VectorXd mean_coefs, double total_variance)
    : kernel_(std::move(kernel)), base_mean_(std::move(base_mean)), points_(std::move(points)),
      eigenvalues_(std::move(eigenvalues)), lambda_mat_(std::move(lambda_mat)),
      extension_(std::move(extension)), mean_coefs_(std::move(mean_coefs)),
      total_variance_(total_variance) {
    for (int i = 1; i < eigenvalues_.size(); ++i) {
        if (eigenvalues_[i] > eigenvalues_[i - 1] + 1e-12 * eigenvalues_[0])
            throw NumericError("eigenvalues not in descending order");
    }
    if (eigenvalues_.size() > 0 && !(eigenvalues_[eigenvalues_.size() - 1] > 0.0))
        throw NumericError("nonpositive eigenvalue in low-rank model");
}

Eigen::Matrix<double, 3, Eigen::Dynamic> LowRankGP::kernel_row(const Point3& x) const {
    const std::size_t n = points_.size();
    Eigen::Matrix<double, 3, Eigen::Dynamic> row(3, 3 * n);
    for (std::size_t l = 0; l < n; ++l) row.middleCols<3>(3 * l) = (*kernel_)(x, points_[l]);
    return row;
}

Vector3 LowRankGP::mean(const Point3& x) const {
    Vector3 m = eval_mean(base_mean_, x);
    if (mean_coefs_.size() > 0) m += kernel_row(x) * mean_coefs_;
    return m;
}

Eigen::Matrix<double, 3, Eigen::Dynamic> LowRankGP::basis(const Point3& x) const {
    return kernel_row(x) * extension_;
}

Vector3 LowRankGP::evaluate(const VectorXd& alpha, const Point3& x) const {
    if (alpha.size() != eigenvalues_.size())
        throw UsageError("coefficient length does not match model rank");
    const auto row = kernel_row(x);
    Vector3 u = eval_mean(base_mean_, x);
    if (mean_coefs_.size() > 0) u += row * mean_coefs_;
    u += row * (extension_ * (eigenvalues_.array().sqrt() * alpha.array()).matrix());
    return u;
}

VectorXd LowRankGP::mean_vector(const std::vector<Point3>& pts) const {
    VectorXd m(3 * pts.size());
    parallel_for(pts.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) m.segment<3>(3 * i) = mean(pts[i]);
    });
    return m;
}

MatrixXd LowRankGP::basis_matrix(const std::vector<Point3>& pts) const {
    MatrixXd phi(3 * pts.size(), rank());
    parallel_for(pts.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) phi.middleRows<3>(3 * i) = basis(pts[i]);
    });
    return phi;
}

LowRankGP LowRankGP::recombined(const MatrixXd& combination, const VectorXd& variances,
                                const VectorXd& extra_mean_coefs) const {
    if (combination.rows() != rank() || combination.cols() != variances.size())
        throw UsageError("recombination shape mismatch");

    MatrixXd new_ext = extension_ * combination;
    VectorXd new_vars = variances;
    // renormalize each new basis function to unit empirical norm on the
    // Nystrom points; phi values there are sqrt(n) * U columns
    const double n = static_cast<double>(points_.size());
    MatrixXd u_cols = extension_;  // recover U columns: W_i * lambda_mat_i / sqrt(n)
    for (int i = 0; i < rank(); ++i) u_cols.col(i) *= lambda_mat_[i] / std::sqrt(n);
    const MatrixXd new_u = u_cols * combination;

    std::vector<int> keep;
    for (int j = 0; j < new_vars.size(); ++j) {
        const double norm = new_u.col(j).norm();
        if (norm > 1e-14 && new_vars[j] > 0.0) {
            new_ext.col(j) /= norm;
            new_vars[j] *= norm * norm;
            keep.push_back(j);
        }
    }
    std::sort(keep.begin(), keep.end(),
              [&](int a, int b) { return new_vars[a] > new_vars[b]; });

    MatrixXd ext(extension_.rows(), static_cast<Eigen::Index>(keep.size()));
    VectorXd vars(static_cast<Eigen::Index>(keep.size()));
    VectorXd lmat(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
        ext.col(j) = new_ext.col(keep[j]);
        vars[j] = new_vars[keep[j]];
        lmat[j] = vars[j] * n;  // matrix-scale bookkeeping for serialization
    }

    VectorXd mean_coefs = mean_coefs_.size() > 0 ? mean_coefs_ : VectorXd::Zero(extension_.rows());
    if (extra_mean_coefs.size() > 0) {
        if (extra_mean_coefs.size() != rank())
            throw UsageError("mean coefficient length does not match rank");
        mean_coefs += extension_ * (eigenvalues_.array().sqrt() * extra_mean_coefs.array()).matrix();
    }
    return LowRankGP(kernel_, base_mean_, points_, std::move(vars), std::move(lmat),
                     std::move(ext), std::move(mean_coefs), total_variance_);
}

// ---------------------------------------------------------------------------
// Builder

LowRankGP build_lowrank(MatrixKernelPtr kernel, MeanFunction mean, const DomainSampler& sampler,
                        std::size_t n, int r, const RsvdOptions& rsvd, std::uint64_t seed) {
    if (n < 1) throw UsageError("build_lowrank needs n >= 1");
    if (r < 1) throw UsageError("build_lowrank needs rank >= 1");
    if (static_cast<std::size_t>(r) > 3 * n)
        throw UsageError("requested rank exceeds 3n degrees of freedom");

    const std::vector<Point3> points = sampler.draw(n, seed);
    const MatrixXd K = assemble_gram(*kernel, points);

    Rng rng = make_rng(seed + 1);
    const EigResult eig = randomized_symmetric_eig(K, r, rsvd, rng);

    // drop near-zero eigenvalues before the Nystrom division
    const double cutoff = 1e-10 * std::max(eig.values[0], 0.0);
    int kept = 0;
    while (kept < eig.values.size() && eig.values[kept] > cutoff && eig.values[kept] > 0.0)
        ++kept;
    if (kept == 0) throw NumericError("kernel has no numerically positive eigenvalues");

    const double nd = static_cast<double>(n);
    VectorXd eigenvalues(kept), lambda_mat(kept);
    MatrixXd extension(K.rows(), kept);
    for (int i = 0; i < kept; ++i) {
        const double lmat = eig.values[i];
        const double norm = eig.vectors.col(i).norm();
        lambda_mat[i] = lmat;
        eigenvalues[i] = lmat / nd * norm * norm;
        extension.col(i) = eig.vectors.col(i) * (std::sqrt(nd) / (lmat * norm));
    }

    const double var = total_variance(*kernel, points);
    return LowRankGP(std::move(kernel), std::move(mean), points, std::move(eigenvalues),
                     std::move(lambda_mat), std::move(extension), VectorXd(), var);
}

double total_variance(const MatrixKernel& kernel, const std::vector<Point3>& points) {
    if (points.empty()) throw UsageError("total_variance needs at least one point");
    // constant-integrand shortcut for stationary kernels, probed on a spread
    const double first = kernel(points[0], points[0]).trace();
    const std::size_t stride = std::max<std::size_t>(1, points.size() / 16);
    bool stationary = true;
    for (std::size_t i = 0; i < points.size(); i += stride) {
        if (std::abs(kernel(points[i], points[i]).trace() - first) >
            1e-12 * std::max(1.0, std::abs(first))) {
            stationary = false;
            break;
        }
    }
    if (stationary) return first;
    double sum = 0.0;
    for (const auto& p : points) sum += kernel(p, p).trace();
    return sum / static_cast<double>(points.size());
}

double total_variance(const MatrixKernel& kernel, const DomainSampler& sampler, std::size_t n,
                      std::uint64_t seed) {
    return total_variance(kernel, sampler.draw(n, seed));
}

int choose_rank(const VectorXd& eigenvalues, double total_var, double p) {
    if (!(p > 0.0 && p < 1.0)) throw UsageError("variance fraction must be in (0, 1)");
    if (!(total_var > 0.0)) throw UsageError("total variance must be positive");
    double acc = 0.0;
    for (int m = 0; m < eigenvalues.size(); ++m) {
        acc += eigenvalues[m];
        if (acc / total_var > p) return m + 1;
    }
    throw NumericError("insufficient spectrum: available eigenvalues cover " +
                       std::to_string(acc / total_var) + " of the variance, requested " +
                       std::to_string(p));
}

VectorXd sample_coefficients(int r, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return standard_normal(r, rng);
}

double eigenvalue_sup_bound(double kappa, double tau, std::size_t n) {
    if (!(kappa > 0.0) || !(tau > 0.0) || n < 1)
        throw UsageError("eigenvalue_sup_bound needs kappa, tau > 0 and n >= 1");
    return 2.0 * std::sqrt(2.0) * kappa * std::sqrt(tau) / std::sqrt(static_cast<double>(n));
}

EigenfunctionBound eigenfunction_bound(double kappa, double tau, std::size_t n, double gap) {
    if (!(gap > 0.0)) throw UsageError("eigenfunction_bound needs a positive spectral gap");
    const double threshold = 128.0 * kappa * kappa * tau / (gap * gap);
    EigenfunctionBound b;
    b.min_n = static_cast<std::size_t>(std::floor(threshold)) + 1;
    b.projection_bound = 32.0 * kappa * kappa * tau / (gap * gap * static_cast<double>(n));
    return b;
}

double projection_error_experiment(const LowRankGP& gp, const DomainSampler& sampler,
                                   std::size_t n_probes, int trials, std::uint64_t seed) {
    if (trials < 1) throw UsageError("projection experiment needs trials >= 1");
    const std::vector<Point3> pts = sampler.draw(n_probes, seed);
    const MatrixXd K = assemble_gram(*gp.kernel(), pts);
    const auto llt = cholesky_with_jitter(K);
    const MatrixXd L = llt.matrixL();

    MatrixXd phi = gp.basis_matrix(pts);
    for (int i = 0; i < gp.rank(); ++i) phi.col(i) *= std::sqrt(gp.eigenvalues()[i]);
    const Eigen::ColPivHouseholderQR<MatrixXd> qr(phi);

    Rng rng = make_rng(seed + 1);
    double err = 0.0;
    for (int t = 0; t < trials; ++t) {
        const VectorXd z = standard_normal(static_cast<int>(K.rows()), rng);
        const VectorXd resid = L * z;  // sample minus mean
        const VectorXd proj = phi * qr.solve(resid);
        err += (resid - proj).squaredNorm() / resid.squaredNorm();
    }
    return err / trials;
}

}  // namespace gpmm
