#pragma once

#include "gpmm/image.hpp"
#include "gpmm/kernels.hpp"
#include "gpmm/mesh.hpp"

#include <Eigen/Cholesky>

#include <optional>

namespace gpmm {

/// Sampling measure rho on the domain. Surface sampling is area-uniform,
/// image sampling is uniform over masked voxel centers, gaussian_1d draws
/// N(0, s2) points on the x axis.
class DomainSampler {
public:
    enum class Kind { Surface, ImageBox, Explicit, Gaussian1D };

    static DomainSampler surface(TriangleMesh mesh);
    static DomainSampler image_box(ScalarImage image);
    static DomainSampler explicit_points(std::vector<Point3> points);
    static DomainSampler gaussian_1d(double s2);

    std::vector<Point3> draw(std::size_t n, std::uint64_t seed) const;

    Kind kind() const { return kind_; }
    const TriangleMesh& mesh() const;
    const ScalarImage& image() const;
    double s2() const { return s2_; }

private:
    DomainSampler() = default;
    Kind kind_ = Kind::Explicit;
    std::shared_ptr<const TriangleMesh> mesh_;
    std::shared_ptr<const ScalarImage> image_;
    std::vector<Point3> points_;
    double s2_ = 1.0;
};

struct RsvdOptions {
    int oversampling = 10;
    int power_iterations = 2;
};

/// Truncated Karhunen-Loeve model: mean plus r (eigenvalue, eigenfunction)
/// pairs, with eigenfunctions evaluated through the Nystrom extension
/// phi_i(x) = sqrt(n)/lambda_mat_i * k_X(x) u_i. Immutable and thread-safe.
class LowRankGP {
public:
    LowRankGP() = default;
    LowRankGP(MatrixKernelPtr kernel, MeanFunction base_mean, std::vector<Point3> points,
              VectorXd eigenvalues, VectorXd lambda_mat, MatrixXd extension,
              VectorXd mean_coefs, double total_variance);

    int rank() const { return static_cast<int>(eigenvalues_.size()); }
    const VectorXd& eigenvalues() const { return eigenvalues_; }
    const VectorXd& lambda_mat() const { return lambda_mat_; }
    const std::vector<Point3>& nystrom_points() const { return points_; }
    const MatrixXd& extension() const { return extension_; }
    const VectorXd& mean_coefs() const { return mean_coefs_; }
    const MatrixKernelPtr& kernel() const { return kernel_; }
    const MeanFunction& base_mean() const { return base_mean_; }
    double total_variance() const { return total_variance_; }

    Vector3 mean(const Point3& x) const;

    /// 3 x r matrix [phi_1(x) ... phi_r(x)].
    Eigen::Matrix<double, 3, Eigen::Dynamic> basis(const Point3& x) const;

    /// u(x) = mean(x) + sum_i alpha_i sqrt(lambda_i) phi_i(x)
    Vector3 evaluate(const VectorXd& alpha, const Point3& x) const;

    /// Stacked mean over many points (3N vector); parallelized, deterministic.
    VectorXd mean_vector(const std::vector<Point3>& pts) const;

    /// Stacked basis over many points: 3N x r with column i = phi_i at all pts.
    MatrixXd basis_matrix(const std::vector<Point3>& pts) const;

    /// Derives a model with the same Nystrom backing but recombined basis:
    /// new phi_j = sum_i combination(i,j) phi_i, renormalized to unit
    /// empirical norm, with the given variances; extra_mean_coefs adds
    /// sum_i c_i sqrt(lambda_i) phi_i to the mean.
    LowRankGP recombined(const MatrixXd& combination, const VectorXd& variances,
                         const VectorXd& extra_mean_coefs) const;

private:
    MatrixKernelPtr kernel_;
    MeanFunction base_mean_;
    std::vector<Point3> points_;
    VectorXd eigenvalues_;
    VectorXd lambda_mat_;
    MatrixXd extension_;   // 3n x r
    VectorXd mean_coefs_;  // empty or 3n
    double total_variance_ = 0.0;

    Eigen::Matrix<double, 3, Eigen::Dynamic> kernel_row(const Point3& x) const;
};

/// 3n x 3n block Gram matrix K_[3i:3i+3, 3j:3j+3] = k(x_i, x_j).
MatrixXd assemble_gram(const MatrixKernel& kernel, const std::vector<Point3>& points);

struct EigResult {
    VectorXd values;   // descending
    MatrixXd vectors;  // orthonormal columns
};

/// Brute-force dense symmetric eigendecomposition; the oracle for the
/// randomized path.
EigResult dense_symmetric_eig(const MatrixXd& K, int r);

/// Halko-style randomized eigendecomposition for symmetric PSD K: Gaussian
/// sketch, QR re-orthonormalized power iterations, Rayleigh-Ritz.
EigResult randomized_symmetric_eig(const MatrixXd& K, int r, const RsvdOptions& opts, Rng& rng);

/// LLT with escalating diagonal jitter (1e-10 * trace, x10, 3 attempts).
/// Throws NumericError if the matrix never factorizes.
Eigen::LLT<MatrixXd> cholesky_with_jitter(const MatrixXd& K);

LowRankGP build_lowrank(MatrixKernelPtr kernel, MeanFunction mean, const DomainSampler& sampler,
                        std::size_t n, int r, const RsvdOptions& rsvd, std::uint64_t seed);

/// Monte-Carlo estimate of integral trace(k(x,x)) drho(x); constant-integrand
/// shortcut for stationary kernels.
double total_variance(const MatrixKernel& kernel, const std::vector<Point3>& points);
double total_variance(const MatrixKernel& kernel, const DomainSampler& sampler, std::size_t n,
                      std::uint64_t seed);

/// Smallest m with sum_{j<=m} lambda_j / total_variance > p. Throws
/// NumericError("insufficient spectrum") when the whole spectrum falls short.
int choose_rank(const VectorXd& eigenvalues, double total_variance, double p);

/// alpha ~ N(0, I_r), deterministic in the seed.
VectorXd sample_coefficients(int r, std::uint64_t seed);

/// sup_i |lambda_i - lambda_hat_i| <= 2 sqrt(2) kappa sqrt(tau) / sqrt(n)
double eigenvalue_sup_bound(double kappa, double tau, std::size_t n);

struct EigenfunctionBound {
    std::size_t min_n;        // smallest n making the bound applicable
    double projection_bound;  // 32 kappa^2 tau / (gap^2 n)
};
EigenfunctionBound eigenfunction_bound(double kappa, double tau, std::size_t n, double gap);

/// Draws exact GP samples at probe points (dense Cholesky), projects them
/// onto the low-rank span by least squares, and returns the mean relative
/// squared error |u - u_proj|^2 / |u - mu|^2 over the trials.
double projection_error_experiment(const LowRankGP& gp, const DomainSampler& sampler,
                                   std::size_t n_probes, int trials, std::uint64_t seed);

}  // namespace gpmm
