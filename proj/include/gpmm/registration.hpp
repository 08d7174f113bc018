#pragma once

#include "gpmm/image.hpp"
#include "gpmm/lowrank.hpp"
#include "gpmm/mesh.hpp"
#include "gpmm/regression.hpp"

#include <optional>

namespace gpmm {

struct FitResult {
    VectorXd alpha;
    double data_term = 0.0;
    double regularizer = 0.0;
    double total = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;  // energy after each accepted iteration
};

/// Data term over a fixed set of integration points plus eta |alpha|^2.
/// Gradients are analytic. Surface energies keep a frozen correspondence
/// that fit() refreshes between optimization blocks.
class Energy {
public:
    virtual ~Energy() = default;
    virtual int rank() const = 0;
    virtual std::size_t integration_point_count() const = 0;

    double eta() const { return eta_; }
    void set_eta(double eta) { eta_ = eta; }

    /// Full energy and gradient: data(alpha) + eta |alpha|^2.
    double value_and_gradient(const VectorXd& alpha, VectorXd& grad) const;
    double value(const VectorXd& alpha) const;
    double data_term(const VectorXd& alpha) const;

    /// Mean over the index subset instead of all points (regularizer
    /// included); used by stochastic gradient descent.
    virtual double batch_value_and_gradient(const VectorXd& alpha,
                                            const std::vector<std::size_t>& subset,
                                            VectorXd& grad) const = 0;

    /// Re-freezes internal state at alpha (surface correspondence); no-op
    /// for smooth energies.
    virtual void refresh(const VectorXd& alpha) {}

protected:
    double eta_ = 0.0;
};

/// Mean squared closest-point distance from warped reference samples to the
/// target surface; the closest points are held fixed between refreshes.
class SurfaceEnergy final : public Energy {
public:
    SurfaceEnergy(const LowRankGP& model, const TriangleMesh& reference,
                  const TriangleMesh& target, std::size_t n_integration_points,
                  double eta, std::uint64_t seed);

    int rank() const override { return rank_; }
    std::size_t integration_point_count() const override { return points_.size(); }
    double batch_value_and_gradient(const VectorXd& alpha,
                                    const std::vector<std::size_t>& subset,
                                    VectorXd& grad) const override;
    void refresh(const VectorXd& alpha) override;

    /// Warped positions of the integration points at alpha.
    std::vector<Point3> warped(const VectorXd& alpha) const;

private:
    int rank_;
    std::vector<Point3> points_;
    VectorXd base_;       // 3S: x + mean(x), stacked
    MatrixXd phi_;        // 3S x r, sqrt(lambda) folded in
    ClosestPointIndex target_;
    std::vector<Point3> correspondence_;
};

/// Mean squared intensity difference  [I_R(x) - I_T(x + u(x))]^2  over
/// integration points sampled from the masked reference domain.
class ImageEnergy final : public Energy {
public:
    ImageEnergy(const LowRankGP& model, const ScalarImage& reference, ScalarImage target,
                std::size_t n_integration_points, double eta, std::uint64_t seed);

    int rank() const override { return rank_; }
    std::size_t integration_point_count() const override { return points_.size(); }
    double batch_value_and_gradient(const VectorXd& alpha,
                                    const std::vector<std::size_t>& subset,
                                    VectorXd& grad) const override;

    const ScalarImage& target() const { return target_; }
    const std::vector<Point3>& integration_points() const { return points_; }

    /// Mean absolute intensity residual at alpha (reporting metric).
    double mean_absolute_residual(const VectorXd& alpha) const;

private:
    int rank_;
    std::vector<Point3> points_;
    VectorXd reference_values_;  // S
    VectorXd base_;              // 3S
    MatrixXd phi_;               // 3S x r
    ScalarImage target_;
};

struct OptimizerOptions {
    enum class Kind { DeterministicGD, LBFGS, StochasticGD };
    Kind kind = Kind::LBFGS;
    int max_iters = 100;
    double tol = 1e-6;
    double step = 1.0;          // gd initial step / sgd base step c
    bool line_search = true;    // gd only
    int lbfgs_memory = 10;
    int batch = 1024;           // sgd batch size
    double decay = 50.0;        // sgd schedule c/(1+t/decay); <=0 keeps it constant
    int refresh_every = 5;      // correspondence refresh period (surface)
    std::uint64_t seed = 0;     // sgd batch sampling
};

OptimizerOptions::Kind optimizer_kind_from_string(const std::string& name);

/// Minimizes the energy from alpha0. Converges when |grad| <= tol or the
/// relative energy decrease stays below tol for 5 iterations; throws
/// NumericError if the energy exceeds 1000x its initial value.
FitResult fit(Energy& energy, const OptimizerOptions& options, const VectorXd& alpha0);

/// Posterior-constrained fitting: builds the posterior low-rank model from
/// the landmark observations, then runs fit on it. Returns the fit result
/// and the posterior model the coefficients refer to.
std::pair<FitResult, LowRankGP> hybrid_fit_surface(const LowRankGP& model,
                                                   const ObservationSet& landmarks,
                                                   const TriangleMesh& reference,
                                                   const TriangleMesh& target,
                                                   std::size_t n_integration_points, double eta,
                                                   const OptimizerOptions& options,
                                                   std::uint64_t seed);

/// Reference mesh warped by u(x) = mean(x) + sum alpha_i sqrt(lambda_i) phi_i(x).
TriangleMesh warp_mesh(const LowRankGP& model, const VectorXd& alpha,
                       const TriangleMesh& reference);

}  // namespace gpmm
