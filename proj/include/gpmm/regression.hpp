#pragma once

#include "gpmm/lowrank.hpp"

namespace gpmm {

/// Observed deformations (x_i, u_i) with isotropic noise variance sigma2.
/// Duplicated points with sigma2 = 0 and conflicting values are rejected.
struct ObservationSet {
    std::vector<Point3> points;
    std::vector<Vector3> values;
    double sigma2 = 0.0;

    std::size_t size() const { return points.size(); }
    void validate() const;
};

struct PosteriorProcess {
    MeanFunction mean;
    MatrixKernelPtr kernel;
};

/// Closed-form GP regression:
///   mu_p(x)    = mu(x) + K_X(x)^T (K_XX + sigma2 I)^-1 U_hat
///   k_p(x,x')  = k(x,x') - K_X(x)^T (K_XX + sigma2 I)^-1 K_X(x')
/// The returned kernel caches the Cholesky factor and is a valid MatrixKernel
/// node, so it can be fed back into build_lowrank.
PosteriorProcess posterior_full(const MeanFunction& mean, MatrixKernelPtr kernel,
                                const ObservationSet& obs);

struct CoefficientPosterior {
    VectorXd mean;   // r
    MatrixXd cov;    // r x r
    LowRankGP model; // posterior low-rank model
};

/// Regression in coefficient space: with Phi the (3m x r) matrix of
/// sqrt(lambda_j) phi_j(x_i), the posterior over alpha is
/// N((Phi^T Phi + sigma2 I)^-1 Phi^T (Y - mu_X), sigma2 (Phi^T Phi + sigma2 I)^-1).
/// The returned model has mean mu + Phi alpha_bar and a basis rotated and
/// rescaled by the eigendecomposition of the coefficient covariance.
CoefficientPosterior posterior_lowrank(const LowRankGP& gp, const ObservationSet& obs);

/// Builds an ObservationSet from matched landmark pairs: the observed
/// deformation at each reference landmark is target - reference.
ObservationSet observations_from_landmarks(const std::vector<Point3>& reference,
                                           const std::vector<Point3>& target, double sigma2);

}  // namespace gpmm
