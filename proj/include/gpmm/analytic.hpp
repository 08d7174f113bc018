#pragma once

#include "gpmm/core.hpp"
#include "gpmm/lowrank.hpp"

namespace gpmm {

/// Closed-form eigenpairs of the 1D Gaussian kernel exp(-(x-y)^2/sigma^2)
/// under the measure N(0, s2):
///   lambda_i = sqrt(pi/A) B^i
///   phi_i(x) = exp(-(c-a) x^2) H_i(sqrt(2c) x)
/// with a = 1/(4 s2), b = 1/sigma^2, c = sqrt(a^2 + 2ab), A = a+b+c, B = b/A.
/// The eigenvalues are stated against the unnormalized weight
/// exp(-x^2/(2 s2)) dx; dividing by the weight mass sqrt(2 pi s2) converts
/// them to the probability-measure scale that a Nystrom estimate carries
/// (the geometric sum then equals the trace integral k(x,x) = 1).
class AnalyticSpectrum {
public:
    AnalyticSpectrum(double sigma, double s2);

    double sigma() const { return sigma_; }
    double s2() const { return s2_; }
    double a() const { return a_; }
    double b() const { return b_; }
    double c() const { return c_; }
    double A() const { return A_; }
    double B() const { return B_; }

    double eigenvalue(int i) const;

    /// eigenvalue(i) / sqrt(2 pi s2): the probability-measure scale.
    double eigenvalue_normalized(int i) const;

    /// Geometric series sqrt(pi/A) / (1 - B).
    double total_variance() const;

    /// total_variance() / sqrt(2 pi s2); equals 1 for every (sigma, s2).
    double total_variance_normalized() const;

    /// Raw eigenfunction, the paper's unnormalized form. Supported for
    /// 0 <= i <= kMaxIndex; Hermite values use a rescaled recurrence.
    double eigenfunction(int i, double x) const;

    /// Eigenfunction divided by its L2(rho) norm (Gauss-Hermite quadrature).
    double eigenfunction_normalized(int i, double x) const;
    double eigenfunction_norm(int i) const;

    static constexpr int kMaxIndex = 20;

private:
    double sigma_, s2_, a_, b_, c_, A_, B_;
    mutable std::vector<double> norms_;  // lazily filled cache
};

/// Physicists' Hermite polynomial H_i(z) by the three-term recurrence with
/// running rescaling; returns mantissa m and power-of-two exponent e with
/// H_i(z) = m * 2^e.
std::pair<double, int> hermite_scaled(int i, double z);

struct NystromComparison {
    int index;
    double analytic_eigenvalue;
    double nystrom_eigenvalue;
    double eigenvalue_rel_error;
    double eigenfunction_error;  // empirical L2 after sign alignment
};

/// Per-index comparison of a Nystrom low-rank model (built with a
/// gaussian_1d sampler of matching s2 and a scalarized 1D kernel) against
/// the closed form. Both sides are normalized to unit empirical L2 norm on
/// the Nystrom points and sign-aligned before differencing.
std::vector<NystromComparison> compare_to_nystrom(const AnalyticSpectrum& spec,
                                                  const LowRankGP& lowrank, int i_max);

/// Gauss-Hermite nodes/weights for integrals against exp(-t^2) (Golub-Welsch).
void gauss_hermite(int order, VectorXd& nodes, VectorXd& weights);

}  // namespace gpmm
