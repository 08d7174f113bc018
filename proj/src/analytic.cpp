#include "gpmm/analytic.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace gpmm {

AnalyticSpectrum::AnalyticSpectrum(double sigma, double s2) : sigma_(sigma), s2_(s2) {
    if (!(sigma > 0.0)) throw UsageError("analytic spectrum needs sigma > 0");
    if (!(s2 > 0.0)) throw UsageError("analytic spectrum needs s2 > 0");
    // a carries the measure variance, b the kernel bandwidth; this assignment
    // is the one under which B grows with s/sigma (narrow kernels decay
    // slowly) and the geometric sum matches the trace identity.
    a_ = 1.0 / (4.0 * s2);
    b_ = 1.0 / (sigma * sigma);
    c_ = std::sqrt(a_ * a_ + 2.0 * a_ * b_);
    A_ = a_ + b_ + c_;
    B_ = b_ / A_;
    eigenfunction_norm(0);  // fill the norm cache so const queries stay pure
}

double AnalyticSpectrum::eigenvalue(int i) const {
    if (i < 0) throw UsageError("eigenvalue index must be >= 0");
    return std::sqrt(std::numbers::pi / A_) * std::pow(B_, i);
}

double AnalyticSpectrum::eigenvalue_normalized(int i) const {
    return eigenvalue(i) / std::sqrt(2.0 * std::numbers::pi * s2_);
}

double AnalyticSpectrum::total_variance() const {
    return std::sqrt(std::numbers::pi / A_) / (1.0 - B_);
}

double AnalyticSpectrum::total_variance_normalized() const {
    return total_variance() / std::sqrt(2.0 * std::numbers::pi * s2_);
}

std::pair<double, int> hermite_scaled(int i, double z) {
    // H_0 = 1, H_1 = 2z, H_{k+1} = 2z H_k - 2k H_{k-1}
    double prev = 1.0, cur = 2.0 * z;
    int exponent = 0;
    if (i == 0) return {1.0, 0};
    for (int k = 1; k < i; ++k) {
        double next = 2.0 * z * cur - 2.0 * k * prev;
        prev = cur;
        cur = next;
        const double mag = std::max(std::abs(cur), std::abs(prev));
        if (mag > 1e200) {
            prev = std::ldexp(prev, -512);
            cur = std::ldexp(cur, -512);
            exponent += 512;
        }
    }
    return {cur, exponent};
}

double AnalyticSpectrum::eigenfunction(int i, double x) const {
    if (i < 0 || i > kMaxIndex)
        throw UsageError("analytic eigenfunction supported for 0 <= i <= " +
                         std::to_string(kMaxIndex));
    const auto [mantissa, exponent] = hermite_scaled(i, std::sqrt(2.0 * c_) * x);
    return std::ldexp(mantissa * std::exp(-(c_ - a_) * x * x), exponent);
}

double AnalyticSpectrum::eigenfunction_norm(int i) const {
    if (i < 0 || i > kMaxIndex)
        throw UsageError("analytic eigenfunction supported for 0 <= i <= " +
                         std::to_string(kMaxIndex));
    if (norms_.empty()) {
        // integral phi_i(x)^2 dN(0, s2): x = sqrt(2 s2) t, weight 1/sqrt(pi)
        VectorXd nodes, weights;
        gauss_hermite(128, nodes, weights);
        const double scale = std::sqrt(2.0 * s2_);
        std::vector<double> norms(kMaxIndex + 1);
        for (int k = 0; k <= kMaxIndex; ++k) {
            double acc = 0.0;
            for (int q = 0; q < nodes.size(); ++q) {
                const double v = eigenfunction(k, scale * nodes[q]);
                acc += weights[q] * v * v;
            }
            norms[k] = std::sqrt(acc / std::sqrt(std::numbers::pi));
        }
        norms_ = std::move(norms);
    }
    return norms_[i];
}

double AnalyticSpectrum::eigenfunction_normalized(int i, double x) const {
    return eigenfunction(i, x) / eigenfunction_norm(i);
}

void gauss_hermite(int order, VectorXd& nodes, VectorXd& weights) {
    // Golub-Welsch on the Jacobi matrix of the Hermite recurrence
    MatrixXd J = MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        const double off = std::sqrt(k / 2.0);
        J(k, k - 1) = off;
        J(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
    nodes = es.eigenvalues();
    weights.resize(order);
    const double mu0 = std::sqrt(std::numbers::pi);  // integral exp(-t^2) dt
    for (int k = 0; k < order; ++k) {
        const double v0 = es.eigenvectors()(0, k);
        weights[k] = mu0 * v0 * v0;
    }
}

std::vector<NystromComparison> compare_to_nystrom(const AnalyticSpectrum& spec,
                                                  const LowRankGP& lowrank, int i_max) {
    if (i_max >= lowrank.rank())
        throw UsageError("comparison index exceeds the model rank");
    const auto& pts = lowrank.nystrom_points();
    const std::size_t n = pts.size();

    // x components of the Nystrom eigenfunctions at the Nystrom points
    const MatrixXd phi = lowrank.basis_matrix(pts);

    std::vector<NystromComparison> rows;
    rows.reserve(i_max + 1);
    for (int i = 0; i <= i_max; ++i) {
        NystromComparison row;
        row.index = i;
        row.analytic_eigenvalue = spec.eigenvalue_normalized(i);
        row.nystrom_eigenvalue = lowrank.eigenvalues()[i];
        row.eigenvalue_rel_error =
            std::abs(row.nystrom_eigenvalue - row.analytic_eigenvalue) / row.analytic_eigenvalue;

        if (i <= AnalyticSpectrum::kMaxIndex) {
            VectorXd analytic(n), numeric(n);
            for (std::size_t l = 0; l < n; ++l) {
                analytic[l] = spec.eigenfunction(i, pts[l].x());
                numeric[l] = phi(3 * l, i);  // x component carries the 1D function
            }
            const double na = analytic.norm();
            const double nn = numeric.norm();
            if (na > 0.0) analytic /= na;
            if (nn > 0.0) numeric /= nn;
            if (analytic.dot(numeric) < 0.0) numeric = -numeric;
            row.eigenfunction_error = (analytic - numeric).norm();
        } else {
            row.eigenfunction_error = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace gpmm
