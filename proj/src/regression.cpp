#include "gpmm/regression.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <memory>

namespace gpmm {

void ObservationSet::validate() const {
    if (points.size() != values.size())
        throw UsageError("observation points and values differ in length");
    if (sigma2 < 0.0) throw UsageError("observation noise variance must be >= 0");
    if (sigma2 == 0.0) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            for (std::size_t j = i + 1; j < points.size(); ++j) {
                if (points[i] == points[j] && values[i] != values[j])
                    throw UsageError("conflicting noise-free observations at a duplicated point");
            }
        }
    }
    for (std::size_t i = 0; i < points.size(); ++i)
        if (!points[i].allFinite() || !values[i].allFinite())
            throw UsageError("non-finite observation");
}

namespace {

// k_p(x,x') = k(x,x') - K_X(x)^T (K_XX + sigma2 I)^-1 K_X(x'); one cached
// factorization, one triangular solve per query argument.
class PosteriorKernel final : public MatrixKernel {
public:
    PosteriorKernel(MatrixKernelPtr prior, std::vector<Point3> obs_points,
                    Eigen::LLT<MatrixXd> llt)
        : prior_(std::move(prior)), obs_points_(std::move(obs_points)), llt_(std::move(llt)) {}

    Matrix3 operator()(const Point3& x, const Point3& y) const override {
        const MatrixXd kx = cross_cov(x);
        const MatrixXd ky = (x == y) ? kx : cross_cov(y);
        return (*prior_)(x, y) - kx.transpose() * llt_.solve(ky);
    }

    // K_X(x): 3m x 3 stack of k(x_i, x)
    MatrixXd cross_cov(const Point3& x) const {
        MatrixXd kx(3 * obs_points_.size(), 3);
        for (std::size_t i = 0; i < obs_points_.size(); ++i)
            kx.middleRows<3>(3 * i) = (*prior_)(obs_points_[i], x);
        return kx;
    }

private:
    MatrixKernelPtr prior_;
    std::vector<Point3> obs_points_;
    Eigen::LLT<MatrixXd> llt_;
};

}  // namespace

PosteriorProcess posterior_full(const MeanFunction& mean, MatrixKernelPtr kernel,
                                const ObservationSet& obs) {
    obs.validate();
    if (obs.size() == 0) return PosteriorProcess{mean, kernel};

    const std::size_t m = obs.size();
    MatrixXd kxx = assemble_gram(*kernel, obs.points);
    kxx.diagonal().array() += obs.sigma2;
    Eigen::LLT<MatrixXd> llt = cholesky_with_jitter(kxx);

    VectorXd u_hat(3 * m);
    for (std::size_t i = 0; i < m; ++i)
        u_hat.segment<3>(3 * i) = obs.values[i] - eval_mean(mean, obs.points[i]);
    const VectorXd weights = llt.solve(u_hat);

    auto post_kernel =
        std::make_shared<PosteriorKernel>(kernel, obs.points, std::move(llt));
    auto post_mean = [mean, post_kernel, weights](const Point3& x) -> Vector3 {
        return eval_mean(mean, x) + post_kernel->cross_cov(x).transpose() * weights;
    };
    return PosteriorProcess{post_mean, post_kernel};
}

CoefficientPosterior posterior_lowrank(const LowRankGP& gp, const ObservationSet& obs) {
    obs.validate();
    const int r = gp.rank();
    if (obs.size() == 0) {
        CoefficientPosterior post;
        post.mean = VectorXd::Zero(r);
        post.cov = MatrixXd::Identity(r, r);
        post.model = gp;
        return post;
    }

    MatrixXd phi = gp.basis_matrix(obs.points);
    for (int j = 0; j < r; ++j) phi.col(j) *= std::sqrt(gp.eigenvalues()[j]);

    VectorXd resid(3 * obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
        resid.segment<3>(3 * i) = obs.values[i] - gp.mean(obs.points[i]);

    MatrixXd M = phi.transpose() * phi;
    double sigma2 = obs.sigma2;
    if (sigma2 == 0.0) sigma2 = 1e-10 * std::max(M.trace() / r, 1.0);  // jitter
    M.diagonal().array() += sigma2;

    const Eigen::LLT<MatrixXd> llt(M);
    if (llt.info() != Eigen::Success)
        throw NumericError("coefficient-posterior system failed to factorize");

    CoefficientPosterior post;
    post.mean = llt.solve(phi.transpose() * resid);
    post.cov = sigma2 * llt.solve(MatrixXd::Identity(r, r));

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(post.cov);
    if (es.info() != Eigen::Success) throw NumericError("coefficient covariance eigensolve failed");
    // descending order, scaled so new basis j carries variance d_j
    MatrixXd combination(r, r);
    VectorXd variances(r);
    for (int j = 0; j < r; ++j) {
        const int src = r - 1 - j;
        variances[j] = std::max(es.eigenvalues()[src], 0.0);
        combination.col(j) =
            (gp.eigenvalues().array().sqrt() * es.eigenvectors().col(src).array()).matrix();
    }
    post.model = gp.recombined(combination, variances, post.mean);
    return post;
}

ObservationSet observations_from_landmarks(const std::vector<Point3>& reference,
                                           const std::vector<Point3>& target, double sigma2) {
    if (reference.size() != target.size())
        throw UsageError("landmark sets differ in length");
    ObservationSet obs;
    obs.sigma2 = sigma2;
    obs.points = reference;
    obs.values.reserve(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i)
        obs.values.push_back(target[i] - reference[i]);
    return obs;
}

}  // namespace gpmm
