#include "gpmm/registration.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

namespace gpmm {

// ---------------------------------------------------------------------------
// Energy base

double Energy::value_and_gradient(const VectorXd& alpha, VectorXd& grad) const {
    std::vector<std::size_t> all(integration_point_count());
    std::iota(all.begin(), all.end(), 0);
    return batch_value_and_gradient(alpha, all, grad);
}

double Energy::value(const VectorXd& alpha) const {
    VectorXd grad;
    return value_and_gradient(alpha, grad);
}

double Energy::data_term(const VectorXd& alpha) const {
    return value(alpha) - eta_ * alpha.squaredNorm();
}

// ---------------------------------------------------------------------------
// SurfaceEnergy

SurfaceEnergy::SurfaceEnergy(const LowRankGP& model, const TriangleMesh& reference,
                             const TriangleMesh& target, std::size_t n_integration_points,
                             double eta, std::uint64_t seed)
    : rank_(model.rank()),
      points_(sample_surface_points(reference, n_integration_points, seed)),
      target_(target) {
    eta_ = eta;
    base_ = model.mean_vector(points_);
    for (std::size_t i = 0; i < points_.size(); ++i) base_.segment<3>(3 * i) += points_[i];
    phi_ = model.basis_matrix(points_);
    for (int j = 0; j < rank_; ++j) phi_.col(j) *= std::sqrt(model.eigenvalues()[j]);
    refresh(VectorXd::Zero(rank_));
}

std::vector<Point3> SurfaceEnergy::warped(const VectorXd& alpha) const {
    const VectorXd w = base_ + phi_ * alpha;
    std::vector<Point3> out(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) out[i] = w.segment<3>(3 * i);
    return out;
}

void SurfaceEnergy::refresh(const VectorXd& alpha) {
    const auto warped_points = warped(alpha);
    correspondence_.resize(warped_points.size());
    parallel_for(warped_points.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            correspondence_[i] = target_.query(warped_points[i]).point;
    });
}

double SurfaceEnergy::batch_value_and_gradient(const VectorXd& alpha,
                                               const std::vector<std::size_t>& subset,
                                               VectorXd& grad) const {
    if (alpha.size() != rank_) throw UsageError("coefficient length does not match model rank");
    const VectorXd w = base_ + phi_ * alpha;
    grad = VectorXd::Zero(rank_);
    double data = 0.0;
    for (const std::size_t i : subset) {
        const Vector3 residual = Vector3(w.segment<3>(3 * i)) - correspondence_[i];
        data += residual.squaredNorm();
        grad += 2.0 * (phi_.middleRows<3>(3 * i).transpose() * residual);
    }
    const double inv = 1.0 / static_cast<double>(subset.size());
    data *= inv;
    grad *= inv;
    grad += 2.0 * eta_ * alpha;
    return data + eta_ * alpha.squaredNorm();
}

// ---------------------------------------------------------------------------
// ImageEnergy

ImageEnergy::ImageEnergy(const LowRankGP& model, const ScalarImage& reference,
                         ScalarImage target, std::size_t n_integration_points, double eta,
                         std::uint64_t seed)
    : rank_(model.rank()), target_(std::move(target)) {
    eta_ = eta;
    const auto centers = reference.masked_voxel_centers();
    if (centers.empty()) throw UsageError("reference image mask leaves no voxels");
    Rng rng = make_rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
    const std::size_t count = std::min(n_integration_points, centers.size());
    if (count == centers.size()) {
        points_ = centers;
    } else {
        points_.resize(count);
        for (auto& p : points_) p = centers[pick(rng)];
    }

    reference_values_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i)
        reference_values_[i] = reference.interpolate(points_[i]);

    base_ = model.mean_vector(points_);
    for (std::size_t i = 0; i < points_.size(); ++i) base_.segment<3>(3 * i) += points_[i];
    phi_ = model.basis_matrix(points_);
    for (int j = 0; j < rank_; ++j) phi_.col(j) *= std::sqrt(model.eigenvalues()[j]);
}

double ImageEnergy::batch_value_and_gradient(const VectorXd& alpha,
                                             const std::vector<std::size_t>& subset,
                                             VectorXd& grad) const {
    if (alpha.size() != rank_) throw UsageError("coefficient length does not match model rank");
    const VectorXd w = base_ + phi_ * alpha;
    grad = VectorXd::Zero(rank_);
    double data = 0.0;
    for (const std::size_t i : subset) {
        const Point3 pos = w.segment<3>(3 * i);
        const double residual = reference_values_[i] - target_.interpolate(pos);
        const Vector3 dres = -target_.gradient(pos);
        data += residual * residual;
        grad += (2.0 * residual) * (phi_.middleRows<3>(3 * i).transpose() * dres);
    }
    const double inv = 1.0 / static_cast<double>(subset.size());
    data *= inv;
    grad *= inv;
    grad += 2.0 * eta_ * alpha;
    return data + eta_ * alpha.squaredNorm();
}

double ImageEnergy::mean_absolute_residual(const VectorXd& alpha) const {
    const VectorXd w = base_ + phi_ * alpha;
    double acc = 0.0;
    for (std::size_t i = 0; i < points_.size(); ++i)
        acc += std::abs(reference_values_[i] - target_.interpolate(w.segment<3>(3 * i)));
    return acc / static_cast<double>(points_.size());
}

// ---------------------------------------------------------------------------
// Optimizers

OptimizerOptions::Kind optimizer_kind_from_string(const std::string& name) {
    if (name == "gd" || name == "deterministic_gd") return OptimizerOptions::Kind::DeterministicGD;
    if (name == "lbfgs") return OptimizerOptions::Kind::LBFGS;
    if (name == "sgd" || name == "stochastic_gd") return OptimizerOptions::Kind::StochasticGD;
    throw UsageError("unknown optimizer '" + name + "' (expected gd, lbfgs or sgd)");
}

namespace {

struct ConvergenceTracker {
    double tol;
    int slow_streak = 0;
    double last_energy = std::numeric_limits<double>::infinity();

    bool update(double energy, double grad_norm) {
        if (grad_norm <= tol) return true;
        const double rel_drop =
            (last_energy - energy) / std::max(std::abs(last_energy), 1e-300);
        last_energy = energy;
        if (rel_drop < tol) {
            if (++slow_streak >= 5) return true;
        } else {
            slow_streak = 0;
        }
        return false;
    }
};

[[noreturn]] void diverged(double energy, double initial, int iteration) {
    std::ostringstream msg;
    msg << "optimization diverged: energy " << energy << " exceeds 1000x initial " << initial
        << " at iteration " << iteration;
    throw NumericError(msg.str());
}

// one L-BFGS step with Armijo backtracking; history in s/y deques
double lbfgs_step(Energy& energy, VectorXd& x, VectorXd& g, double fx,
                  std::deque<VectorXd>& s_hist, std::deque<VectorXd>& y_hist, int memory) {
    VectorXd q = g;
    const int m = static_cast<int>(s_hist.size());
    std::vector<double> rho(m), a(m);
    for (int i = m - 1; i >= 0; --i) {
        rho[i] = 1.0 / y_hist[i].dot(s_hist[i]);
        a[i] = rho[i] * s_hist[i].dot(q);
        q -= a[i] * y_hist[i];
    }
    if (m > 0) {
        const double gamma = s_hist[m - 1].dot(y_hist[m - 1]) / y_hist[m - 1].squaredNorm();
        q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
        const double b = rho[i] * y_hist[i].dot(q);
        q += (a[i] - b) * s_hist[i];
    }
    VectorXd d = -q;
    if (d.dot(g) >= 0.0) d = -g;  // fall back to steepest descent

    const double slope = g.dot(d);
    double t = 1.0;
    double fnew = fx;
    VectorXd xnew;
    for (int ls = 0; ls < 40; ++ls) {
        xnew = x + t * d;
        fnew = energy.value(xnew);
        if (fnew <= fx + 1e-4 * t * slope) break;
        t *= 0.5;
    }
    if (fnew > fx) return fx;  // line search stalled; keep the current point
    VectorXd gnew(g.size());
    energy.value_and_gradient(xnew, gnew);

    const VectorXd s = xnew - x;
    const VectorXd y = gnew - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
        s_hist.push_back(s);
        y_hist.push_back(y);
        if (static_cast<int>(s_hist.size()) > memory) {
            s_hist.pop_front();
            y_hist.pop_front();
        }
    }
    x = xnew;
    g = gnew;
    return fnew;
}

double gd_step(Energy& energy, VectorXd& x, VectorXd& g, double fx, double step,
               bool line_search) {
    if (!line_search) {
        x -= step * g;
        return energy.value_and_gradient(x, g);
    }
    const VectorXd d = -g;
    const double slope = g.dot(d);
    double t = step;
    VectorXd xnew;
    double fnew = fx;
    for (int ls = 0; ls < 40; ++ls) {
        xnew = x + t * d;
        fnew = energy.value(xnew);
        if (fnew <= fx + 1e-4 * t * slope) break;
        t *= 0.5;
    }
    if (fnew > fx) return fx;  // stalled
    x = xnew;
    return energy.value_and_gradient(x, g);
}

}  // namespace

FitResult fit(Energy& energy, const OptimizerOptions& options, const VectorXd& alpha0) {
    if (alpha0.size() != energy.rank())
        throw UsageError("initial coefficients do not match the model rank");

    VectorXd x = alpha0;
    energy.refresh(x);

    VectorXd g(x.size());
    double fx = energy.value_and_gradient(x, g);
    const double initial_energy = std::max(fx, 1e-300);

    FitResult result;
    result.trace.push_back(fx);
    ConvergenceTracker tracker{options.tol};
    tracker.last_energy = fx;

    std::deque<VectorXd> s_hist, y_hist;
    Rng batch_rng = make_rng(options.seed);
    const std::size_t n_points = energy.integration_point_count();
    std::vector<std::size_t> batch;

    int iter = 0;
    bool converged = false;
    const int refresh_every = std::max(options.refresh_every, 1);
    while (iter < options.max_iters && !converged) {
        // inner block against frozen correspondence
        for (int inner = 0; inner < refresh_every && iter < options.max_iters; ++inner, ++iter) {
            switch (options.kind) {
                case OptimizerOptions::Kind::DeterministicGD:
                    fx = gd_step(energy, x, g, fx, options.step, options.line_search);
                    break;
                case OptimizerOptions::Kind::LBFGS:
                    fx = lbfgs_step(energy, x, g, fx, s_hist, y_hist, options.lbfgs_memory);
                    break;
                case OptimizerOptions::Kind::StochasticGD: {
                    const std::size_t bsize =
                        std::min<std::size_t>(std::max(options.batch, 1), n_points);
                    if (bsize == n_points) {
                        fx = energy.value_and_gradient(x, g);
                    } else {
                        batch.resize(bsize);
                        std::uniform_int_distribution<std::size_t> pick(0, n_points - 1);
                        for (auto& b : batch) b = pick(batch_rng);
                        energy.batch_value_and_gradient(x, batch, g);
                    }
                    const double step_t =
                        options.decay > 0.0 ? options.step / (1.0 + iter / options.decay)
                                            : options.step;
                    x -= step_t * g;
                    fx = energy.value_and_gradient(x, g);
                    break;
                }
            }
            result.trace.push_back(fx);
            if (fx > 1000.0 * initial_energy) diverged(fx, initial_energy, iter);
            if (tracker.update(fx, g.norm())) {
                converged = true;
                ++iter;
                break;
            }
        }
        if (!converged) {
            energy.refresh(x);
            fx = energy.value_and_gradient(x, g);
            s_hist.clear();  // correspondence moved; curvature history is stale
            y_hist.clear();
        }
    }

    energy.refresh(x);
    result.alpha = x;
    result.regularizer = energy.eta() * x.squaredNorm();
    result.data_term = energy.data_term(x);
    result.total = result.data_term + result.regularizer;
    result.iterations = iter;
    result.converged = converged;
    return result;
}

std::pair<FitResult, LowRankGP> hybrid_fit_surface(const LowRankGP& model,
                                                   const ObservationSet& landmarks,
                                                   const TriangleMesh& reference,
                                                   const TriangleMesh& target,
                                                   std::size_t n_integration_points, double eta,
                                                   const OptimizerOptions& options,
                                                   std::uint64_t seed) {
    if (landmarks.size() == 0) {
        SurfaceEnergy energy(model, reference, target, n_integration_points, eta, seed);
        return {fit(energy, options, VectorXd::Zero(model.rank())), model};
    }
    const LowRankGP posterior = posterior_lowrank(model, landmarks).model;
    SurfaceEnergy energy(posterior, reference, target, n_integration_points, eta, seed);
    return {fit(energy, options, VectorXd::Zero(posterior.rank())), posterior};
}

TriangleMesh warp_mesh(const LowRankGP& model, const VectorXd& alpha,
                       const TriangleMesh& reference) {
    const auto& verts = reference.vertices();
    std::vector<Point3> warped(verts.size());
    parallel_for(verts.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            warped[i] = verts[i] + model.evaluate(alpha, verts[i]);
    });
    return TriangleMesh(std::move(warped), reference.triangles());
}

}  // namespace gpmm
