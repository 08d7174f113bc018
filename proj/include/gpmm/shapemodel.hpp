#pragma once

#include "gpmm/lowrank.hpp"
#include "gpmm/mesh.hpp"

#include <functional>

namespace gpmm {

/// Point-distribution model at fixed reference points: stacked mean shape
/// (positions, point-major xyz-interleaved), basis columns
/// sqrt(lambda_i) phi_i, and the variances.
/// instance(alpha) = mean + basis alpha gives stacked positions.
struct DiscreteModel {
    std::vector<Point3> points;
    VectorXd mean;     // 3N
    MatrixXd basis;    // 3N x r
    VectorXd variances;

    int rank() const { return static_cast<int>(variances.size()); }
    VectorXd instance(const VectorXd& alpha) const;

    /// Vertices of `topology` replaced by instance(alpha); the model points
    /// must match the mesh vertices one-to-one.
    TriangleMesh instance_mesh(const VectorXd& alpha, const TriangleMesh& topology) const;
};

/// Evaluates the low-rank model at fixed points. instance(alpha) equals
/// points + evaluate(gp, alpha) there exactly, column for column.
DiscreteModel discretize(const LowRankGP& gp, const std::vector<Point3>& points);

/// Classical PCA over displacement fields on a shared reference (Gram-trick
/// eigendecomposition, at most n-1 nonzero variances). fields[i][j] is the
/// displacement of reference point j in example i.
DiscreteModel build_pca(const std::vector<Point3>& reference_points,
                        const std::vector<std::vector<Vector3>>& fields);

/// Serialization: JSON manifest plus float64 sidecars (points/mean/basis/
/// variances), point-major xyz-interleaved.
void save_discrete_model(const DiscreteModel& model, const std::string& path);
DiscreteModel load_discrete_model(const std::string& path);

/// Mean over random model samples of the smallest symmetric mean surface
/// distance to any training mesh.
double specificity(const DiscreteModel& model, const TriangleMesh& topology,
                   const std::vector<TriangleMesh>& training, std::size_t n_samples,
                   std::uint64_t seed);

/// Accumulated variance of the first m components.
double compactness(const DiscreteModel& model, int m);

/// Any routine mapping a target mesh to the model's best fit of it.
using Fitter = std::function<TriangleMesh(const TriangleMesh& target)>;

/// Symmetric mean surface distance between fitter(held_out) and held_out.
double generalization(const TriangleMesh& held_out, const Fitter& fitter,
                      std::size_t n_samples, std::uint64_t seed);

}  // namespace gpmm
