#pragma once

#include "gpmm/core.hpp"

#include <memory>
#include <string>

namespace gpmm {

/// Real-valued covariance function l(x,y).
class ScalarKernel {
public:
    virtual ~ScalarKernel() = default;
    virtual double operator()(const Point3& x, const Point3& y) const = 0;
};
using ScalarKernelPtr = std::shared_ptr<const ScalarKernel>;

/// 3x3-matrix-valued covariance function with k(x,y) = k(y,x)^T. Instances
/// are immutable; evaluation is pure and thread-safe.
class MatrixKernel {
public:
    virtual ~MatrixKernel() = default;
    virtual Matrix3 operator()(const Point3& x, const Point3& y) const = 0;
};
using MatrixKernelPtr = std::shared_ptr<const MatrixKernel>;

/// Mean deformation field; an empty function means identically zero.
using MeanFunction = std::function<Vector3(const Point3&)>;

inline Vector3 eval_mean(const MeanFunction& mean, const Point3& x) {
    return mean ? mean(x) : Vector3::Zero();
}

/// Scalar weight on the domain, used by localization kernels.
using WeightFunction = std::function<double(const Point3&)>;

// --- scalar kernels ---------------------------------------------------------

/// exp(-|x-y|^2 / sigma^2)
ScalarKernelPtr scalar_gauss(double sigma);
ScalarKernelPtr scalar_const(double value);

// --- matrix kernels ---------------------------------------------------------

/// s * I * exp(-|x-y|^2 / sigma^2); requires s, sigma > 0.
MatrixKernelPtr gauss_kernel(double s, double sigma);

/// k_ij(x,y) = A_ij * l(x,y); A must be symmetric positive semi-definite
/// (validated by eigendecomposition).
MatrixKernelPtr diag_kernel(const Matrix3& A, ScalarKernelPtr l);

MatrixKernelPtr sum_kernel(std::vector<MatrixKernelPtr> terms);
MatrixKernelPtr scale_kernel(double c, MatrixKernelPtr k);

/// Element-wise (Hadamard) product of the 3x3 blocks.
MatrixKernelPtr product_kernel(MatrixKernelPtr a, MatrixKernelPtr b);

/// R S k(x,y) S^T R^T with R orthonormal (|R^T R - I| <= 1e-8) and S a
/// positive diagonal given by its three entries.
MatrixKernelPtr anisotropic_kernel(const Matrix3& R, const Vector3& S, MatrixKernelPtr inner);

/// sum_{i=1..levels} (s/i) * I * exp(-|x-y|^2 / (sigma/i)^2)
MatrixKernelPtr multiscale_kernel(double s, double sigma, int levels);

/// w(x) w(y) * k(x,y)
MatrixKernelPtr localize_kernel(WeightFunction w, MatrixKernelPtr inner);

struct KernelRegion {
    WeightFunction weight;
    MatrixKernelPtr kernel;
};

/// sum_i w_i(x) w_i(y) k_i(x,y). The weights must form a partition of unity;
/// every evaluation checks |sum_i w_i - 1| <= 1e-6 at both arguments.
MatrixKernelPtr spatially_varying_kernel(std::vector<KernelRegion> regions);

// --- weight functions -------------------------------------------------------

WeightFunction weight_const(double c);

/// Logistic step across the plane n.x = offset; width 0 gives a hard step.
WeightFunction weight_plane(const Vector3& normal, double offset, double width);

WeightFunction weight_complement(WeightFunction w);

// --- sample covariance (empirical) kernel -----------------------------------

/// A set of deformation fields sharing one reference point set. Off-reference
/// queries snap to the nearest reference point.
class DeformationFieldSet {
public:
    /// fields[i][j] is the displacement of reference point j in example i.
    DeformationFieldSet(std::vector<Point3> reference_points,
                        std::vector<std::vector<Vector3>> fields);
    ~DeformationFieldSet();
    DeformationFieldSet(const DeformationFieldSet&) = delete;
    DeformationFieldSet& operator=(const DeformationFieldSet&) = delete;

    std::size_t field_count() const { return n_fields_; }
    std::size_t point_count() const { return points_.size(); }
    const std::vector<Point3>& reference_points() const { return points_; }

    int nearest_reference(const Point3& x) const;
    Vector3 mean_at(int point_index) const;

    /// 3 x n matrix of centered displacements at one reference point.
    Eigen::Matrix<double, 3, Eigen::Dynamic> centered_at(int point_index) const;

private:
    std::vector<Point3> points_;
    std::size_t n_fields_;
    MatrixXd centered_;  // 3N x n
    MatrixXd means_;     // 3 x N
    struct KdTree;
    std::unique_ptr<KdTree> tree_;
};
using DeformationFieldSetPtr = std::shared_ptr<const DeformationFieldSet>;

/// JSON manifest {"reference": ply, "fields": [csv, ...]}; displacement CSVs
/// carry rows x,y,z,dx,dy,dz and must agree on the reference points.
DeformationFieldSetPtr load_deformation_set(const std::string& manifest_path);

/// k_SM(x,y) = 1/(n-1) sum_i (u_i(x) - mu(x)) (u_i(y) - mu(y))^T
MatrixKernelPtr empirical_kernel(DeformationFieldSetPtr set);

/// mu_SM(x) = 1/n sum_i u_i(x)
MeanFunction empirical_mean(DeformationFieldSetPtr set);

}  // namespace gpmm
