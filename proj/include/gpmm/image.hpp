#pragma once

#include "gpmm/core.hpp"

#include <array>
#include <cstdint>

namespace gpmm {

/// Regular 3D scalar image on voxel centers, spacing in mm/voxel.
/// Trilinear interpolation; queries outside the (masked) domain yield the
/// configured out-of-domain value with a zero gradient.
class ScalarImage {
public:
    ScalarImage(std::array<int, 3> dims, Vector3 spacing, Point3 origin,
                std::vector<double> voxels);

    const std::array<int, 3>& dims() const { return dims_; }
    const Vector3& spacing() const { return spacing_; }
    const Point3& origin() const { return origin_; }
    const std::vector<double>& voxels() const { return voxels_; }

    std::size_t voxel_index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims_[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
    }
    double at(int i, int j, int k) const { return voxels_[voxel_index(i, j, k)]; }
    Point3 voxel_center(int i, int j, int k) const {
        return origin_ + Vector3(i * spacing_[0], j * spacing_[1], k * spacing_[2]);
    }

    /// Mask over voxels; nonzero = inside. Empty vector clears the mask.
    void set_mask(std::vector<std::uint8_t> mask);
    const std::vector<std::uint8_t>& mask() const { return mask_; }
    bool masked_in(int i, int j, int k) const {
        return mask_.empty() || mask_[voxel_index(i, j, k)] != 0;
    }

    void set_out_of_domain_value(double v) { out_of_domain_ = v; }
    double out_of_domain_value() const { return out_of_domain_; }

    double interpolate(const Point3& x) const;
    Vector3 gradient(const Point3& x) const;

    /// Voxel centers inside the mask, in index order.
    std::vector<Point3> masked_voxel_centers() const;

private:
    std::array<int, 3> dims_;
    Vector3 spacing_;
    Point3 origin_;
    std::vector<double> voxels_;
    std::vector<std::uint8_t> mask_;
    double out_of_domain_ = 0.0;

    // cell lookup shared by interpolate/gradient; false when out of domain
    bool locate(const Point3& x, int idx[3], double frac[3]) const;
};

/// MetaImage subset: text header (NDims=3, DimSize, ElementSpacing, Offset,
/// ElementType=MET_FLOAT, ElementDataFile) plus a raw little-endian float32
/// payload in the sidecar file.
ScalarImage read_mhd(const std::string& header_path);
void write_mhd(const ScalarImage& image, const std::string& header_path);

}  // namespace gpmm
