#pragma once

#include "gpmm/core.hpp"

#include <array>
#include <iosfwd>
#include <memory>

namespace gpmm {

/// Triangle surface in millimetres. Degenerate (zero-area) triangles are
/// dropped at construction; watertightness is not required.
class TriangleMesh {
public:
    TriangleMesh() = default;
    TriangleMesh(std::vector<Point3> vertices, std::vector<std::array<int, 3>> triangles);

    const std::vector<Point3>& vertices() const { return vertices_; }
    const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
    bool empty() const { return triangles_.empty(); }

    double triangle_area(std::size_t t) const { return areas_[t]; }
    double total_area() const { return total_area_; }
    std::size_t dropped_degenerate_count() const { return dropped_; }

    TriangleMesh translated(const Vector3& t) const;

private:
    std::vector<Point3> vertices_;
    std::vector<std::array<int, 3>> triangles_;
    std::vector<double> areas_;
    double total_area_ = 0.0;
    std::size_t dropped_ = 0;
};

/// ASCII PLY subset: `vertex` with float properties x,y,z and `face` with a
/// list property of 3 vertex indices.
TriangleMesh read_ply(const std::string& path);
TriangleMesh read_ply(std::istream& in, const std::string& name);
void write_ply(const TriangleMesh& mesh, const std::string& path);
void write_ply(const TriangleMesh& mesh, std::ostream& out);

/// Exact closest point on a single triangle (region classification).
Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b,
                                 const Point3& c);

/// AABB tree over the triangles of a mesh. Queries return the exact nearest
/// point on the triangle set; ties are broken by the lowest triangle index.
class ClosestPointIndex {
public:
    explicit ClosestPointIndex(const TriangleMesh& mesh);
    ~ClosestPointIndex();
    ClosestPointIndex(ClosestPointIndex&&) noexcept;
    ClosestPointIndex& operator=(ClosestPointIndex&&) noexcept;

    struct Result {
        Point3 point;
        double distance;
        int triangle;
    };
    Result query(const Point3& x) const;

    const TriangleMesh& mesh() const { return *mesh_; }

private:
    struct Node;
    std::unique_ptr<TriangleMesh> mesh_;
    std::vector<Node> nodes_;
    std::vector<int> leaf_tris_;

    int build(std::vector<int>& tris, int begin, int end, const std::vector<Point3>& centroids);
};

/// Area-uniform surface samples: triangle picked proportional to area,
/// barycentric-uniform within. Deterministic for a fixed seed.
std::vector<Point3> sample_surface_points(const TriangleMesh& mesh, std::size_t n,
                                          std::uint64_t seed);

struct SurfaceDistance {
    double mean = 0.0;
    double max = 0.0;
};

/// One-sided distance: mean/max closest-point distance from area-uniform
/// samples on `from` to the surface `to`.
SurfaceDistance surface_distance(const TriangleMesh& from, const TriangleMesh& to,
                                 std::size_t n_samples, std::uint64_t seed);

/// Symmetric variant: componentwise max of the two one-sided results.
SurfaceDistance surface_distance_symmetric(const TriangleMesh& a, const TriangleMesh& b,
                                           std::size_t n_samples, std::uint64_t seed);

}  // namespace gpmm
