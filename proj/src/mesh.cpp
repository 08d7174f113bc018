#include "gpmm/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

namespace gpmm {

namespace {

double tri_area(const Point3& a, const Point3& b, const Point3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

// shortest round-tripping decimal form
std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Point3> vertices, std::vector<std::array<int, 3>> triangles)
    : vertices_(std::move(vertices)) {
    for (const auto& v : vertices_) {
        if (!v.allFinite()) throw UsageError("mesh vertex with non-finite coordinates");
    }
    double max_edge_sq = 0.0;
    triangles_.reserve(triangles.size());
    for (const auto& t : triangles) {
        for (int i : t) {
            if (i < 0 || i >= static_cast<int>(vertices_.size()))
                throw UsageError("triangle vertex index out of range");
        }
        const Point3 &a = vertices_[t[0]], &b = vertices_[t[1]], &c = vertices_[t[2]];
        max_edge_sq = std::max({max_edge_sq, (b - a).squaredNorm(), (c - a).squaredNorm(),
                                (c - b).squaredNorm()});
    }
    const double area_floor = 1e-12 * std::max(max_edge_sq, 1e-300);
    for (const auto& t : triangles) {
        const double area =
            tri_area(vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
        if (!(area > area_floor)) {
            ++dropped_;
            continue;
        }
        triangles_.push_back(t);
        areas_.push_back(area);
        total_area_ += area;
    }
    if (dropped_ > 0)
        std::cerr << "warning: dropped " << dropped_ << " degenerate triangle(s)\n";
}

TriangleMesh TriangleMesh::translated(const Vector3& t) const {
    std::vector<Point3> verts = vertices_;
    for (auto& v : verts) v += t;
    return TriangleMesh(std::move(verts), triangles_);
}

// ---------------------------------------------------------------------------
// PLY I/O

TriangleMesh read_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open PLY file: " + path);
    return read_ply(in, path);
}

TriangleMesh read_ply(std::istream& in, const std::string& name) {
    auto fail = [&](const std::string& msg) -> void {
        throw UsageError("PLY " + name + ": " + msg);
    };

    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply") fail("missing 'ply' magic");

    std::size_t n_vertices = 0, n_faces = 0;
    // column positions of x, y, z among the vertex properties
    int col_x = -1, col_y = -1, col_z = -1;
    int vertex_prop_count = 0;
    std::string current_element;
    bool header_done = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok == "format" || tok.empty()) {
            continue;
        } else if (tok == "element") {
            std::string kind;
            std::size_t count = 0;
            ls >> kind >> count;
            current_element = kind;
            if (kind == "vertex") n_vertices = count;
            else if (kind == "face") n_faces = count;
        } else if (tok == "property") {
            if (current_element == "vertex") {
                std::string type, pname;
                ls >> type;
                if (type == "list") {
                    ls >> pname >> pname;  // skip list size/index types
                }
                ls >> pname;
                if (pname == "x") col_x = vertex_prop_count;
                if (pname == "y") col_y = vertex_prop_count;
                if (pname == "z") col_z = vertex_prop_count;
                ++vertex_prop_count;
            }
        } else if (tok == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done) fail("missing end_header");
    if (col_x < 0 || col_y < 0 || col_z < 0) fail("vertex element lacks x/y/z properties");

    std::vector<Point3> vertices(n_vertices);
    for (std::size_t i = 0; i < n_vertices; ++i) {
        if (!std::getline(in, line)) fail("unexpected end of vertex data");
        std::istringstream ls(line);
        std::vector<double> vals(vertex_prop_count);
        for (int c = 0; c < vertex_prop_count; ++c) {
            if (!(ls >> vals[c])) fail("malformed vertex line " + std::to_string(i));
        }
        vertices[i] = Point3(vals[col_x], vals[col_y], vals[col_z]);
    }
    std::vector<std::array<int, 3>> faces(n_faces);
    for (std::size_t i = 0; i < n_faces; ++i) {
        if (!std::getline(in, line)) fail("unexpected end of face data");
        std::istringstream ls(line);
        int cnt = 0;
        if (!(ls >> cnt)) fail("malformed face line " + std::to_string(i));
        if (cnt != 3) fail("only triangular faces are supported");
        if (!(ls >> faces[i][0] >> faces[i][1] >> faces[i][2]))
            fail("malformed face line " + std::to_string(i));
    }
    return TriangleMesh(std::move(vertices), std::move(faces));
}

void write_ply(const TriangleMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write PLY file: " + path);
    write_ply(mesh, out);
}

void write_ply(const TriangleMesh& mesh, std::ostream& out) {
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertices().size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "element face " << mesh.triangles().size() << "\n";
    out << "property list uchar int vertex_indices\n";
    out << "end_header\n";
    for (const auto& v : mesh.vertices())
        out << fmt_double(v.x()) << ' ' << fmt_double(v.y()) << ' ' << fmt_double(v.z()) << '\n';
    for (const auto& t : mesh.triangles())
        out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

// ---------------------------------------------------------------------------
// Closest point on a triangle, Ericson-style region classification.

Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b,
                                 const Point3& c) {
    const Vector3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vector3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return a + v * ab;
    }

    const Vector3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return a + w * ac;
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return a + v * ab + w * ac;
}

// ---------------------------------------------------------------------------
// AABB tree

struct ClosestPointIndex::Node {
    Point3 lo, hi;
    int left = -1, right = -1;  // children, or leaf range when left == -1
    int begin = 0, end = 0;     // leaf triangle range in leaf_tris_
};

namespace {

double aabb_distance_sq(const Point3& lo, const Point3& hi, const Point3& p) {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) {
        const double v = p[k] < lo[k] ? lo[k] - p[k] : (p[k] > hi[k] ? p[k] - hi[k] : 0.0);
        d += v * v;
    }
    return d;
}

}  // namespace

ClosestPointIndex::ClosestPointIndex(const TriangleMesh& mesh)
    : mesh_(std::make_unique<TriangleMesh>(mesh)) {
    if (mesh_->empty()) throw UsageError("closest-point index over an empty mesh");
    const auto& tris = mesh_->triangles();
    std::vector<Point3> centroids(tris.size());
    for (std::size_t t = 0; t < tris.size(); ++t) {
        centroids[t] = (mesh_->vertices()[tris[t][0]] + mesh_->vertices()[tris[t][1]] +
                        mesh_->vertices()[tris[t][2]]) /
                       3.0;
    }
    std::vector<int> order(tris.size());
    for (std::size_t t = 0; t < tris.size(); ++t) order[t] = static_cast<int>(t);
    nodes_.reserve(2 * tris.size());
    build(order, 0, static_cast<int>(order.size()), centroids);
}

ClosestPointIndex::~ClosestPointIndex() = default;
ClosestPointIndex::ClosestPointIndex(ClosestPointIndex&&) noexcept = default;
ClosestPointIndex& ClosestPointIndex::operator=(ClosestPointIndex&&) noexcept = default;

int ClosestPointIndex::build(std::vector<int>& tris, int begin, int end,
                             const std::vector<Point3>& centroids) {
    const int node_id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    Point3 lo = Point3::Constant(std::numeric_limits<double>::infinity());
    Point3 hi = -lo;
    const auto& verts = mesh_->vertices();
    for (int i = begin; i < end; ++i) {
        for (int v : mesh_->triangles()[tris[i]]) {
            lo = lo.cwiseMin(verts[v]);
            hi = hi.cwiseMax(verts[v]);
        }
    }
    nodes_[node_id].lo = lo;
    nodes_[node_id].hi = hi;

    constexpr int kLeafSize = 4;
    if (end - begin <= kLeafSize) {
        nodes_[node_id].begin = static_cast<int>(leaf_tris_.size());
        // keep ascending triangle order inside the leaf for deterministic ties
        std::sort(tris.begin() + begin, tris.begin() + end);
        leaf_tris_.insert(leaf_tris_.end(), tris.begin() + begin, tris.begin() + end);
        nodes_[node_id].end = static_cast<int>(leaf_tris_.size());
        return node_id;
    }

    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(tris.begin() + begin, tris.begin() + mid, tris.begin() + end,
                     [&](int a, int b) {
                         if (centroids[a][axis] != centroids[b][axis])
                             return centroids[a][axis] < centroids[b][axis];
                         return a < b;
                     });
    const int l = build(tris, begin, mid, centroids);
    const int r = build(tris, mid, end, centroids);
    nodes_[node_id].left = l;
    nodes_[node_id].right = r;
    return node_id;
}

ClosestPointIndex::Result ClosestPointIndex::query(const Point3& x) const {
    Result best{Point3::Zero(), std::numeric_limits<double>::infinity(),
                std::numeric_limits<int>::max()};
    double best_sq = std::numeric_limits<double>::infinity();

    // explicit stack, children visited nearer-first
    std::vector<int> stack;
    stack.reserve(64);
    stack.push_back(0);
    const auto& verts = mesh_->vertices();
    const auto& tris = mesh_->triangles();
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        const Node& node = nodes_[id];
        if (aabb_distance_sq(node.lo, node.hi, x) > best_sq) continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int t = leaf_tris_[i];
                const Point3 cp = closest_point_on_triangle(x, verts[tris[t][0]],
                                                            verts[tris[t][1]], verts[tris[t][2]]);
                const double d_sq = (x - cp).squaredNorm();
                if (d_sq < best_sq || (d_sq == best_sq && t < best.triangle)) {
                    best_sq = d_sq;
                    best = Result{cp, std::sqrt(d_sq), t};
                }
            }
        } else {
            const double dl = aabb_distance_sq(nodes_[node.left].lo, nodes_[node.left].hi, x);
            const double dr = aabb_distance_sq(nodes_[node.right].lo, nodes_[node.right].hi, x);
            // push the farther child first so the nearer is processed next
            if (dl <= dr) {
                stack.push_back(node.right);
                stack.push_back(node.left);
            } else {
                stack.push_back(node.left);
                stack.push_back(node.right);
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Sampling and surface distances

std::vector<Point3> sample_surface_points(const TriangleMesh& mesh, std::size_t n,
                                          std::uint64_t seed) {
    if (mesh.empty()) throw UsageError("sampling from an empty mesh");
    if (n == 0) throw UsageError("sample_surface_points requires n >= 1");
    std::vector<double> areas(mesh.triangles().size());
    for (std::size_t t = 0; t < areas.size(); ++t) areas[t] = mesh.triangle_area(t);
    Rng rng = make_rng(seed);
    std::discrete_distribution<int> pick(areas.begin(), areas.end());
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<Point3> points;
    points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int t = pick(rng);
        const auto& tri = mesh.triangles()[t];
        const double su = std::sqrt(unit(rng));
        const double v = unit(rng);
        const Point3 &a = mesh.vertices()[tri[0]], &b = mesh.vertices()[tri[1]],
                     &c = mesh.vertices()[tri[2]];
        points.push_back((1.0 - su) * a + su * (1.0 - v) * b + su * v * c);
    }
    return points;
}

SurfaceDistance surface_distance(const TriangleMesh& from, const TriangleMesh& to,
                                 std::size_t n_samples, std::uint64_t seed) {
    const auto samples = sample_surface_points(from, n_samples, seed);
    const ClosestPointIndex index(to);
    std::vector<double> dist(samples.size());
    parallel_for(samples.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) dist[i] = index.query(samples[i]).distance;
    });
    SurfaceDistance result;
    for (double d : dist) {
        result.mean += d;
        result.max = std::max(result.max, d);
    }
    result.mean /= static_cast<double>(dist.size());
    return result;
}

SurfaceDistance surface_distance_symmetric(const TriangleMesh& a, const TriangleMesh& b,
                                           std::size_t n_samples, std::uint64_t seed) {
    const SurfaceDistance ab = surface_distance(a, b, n_samples, seed);
    const SurfaceDistance ba = surface_distance(b, a, n_samples, seed);
    return SurfaceDistance{std::max(ab.mean, ba.mean), std::max(ab.max, ba.max)};
}

}  // namespace gpmm
