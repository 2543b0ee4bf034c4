#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bifctl {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  Vec2& operator*=(double s) {
    x *= s;
    y *= s;
    return *this;
  }
  friend Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend Vec2 operator*(double s, Vec2 a) { return a *= s; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

using Triangle = std::array<int, 3>;

struct BoundaryEdge {
  std::array<int, 2> vertices;
  std::string tag;
  friend bool operator==(const BoundaryEdge&, const BoundaryEdge&) = default;
};

/// One displacement vector per mesh vertex.
using VertexField = std::vector<Vec2>;

/// Triangle mesh with fixed connectivity. Only vertex coordinates change
/// during shape optimization (see apply_displacement).
///
/// Construction validates the invariants and throws InvalidArgument on
/// violation: indices in range, strictly positive (counterclockwise) signed
/// area for every triangle, each boundary edge adjacent to exactly one
/// triangle, and a fixed mask of matching length.
class TriMesh {
 public:
  TriMesh(std::vector<Vec2> vertices, std::vector<Triangle> triangles,
          std::vector<BoundaryEdge> boundary_edges, std::vector<bool> fixed_vertices);

  const std::vector<Vec2>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_edges_; }
  const std::vector<bool>& fixed_vertices() const { return fixed_; }

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_triangles() const { return triangles_.size(); }

  double signed_area(std::size_t t) const;
  double area() const;

  /// Vertices on boundary edges carrying `tag`.
  std::vector<bool> boundary_mask(const std::string& tag = "outer") const;

  /// Copy with every vertex frozen or released.
  TriMesh with_fixed(std::vector<bool> fixed) const;

  /// 64-bit FNV-1a over coordinates (bit patterns) and connectivity, hex encoded.
  std::string checksum() const;

  friend bool operator==(const TriMesh&, const TriMesh&) = default;

 private:
  std::vector<Vec2> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<BoundaryEdge> boundary_edges_;
  std::vector<bool> fixed_;
};

/// Disk {x^2 + y^2 < 1} with target edge length h, 0 < h < 1.
TriMesh gen_unit_disk(double h);

/// Square of side `edge` centered at the origin with quarter-circle corner
/// fillets of radius r. Requires 0 < 2r < edge and 0 < h < r.
TriMesh gen_rounded_square(double edge, double r, double h);

/// Minimum over triangles of area(deformed) / area(original) for the
/// vertex displacement d. Negative when some triangle is inverted.
double min_jacobian_ratio(const TriMesh& mesh, const VertexField& d);

/// Default threshold below which a displacement counts as tangling.
inline constexpr double kDefaultTangleThreshold = 1e-3;

/// Moves every vertex by d. Throws TangledMesh when
/// min_jacobian_ratio(mesh, d) <= threshold.
TriMesh apply_displacement(const TriMesh& mesh, const VertexField& d,
                           double threshold = 0.0);

TriMesh read_mesh(const std::filesystem::path& path);
void write_mesh(const TriMesh& mesh, const std::filesystem::path& path);

/// JSON text form used by read_mesh/write_mesh.
std::string mesh_to_json(const TriMesh& mesh);
TriMesh mesh_from_json(const std::string& text);

}  // namespace bifctl
