#include "bifctl/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "bifctl/error.hpp"

namespace bifctl {

namespace {

using Json = nlohmann::json;

double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * cross(b - a, c - a);
}

std::pair<int, int> edge_key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

}  // namespace

TriMesh::TriMesh(std::vector<Vec2> vertices, std::vector<Triangle> triangles,
                 std::vector<BoundaryEdge> boundary_edges, std::vector<bool> fixed_vertices)
    : vertices_(std::move(vertices)),
      triangles_(std::move(triangles)),
      boundary_edges_(std::move(boundary_edges)),
      fixed_(std::move(fixed_vertices)) {
  const int nv = static_cast<int>(vertices_.size());
  if (fixed_.size() != vertices_.size()) {
    throw InvalidArgument("fixed_vertices: length " + std::to_string(fixed_.size()) +
                          " does not match vertex count " + std::to_string(nv));
  }
  for (const Vec2& v : vertices_) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y)) {
      throw InvalidArgument("vertices: non-finite coordinate");
    }
  }

  std::map<std::pair<int, int>, int> edge_count;
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const Triangle& tri = triangles_[t];
    for (int k = 0; k < 3; ++k) {
      if (tri[k] < 0 || tri[k] >= nv) {
        throw InvalidArgument("triangles[" + std::to_string(t) + "]: vertex index " +
                              std::to_string(tri[k]) + " out of range");
      }
    }
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
      throw InvalidArgument("triangles[" + std::to_string(t) + "]: repeated vertex");
    }
    if (!(signed_area(t) > 0.0)) {
      throw InvalidArgument("triangles[" + std::to_string(t) +
                            "]: non-positive signed area (clockwise or degenerate)");
    }
    for (int k = 0; k < 3; ++k) ++edge_count[edge_key(tri[k], tri[(k + 1) % 3])];
  }
  for (const auto& [edge, count] : edge_count) {
    if (count > 2) {
      throw InvalidArgument("edge (" + std::to_string(edge.first) + ", " +
                            std::to_string(edge.second) + ") shared by more than two triangles");
    }
  }
  for (std::size_t e = 0; e < boundary_edges_.size(); ++e) {
    const auto& [a, b] = boundary_edges_[e].vertices;
    if (a < 0 || a >= nv || b < 0 || b >= nv) {
      throw InvalidArgument("boundary_edges[" + std::to_string(e) + "]: vertex index out of range");
    }
    auto it = edge_count.find(edge_key(a, b));
    if (it == edge_count.end() || it->second != 1) {
      throw InvalidArgument("boundary_edges[" + std::to_string(e) +
                            "]: not adjacent to exactly one triangle");
    }
  }
}

double TriMesh::signed_area(std::size_t t) const {
  const Triangle& tri = triangles_[t];
  return bifctl::signed_area(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]);
}

double TriMesh::area() const {
  double total = 0.0;
  for (std::size_t t = 0; t < triangles_.size(); ++t) total += signed_area(t);
  return total;
}

std::vector<bool> TriMesh::boundary_mask(const std::string& tag) const {
  std::vector<bool> mask(vertices_.size(), false);
  for (const BoundaryEdge& e : boundary_edges_) {
    if (e.tag != tag) continue;
    mask[e.vertices[0]] = true;
    mask[e.vertices[1]] = true;
  }
  return mask;
}

TriMesh TriMesh::with_fixed(std::vector<bool> fixed) const {
  return TriMesh(vertices_, triangles_, boundary_edges_, std::move(fixed));
}

std::string TriMesh::checksum() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](std::uint64_t word) {
    for (int byte = 0; byte < 8; ++byte) {
      hash ^= (word >> (8 * byte)) & 0xffU;
      hash *= 0x100000001b3ULL;
    }
  };
  for (const Vec2& v : vertices_) {
    mix(std::bit_cast<std::uint64_t>(v.x));
    mix(std::bit_cast<std::uint64_t>(v.y));
  }
  for (const Triangle& t : triangles_) {
    for (int i : t) mix(static_cast<std::uint64_t>(i));
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << hash;
  return out.str();
}

// ---------------------------------------------------------------------------
// Generators
//
// Both domains are convex and star-shaped about the origin. The mesh is a
// stack of homothetic copies of the boundary curve (scale k/N, k = 1..N),
// each sampled uniformly in arclength at spacing ~h, plus the center vertex.
// Consecutive layers are stitched by sweeping both rings in polar angle.

namespace {

struct Ring {
  std::vector<int> ids;        // vertex indices in increasing polar angle
  std::vector<double> angles;  // polar angles in [0, 2pi)
};

double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  return a < 0.0 ? a + two_pi : a;
}

void add_triangle(const std::vector<Vec2>& pts, std::vector<Triangle>& tris, int a, int b, int c) {
  const double area = signed_area(pts[a], pts[b], pts[c]);
  if (area > 0.0) {
    tris.push_back({a, b, c});
  } else if (area < 0.0) {
    tris.push_back({a, c, b});
  } else {
    throw Error("mesh generator produced a degenerate triangle");
  }
}

// Triangulates the annulus between two nested rings.
void stitch_rings(const std::vector<Vec2>& pts, const Ring& inner, const Ring& outer,
                  std::vector<Triangle>& tris) {
  const double two_pi = 2.0 * std::numbers::pi;
  const std::size_t m = inner.ids.size();
  const std::size_t n = outer.ids.size();
  const double base = inner.angles[0];

  // Start the outer ring at the point closest in angle to inner[0].
  std::size_t j0 = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    double d = wrap_angle(outer.angles[j] - base);
    d = std::min(d, two_pi - d);
    if (d < best) {
      best = d;
      j0 = j;
    }
  }
  auto inner_angle = [&](std::size_t i) {
    if (i >= m) return two_pi;
    return wrap_angle(inner.angles[i] - base);
  };
  double outer_start = wrap_angle(outer.angles[j0] - base);
  if (outer_start > std::numbers::pi) outer_start -= two_pi;
  auto outer_angle = [&](std::size_t j) {
    return outer_start + wrap_angle(outer.angles[(j0 + j) % n] - outer.angles[j0]) +
           (j >= n ? two_pi : 0.0);
  };
  auto inner_id = [&](std::size_t i) { return inner.ids[i % m]; };
  auto outer_id = [&](std::size_t j) { return outer.ids[(j0 + j) % n]; };

  std::size_t i = 0;
  std::size_t j = 0;
  while (i < m || j < n) {
    const bool advance_inner = (j == n) || (i < m && inner_angle(i + 1) < outer_angle(j + 1));
    if (advance_inner) {
      add_triangle(pts, tris, inner_id(i), inner_id(i + 1), outer_id(j));
      ++i;
    } else {
      add_triangle(pts, tris, inner_id(i), outer_id(j + 1), outer_id(j));
      ++j;
    }
  }
}

// `boundary(t)` maps arclength t in [0, perimeter) to a boundary point.
TriMesh layered_mesh(const std::function<Vec2(double)>& boundary, double perimeter,
                     double inradius, double h) {
  const double layer_spacing = h * std::sqrt(3.0) / 2.0;
  const int layers = std::max(1, static_cast<int>(std::ceil(inradius / layer_spacing - 1e-9)));
  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;

  std::vector<Vec2> pts{{0.0, 0.0}};
  std::vector<Triangle> tris;
  std::vector<Ring> rings;

  for (int k = 1; k <= layers; ++k) {
    const double scale = static_cast<double>(k) / layers;
    const int count = std::max(5, static_cast<int>(std::lround(scale * perimeter / h)));
    const double offset = std::fmod(golden * k, 1.0);
    std::vector<std::pair<double, int>> order;
    for (int p = 0; p < count; ++p) {
      const double t = (p + offset) * perimeter / count;
      const Vec2 q = scale * boundary(t);
      order.emplace_back(wrap_angle(std::atan2(q.y, q.x)), static_cast<int>(pts.size()));
      pts.push_back(q);
    }
    std::sort(order.begin(), order.end());
    Ring ring;
    for (const auto& [angle, id] : order) {
      ring.angles.push_back(angle);
      ring.ids.push_back(id);
    }
    rings.push_back(std::move(ring));
  }

  const Ring& first = rings.front();
  for (std::size_t p = 0; p < first.ids.size(); ++p) {
    add_triangle(pts, tris, 0, first.ids[p], first.ids[(p + 1) % first.ids.size()]);
  }
  for (std::size_t k = 1; k < rings.size(); ++k) stitch_rings(pts, rings[k - 1], rings[k], tris);

  std::vector<BoundaryEdge> edges;
  const Ring& last = rings.back();
  for (std::size_t p = 0; p < last.ids.size(); ++p) {
    edges.push_back({{last.ids[p], last.ids[(p + 1) % last.ids.size()]}, "outer"});
  }
  std::vector<bool> fixed(pts.size(), false);
  return TriMesh(std::move(pts), std::move(tris), std::move(edges), std::move(fixed));
}

}  // namespace

TriMesh gen_unit_disk(double h) {
  if (!(h > 0.0 && h < 1.0)) {
    throw InvalidArgument("gen_unit_disk: target edge length must satisfy 0 < h < 1");
  }
  auto circle = [](double t) { return Vec2{std::cos(t), std::sin(t)}; };
  return layered_mesh(circle, 2.0 * std::numbers::pi, 1.0, h);
}

TriMesh gen_rounded_square(double edge, double r, double h) {
  if (!(r > 0.0 && 2.0 * r < edge)) {
    throw InvalidArgument("gen_rounded_square: corner radius must satisfy 0 < 2r < edge");
  }
  if (!(h > 0.0 && h < r)) {
    throw InvalidArgument("gen_rounded_square: target edge length must satisfy 0 < h < r");
  }
  const double a = edge / 2.0;
  const double straight = 2.0 * (a - r);
  const double arc = std::numbers::pi * r / 2.0;
  const double side = straight + arc;

  // Starts at (a, 0) and runs counterclockwise. Each side is half a straight
  // segment, a corner arc, and the next half segment.
  auto boundary = [=](double t) {
    const int quadrant = std::min(3, static_cast<int>(t / side));
    double s = t - quadrant * side;
    Vec2 p;
    if (s < straight / 2.0) {
      p = {a, s};
    } else if (s < straight / 2.0 + arc) {
      const double theta = (s - straight / 2.0) / r;
      p = {a - r + r * std::cos(theta), a - r + r * std::sin(theta)};
    } else {
      p = {a - r - (s - straight / 2.0 - arc), a};
    }
    // Rotate by quadrant * 90 degrees.
    for (int q = 0; q < quadrant; ++q) p = {-p.y, p.x};
    return p;
  };
  return layered_mesh(boundary, 4.0 * side, a, h);
}

double min_jacobian_ratio(const TriMesh& mesh, const VertexField& d) {
  if (d.size() != mesh.num_vertices()) {
    throw InvalidArgument("min_jacobian_ratio: displacement size does not match vertex count");
  }
  const auto& x = mesh.vertices();
  double ratio = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const Triangle& tri = mesh.triangles()[t];
    const double moved = signed_area(x[tri[0]] + d[tri[0]], x[tri[1]] + d[tri[1]],
                                     x[tri[2]] + d[tri[2]]);
    ratio = std::min(ratio, moved / mesh.signed_area(t));
  }
  return ratio;
}

TriMesh apply_displacement(const TriMesh& mesh, const VertexField& d, double threshold) {
  const double ratio = min_jacobian_ratio(mesh, d);
  if (!(ratio > threshold)) {
    throw TangledMesh("apply_displacement: min Jacobian ratio " + std::to_string(ratio) +
                      " not above threshold " + std::to_string(threshold));
  }
  std::vector<Vec2> moved = mesh.vertices();
  for (std::size_t v = 0; v < moved.size(); ++v) moved[v] += d[v];
  return TriMesh(std::move(moved), mesh.triangles(), mesh.boundary_edges(),
                 mesh.fixed_vertices());
}

// ---------------------------------------------------------------------------
// JSON I/O

std::string mesh_to_json(const TriMesh& mesh) {
  Json j;
  j["vertices"] = Json::array();
  for (const Vec2& v : mesh.vertices()) j["vertices"].push_back({v.x, v.y});
  j["triangles"] = Json::array();
  for (const Triangle& t : mesh.triangles()) j["triangles"].push_back({t[0], t[1], t[2]});
  j["boundary_edges"] = Json::array();
  for (const BoundaryEdge& e : mesh.boundary_edges()) {
    j["boundary_edges"].push_back({e.vertices[0], e.vertices[1], e.tag});
  }
  j["fixed_vertices"] = Json::array();
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    if (mesh.fixed_vertices()[v]) j["fixed_vertices"].push_back(v);
  }
  return j.dump();
}

TriMesh mesh_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(std::string("mesh JSON: ") + e.what());
  }
  auto require_array = [&](const char* key) -> const Json& {
    if (!j.is_object() || !j.contains(key) || !j[key].is_array()) {
      throw InvalidArgument(std::string("mesh JSON: missing array field '") + key + "'");
    }
    return j[key];
  };
  auto field_error = [](const char* key, std::size_t i, const std::string& msg) {
    return InvalidArgument(std::string("mesh JSON: ") + key + "[" + std::to_string(i) + "]: " + msg);
  };

  std::vector<Vec2> vertices;
  const Json& jv = require_array("vertices");
  for (std::size_t i = 0; i < jv.size(); ++i) {
    const Json& p = jv[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw field_error("vertices", i, "expected [x, y]");
    }
    vertices.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  std::vector<Triangle> triangles;
  const Json& jt = require_array("triangles");
  for (std::size_t i = 0; i < jt.size(); ++i) {
    const Json& t = jt[i];
    if (!t.is_array() || t.size() != 3 || !t[0].is_number_integer() ||
        !t[1].is_number_integer() || !t[2].is_number_integer()) {
      throw field_error("triangles", i, "expected [i, j, k]");
    }
    triangles.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  }
  std::vector<BoundaryEdge> edges;
  const Json& je = require_array("boundary_edges");
  for (std::size_t i = 0; i < je.size(); ++i) {
    const Json& e = je[i];
    if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() ||
        !e[1].is_number_integer() || !e[2].is_string()) {
      throw field_error("boundary_edges", i, "expected [i, j, tag]");
    }
    edges.push_back({{e[0].get<int>(), e[1].get<int>()}, e[2].get<std::string>()});
  }
  std::vector<bool> fixed(vertices.size(), false);
  const Json& jf = require_array("fixed_vertices");
  for (std::size_t i = 0; i < jf.size(); ++i) {
    if (!jf[i].is_number_integer()) throw field_error("fixed_vertices", i, "expected index");
    const long v = jf[i].get<long>();
    if (v < 0 || v >= static_cast<long>(vertices.size())) {
      throw field_error("fixed_vertices", i, "index out of range");
    }
    fixed[v] = true;
  }
  return TriMesh(std::move(vertices), std::move(triangles), std::move(edges), std::move(fixed));
}

TriMesh read_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("read_mesh: cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return mesh_from_json(buffer.str());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

void write_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("write_mesh: cannot open " + path.string() + " for writing");
  out << mesh_to_json(mesh) << '\n';
  if (!out) throw Error("write_mesh: write failed for " + path.string());
}

}  // namespace bifctl
