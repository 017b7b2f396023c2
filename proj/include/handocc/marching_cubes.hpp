#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "handocc/error.hpp"
#include "handocc/geom.hpp"
#include "handocc/occnet.hpp"
#include "handocc/scene_synth.hpp"

namespace handocc {

inline constexpr int kDefaultGridResolution = 64;

/// Occupancy values on a resolution^3 lattice spanning [-1, 1]^3, x fastest.
struct OccupancyGrid {
  int resolution = 0;
  std::vector<double> values;

  OccupancyGrid() = default;
  explicit OccupancyGrid(int res, double fill = 0.0)
      : resolution(res), values(static_cast<std::size_t>(res) * res * res, fill) {
    require(res >= 2, "grid resolution must be at least 2");
  }

  double spacing() const { return 2.0 / (resolution - 1); }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(resolution) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(resolution) * k);
  }

  double& at(int i, int j, int k) { return values[index(i, j, k)]; }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }

  Vec3 point(int i, int j, int k) const {
    const double h = spacing();
    return {-1.0 + h * i, -1.0 + h * j, -1.0 + h * k};
  }

  std::vector<Vec3> lattice_points() const {
    std::vector<Vec3> out;
    out.reserve(values.size());
    for (int k = 0; k < resolution; ++k)
      for (int j = 0; j < resolution; ++j)
        for (int i = 0; i < resolution; ++i) out.push_back(point(i, j, k));
    return out;
  }

  void validate() const {
    require(resolution >= 2 && values.size() == static_cast<std::size_t>(resolution) * resolution * resolution,
            "grid size does not match its resolution");
    for (double v : values) require(std::isfinite(v) && v >= 0.0 && v <= 1.0, "grid values must lie in [0, 1]");
  }
};

/// Batch field: fills out[i] with the field value at points[i].
using BatchField = std::function<void(std::span<const Vec3> points, std::span<double> out)>;

inline constexpr std::size_t kGridChunk = 4096;

/// Evaluates `field` at every lattice point in fixed-size chunks. Chunks are
/// independent, so the result does not depend on `threads`.
inline OccupancyGrid evaluate_grid(const BatchField& field, int resolution = kDefaultGridResolution,
                                   unsigned threads = 1) {
  OccupancyGrid grid(resolution);
  const auto points = grid.lattice_points();
  const std::size_t chunks = (points.size() + kGridChunk - 1) / kGridChunk;
  auto work = [&](std::size_t first) {
    for (std::size_t c = first; c < chunks; c += std::max(1u, threads)) {
      const std::size_t b = c * kGridChunk;
      const std::size_t n = std::min(kGridChunk, points.size() - b);
      field(std::span<const Vec3>(points).subspan(b, n), std::span<double>(grid.values).subspan(b, n));
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& t : pool) t.join();
  }
  return grid;
}

inline OccupancyGrid evaluate_grid(const OccupancyNet& net, const ViewObservation& view,
                                   int resolution = kDefaultGridResolution, unsigned threads = 1) {
  return evaluate_grid(
      [&](std::span<const Vec3> pts, std::span<double> out) {
        const auto p = net.predict(pts, view);
        std::copy(p.begin(), p.end(), out.begin());
      },
      resolution, threads);
}

// ---------------------------------------------------------------------------
// Meshes

struct MeshData {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }

  void validate() const {
    const auto n = static_cast<int>(vertices.size());
    for (const auto& t : triangles) {
      for (int v : t) require(v >= 0 && v < n, "triangle index out of range");
      require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], "degenerate triangle");
    }
  }

  double area() const {
    double a = 0.0;
    for (const auto& t : triangles) a += triangle_area(t);
    return a;
  }

  double triangle_area(const std::array<int, 3>& t) const {
    const Vec3& a = vertices[static_cast<std::size_t>(t[0])];
    return 0.5 * (vertices[static_cast<std::size_t>(t[1])] - a).cross(vertices[static_cast<std::size_t>(t[2])] - a).norm();
  }

  /// Volume enclosed by a closed, outward-oriented mesh (negative when the
  /// orientation is inward).
  double signed_volume() const {
    double v = 0.0;
    for (const auto& t : triangles) {
      v += vertices[static_cast<std::size_t>(t[0])].dot(
               vertices[static_cast<std::size_t>(t[1])].cross(vertices[static_cast<std::size_t>(t[2])])) /
           6.0;
    }
    return v;
  }

  void scale(double s) {
    for (auto& v : vertices) v *= s;
  }
};

namespace detail {

/// Triangles of one cube configuration, as pairs of cube corners (edges).
using CubeEdge = std::array<std::uint8_t, 2>;
using CubeCase = std::vector<std::array<CubeEdge, 3>>;

/// Cube faces with corners counter-clockwise as seen from outside the cube.
/// Corner index = x + 2y + 4z.
inline constexpr std::array<std::array<int, 4>, 6> kCubeFaces{{
    {0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6},
}};

inline int edge_key(int a, int b) { return a < b ? a * 8 + b : b * 8 + a; }

/// Builds the triangulation for one inside/outside corner pattern. On every
/// face, each run of inside corners is cut off by its own segment, which
/// keeps neighboring cells consistent in ambiguous configurations. Segments
/// are directed so that the polygon normals face the outside corners.
inline CubeCase build_cube_case(unsigned mask) {
  auto inside = [&](int c) { return ((mask >> c) & 1u) != 0; };
  std::unordered_map<int, int> next;  // edge key -> next edge key along the loop
  std::unordered_map<int, CubeEdge> edges;
  for (const auto& f : kCubeFaces) {
    for (int k = 0; k < 4; ++k) {
      const int a = f[static_cast<std::size_t>(k)];
      const int b = f[static_cast<std::size_t>((k + 1) % 4)];
      if (inside(a) || !inside(b)) continue;
      // Entering an inside run at edge (a, b); find where it ends.
      int m = (k + 1) % 4;
      while (inside(f[static_cast<std::size_t>((m + 1) % 4)])) m = (m + 1) % 4;
      const int c = f[static_cast<std::size_t>(m)];
      const int d = f[static_cast<std::size_t>((m + 1) % 4)];
      const int from = edge_key(a, b);
      const int to = edge_key(c, d);
      edges[from] = {static_cast<std::uint8_t>(std::min(a, b)), static_cast<std::uint8_t>(std::max(a, b))};
      edges[to] = {static_cast<std::uint8_t>(std::min(c, d)), static_cast<std::uint8_t>(std::max(c, d))};
      // Walking with the inside run on the right orients normals outward.
      next[from] = to;
    }
  }
  CubeCase out;
  std::vector<int> keys;
  for (const auto& kv : next) keys.push_back(kv.first);
  std::sort(keys.begin(), keys.end());
  std::unordered_map<int, bool> used;
  for (int start : keys) {
    if (used[start]) continue;
    std::vector<int> loop;
    for (int e = start; !used[e]; e = next.at(e)) {
      used[e] = true;
      loop.push_back(e);
    }
    for (std::size_t i = 1; i + 1 < loop.size(); ++i) {
      out.push_back({edges.at(loop[0]), edges.at(loop[i]), edges.at(loop[i + 1])});
    }
  }
  return out;
}

inline const std::array<CubeCase, 256>& cube_cases() {
  static const std::array<CubeCase, 256> table = [] {
    std::array<CubeCase, 256> t;
    for (unsigned m = 0; m < 256; ++m) t[m] = build_cube_case(m);
    return t;
  }();
  return table;
}

}  // namespace detail

/// Extracts the iso-surface between values > iso (inside) and <= iso
/// (outside), with vertices linearly interpolated along lattice edges and
/// shared between neighboring cells. Triangle normals point toward lower
/// values. Throws EmptyField when nothing crosses iso.
inline MeshData marching_cubes(const OccupancyGrid& grid, double iso = 0.5) {
  require(grid.resolution >= 2, "grid resolution must be at least 2");
  const auto& cases = detail::cube_cases();
  const int r = grid.resolution;
  MeshData mesh;
  std::unordered_map<std::uint64_t, int> vertex_of_edge;

  auto vertex = [&](int i, int j, int k, const detail::CubeEdge& e) {
    const int a = e[0];
    const int b = e[1];
    const int ai = i + (a & 1), aj = j + ((a >> 1) & 1), ak = k + ((a >> 2) & 1);
    const int axis = (a ^ b) == 1 ? 0 : ((a ^ b) == 2 ? 1 : 2);
    const std::uint64_t key = static_cast<std::uint64_t>(grid.index(ai, aj, ak)) * 3 + static_cast<std::uint64_t>(axis);
    if (auto it = vertex_of_edge.find(key); it != vertex_of_edge.end()) return it->second;
    const int bi = i + (b & 1), bj = j + ((b >> 1) & 1), bk = k + ((b >> 2) & 1);
    const double va = grid.at(ai, aj, ak);
    const double vb = grid.at(bi, bj, bk);
    const double t = (iso - va) / (vb - va);
    const Vec3 pa = grid.point(ai, aj, ak);
    const Vec3 pb = grid.point(bi, bj, bk);
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pa + t * (pb - pa));
    vertex_of_edge.emplace(key, id);
    return id;
  };

  for (int k = 0; k + 1 < r; ++k) {
    for (int j = 0; j + 1 < r; ++j) {
      for (int i = 0; i + 1 < r; ++i) {
        unsigned mask = 0;
        for (unsigned c = 0; c < 8; ++c) {
          if (grid.at(i + static_cast<int>(c & 1), j + static_cast<int>((c >> 1) & 1),
                      k + static_cast<int>((c >> 2) & 1)) > iso) {
            mask |= 1u << c;
          }
        }
        for (const auto& tri : cases[mask]) {
          mesh.triangles.push_back({vertex(i, j, k, tri[0]), vertex(i, j, k, tri[1]), vertex(i, j, k, tri[2])});
        }
      }
    }
  }
  if (mesh.triangles.empty()) throw Error(ErrorCode::EmptyField, "no cell crosses the iso level");
  return mesh;
}

/// V - E + F over welded vertices and undirected edges.
inline long euler_characteristic(const MeshData& mesh) {
  std::unordered_map<std::uint64_t, int> edges;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const auto a = static_cast<std::uint64_t>(std::min(t[e], t[(e + 1) % 3]));
      const auto b = static_cast<std::uint64_t>(std::max(t[e], t[(e + 1) % 3]));
      ++edges[(a << 32) | b];
    }
  }
  return static_cast<long>(mesh.vertices.size()) - static_cast<long>(edges.size()) +
         static_cast<long>(mesh.triangles.size());
}

/// Every directed edge is matched by exactly one opposite edge.
inline bool is_closed_manifold(const MeshData& mesh) {
  std::unordered_map<std::uint64_t, int> directed;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const auto a = static_cast<std::uint64_t>(t[e]);
      const auto b = static_cast<std::uint64_t>(t[(e + 1) % 3]);
      if (++directed[(a << 32) | b] > 1) return false;
    }
  }
  for (const auto& [key, count] : directed) {
    const std::uint64_t reversed = (key << 32) | (key >> 32);
    if (directed.find(reversed) == directed.end()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Text mesh files: "v x y z" lines, then "f a b c" lines with 1-based indices.

inline void write_obj(std::ostream& os, const MeshData& mesh) {
  std::ostringstream buf;
  buf << std::setprecision(9);
  for (const auto& v : mesh.vertices) buf << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) buf << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  os << buf.str();
}

inline MeshData read_obj(std::istream& is) {
  MeshData mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw Error(ErrorCode::Format, "bad vertex on line " + std::to_string(line_no));
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      for (int& idx : t) {
        std::string tok;
        if (!(ls >> tok)) throw Error(ErrorCode::Format, "bad face on line " + std::to_string(line_no));
        idx = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      mesh.triangles.push_back(t);
    }
  }
  try {
    mesh.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Format, e.what());
  }
  return mesh;
}

}  // namespace handocc
