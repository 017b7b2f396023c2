#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "handocc/error.hpp"
#include "handocc/geom.hpp"
#include "handocc/marching_cubes.hpp"
#include "handocc/random.hpp"

namespace handocc {

inline constexpr std::size_t kDefaultSurfaceSamples = 10000;

/// Area-weighted uniform samples on the mesh surface.
inline std::vector<Vec3> sample_surface(const MeshData& mesh, std::size_t count, std::uint64_t seed) {
  require(!mesh.empty(), "cannot sample an empty mesh");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    total += mesh.triangle_area(t);
    cumulative.push_back(total);
  }
  require(total > 0.0, "mesh has zero surface area");
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double r = rng.uniform(0.0, total);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    if (it == cumulative.end()) --it;
    const auto& t = mesh.triangles[static_cast<std::size_t>(it - cumulative.begin())];
    const double s = std::sqrt(rng.uniform());
    const double u = rng.uniform();
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    out.push_back((1.0 - s) * a + s * (1.0 - u) * b + s * u * c);
  }
  return out;
}

/// Uniform grid over a point cloud for exact nearest-neighbor distance
/// queries.
class PointIndex {
 public:
  explicit PointIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    require(!points_.empty(), "cannot index an empty point cloud");
    lo_ = hi_ = points_.front();
    for (const Vec3& p : points_) {
      lo_ = lo_.cwiseMin(p);
      hi_ = hi_.cwiseMax(p);
    }
    const Vec3 extent = hi_ - lo_;
    // Shrink cells from one bounding cell until there are about two points
    // per cell; this copes with flat and degenerate clouds alike.
    cell_ = std::max(extent.maxCoeff(), 1e-12);
    const double target = std::max(1.0, static_cast<double>(points_.size()) / 2.0);
    for (int it = 0; it < 200 && cell_count(extent, cell_) < target && cell_ > 1e-12; ++it) cell_ *= 0.8;
    for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::floor(extent[a] / cell_)) + 1);

    const std::size_t cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    start_.assign(cells + 1, 0);
    std::vector<std::size_t> cell_of(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto c = cell_coords(points_[i]);
      cell_of[i] = flat(c[0], c[1], c[2]);
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
    order_.resize(points_.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i) order_[fill[cell_of[i]]++] = i;
  }

  std::size_t size() const { return points_.size(); }

  /// Distance from q to its nearest indexed point.
  double nearest_distance(const Vec3& q) const {
    // Search outward from the cell of q's projection onto the bounding box.
    // For x in the box, |x - q|^2 >= |x - q'|^2 + |q - q'|^2.
    const Vec3 qp = q.cwiseMax(lo_).cwiseMin(hi_);
    const double outside2 = (q - qp).squaredNorm();
    const auto qc = cell_coords(qp);
    int max_ring = 0;
    for (int a = 0; a < 3; ++a) max_ring = std::max({max_ring, qc[a], dims_[a] - 1 - qc[a]});
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r <= max_ring; ++r) {
      visit_ring(qc, r, [&](std::size_t cell) {
        for (std::size_t k = start_[cell]; k < start_[cell + 1]; ++k) {
          best = std::min(best, (points_[order_[k]] - q).norm());
        }
      });
      // Every unvisited point lies in a ring beyond r, at least r cells from q'.
      const double reach = r * cell_;
      if (best * best <= reach * reach + outside2) break;
    }
    return best;
  }

 private:
  static double cell_count(const Vec3& extent, double cell) {
    double n = 1;
    for (int a = 0; a < 3; ++a) n *= std::floor(extent[a] / cell) + 1;
    return n;
  }

  std::array<int, 3> cell_coords(const Vec3& p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
    return c;
  }

  std::size_t flat(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_[1]) * z);
  }

  template <typename Fn>
  void visit_ring(const std::array<int, 3>& qc, int r, Fn&& fn) const {
    const int x0 = std::max(qc[0] - r, 0), x1 = std::min(qc[0] + r, dims_[0] - 1);
    const int y0 = std::max(qc[1] - r, 0), y1 = std::min(qc[1] + r, dims_[1] - 1);
    const int z0 = std::max(qc[2] - r, 0), z1 = std::min(qc[2] + r, dims_[2] - 1);
    for (int z = z0; z <= z1; ++z) {
      for (int y = y0; y <= y1; ++y) {
        const bool shell_yz = std::abs(z - qc[2]) == r || std::abs(y - qc[1]) == r;
        if (shell_yz) {
          for (int x = x0; x <= x1; ++x) fn(flat(x, y, z));
        } else {
          if (qc[0] - r >= 0 && qc[0] - r < dims_[0]) fn(flat(qc[0] - r, y, z));
          if (r > 0 && qc[0] + r >= 0 && qc[0] + r < dims_[0]) fn(flat(qc[0] + r, y, z));
        }
      }
    }
  }

  std::vector<Vec3> points_;
  Vec3 lo_;
  Vec3 hi_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
};

namespace detail {

inline std::vector<double> nearest_distances(std::span<const Vec3> from, std::span<const Vec3> to) {
  const PointIndex index(to);
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = index.nearest_distance(from[i]);
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Sum of the two directed mean nearest-neighbor distances. Inputs in meters,
/// result in millimeters.
inline double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  require(!a.empty() && !b.empty(), "chamfer needs two non-empty clouds");
  return (detail::mean(detail::nearest_distances(a, b)) + detail::mean(detail::nearest_distances(b, a))) * 1000.0;
}

struct FScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Precision: share of `reconstructed` within tau_mm of `truth`; recall: the
/// converse. Inputs in meters.
inline FScore fscore(std::span<const Vec3> reconstructed, std::span<const Vec3> truth, double tau_mm) {
  require(!reconstructed.empty() && !truth.empty(), "fscore needs two non-empty clouds");
  require(tau_mm > 0, "fscore threshold must be positive");
  const double tau = tau_mm / 1000.0;
  auto share_within = [&](const std::vector<double>& d) {
    std::size_t n = 0;
    for (double x : d) n += x <= tau ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(d.size());
  };
  FScore s;
  s.precision = share_within(detail::nearest_distances(reconstructed, truth));
  s.recall = share_within(detail::nearest_distances(truth, reconstructed));
  s.f = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

/// Point clouds in meters from wrist-frame points.
inline std::vector<Vec3> to_meters(std::span<const Vec3> points, double metric_scale) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(p * metric_scale);
  return out;
}

}  // namespace handocc
