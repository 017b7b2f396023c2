#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "handocc/geom.hpp"

namespace handocc {

struct Sphere {
  double radius = 0.1;
};

struct Box {
  Vec3 half_extents = Vec3::Constant(0.1);
};

/// Capped cylinder along the local z axis.
struct Cylinder {
  double radius = 0.1;
  double half_height = 0.1;
};

struct AnalyticShape;

struct ShapeUnion {
  std::vector<AnalyticShape> members;
};

/// Rigid analytic solid expressed in the wrist frame. Union members are posed
/// relative to the union's own frame.
struct AnalyticShape {
  std::variant<Sphere, Box, Cylinder, ShapeUnion> geometry;
  RigidTransform pose_in_wrist;

  static AnalyticShape sphere(double r, const RigidTransform& pose = {}) { return {Sphere{r}, pose}; }
  static AnalyticShape box(const Vec3& half, const RigidTransform& pose = {}) {
    return {Box{half}, pose};
  }
  static AnalyticShape cylinder(double r, double half_height, const RigidTransform& pose = {}) {
    return {Cylinder{r, half_height}, pose};
  }
  static AnalyticShape make_union(std::vector<AnalyticShape> members,
                                  const RigidTransform& pose = {}) {
    return {ShapeUnion{std::move(members)}, pose};
  }
};

using Primitive = std::variant<Sphere, Box, Cylinder>;

/// A convex primitive together with its full wrist-frame pose.
struct PosedPrimitive {
  Primitive primitive;
  RigidTransform pose;
  RigidTransform inverse_pose;
};

namespace detail {

inline void flatten(const AnalyticShape& shape, const RigidTransform& parent,
                    std::vector<PosedPrimitive>& out) {
  const RigidTransform pose = parent * shape.pose_in_wrist;
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, ShapeUnion>) {
          for (const auto& m : g.members) flatten(m, pose, out);
        } else {
          out.push_back({g, pose, pose.inverse()});
        }
      },
      shape.geometry);
}

inline double sdf_local(const Sphere& s, const Vec3& p) { return p.norm() - s.radius; }

inline double sdf_local(const Box& b, const Vec3& p) {
  const Vec3 q = p.cwiseAbs() - b.half_extents;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

inline double sdf_local(const Cylinder& c, const Vec3& p) {
  const double dx = std::hypot(p.x(), p.y()) - c.radius;
  const double dz = std::abs(p.z()) - c.half_height;
  return std::min(std::max(dx, dz), 0.0) + std::hypot(std::max(dx, 0.0), std::max(dz, 0.0));
}

inline std::optional<std::pair<double, double>> ray_local(const Sphere& s, const Vec3& o,
                                                          const Vec3& d) {
  const double a = d.squaredNorm();
  const double b = o.dot(d);
  const double c = o.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  return std::pair{(-b - sq) / a, (-b + sq) / a};
}

inline std::optional<std::pair<double, double>> ray_local(const Box& bx, const Vec3& o,
                                                          const Vec3& d) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double h = bx.half_extents[i];
    if (std::abs(d[i]) < 1e-300) {
      if (std::abs(o[i]) > h) return std::nullopt;
      continue;
    }
    double a = (-h - o[i]) / d[i];
    double b = (h - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1) return std::nullopt;
  return std::pair{t0, t1};
}

inline std::optional<std::pair<double, double>> ray_local(const Cylinder& c, const Vec3& o,
                                                          const Vec3& d) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const double a = d.x() * d.x() + d.y() * d.y();
  const double cc = o.x() * o.x() + o.y() * o.y() - c.radius * c.radius;
  if (a < 1e-300) {
    if (cc > 0) return std::nullopt;
  } else {
    const double b = o.x() * d.x() + o.y() * d.y();
    const double disc = b * b - a * cc;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    t0 = (-b - sq) / a;
    t1 = (-b + sq) / a;
  }
  if (std::abs(d.z()) < 1e-300) {
    if (std::abs(o.z()) > c.half_height) return std::nullopt;
  } else {
    double za = (-c.half_height - o.z()) / d.z();
    double zb = (c.half_height - o.z()) / d.z();
    if (za > zb) std::swap(za, zb);
    t0 = std::max(t0, za);
    t1 = std::min(t1, zb);
  }
  if (t0 > t1) return std::nullopt;
  return std::pair{t0, t1};
}

inline double area(const Sphere& s) { return 4.0 * std::numbers::pi * s.radius * s.radius; }
inline double area(const Box& b) {
  const Vec3& h = b.half_extents;
  return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
}
inline double area(const Cylinder& c) {
  return 2.0 * std::numbers::pi * c.radius * (2.0 * c.half_height) +
         2.0 * std::numbers::pi * c.radius * c.radius;
}

inline Vec3 sample_local(const Sphere& s, Rng& rng) {
  Vec3 g(rng.normal(), rng.normal(), rng.normal());
  while (g.norm() < 1e-12) g = Vec3(rng.normal(), rng.normal(), rng.normal());
  return s.radius * g.normalized();
}

inline Vec3 sample_local(const Box& b, Rng& rng) {
  const Vec3& h = b.half_extents;
  const std::array<double, 3> face_area{h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  const double total = face_area[0] + face_area[1] + face_area[2];
  double pick = rng.uniform() * total;
  int axis = 0;
  while (axis < 2 && pick > face_area[static_cast<std::size_t>(axis)]) {
    pick -= face_area[static_cast<std::size_t>(axis)];
    ++axis;
  }
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = rng.uniform(-h[i], h[i]);
  p[axis] = rng.uniform() < 0.5 ? -h[axis] : h[axis];
  return p;
}

inline Vec3 sample_local(const Cylinder& c, Rng& rng) {
  const double side = 2.0 * std::numbers::pi * c.radius * 2.0 * c.half_height;
  const double caps = 2.0 * std::numbers::pi * c.radius * c.radius;
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (rng.uniform() * (side + caps) < side) {
    return {c.radius * std::cos(theta), c.radius * std::sin(theta),
            rng.uniform(-c.half_height, c.half_height)};
  }
  const double r = c.radius * std::sqrt(rng.uniform());
  const double z = rng.uniform() < 0.5 ? -c.half_height : c.half_height;
  return {r * std::cos(theta), r * std::sin(theta), z};
}

}  // namespace detail

inline std::vector<PosedPrimitive> flatten(const AnalyticShape& shape) {
  std::vector<PosedPrimitive> out;
  detail::flatten(shape, RigidTransform::identity(), out);
  return out;
}

/// Signed distance to a single convex primitive (exact, hence convex in x).
inline double signed_distance(const PosedPrimitive& p, const Vec3& x) {
  const Vec3 local = p.inverse_pose.apply(x);
  return std::visit([&](const auto& g) { return detail::sdf_local(g, local); }, p.primitive);
}

/// Union signed distance bound: min over members (exact outside overlaps).
inline double signed_distance(const std::vector<PosedPrimitive>& leaves, const Vec3& x) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& l : leaves) d = std::min(d, signed_distance(l, x));
  return d;
}

/// Exact inside/outside test (closed solid).
inline bool occupancy_oracle(const AnalyticShape& shape, const Vec3& x) {
  const Vec3 local = shape.pose_in_wrist.inverse().apply(x);
  return std::visit(
      [&](const auto& g) -> bool {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, ShapeUnion>) {
          return std::any_of(g.members.begin(), g.members.end(),
                             [&](const AnalyticShape& m) { return occupancy_oracle(m, local); });
        } else {
          return detail::sdf_local(g, local) <= 0.0;
        }
      },
      shape.geometry);
}

/// Parametric interval [t_in, t_out] of the ray o + t d inside the primitive.
inline std::optional<std::pair<double, double>> intersect_ray(const PosedPrimitive& p,
                                                              const Vec3& origin,
                                                              const Vec3& dir) {
  const Vec3 o = p.inverse_pose.apply(origin);
  const Vec3 d = p.inverse_pose.rotation * dir;
  return std::visit([&](const auto& g) { return detail::ray_local(g, o, d); }, p.primitive);
}

/// Smallest t >= 0 at which the ray enters the shape.
inline std::optional<double> first_hit(const std::vector<PosedPrimitive>& leaves,
                                       const Vec3& origin, const Vec3& dir) {
  std::optional<double> best;
  for (const auto& l : leaves) {
    auto hit = intersect_ray(l, origin, dir);
    if (!hit || hit->second < 0) continue;
    const double t = std::max(hit->first, 0.0);
    if (!best || t < *best) best = t;
  }
  return best;
}

/// Area-weighted uniform samples on the boundary of the solid. Union samples
/// that fall strictly inside another member are rejected.
inline std::vector<Vec3> sample_shape_surface(const AnalyticShape& shape, std::size_t count,
                                              Rng& rng) {
  const auto leaves = flatten(shape);
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& l : leaves) {
    total += std::visit([](const auto& g) { return detail::area(g); }, l.primitive);
    cumulative.push_back(total);
  }
  std::vector<Vec3> out;
  out.reserve(count);
  std::size_t attempts = 0;
  while (out.size() < count) {
    require(++attempts < 1000 * count + 100000, "shape surface is fully internal");
    const double pick = rng.uniform() * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), pick);
    const std::size_t k = std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative.begin()), leaves.size() - 1);
    const Vec3 local =
        std::visit([&](const auto& g) { return detail::sample_local(g, rng); }, leaves[k].primitive);
    const Vec3 x = leaves[k].pose.apply(local);
    bool buried = false;
    for (std::size_t j = 0; j < leaves.size() && !buried; ++j) {
      if (j != k && signed_distance(leaves[j], x) < -1e-9) buried = true;
    }
    if (!buried) out.push_back(x);
  }
  return out;
}

inline bool sizes_positive(const AnalyticShape& shape) {
  return std::visit(
      [](const auto& g) -> bool {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          return g.radius > 0;
        } else if constexpr (std::is_same_v<T, Box>) {
          return g.half_extents.minCoeff() > 0;
        } else if constexpr (std::is_same_v<T, Cylinder>) {
          return g.radius > 0 && g.half_height > 0;
        } else {
          return !g.members.empty() && std::all_of(g.members.begin(), g.members.end(),
                                                   [](const auto& m) { return sizes_positive(m); });
        }
      },
      shape.geometry);
}

/// Size check plus a sampled bounding test against [-1,1]^3.
inline void validate_shape(const AnalyticShape& shape) {
  require(sizes_positive(shape), "shape size parameters must be positive");
  Rng rng(0x5eed);
  for (const Vec3& p : sample_shape_surface(shape, 2000, rng)) {
    require(p.cwiseAbs().maxCoeff() <= 1.0, "shape does not fit inside the [-1,1]^3 volume");
  }
}

}  // namespace handocc
