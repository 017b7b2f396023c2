#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "handocc/geom.hpp"
#include "handocc/shapes.hpp"

namespace handocc {

/// Binary image, row-major, one byte per pixel (0 or 1).
struct Bitmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Bitmap() = default;
  Bitmap(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::uint8_t at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(col)];
  }
  std::uint8_t& at(int row, int col) {
    return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(col)];
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
  }
  /// Pixel (col, row) covers u in [col, col+1), v in [row, row+1).
  bool lookup(double u, double v) const {
    if (!(u >= 0.0 && v >= 0.0 && u < width && v < height)) return false;
    return at(static_cast<int>(v), static_cast<int>(u)) != 0;
  }

  bool operator==(const Bitmap&) const = default;
};

/// C x H x W real grid standing in for image-encoder features.
struct FeatureGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  FeatureGrid() = default;
  FeatureGrid(int c, int h, int w)
      : channels(c), height(h), width(w),
        values(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0) {}

  double at(int c, int row, int col) const { return values[index(c, row, col)]; }
  double& at(int c, int row, int col) { return values[index(c, row, col)]; }

  /// Bilinear sample at continuous grid coordinates where cell (row, col)
  /// is centered at (col + 0.5, row + 0.5). Taps outside the grid read zero.
  void sample(double x, double y, double* out) const {
    const double gx = x - 0.5;
    const double gy = y - 0.5;
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const double fx = gx - x0;
    const double fy = gy - y0;
    for (int c = 0; c < channels; ++c) out[c] = 0.0;
    const std::array<std::pair<int, int>, 4> taps{{{y0, x0}, {y0, x0 + 1}, {y0 + 1, x0}, {y0 + 1, x0 + 1}}};
    const std::array<double, 4> weights{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    for (std::size_t t = 0; t < 4; ++t) {
      const auto [r, col] = taps[t];
      if (r < 0 || col < 0 || r >= height || col >= width || weights[t] == 0.0) continue;
      for (int c = 0; c < channels; ++c) out[c] += weights[t] * at(c, r, col);
    }
  }

  bool operator==(const FeatureGrid&) const = default;

 private:
  std::size_t index(int c, int row, int col) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height) + static_cast<std::size_t>(row)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(col);
  }
};

/// One frame of a sequence. `hand.wrist` is the wrist-to-camera transform.
struct ViewObservation {
  Bitmap mask;
  CameraIntrinsics camera;
  HandFrame hand;
  std::optional<FeatureGrid> feature_grid;
  std::vector<double> global_feature;
  int frame_id = 0;

  void validate() const {
    camera.validate();
    require(mask.width == camera.width && mask.height == camera.height,
            "mask size does not match camera");
  }
};

struct TrajectoryFrame {
  RigidTransform wrist;
  CameraIntrinsics camera;
};

struct Trajectory {
  std::vector<TrajectoryFrame> frames;
  bool rigid = true;

  void validate() const {
    require(frames.size() >= 2, "trajectory needs at least two frames");
    for (std::size_t i = 1; i < frames.size(); ++i) {
      require(!frames[i].wrist.approx_equal(frames[i - 1].wrist, 1e-12),
              "consecutive wrist poses must differ");
    }
  }
};

inline constexpr std::size_t kMinMaskPixels = 64;
inline constexpr int kDefaultImageSize = 128;

/// Object placement used by the synthetic generators: in front of the palm.
inline const Vec3 kObjectCenter{0.0, 0.25, 0.4};

namespace detail {

inline double bounding_radius(const Primitive& p) {
  return std::visit(
      [](const auto& g) -> double {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          return g.radius;
        } else if constexpr (std::is_same_v<T, Box>) {
          return g.half_extents.norm();
        } else {
          return std::hypot(g.radius, g.half_height);
        }
      },
      p);
}

/// True if the cone of half-angle slope `kappa` around the ray touches the
/// primitive: min_t sdf(o + t d) - kappa t <= 0. The objective is convex for
/// a convex primitive, so golden-section search is exact up to tolerance.
inline bool cone_touches(const PosedPrimitive& leaf, double radius, const Vec3& o, const Vec3& d,
                         double kappa) {
  const Vec3 center = leaf.pose.translation;
  const double tc = (center - o).dot(d);
  const double lateral = (o + tc * d - center).norm();
  if (tc + radius <= 0) return false;
  if (lateral - kappa * (tc + radius) > radius) return false;
  double lo = std::max(1e-9, tc - 2.0 * radius);
  double hi = tc + 2.0 * radius;
  auto f = [&](double t) { return signed_distance(leaf, o + t * d) - kappa * t; };
  constexpr double kInvPhi = 0.6180339887498949;
  double a = hi - kInvPhi * (hi - lo);
  double b = lo + kInvPhi * (hi - lo);
  double fa = f(a);
  double fb = f(b);
  for (int it = 0; it < 80 && hi - lo > 1e-12; ++it) {
    if (fa <= 0 || fb <= 0) return true;
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - kInvPhi * (hi - lo);
      fa = f(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + kInvPhi * (hi - lo);
      fb = f(b);
    }
  }
  return std::min({fa, fb, f(lo), f(hi)}) <= 0;
}

struct PixelRay {
  Vec3 origin;
  Vec3 direction;
};

inline PixelRay pixel_ray(const RigidTransform& camera_from_wrist, const CameraIntrinsics& k, double u,
                          double v) {
  const RigidTransform wrist_from_camera = camera_from_wrist.inverse();
  const Vec3 dir_cam = Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalized();
  return {wrist_from_camera.translation, wrist_from_camera.rotation * dir_cam};
}

}  // namespace detail

/// Silhouette of the shape. A pixel is set when the shape meets the pixel's
/// viewing frustum (ray through the pixel center widened by the pixel
/// footprint), so every occupied point lands on a set pixel.
/// Throws EmptyMask when fewer than `min_pixels` pixels are set.
inline Bitmap render_mask(const AnalyticShape& shape, const RigidTransform& wrist,
                          const CameraIntrinsics& k, std::size_t min_pixels = kMinMaskPixels) {
  k.validate();
  const auto leaves = flatten(shape);
  std::vector<double> radii;
  for (const auto& l : leaves) radii.push_back(detail::bounding_radius(l.primitive));
  const double kappa = 1.05 * std::sqrt(0.25 / (k.fx * k.fx) + 0.25 / (k.fy * k.fy));
  Bitmap mask(k.width, k.height);
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      const auto ray = detail::pixel_ray(wrist, k, c + 0.5, r + 0.5);
      bool hit = first_hit(leaves, ray.origin, ray.direction).has_value();
      for (std::size_t i = 0; i < leaves.size() && !hit; ++i) {
        hit = detail::cone_touches(leaves[i], radii[i], ray.origin, ray.direction, kappa);
      }
      mask.at(r, c) = hit ? 1 : 0;
    }
  }
  if (mask.count() < min_pixels) {
    throw Error(ErrorCode::EmptyMask, "rendered mask has fewer than " + std::to_string(min_pixels) +
                                          " pixels");
  }
  return mask;
}

/// Removes a contiguous blob of exactly round(fraction * count) mask pixels,
/// grown from a random mask pixel in order of distance to it.
inline Bitmap occlude_mask(const Bitmap& mask, double fraction, Rng& rng) {
  require(fraction >= 0.0 && fraction < 1.0, "occlusion fraction must be in [0, 1)");
  Bitmap out = mask;
  const std::size_t total = mask.count();
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  if (target == 0 || total == 0) return out;
  std::vector<std::pair<int, int>> on;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) on.emplace_back(r, c);
  const auto [sr, sc] = on[rng.index(on.size())];
  using Item = std::tuple<double, int, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> frontier;
  std::vector<std::uint8_t> seen(mask.pixels.size(), 0);
  auto push = [&](int r, int c) {
    if (r < 0 || c < 0 || r >= mask.height || c >= mask.width) return;
    const std::size_t idx = static_cast<std::size_t>(r) * static_cast<std::size_t>(mask.width) +
                            static_cast<std::size_t>(c);
    if (seen[idx] || !mask.at(r, c)) return;
    seen[idx] = 1;
    frontier.emplace(std::hypot(r - sr, c - sc), r, c);
  };
  push(sr, sc);
  std::size_t removed = 0;
  while (removed < target) {
    if (frontier.empty()) {
      // Mask has several components; continue from the nearest remaining pixel.
      double best = std::numeric_limits<double>::infinity();
      std::pair<int, int> next{-1, -1};
      for (const auto& [r, c] : on) {
        const std::size_t idx = static_cast<std::size_t>(r) * static_cast<std::size_t>(mask.width) +
                                static_cast<std::size_t>(c);
        const double d = std::hypot(r - sr, c - sc);
        if (!seen[idx] && d < best) {
          best = d;
          next = {r, c};
        }
      }
      push(next.first, next.second);
    }
    const auto [d, r, c] = frontier.top();
    frontier.pop();
    out.at(r, c) = 0;
    ++removed;
    push(r + 1, c);
    push(r - 1, c);
    push(r, c + 1);
    push(r, c - 1);
  }
  return out;
}

/// Synthetic stand-in for encoder output: channel 0 is the observed mask,
/// then (when enabled) the front-surface depth relative to the wrist depth,
/// then the distance to the silhouette boundary in scene units. Global
/// features are the camera viewing axis in the wrist frame and the
/// silhouette's equivalent radius in scene units.
struct SyntheticFeatures {
  FeatureGrid grid;
  std::vector<double> global;
};

inline constexpr int kSyntheticFeatureChannels = 3;
inline constexpr int kSyntheticGlobalDim = 4;

inline SyntheticFeatures synthesize_features(const AnalyticShape& shape, const Bitmap& observed,
                                             const RigidTransform& wrist, const CameraIntrinsics& k,
                                             bool with_depth = true) {
  const auto leaves = flatten(shape);
  const int boundary_channel = with_depth ? 2 : 1;
  FeatureGrid grid(boundary_channel + 1, k.height, k.width);
  const double wrist_depth = wrist.translation.z();
  const double scene_per_pixel = wrist_depth / std::sqrt(k.fx * k.fy);
  std::vector<std::pair<int, int>> boundary;
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      if (!observed.at(r, c)) continue;
      bool edge = r == 0 || c == 0 || r == k.height - 1 || c == k.width - 1;
      if (!edge) {
        edge = !observed.at(r - 1, c) || !observed.at(r + 1, c) || !observed.at(r, c - 1) ||
               !observed.at(r, c + 1);
      }
      if (edge) boundary.emplace_back(r, c);
    }
  }
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      if (!observed.at(r, c)) continue;
      grid.at(0, r, c) = 1.0;
      if (with_depth) {
        const auto ray = detail::pixel_ray(wrist, k, c + 0.5, r + 0.5);
        if (auto t = first_hit(leaves, ray.origin, ray.direction)) {
          const Vec3 hit_cam = wrist.apply(ray.origin + *t * ray.direction);
          grid.at(1, r, c) = hit_cam.z() - wrist_depth;
        }
      }
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [br, bc] : boundary) best = std::min(best, std::hypot(br - r, bc - c));
      grid.at(boundary_channel, r, c) = (best + 0.5) * scene_per_pixel;
    }
  }
  const Vec3 axis = wrist.rotation.row(2).transpose();
  const double eq_radius =
      std::sqrt(static_cast<double>(observed.count()) / std::numbers::pi) * scene_per_pixel;
  return {std::move(grid), {axis.x(), axis.y(), axis.z(), eq_radius}};
}

/// Simple articulated-hand stand-in: 15 joints along five fingers and 778
/// points on capsules around palm and finger segments, all in the wrist frame.
inline HandFrame make_hand_template() {
  HandFrame hand;
  std::vector<std::pair<Vec3, Vec3>> segments;
  for (int f = 0; f < 5; ++f) {
    const double x = -0.16 + 0.08 * f;
    Vec3 base(x, 0.3, 0.0);
    if (f == 0) base = Vec3(-0.2, 0.12, 0.04);
    for (int j = 0; j < 3; ++j) {
      const double curl = 0.35 * (j + 1);
      const Vec3 dir(f == 0 ? 0.4 : 0.0, std::cos(curl), std::sin(curl));
      const Vec3 next = base + 0.09 * dir.normalized();
      hand.joints[static_cast<std::size_t>(3 * f + j)] =
          RigidTransform{rotation_from_axis_angle(Vec3::UnitX(), curl), base};
      segments.emplace_back(base, next);
      base = next;
    }
  }
  segments.emplace_back(Vec3(-0.12, 0.0, 0.0), Vec3(-0.12, 0.3, 0.0));
  segments.emplace_back(Vec3(0.0, 0.0, 0.0), Vec3(0.0, 0.3, 0.0));
  segments.emplace_back(Vec3(0.12, 0.0, 0.0), Vec3(0.12, 0.3, 0.0));
  Rng rng(0x4a4e44);
  hand.surface_points.reserve(kNumHandVertices);
  for (int i = 0; i < kNumHandVertices; ++i) {
    const auto& [a, b] = segments[static_cast<std::size_t>(i) % segments.size()];
    const bool palm = static_cast<std::size_t>(i) % segments.size() >= 15;
    const double radius = palm ? 0.07 : 0.03;
    Vec3 g(rng.normal(), rng.normal(), rng.normal());
    g.normalize();
    hand.surface_points.push_back(a + rng.uniform() * (b - a) + radius * g);
  }
  return hand;
}

/// Camera pose looking at `target` from `target + distance * view_dir`, with
/// a roll angle about the optical axis.
inline RigidTransform look_at(const Vec3& target, const Vec3& view_dir, double distance, double roll) {
  const Vec3 z = -view_dir.normalized();
  Vec3 helper = std::abs(z.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 x = (helper - helper.dot(z) * z).normalized();
  Vec3 y = z.cross(x);
  const double cr = std::cos(roll);
  const double sr = std::sin(roll);
  const Vec3 xr = cr * x + sr * y;
  const Vec3 yr = z.cross(xr);
  Mat3 r;
  r.row(0) = xr.transpose();
  r.row(1) = yr.transpose();
  r.row(2) = z.transpose();
  const Vec3 eye = target + distance * view_dir.normalized();
  return {r, -(r * eye)};
}

inline CameraIntrinsics default_camera(int size = kDefaultImageSize) {
  const double f = 110.0 * size / 128.0;
  return {f, f, 0.5 * size, 0.5 * size, size, size};
}

struct TrajectoryOptions {
  double distance = 2.5;
  /// Spread views over a hemisphere (Fibonacci lattice) instead of drawing
  /// viewing directions at random.
  bool spread = false;
  Vec3 target = kObjectCenter;
  CameraIntrinsics camera = default_camera();
};

/// Fibonacci lattice on the hemisphere z >= 0; distinct optical axes.
inline std::vector<Vec3> hemisphere_directions(std::size_t n) {
  std::vector<Vec3> dirs;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return dirs;
}

inline Trajectory make_trajectory(std::size_t frames, Rng& rng, const TrajectoryOptions& opt = {}) {
  require(frames >= 2, "trajectory needs at least two frames");
  Trajectory traj;
  std::vector<Vec3> dirs;
  if (opt.spread) {
    dirs = hemisphere_directions(frames);
    const Mat3 spin = random_rotation(rng);
    for (auto& d : dirs) d = spin * d;
  } else {
    for (std::size_t i = 0; i < frames; ++i) {
      Vec3 g(rng.normal(), rng.normal(), rng.normal());
      dirs.push_back(g.normalized());
    }
  }
  for (const Vec3& d : dirs) {
    const RigidTransform pose =
        look_at(opt.target, d, opt.distance, rng.uniform(0.0, 2.0 * std::numbers::pi));
    traj.frames.push_back({pose, opt.camera});
  }
  traj.validate();
  return traj;
}

struct SequenceOptions {
  double occlusion_fraction = 0.0;
  bool features = true;
  bool depth_feature = true;
  std::size_t min_mask_pixels = kMinMaskPixels;
};

/// Renders one observation per trajectory frame. The same hand template is
/// carried rigidly through the sequence.
inline std::vector<ViewObservation> generate_sequence(const AnalyticShape& shape,
                                                      const Trajectory& trajectory,
                                                      const HandFrame& hand_template,
                                                      const SequenceOptions& opt, std::uint64_t seed) {
  require(opt.occlusion_fraction >= 0.0 && opt.occlusion_fraction < 1.0,
          "occlusion fraction must be in [0, 1)");
  trajectory.validate();
  std::vector<ViewObservation> views;
  for (std::size_t i = 0; i < trajectory.frames.size(); ++i) {
    const auto& frame = trajectory.frames[i];
    ViewObservation view;
    view.camera = frame.camera;
    view.hand = hand_template;
    view.hand.wrist = frame.wrist;
    view.frame_id = static_cast<int>(i);
    view.mask = render_mask(shape, frame.wrist, frame.camera, opt.min_mask_pixels);
    if (opt.occlusion_fraction > 0.0) {
      Rng rng(derive_seed(seed, seed_stream::kOcclusion, i));
      view.mask = occlude_mask(view.mask, opt.occlusion_fraction, rng);
    }
    if (opt.features) {
      auto feats = synthesize_features(shape, view.mask, frame.wrist, frame.camera, opt.depth_feature);
      view.feature_grid = std::move(feats.grid);
      view.global_feature = std::move(feats.global);
    }
    views.push_back(std::move(view));
  }
  return views;
}

enum class ShapeFamily { Sphere, Box, Cylinder, Union };

/// Random object in front of the palm, sized so it stays inside [-1,1]^3.
inline AnalyticShape make_random_shape(ShapeFamily family, Rng& rng, const Vec3& center = kObjectCenter) {
  const RigidTransform pose{random_rotation(rng),
                            center + Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                          rng.uniform(-0.05, 0.05))};
  switch (family) {
    case ShapeFamily::Sphere:
      return AnalyticShape::sphere(rng.uniform(0.25, 0.4), pose);
    case ShapeFamily::Box:
      return AnalyticShape::box(
          Vec3(rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3)), pose);
    case ShapeFamily::Cylinder:
      return AnalyticShape::cylinder(rng.uniform(0.15, 0.28), rng.uniform(0.18, 0.32), pose);
    case ShapeFamily::Union: {
      const double r = rng.uniform(0.14, 0.22);
      const double h = rng.uniform(0.18, 0.28);
      std::vector<AnalyticShape> parts;
      parts.push_back(AnalyticShape::cylinder(r, h));
      parts.push_back(AnalyticShape::box(Vec3(0.04, 0.03, 0.6 * h),
                                         RigidTransform::translate(r + 0.04, 0.0, 0.0)));
      return AnalyticShape::make_union(std::move(parts), pose);
    }
  }
  return AnalyticShape::sphere(0.3, pose);
}

}  // namespace handocc
