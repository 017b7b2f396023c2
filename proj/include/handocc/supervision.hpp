#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "handocc/binary_io.hpp"
#include "handocc/geom.hpp"
#include "handocc/scene_synth.hpp"

namespace handocc {

// ---------------------------------------------------------------------------
// Visual-hull labels

/// 1 iff the point projects onto a set mask pixel in every view. Points
/// behind a camera or outside an image count as "not in mask".
inline std::uint8_t hull_label(const Vec3& x, const std::vector<ViewObservation>& views) {
  for (const auto& view : views) {
    const auto p = try_project(x, view.hand.wrist, view.camera);
    if (!p || !view.mask.lookup(p->u, p->v)) return 0;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Training point sampling

enum class SampleSource : std::uint8_t { HullPositive = 0, HandSurface = 1, Uniform = 2 };

struct SampleBatch {
  std::vector<Vec3> points;
  std::vector<std::uint8_t> labels;
  std::vector<SampleSource> sources;

  std::size_t size() const { return points.size(); }

  void push(const Vec3& p, std::uint8_t label, SampleSource source) {
    points.push_back(p);
    labels.push_back(label);
    sources.push_back(source);
  }

  bool operator==(const SampleBatch&) const = default;
};

struct SamplingConfig {
  std::size_t total = 8192;
  std::size_t hull_positive_target = 4096;
  std::size_t hand_points = kNumHandVertices;
  std::size_t proposal_cap = 1'000'000;
};

inline Vec3 uniform_in_cube(Rng& rng) {
  return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
}

inline SampleBatch sample_training_points(const std::vector<ViewObservation>& views,
                                          const HandFrame& hand, const SamplingConfig& cfg,
                                          std::uint64_t seed) {
  require(!views.empty(), "need at least one view");
  require(hand.surface_points.size() >= cfg.hand_points, "hand surface points not populated");
  require(cfg.hull_positive_target + cfg.hand_points <= cfg.total,
          "sampling targets exceed the total point count");
  Rng rng(seed);
  SampleBatch batch;
  batch.points.reserve(cfg.total);
  std::size_t proposals = 0;
  while (batch.size() < cfg.hull_positive_target) {
    if (proposals >= cfg.proposal_cap) {
      throw Error(ErrorCode::HullTooSmall,
                  "found " + std::to_string(batch.size()) + " of " +
                      std::to_string(cfg.hull_positive_target) + " hull points after " +
                      std::to_string(proposals) + " proposals");
    }
    ++proposals;
    const Vec3 p = uniform_in_cube(rng);
    if (hull_label(p, views)) batch.push(p, 1, SampleSource::HullPositive);
  }
  for (std::size_t i = 0; i < cfg.hand_points; ++i) {
    const Vec3 p = hand.surface_points[i].cwiseMax(-1.0).cwiseMin(1.0);
    batch.push(p, hull_label(p, views), SampleSource::HandSurface);
  }
  while (batch.size() < cfg.total) {
    const Vec3 p = uniform_in_cube(rng);
    batch.push(p, hull_label(p, views), SampleSource::Uniform);
  }
  return batch;
}

inline void validate_sample_batch(const SampleBatch& b) {
  require(b.points.size() == b.labels.size() && b.points.size() == b.sources.size(),
          "sample batch columns differ in length");
  for (std::size_t i = 0; i < b.size(); ++i) {
    require(b.points[i].cwiseAbs().maxCoeff() <= 1.0, "sample point outside [-1,1]^3");
    require(b.labels[i] <= 1, "labels must be 0 or 1");
    if (b.sources[i] == SampleSource::HullPositive) require(b.labels[i] == 1, "hull point labeled 0");
  }
}

// Archive: "HOSB", u32 version, u64 count, then per point
// 3 x f32 coordinates, u8 label, u8 source tag (all little-endian).
inline constexpr std::uint32_t kSampleArchiveVersion = 1;

inline void write_sample_batch(std::ostream& os, const SampleBatch& b) {
  binary::write_tag(os, "HOSB");
  binary::write_u32(os, kSampleArchiveVersion);
  binary::write_u64(os, b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (int k = 0; k < 3; ++k) binary::write_f32(os, static_cast<float>(b.points[i][k]));
    binary::write_u8(os, b.labels[i]);
    binary::write_u8(os, static_cast<std::uint8_t>(b.sources[i]));
  }
}

inline SampleBatch read_sample_batch(std::istream& is) {
  binary::expect_tag(is, "HOSB");
  const auto version = binary::read_u32(is);
  if (version != kSampleArchiveVersion) {
    throw Error(ErrorCode::Format, "unsupported sample archive version " + std::to_string(version));
  }
  const auto n = binary::read_u64(is);
  SampleBatch b;
  for (std::uint64_t i = 0; i < n; ++i) {
    Vec3 p;
    for (int k = 0; k < 3; ++k) p[k] = binary::read_f32(is);
    const auto label = binary::read_u8(is);
    const auto tag = binary::read_u8(is);
    if (label > 1 || tag > 2) throw Error(ErrorCode::Format, "corrupt sample record");
    b.push(p, label, static_cast<SampleSource>(tag));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Cross-view consistency pairs

struct ConsistencyPair {
  std::size_t view_i = 0;
  std::size_t view_j = 0;
  std::size_t point = 0;

  bool operator==(const ConsistencyPair&) const = default;
};

inline constexpr std::size_t kDefaultConsistencyPairs = 1024;

/// One pair per point (so every point is covered), then extra pairs on random
/// points up to `min_pairs`. Ordered view pairs are drawn uniformly.
inline std::vector<ConsistencyPair> consistency_pairs(std::size_t num_views, std::size_t num_points,
                                                      std::uint64_t seed,
                                                      std::size_t min_pairs = 0) {
  if (num_views < 2) throw Error(ErrorCode::NeedTwoViews, "consistency needs at least two views");
  Rng rng(seed);
  auto draw = [&](std::size_t point) {
    const std::size_t i = rng.index(num_views);
    std::size_t j = rng.index(num_views - 1);
    if (j >= i) ++j;
    return ConsistencyPair{i, j, point};
  };
  std::vector<ConsistencyPair> pairs;
  pairs.reserve(std::max(num_points, min_pairs));
  for (std::size_t p = 0; p < num_points; ++p) pairs.push_back(draw(p));
  while (num_points > 0 && pairs.size() < min_pairs) pairs.push_back(draw(rng.index(num_points)));
  return pairs;
}

// ---------------------------------------------------------------------------
// Shape-prior slices

inline constexpr int kDefaultSliceSize = 32;

/// Square lattice on a plane through the wrist-frame origin.
struct SlicePlane {
  Vec3 origin = Vec3::Zero();
  Vec3 basis_u = Vec3::UnitX();
  Vec3 basis_v = Vec3::UnitY();
  int grid_size = kDefaultSliceSize;
  double extent = 1.0;

  Vec3 normal() const { return basis_u.cross(basis_v); }

  bool valid() const {
    return origin.isZero(0.0) && std::abs(basis_u.dot(basis_v)) <= 1e-9 &&
           std::abs(basis_u.norm() - 1.0) <= 1e-9 && std::abs(basis_v.norm() - 1.0) <= 1e-9 &&
           grid_size >= 2 && extent > 0;
  }

  /// Lattice point (row, col); rows follow basis_v, columns basis_u, both
  /// spanning [-extent, extent] inclusive.
  Vec3 point(int row, int col) const {
    const double step = 2.0 * extent / (grid_size - 1);
    return origin + (-extent + step * col) * basis_u + (-extent + step * row) * basis_v;
  }

  std::vector<Vec3> points() const {
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(grid_size * grid_size));
    for (int r = 0; r < grid_size; ++r)
      for (int c = 0; c < grid_size; ++c) out.push_back(point(r, c));
    return out;
  }
};

/// Plane through the origin with a normal uniform on the sphere.
inline SlicePlane random_slice_plane(Rng& rng, int grid_size = kDefaultSliceSize, double extent = 1.0) {
  Vec3 n(rng.normal(), rng.normal(), rng.normal());
  while (n.norm() < 1e-12) n = Vec3(rng.normal(), rng.normal(), rng.normal());
  n.normalize();
  Vec3 a(rng.normal(), rng.normal(), rng.normal());
  Vec3 u = a - a.dot(n) * n;
  while (u.norm() < 1e-6) {
    a = Vec3(rng.normal(), rng.normal(), rng.normal());
    u = a - a.dot(n) * n;
  }
  u.normalize();
  Vec3 v = n.cross(u);
  v -= v.dot(u) * u;
  v.normalize();
  return {Vec3::Zero(), u, v, grid_size, extent};
}

inline SlicePlane random_slice_plane(std::uint64_t seed, int grid_size = kDefaultSliceSize,
                                     double extent = 1.0) {
  Rng rng(seed);
  return random_slice_plane(rng, grid_size, extent);
}

/// grid(r, c) = field(plane.point(r, c)).
template <typename Field>
Eigen::MatrixXd sample_slice(const Field& field, const SlicePlane& plane) {
  require(plane.valid(), "invalid slice plane");
  Eigen::MatrixXd grid(plane.grid_size, plane.grid_size);
  for (int r = 0; r < plane.grid_size; ++r)
    for (int c = 0; c < plane.grid_size; ++c) grid(r, c) = field(plane.point(r, c));
  return grid;
}

// ---------------------------------------------------------------------------
// Frame quality from pose-prediction stability

struct PosePrediction {
  RigidTransform wrist;
  CameraIntrinsics camera;
};

/// Identifies the image a pose provider runs on.
struct ImageRef {
  std::string sequence_id;
  int frame_id = 0;
};

/// Hand pose provider (the role an off-the-shelf hand-pose estimator plays).
/// `offset` is a pixel translation applied to the image before prediction.
/// Returns nullopt on failure. Calls for one frame are made sequentially.
class PosePredictor {
 public:
  virtual ~PosePredictor() = default;
  virtual std::optional<PosePrediction> predict(const ImageRef& image,
                                                const std::array<double, 2>& offset) const = 0;
};

struct FrameQuality {
  int frame_id = 0;
  double reproj_std = 0.0;
  bool accepted = true;
};

inline constexpr double kDefaultReprojThreshold = 5.0;

/// Identity plus the four compass shifts of 5% of the image width.
inline std::vector<std::array<double, 2>> default_uncertainty_offsets(int width) {
  const double d = 0.05 * width;
  return {{0.0, 0.0}, {d, 0.0}, {-d, 0.0}, {0.0, d}, {0.0, -d}};
}

/// Mean over vertices of the RMS spread (about the centroid) of each vertex's
/// reprojection across the translated image variants; the known translation
/// is subtracted so a translation-equivariant predictor scores exactly 0.
inline FrameQuality frame_uncertainty(const PosePredictor& predictor, const ImageRef& image,
                                      const std::vector<Vec3>& vertices,
                                      const std::vector<std::array<double, 2>>& offsets,
                                      double threshold = kDefaultReprojThreshold) {
  require(!vertices.empty() && offsets.size() >= 2, "need vertices and at least two offsets");
  const std::size_t nv = vertices.size();
  std::vector<std::vector<std::array<double, 2>>> reproj(nv);
  for (const auto& off : offsets) {
    const auto pred = predictor.predict(image, off);
    if (!pred) {
      throw Error(ErrorCode::PredictorFailure,
                  "pose predictor failed on frame " + std::to_string(image.frame_id));
    }
    for (std::size_t i = 0; i < nv; ++i) {
      const auto p = try_project(vertices[i], pred->wrist, pred->camera);
      if (!p) {
        throw Error(ErrorCode::PredictorFailure,
                    "predicted hand lies behind the camera on frame " + std::to_string(image.frame_id));
      }
      reproj[i].push_back({p->u - off[0], p->v - off[1]});
    }
  }
  double total = 0.0;
  const double n = static_cast<double>(offsets.size());
  for (const auto& pts : reproj) {
    double mu = 0.0;
    double mv = 0.0;
    for (const auto& q : pts) {
      mu += q[0];
      mv += q[1];
    }
    mu /= n;
    mv /= n;
    double var = 0.0;
    for (const auto& q : pts) var += (q[0] - mu) * (q[0] - mu) + (q[1] - mv) * (q[1] - mv);
    total += std::sqrt(var / n);
  }
  FrameQuality q;
  q.frame_id = image.frame_id;
  q.reproj_std = total / static_cast<double>(nv);
  q.accepted = q.reproj_std <= threshold;
  return q;
}

/// Stand-in pose provider for synthetic data. It knows each frame's pose and
/// an instability level; a zero level yields exact translation equivariance,
/// otherwise each call perturbs the pose with fresh seeded noise.
class SimulatedPosePredictor : public PosePredictor {
 public:
  struct FrameEntry {
    RigidTransform wrist;
    CameraIntrinsics camera;
    double rotation_noise = 0.0;     // radians
    double translation_noise = 0.0;  // wrist-frame units
    bool fail = false;
  };

  explicit SimulatedPosePredictor(std::uint64_t seed) : seed_(seed) {}

  void add(const ImageRef& image, FrameEntry entry) {
    entries_.push_back({image.sequence_id, image.frame_id, entry});
  }

  std::optional<PosePrediction> predict(const ImageRef& image,
                                        const std::array<double, 2>& offset) const override {
    for (const auto& e : entries_) {
      if (e.sequence != image.sequence_id || e.frame != image.frame_id) continue;
      if (e.entry.fail) return std::nullopt;
      PosePrediction pred{e.entry.wrist, e.entry.camera};
      pred.camera.cx += offset[0];
      pred.camera.cy += offset[1];
      if (e.entry.rotation_noise > 0 || e.entry.translation_noise > 0) {
        const auto h = stable_hash(e.sequence);
        Rng rng(derive_seed(seed_ ^ h, seed_stream::kPredictor,
                            static_cast<std::uint64_t>(e.frame) * 1000003u +
                                static_cast<std::uint64_t>(std::llround(offset[0] * 7.0 + offset[1] * 131.0 + 1e6))));
        const Vec3 rv(rng.normal(0, e.entry.rotation_noise), rng.normal(0, e.entry.rotation_noise),
                      rng.normal(0, e.entry.rotation_noise));
        const Vec3 tv(rng.normal(0, e.entry.translation_noise), rng.normal(0, e.entry.translation_noise),
                      rng.normal(0, e.entry.translation_noise));
        pred.wrist.rotation = rotation_from_rotvec(rv) * pred.wrist.rotation;
        pred.wrist.translation += tv;
      }
      return pred;
    }
    return std::nullopt;
  }

 private:
  struct Stored {
    std::string sequence;
    int frame;
    FrameEntry entry;
  };
  std::uint64_t seed_;
  std::vector<Stored> entries_;
};

// ---------------------------------------------------------------------------
// Track curation from contact annotations

enum class ContactLabel { Left, Right, Both, None };

struct TrackSegment {
  ContactLabel hand = ContactLabel::Right;
  std::vector<std::size_t> frames;  // indices into the input track

  bool operator==(const TrackSegment&) const = default;
};

/// Maximal runs of frames in contact with exactly one hand, split whenever the
/// contacting hand changes; runs shorter than two frames are dropped.
inline std::vector<TrackSegment> curate_tracks(const std::vector<ContactLabel>& track) {
  std::vector<TrackSegment> out;
  std::optional<TrackSegment> current;
  auto flush = [&] {
    if (current && current->frames.size() >= 2) out.push_back(std::move(*current));
    current.reset();
  };
  for (std::size_t i = 0; i < track.size(); ++i) {
    const ContactLabel c = track[i];
    if (c != ContactLabel::Left && c != ContactLabel::Right) {
      flush();
      continue;
    }
    if (current && current->hand != c) flush();
    if (!current) current = TrackSegment{c, {}};
    current->frames.push_back(i);
  }
  flush();
  return out;
}

}  // namespace handocc
