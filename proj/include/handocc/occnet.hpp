#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "handocc/geom.hpp"
#include "handocc/nn.hpp"
#include "handocc/scene_synth.hpp"
#include "handocc/supervision.hpp"

namespace handocc {

// ---------------------------------------------------------------------------
// Scalar helpers

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

/// Reported occupancies stay at least this far from 0 and 1.
inline constexpr double kProbabilityFloor = 1e-15;

inline double occupancy_from_logit(double z) {
  return std::clamp(sigmoid(z), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

// ---------------------------------------------------------------------------
// Occupancy network

struct OccupancyNetConfig {
  int hidden_layers = 8;
  int width = 512;
  int skip_layer = 4;
  int feature_channels = 0;  // C: channels of the view's feature grid
  int global_dim = 0;        // G: length of the view's global feature

  /// 3 coordinates + 45 articulation features + C sampled channels + 1
  /// projected depth + G global features.
  int input_dim() const { return 3 + kArticulationDim + feature_channels + 1 + global_dim; }

  nn::MlpShape mlp_shape() const {
    nn::MlpShape s;
    s.input_dim = input_dim();
    s.hidden.assign(static_cast<std::size_t>(hidden_layers), width);
    s.output_dim = 1;
    s.skip_layer = skip_layer;
    s.activation = nn::Activation::Relu;
    return s;
  }

  bool operator==(const OccupancyNetConfig&) const = default;
};

/// Hand-conditioned occupancy MLP: maps a wrist-frame point plus its features
/// under one view to a logit; occupancy is the logistic of that logit.
class OccupancyNet {
 public:
  OccupancyNet() = default;
  explicit OccupancyNet(const OccupancyNetConfig& cfg) : config_(cfg), mlp_(cfg.mlp_shape()) {}

  const OccupancyNetConfig& config() const { return config_; }
  nn::Mlp& mlp() { return mlp_; }
  const nn::Mlp& mlp() const { return mlp_; }
  std::size_t parameter_count() const { return mlp_.parameter_count(); }

  void initialize(Rng& rng) { mlp_.initialize(rng, 0.1); }

  /// Column i holds the feature vector of points[i] under `view`.
  nn::Matrix build_inputs(std::span<const Vec3> points, const ViewObservation& view) const {
    const int c = config_.feature_channels;
    const int g = config_.global_dim;
    nn::Matrix in(config_.input_dim(), static_cast<Eigen::Index>(points.size()));
    const auto& wrist = view.hand.wrist;
    const FeatureGrid* grid =
        view.feature_grid && view.feature_grid->channels == c ? &*view.feature_grid : nullptr;
    std::vector<double> sampled(static_cast<std::size_t>(std::max(c, 1)));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Vec3& x = points[i];
      auto col = in.col(static_cast<Eigen::Index>(i));
      col.segment<3>(0) = x;
      col.segment<kArticulationDim>(3) = to_joint_coordinates(x, view.hand);
      int row = 3 + kArticulationDim;
      std::fill(sampled.begin(), sampled.end(), 0.0);
      if (grid != nullptr) {
        if (auto p = try_project(x, wrist, view.camera)) {
          grid->sample(p->u * grid->width / view.camera.width, p->v * grid->height / view.camera.height,
                       sampled.data());
        }
      }
      for (int k = 0; k < c; ++k) col(row + k) = sampled[static_cast<std::size_t>(k)];
      row += c;
      col(row++) = (wrist.rotation * x).z();
      for (int k = 0; k < g; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        col(row + k) = ku < view.global_feature.size() ? view.global_feature[ku] : 0.0;
      }
    }
    return in;
  }

  /// Logits for a batch of points.
  Eigen::RowVectorXd logits(std::span<const Vec3> points, const ViewObservation& view) const {
    return mlp_.forward(build_inputs(points, view)).output.row(0);
  }

  std::vector<double> predict(std::span<const Vec3> points, const ViewObservation& view) const {
    const Eigen::RowVectorXd z = logits(points, view);
    std::vector<double> out(static_cast<std::size_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i) out[static_cast<std::size_t>(i)] = occupancy_from_logit(z(i));
    return out;
  }

  /// Occupancy in (0, 1) at a single point.
  double forward(const Vec3& x, const ViewObservation& view) const {
    return predict(std::span<const Vec3>(&x, 1), view).front();
  }

  /// d occupancy / d x, through coordinates, articulation features, projected
  /// depth and the bilinear pixel-aligned features.
  Vec3 point_gradient(const Vec3& x, const ViewObservation& view) const {
    const nn::Matrix in = build_inputs(std::span<const Vec3>(&x, 1), view);
    const nn::Tape tape = mlp_.forward(in);
    auto scratch = mlp_.zero_gradients();
    const double p = sigmoid(tape.output(0, 0));
    const nn::Matrix dz = nn::Matrix::Constant(1, 1, p * (1.0 - p));
    const Eigen::VectorXd gin = mlp_.backward(tape, dz, scratch).col(0);

    Vec3 grad = gin.segment<3>(0);
    for (int j = 0; j < kNumJoints; ++j) {
      grad += view.hand.joints[static_cast<std::size_t>(j)].rotation * gin.segment<3>(3 + 3 * j);
    }
    const int c = config_.feature_channels;
    const int depth_row = 3 + kArticulationDim + c;
    const auto& wrist = view.hand.wrist;
    grad += gin(depth_row) * wrist.rotation.row(2).transpose();

    const FeatureGrid* grid =
        view.feature_grid && view.feature_grid->channels == c ? &*view.feature_grid : nullptr;
    if (grid == nullptr || c == 0) return grad;
    const Vec3 cam = wrist.apply(x);
    if (cam.z() <= kMinDepth) return grad;
    const auto& k = view.camera;
    const double sx = static_cast<double>(grid->width) / k.width;
    const double sy = static_cast<double>(grid->height) / k.height;
    const double gx = (k.fx * cam.x() / cam.z() + k.cx) * sx - 0.5;
    const double gy = (k.fy * cam.y() / cam.z() + k.cy) * sy - 0.5;
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const double fx = gx - x0;
    const double fy = gy - y0;
    auto tap = [&](int ch, int r, int col) {
      return (r < 0 || col < 0 || r >= grid->height || col >= grid->width) ? 0.0 : grid->at(ch, r, col);
    };
    double d_gx = 0.0;
    double d_gy = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double w = gin(3 + kArticulationDim + ch);
      const double v00 = tap(ch, y0, x0), v01 = tap(ch, y0, x0 + 1);
      const double v10 = tap(ch, y0 + 1, x0), v11 = tap(ch, y0 + 1, x0 + 1);
      d_gx += w * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
      d_gy += w * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
    }
    // d(gx, gy) / d(camera point)
    const Vec3 du(sx * k.fx / cam.z(), 0.0, -sx * k.fx * cam.x() / (cam.z() * cam.z()));
    const Vec3 dv(0.0, sy * k.fy / cam.z(), -sy * k.fy * cam.y() / (cam.z() * cam.z()));
    grad += wrist.rotation.transpose() * (d_gx * du + d_gy * dv);
    return grad;
  }

 private:
  OccupancyNetConfig config_;
  nn::Mlp mlp_;
};

// ---------------------------------------------------------------------------
// Slice discriminator

struct DiscriminatorConfig {
  std::vector<int> hidden{512, 256};
  double leaky_slope = 0.2;

  bool operator==(const DiscriminatorConfig&) const = default;
};

/// MLP over a flattened S x S occupancy slice (row-major), scalar output.
class SliceDiscriminator {
 public:
  SliceDiscriminator() = default;
  SliceDiscriminator(int slice_size, const DiscriminatorConfig& cfg) : slice_size_(slice_size), config_(cfg) {
    nn::MlpShape s;
    s.input_dim = slice_size * slice_size;
    s.hidden = cfg.hidden;
    s.output_dim = 1;
    s.activation = nn::Activation::LeakyRelu;
    s.leaky_slope = cfg.leaky_slope;
    mlp_ = nn::Mlp(s);
  }

  int slice_size() const { return slice_size_; }
  const DiscriminatorConfig& config() const { return config_; }
  nn::Mlp& mlp() { return mlp_; }
  const nn::Mlp& mlp() const { return mlp_; }

  void initialize(Rng& rng) { mlp_.initialize(rng, 1.0); }

  static nn::Matrix flatten_slices(const std::vector<Eigen::MatrixXd>& slices) {
    require(!slices.empty(), "need at least one slice");
    const Eigen::Index n = slices.front().size();
    nn::Matrix out(n, static_cast<Eigen::Index>(slices.size()));
    for (std::size_t s = 0; s < slices.size(); ++s) {
      const auto& m = slices[s];
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out(r * m.cols() + c, static_cast<Eigen::Index>(s)) = m(r, c);
    }
    return out;
  }

  std::vector<double> score(const std::vector<Eigen::MatrixXd>& slices) const {
    const Eigen::RowVectorXd y = mlp_.forward(flatten_slices(slices)).output.row(0);
    return {y.data(), y.data() + y.size()};
  }

 private:
  int slice_size_ = kDefaultSliceSize;
  DiscriminatorConfig config_;
  nn::Mlp mlp_;
};

// ---------------------------------------------------------------------------
// Losses on probabilities (the reference formulas)

/// Cross-entropy of prediction p against target q (q may be soft).
inline double cross_entropy(double p, double q) {
  p = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
  return -(q * std::log(p) + (1.0 - q) * std::log(1.0 - p));
}

/// Mean binary cross-entropy.
inline double loss_occ(std::span<const double> predictions, std::span<const std::uint8_t> labels) {
  require(predictions.size() == labels.size() && !predictions.empty(), "prediction/label size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += cross_entropy(predictions[i], labels[i]);
  return s / static_cast<double>(predictions.size());
}

/// Mean CE(p_i, p_j) over pairs of predictions of the same point in two views.
inline double loss_consis(std::span<const double> pred_i, std::span<const double> pred_j) {
  require(pred_i.size() == pred_j.size() && !pred_i.empty(), "pair size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < pred_i.size(); ++k) s += cross_entropy(pred_i[k], pred_j[k]);
  return s / static_cast<double>(pred_i.size());
}

/// Generator side of the least-squares adversarial loss: mean g(fake)^2.
inline double loss_shape(std::span<const double> fake_scores) {
  require(!fake_scores.empty(), "need at least one score");
  double s = 0.0;
  for (double g : fake_scores) s += g * g;
  return s / static_cast<double>(fake_scores.size());
}

/// Discriminator regresses real slices to 0 and generated ones to 1.
inline double discriminator_loss(std::span<const double> real_scores, std::span<const double> fake_scores) {
  require(!real_scores.empty() && !fake_scores.empty(), "need real and fake scores");
  double r = 0.0;
  for (double g : real_scores) r += g * g;
  double f = 0.0;
  for (double g : fake_scores) f += (g - 1.0) * (g - 1.0);
  return r / static_cast<double>(real_scores.size()) + f / static_cast<double>(fake_scores.size());
}

}  // namespace handocc
