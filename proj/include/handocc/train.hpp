#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "handocc/binary_io.hpp"
#include "handocc/nn.hpp"
#include "handocc/occnet.hpp"
#include "handocc/scene_synth.hpp"
#include "handocc/shapes.hpp"
#include "handocc/supervision.hpp"

namespace handocc {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  double lambda_visual_hull = 1.0;
  double lambda_consistency = 1.0;
  double lambda_shape_prior = 0.25;
  /// Steps are scheduled in blocks of ratio_synthetic3d synthetic-3D steps
  /// followed by ratio_multiview multiview steps.
  int ratio_synthetic3d = 1;
  int ratio_multiview = 2;
  int batch_size = 64;  // observations per step
  int points_per_observation = 8192;
  int consistency_pairs = static_cast<int>(kDefaultConsistencyPairs);  // per step
  int slices_per_step = 4;
  int slice_size = kDefaultSliceSize;
  double slice_extent = 1.0;
  double learning_rate = 1e-5;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double momentum = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int steps = 1000;
  std::uint64_t seed = 0;
  OccupancyNetConfig net;
  DiscriminatorConfig discriminator;
  SamplingConfig sampling;
  /// Oracle-labeled points cached per synthetic-3D item (half near the
  /// surface, half uniform in the volume).
  int synthetic3d_points = 8192;
  double near_surface_sigma = 0.05;

  void validate() const {
    require(lambda_visual_hull >= 0 && lambda_consistency >= 0 && lambda_shape_prior >= 0,
            "loss weights must be non-negative");
    require(ratio_synthetic3d > 0 && ratio_multiview > 0, "dataset ratio components must be positive");
    require(batch_size > 0 && points_per_observation > 0 && consistency_pairs >= 0, "batch sizes must be positive");
    require(slices_per_step > 0 && slice_size >= 2 && slice_extent > 0, "invalid slice settings");
    require(learning_rate > 0 && momentum >= 0 && momentum < 1, "invalid optimizer settings");
    require(steps >= 0, "step count must be non-negative");
    require(synthetic3d_points > 0, "synthetic3d_points must be positive");
  }

  bool multiview_enabled() const {
    return lambda_visual_hull > 0 || lambda_consistency > 0 || lambda_shape_prior > 0;
  }
};

/// Image with 3D ground truth (the synthetic-3D supervision source).
struct Synthetic3DItem {
  std::string id;
  AnalyticShape shape;
  ViewObservation view;
};

/// Posed multiview observations of one rigidly held object.
struct MultiviewSequence {
  std::string id;
  std::vector<ViewObservation> views;
};

struct TrainingData {
  std::vector<Synthetic3DItem> synthetic3d;
  std::vector<MultiviewSequence> multiview;
};

struct LossRecord {
  int step = 0;
  std::optional<double> obman;
  std::optional<double> occ;
  std::optional<double> consis;
  std::optional<double> shape;
  std::optional<double> disc;
  double total = 0.0;  // objective minimized by the occupancy network this step
};

inline void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& records) {
  os << "step,l_obman,l_occ,l_consis,l_shape,l_disc\n";
  auto cell = [&](const std::optional<double>& v) {
    os << ',';
    if (v) {
      std::ostringstream s;
      s.precision(10);
      s << *v;
      os << s.str();
    }
  };
  for (const auto& r : records) {
    os << r.step;
    cell(r.obman);
    cell(r.occ);
    cell(r.consis);
    cell(r.shape);
    cell(r.disc);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Loss nodes with exact reverse-mode gradients. Each returns the loss value
// and, when `grads` is non-null, adds d(weight * loss)/d(params) to it.

/// Mean binary cross-entropy of the network against 0/1 labels for points
/// seen through one view. Serves both oracle (synthetic-3D) and visual-hull
/// labels.
inline double occupancy_ce_loss(const OccupancyNet& net, std::span<const Vec3> points,
                                std::span<const std::uint8_t> labels, const ViewObservation& view,
                                nn::Gradients* grads, double weight = 1.0, double normalizer = 0.0) {
  require(points.size() == labels.size() && !points.empty(), "points/labels mismatch");
  const double n = normalizer > 0 ? normalizer : static_cast<double>(points.size());
  const nn::Tape tape = net.mlp().forward(net.build_inputs(points, view));
  double loss = 0.0;
  nn::Matrix dz(1, tape.output.cols());
  for (Eigen::Index i = 0; i < tape.output.cols(); ++i) {
    const double z = tape.output(0, i);
    const double y = labels[static_cast<std::size_t>(i)];
    loss += softplus(z) - y * z;
    dz(0, i) = weight * (sigmoid(z) - y) / n;
  }
  if (grads != nullptr) net.mlp().backward(tape, dz, *grads);
  return loss / n;
}

/// Builds inputs where column k uses views[k].
inline nn::Matrix build_inputs_per_view(const OccupancyNet& net, std::span<const Vec3> points,
                                        std::span<const ViewObservation* const> views) {
  nn::Matrix in(net.config().input_dim(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t k = 0; k < points.size(); ++k) {
    in.col(static_cast<Eigen::Index>(k)) = net.build_inputs(points.subspan(k, 1), *views[k]).col(0);
  }
  return in;
}

/// Mean CE(f(x; view_i), f(x; view_j)) over pairs; gradients reach both
/// branches (the second prediction acts as a soft target).
inline double consistency_loss(const OccupancyNet& net, std::span<const Vec3> points,
                               const std::vector<ConsistencyPair>& pairs,
                               const std::vector<ViewObservation>& views, nn::Gradients* grads,
                               double weight = 1.0, double normalizer = 0.0) {
  require(!pairs.empty(), "need at least one consistency pair");
  std::vector<Vec3> px;
  std::vector<const ViewObservation*> vi;
  std::vector<const ViewObservation*> vj;
  for (const auto& p : pairs) {
    px.push_back(points[p.point]);
    vi.push_back(&views[p.view_i]);
    vj.push_back(&views[p.view_j]);
  }
  const nn::Tape ta = net.mlp().forward(build_inputs_per_view(net, px, vi));
  const nn::Tape tb = net.mlp().forward(build_inputs_per_view(net, px, vj));
  const double n = normalizer > 0 ? normalizer : static_cast<double>(pairs.size());
  double loss = 0.0;
  nn::Matrix da(1, ta.output.cols());
  nn::Matrix db(1, tb.output.cols());
  for (Eigen::Index k = 0; k < ta.output.cols(); ++k) {
    const double za = ta.output(0, k);
    const double zb = tb.output(0, k);
    const double pa = sigmoid(za);
    const double pb = sigmoid(zb);
    loss += softplus(za) - pb * za;
    da(0, k) = weight * (pa - pb) / n;
    db(0, k) = weight * (-za) * pb * (1.0 - pb) / n;
  }
  if (grads != nullptr) {
    net.mlp().backward(ta, da, *grads);
    net.mlp().backward(tb, db, *grads);
  }
  return loss / n;
}

/// Occupancy slices of the network under one view each.
struct SliceBatch {
  std::vector<Eigen::MatrixXd> slices;
  std::vector<nn::Tape> tapes;  // one per slice, logits in row 0
};

inline SliceBatch slice_network(const OccupancyNet& net, const std::vector<SlicePlane>& planes,
                                std::span<const ViewObservation* const> views) {
  SliceBatch out;
  for (std::size_t s = 0; s < planes.size(); ++s) {
    const auto pts = planes[s].points();
    nn::Tape tape = net.mlp().forward(net.build_inputs(pts, *views[s]));
    const int sz = planes[s].grid_size;
    Eigen::MatrixXd grid(sz, sz);
    for (int r = 0; r < sz; ++r)
      for (int c = 0; c < sz; ++c) grid(r, c) = sigmoid(tape.output(0, r * sz + c));
    out.slices.push_back(std::move(grid));
    out.tapes.push_back(std::move(tape));
  }
  return out;
}

/// Generator side of the slice prior: mean g(slice)^2 over the batch.
/// Gradients flow through the discriminator (not accumulated into it) back
/// into the occupancy network.
inline double shape_prior_loss(const OccupancyNet& net, const SliceDiscriminator& disc,
                               const SliceBatch& fake, nn::Gradients* net_grads, double weight = 1.0) {
  const nn::Tape dt = disc.mlp().forward(SliceDiscriminator::flatten_slices(fake.slices));
  const auto ns = static_cast<double>(fake.slices.size());
  double loss = 0.0;
  nn::Matrix dg(1, dt.output.cols());
  for (Eigen::Index s = 0; s < dt.output.cols(); ++s) {
    const double g = dt.output(0, s);
    loss += g * g;
    dg(0, s) = weight * 2.0 * g / ns;
  }
  if (net_grads != nullptr) {
    auto scratch = disc.mlp().zero_gradients();
    const nn::Matrix dslice = disc.mlp().backward(dt, dg, scratch);
    for (std::size_t s = 0; s < fake.slices.size(); ++s) {
      const auto& grid = fake.slices[s];
      nn::Matrix dz(1, grid.size());
      for (Eigen::Index r = 0; r < grid.rows(); ++r) {
        for (Eigen::Index c = 0; c < grid.cols(); ++c) {
          const double p = grid(r, c);
          const Eigen::Index k = r * grid.cols() + c;
          dz(0, k) = dslice(k, static_cast<Eigen::Index>(s)) * p * (1.0 - p);
        }
      }
      net.mlp().backward(fake.tapes[s], dz, *net_grads);
    }
  }
  return loss / ns;
}

/// Least-squares discriminator objective: real slices toward 0, generated
/// slices toward 1.
inline double discriminator_objective(const SliceDiscriminator& disc, const std::vector<Eigen::MatrixXd>& real,
                                      const std::vector<Eigen::MatrixXd>& fake, nn::Gradients* grads) {
  const nn::Tape tr = disc.mlp().forward(SliceDiscriminator::flatten_slices(real));
  const nn::Tape tf = disc.mlp().forward(SliceDiscriminator::flatten_slices(fake));
  const auto nr = static_cast<double>(real.size());
  const auto nf = static_cast<double>(fake.size());
  double lr = 0.0;
  double lf = 0.0;
  nn::Matrix dr(1, tr.output.cols());
  nn::Matrix df(1, tf.output.cols());
  for (Eigen::Index i = 0; i < tr.output.cols(); ++i) {
    const double g = tr.output(0, i);
    lr += g * g;
    dr(0, i) = 2.0 * g / nr;
  }
  for (Eigen::Index i = 0; i < tf.output.cols(); ++i) {
    const double g = tf.output(0, i);
    lf += (g - 1.0) * (g - 1.0);
    df(0, i) = 2.0 * (g - 1.0) / nf;
  }
  if (grads != nullptr) {
    disc.mlp().backward(tr, dr, *grads);
    disc.mlp().backward(tf, df, *grads);
  }
  return lr / nr + lf / nf;
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  std::vector<nn::DenseLayer> first;
  std::vector<nn::DenseLayer> second;
  std::int64_t updates = 0;

  static OptimizerState zeros_like(const nn::Mlp& m) {
    return {m.zero_gradients(), m.zero_gradients(), 0};
  }
};

/// One optimizer update; parameters and state are rounded to float32 after
/// the update.
inline void apply_update(nn::Mlp& net, const nn::Gradients& grads, OptimizerState& state, const TrainConfig& cfg) {
  ++state.updates;
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto step = [&](auto& param, const auto& g, auto& m, auto& v) {
      if (cfg.optimizer == OptimizerKind::Sgd) {
        if (cfg.momentum > 0) {
          m = cfg.momentum * m + g;
          param -= cfg.learning_rate * m;
        } else {
          param -= cfg.learning_rate * g;
        }
      } else {
        const double b1 = cfg.adam_beta1;
        const double b2 = cfg.adam_beta2;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.updates));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.updates));
        param.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_epsilon);
      }
    };
    step(layers[l].weight, grads[l].weight, state.first[l].weight, state.second[l].weight);
    step(layers[l].bias, grads[l].bias, state.first[l].bias, state.second[l].bias);
  }
  nn::quantize(layers);
  nn::quantize(state.first);
  nn::quantize(state.second);
}

// ---------------------------------------------------------------------------
// Checkpoints: "HOCK", u32 version, metadata text, u32 block count, then
// named blocks (name, u32 rows, u32 cols, rows*cols f32 in column-major).

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_block(std::ostream& os, const std::string& name, const nn::Matrix& m) {
  binary::write_string(os, name);
  binary::write_u32(os, static_cast<std::uint32_t>(m.rows()));
  binary::write_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) binary::write_f32(os, static_cast<float>(m.data()[i]));
}

inline void append_layers(std::vector<std::pair<std::string, nn::Matrix>>& blocks, const std::string& prefix,
                          const std::vector<nn::DenseLayer>& layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    blocks.emplace_back(prefix + "." + std::to_string(l) + ".weight", layers[l].weight);
    blocks.emplace_back(prefix + "." + std::to_string(l) + ".bias", nn::Matrix(layers[l].bias));
  }
}

inline void restore_layers(const std::map<std::string, nn::Matrix>& blocks, const std::string& prefix,
                           std::vector<nn::DenseLayer>& layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto w = blocks.find(prefix + "." + std::to_string(l) + ".weight");
    const auto b = blocks.find(prefix + "." + std::to_string(l) + ".bias");
    if (w == blocks.end() || b == blocks.end()) throw Error(ErrorCode::Format, "checkpoint misses " + prefix);
    if (w->second.rows() != layers[l].weight.rows() || w->second.cols() != layers[l].weight.cols() ||
        b->second.size() != layers[l].bias.size()) {
      throw Error(ErrorCode::Format, "checkpoint layer shape mismatch in " + prefix);
    }
    layers[l].weight = w->second;
    layers[l].bias = b->second;
  }
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

struct CheckpointContents {
  std::map<std::string, std::string> meta;
  std::map<std::string, nn::Matrix> blocks;
};

inline CheckpointContents read_checkpoint(std::istream& is) {
  binary::expect_tag(is, "HOCK");
  const auto version = binary::read_u32(is);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::Format, "unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointContents out;
  std::istringstream meta(binary::read_string(is));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto n = binary::read_u32(is);
  for (std::uint32_t b = 0; b < n; ++b) {
    const std::string name = binary::read_string(is);
    const auto rows = binary::read_u32(is);
    const auto cols = binary::read_u32(is);
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 30)) throw Error(ErrorCode::Format, "block too large");
    nn::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = binary::read_f32(is);
    out.blocks.emplace(name, std::move(m));
  }
  return out;
}

inline int meta_int(const CheckpointContents& c, const std::string& key) {
  const auto it = c.meta.find(key);
  if (it == c.meta.end()) throw Error(ErrorCode::Format, "checkpoint metadata misses " + key);
  return std::stoi(it->second);
}

inline OccupancyNetConfig net_config_from_checkpoint(const CheckpointContents& c) {
  OccupancyNetConfig cfg;
  cfg.hidden_layers = meta_int(c, "net.hidden_layers");
  cfg.width = meta_int(c, "net.width");
  cfg.skip_layer = meta_int(c, "net.skip_layer");
  cfg.feature_channels = meta_int(c, "net.feature_channels");
  cfg.global_dim = meta_int(c, "net.global_dim");
  return cfg;
}

inline OccupancyNet load_occupancy_net(std::istream& is) {
  const auto c = read_checkpoint(is);
  OccupancyNet net(net_config_from_checkpoint(c));
  detail::restore_layers(c.blocks, "net", net.mlp().layers());
  return net;
}

// ---------------------------------------------------------------------------
// Training loop

class Trainer {
 public:
  Trainer(TrainConfig cfg, TrainingData data) : cfg_(std::move(cfg)), data_(std::move(data)) {
    cfg_.validate();
    require(!data_.synthetic3d.empty() || !data_.multiview.empty(), "training data is empty");
    if (cfg_.multiview_enabled() && cfg_.lambda_shape_prior > 0 && !data_.multiview.empty()) {
      require(!data_.synthetic3d.empty(), "the shape prior needs synthetic-3D data for real slices");
    }
    net_ = OccupancyNet(cfg_.net);
    Rng init(derive_seed(cfg_.seed, seed_stream::kInit, 0));
    net_.initialize(init);
    nn::quantize(net_.mlp().layers());
    disc_ = SliceDiscriminator(cfg_.slice_size, cfg_.discriminator);
    Rng dinit(derive_seed(cfg_.seed, seed_stream::kInit, 1));
    disc_.initialize(dinit);
    nn::quantize(disc_.mlp().layers());
    net_opt_ = OptimizerState::zeros_like(net_.mlp());
    disc_opt_ = OptimizerState::zeros_like(disc_.mlp());
    prepare_caches();
  }

  const TrainConfig& config() const { return cfg_; }
  const OccupancyNet& net() const { return net_; }
  const SliceDiscriminator& discriminator() const { return disc_; }
  int steps_done() const { return step_; }
  const std::vector<LossRecord>& history() const { return history_; }
  const std::vector<std::string>& dropped_sequences() const { return dropped_; }

  /// True when step k draws from the synthetic-3D set.
  bool is_synthetic_step(int k) const {
    const bool have3d = !data_.synthetic3d.empty();
    const bool have_mv = !mv_sequences_.empty() && cfg_.multiview_enabled();
    if (!have_mv) return true;
    if (!have3d) return false;
    return k % (cfg_.ratio_synthetic3d + cfg_.ratio_multiview) < cfg_.ratio_synthetic3d;
  }

  LossRecord step() {
    Rng rng(derive_seed(cfg_.seed, seed_stream::kTrainStep, static_cast<std::uint64_t>(step_)));
    LossRecord rec = is_synthetic_step(step_) ? synthetic_step(rng) : multiview_step(rng);
    rec.step = step_;
    for (const auto& v : {rec.obman, rec.occ, rec.consis, rec.shape, rec.disc}) {
      if (v && !std::isfinite(*v)) {
        throw Error(ErrorCode::Diverged, "non-finite loss at step " + std::to_string(step_));
      }
    }
    if (!std::isfinite(rec.total)) throw Error(ErrorCode::Diverged, "non-finite loss at step " + std::to_string(step_));
    history_.push_back(rec);
    ++step_;
    return rec;
  }

  void run(int steps) {
    for (int i = 0; i < steps; ++i) step();
  }

  /// Runs until cfg.steps steps have been taken in total.
  void run_to_completion() { run(cfg_.steps - step_); }

  void save_checkpoint(std::ostream& os) const {
    std::ostringstream meta;
    meta << "step=" << step_ << "\n"
         << "net.updates=" << net_opt_.updates << "\n"
         << "disc.updates=" << disc_opt_.updates << "\n"
         << "net.hidden_layers=" << cfg_.net.hidden_layers << "\n"
         << "net.width=" << cfg_.net.width << "\n"
         << "net.skip_layer=" << cfg_.net.skip_layer << "\n"
         << "net.feature_channels=" << cfg_.net.feature_channels << "\n"
         << "net.global_dim=" << cfg_.net.global_dim << "\n"
         << "disc.slice_size=" << cfg_.slice_size << "\n"
         << "disc.hidden=" << detail::join_ints(cfg_.discriminator.hidden) << "\n";
    std::vector<std::pair<std::string, nn::Matrix>> blocks;
    detail::append_layers(blocks, "net", net_.mlp().layers());
    detail::append_layers(blocks, "disc", disc_.mlp().layers());
    detail::append_layers(blocks, "opt.net.first", net_opt_.first);
    detail::append_layers(blocks, "opt.net.second", net_opt_.second);
    detail::append_layers(blocks, "opt.disc.first", disc_opt_.first);
    detail::append_layers(blocks, "opt.disc.second", disc_opt_.second);
    binary::write_tag(os, "HOCK");
    binary::write_u32(os, kCheckpointVersion);
    binary::write_string(os, meta.str());
    binary::write_u32(os, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, m] : blocks) detail::write_block(os, name, m);
  }

  /// Restores parameters, optimizer state and the step counter. The trainer
  /// must have been built with the same configuration and data.
  void load_checkpoint(std::istream& is) {
    const auto c = read_checkpoint(is);
    if (!(net_config_from_checkpoint(c) == cfg_.net)) {
      throw Error(ErrorCode::Config, "checkpoint network does not match the configuration");
    }
    detail::restore_layers(c.blocks, "net", net_.mlp().layers());
    detail::restore_layers(c.blocks, "disc", disc_.mlp().layers());
    detail::restore_layers(c.blocks, "opt.net.first", net_opt_.first);
    detail::restore_layers(c.blocks, "opt.net.second", net_opt_.second);
    detail::restore_layers(c.blocks, "opt.disc.first", disc_opt_.first);
    detail::restore_layers(c.blocks, "opt.disc.second", disc_opt_.second);
    step_ = meta_int(c, "step");
    net_opt_.updates = meta_int(c, "net.updates");
    disc_opt_.updates = meta_int(c, "disc.updates");
  }

 private:
  struct LabeledPoints {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> labels;
  };

  void prepare_caches() {
    for (std::size_t i = 0; i < data_.synthetic3d.size(); ++i) {
      const auto& item = data_.synthetic3d[i];
      Rng rng(derive_seed(cfg_.seed, seed_stream::kSamples, 1'000'000 + i));
      LabeledPoints lp;
      const auto n = static_cast<std::size_t>(cfg_.synthetic3d_points);
      const auto surface = sample_shape_surface(item.shape, n / 2, rng);
      for (const Vec3& s : surface) {
        const Vec3 p = (s + cfg_.near_surface_sigma * Vec3(rng.normal(), rng.normal(), rng.normal()))
                           .cwiseMax(-1.0)
                           .cwiseMin(1.0);
        lp.points.push_back(p);
      }
      while (lp.points.size() < n) lp.points.push_back(uniform_in_cube(rng));
      for (const Vec3& p : lp.points) lp.labels.push_back(occupancy_oracle(item.shape, p) ? 1 : 0);
      synth_cache_.push_back(std::move(lp));
    }
    for (std::size_t i = 0; i < data_.multiview.size(); ++i) {
      const auto& seq = data_.multiview[i];
      if (seq.views.size() < 2) {
        dropped_.push_back(seq.id);
        continue;
      }
      try {
        auto batch = sample_training_points(seq.views, seq.views.front().hand, cfg_.sampling,
                                            derive_seed(cfg_.seed, seed_stream::kSamples, i));
        mv_sequences_.push_back(i);
        mv_cache_.push_back({std::move(batch.points), std::move(batch.labels)});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::HullTooSmall) throw;
        dropped_.push_back(seq.id);
      }
    }
  }

  static std::vector<std::size_t> choose(Rng& rng, std::size_t population, std::size_t k) {
    std::vector<std::size_t> out(k);
    for (auto& v : out) v = rng.index(population);
    return out;
  }

  LossRecord synthetic_step(Rng& rng) {
    auto grads = net_.mlp().zero_gradients();
    const auto b = static_cast<std::size_t>(cfg_.batch_size);
    const auto p = static_cast<std::size_t>(cfg_.points_per_observation);
    const double norm = static_cast<double>(b * p);
    double loss = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t item = rng.index(data_.synthetic3d.size());
      const auto& cache = synth_cache_[item];
      std::vector<Vec3> pts;
      std::vector<std::uint8_t> labels;
      for (std::size_t idx : choose(rng, cache.points.size(), p)) {
        pts.push_back(cache.points[idx]);
        labels.push_back(cache.labels[idx]);
      }
      loss += occupancy_ce_loss(net_, pts, labels, data_.synthetic3d[item].view, &grads, 1.0, norm);
    }
    apply_update(net_.mlp(), grads, net_opt_, cfg_);
    LossRecord rec;
    rec.obman = loss;
    rec.total = loss;
    return rec;
  }

  LossRecord multiview_step(Rng& rng) {
    auto grads = net_.mlp().zero_gradients();
    const auto b = static_cast<std::size_t>(cfg_.batch_size);
    const auto p = static_cast<std::size_t>(cfg_.points_per_observation);
    const std::size_t consis_points =
        std::max<std::size_t>(1, std::min(p, static_cast<std::size_t>(cfg_.consistency_pairs) / b));

    struct Obs {
      std::size_t seq;
      std::size_t view;
      std::vector<Vec3> points;
      std::vector<std::uint8_t> labels;
      std::uint64_t pair_seed;
    };
    std::vector<Obs> batch;
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t slot = rng.index(mv_sequences_.size());
      const auto& seq = data_.multiview[mv_sequences_[slot]];
      const auto& cache = mv_cache_[slot];
      Obs o{slot, rng.index(seq.views.size()), {}, {}, 0};
      for (std::size_t idx : choose(rng, cache.points.size(), p)) {
        o.points.push_back(cache.points[idx]);
        o.labels.push_back(cache.labels[idx]);
      }
      o.pair_seed = rng.engine()();
      batch.push_back(std::move(o));
    }

    LossRecord rec;
    double occ = 0.0;
    if (cfg_.lambda_visual_hull > 0) {
      const double norm = static_cast<double>(b * p);
      for (const auto& o : batch) {
        const auto& seq = data_.multiview[mv_sequences_[o.seq]];
        occ += occupancy_ce_loss(net_, o.points, o.labels, seq.views[o.view], &grads, cfg_.lambda_visual_hull, norm);
      }
      rec.occ = occ;
    }
    double consis = 0.0;
    if (cfg_.lambda_consistency > 0) {
      const double norm = static_cast<double>(b * consis_points);
      for (const auto& o : batch) {
        const auto& seq = data_.multiview[mv_sequences_[o.seq]];
        const auto pairs = consistency_pairs(seq.views.size(), consis_points, o.pair_seed, consis_points);
        consis += consistency_loss(net_, std::span<const Vec3>(o.points).first(consis_points), pairs, seq.views,
                                   &grads, cfg_.lambda_consistency, norm);
      }
      rec.consis = consis;
    }
    double shape = 0.0;
    std::optional<SliceBatch> fake;
    std::vector<SlicePlane> fake_planes;
    if (cfg_.lambda_shape_prior > 0) {
      std::vector<const ViewObservation*> views;
      for (int s = 0; s < cfg_.slices_per_step; ++s) {
        const auto& o = batch[rng.index(batch.size())];
        views.push_back(&data_.multiview[mv_sequences_[o.seq]].views[o.view]);
        fake_planes.push_back(random_slice_plane(rng, cfg_.slice_size, cfg_.slice_extent));
      }
      fake = slice_network(net_, fake_planes, views);
      shape = shape_prior_loss(net_, disc_, *fake, &grads, cfg_.lambda_shape_prior);
      rec.shape = shape;
    }
    rec.total = cfg_.lambda_visual_hull * occ + cfg_.lambda_consistency * consis + cfg_.lambda_shape_prior * shape;
    apply_update(net_.mlp(), grads, net_opt_, cfg_);

    if (fake) {
      std::vector<SlicePlane> planes;
      std::vector<const ViewObservation*> views;
      for (int s = 0; s < cfg_.slices_per_step; ++s) {
        views.push_back(&data_.synthetic3d[rng.index(data_.synthetic3d.size())].view);
        planes.push_back(random_slice_plane(rng, cfg_.slice_size, cfg_.slice_extent));
      }
      // Real samples: current predictions on the synthetic-3D set.
      const auto real = slice_network(net_, planes, views);
      auto dgrads = disc_.mlp().zero_gradients();
      rec.disc = discriminator_objective(disc_, real.slices, fake->slices, &dgrads);
      apply_update(disc_.mlp(), dgrads, disc_opt_, cfg_);
    }
    return rec;
  }

  TrainConfig cfg_;
  TrainingData data_;
  OccupancyNet net_;
  SliceDiscriminator disc_;
  OptimizerState net_opt_;
  OptimizerState disc_opt_;
  std::vector<LabeledPoints> synth_cache_;
  std::vector<std::size_t> mv_sequences_;  // indices of usable multiview sequences
  std::vector<LabeledPoints> mv_cache_;
  std::vector<std::string> dropped_;
  std::vector<LossRecord> history_;
  int step_ = 0;
};

}  // namespace handocc
