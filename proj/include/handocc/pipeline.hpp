#pragma once

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <variant>

#include "handocc/io.hpp"
#include "handocc/marching_cubes.hpp"
#include "handocc/metrics.hpp"
#include "handocc/train.hpp"

namespace handocc {

/// Every tunable of the pipeline in one flat record. Keys match field names
/// in the JSON config and the `--<key>` command-line overrides.
struct PipelineConfig {
  std::uint64_t seed = 0;

  // synth
  int num_synthetic3d = 4;
  int synthetic3d_views = 4;
  int num_multiview = 8;
  int views_per_sequence = 8;
  int holdout_views = 0;
  std::string synthetic3d_families = "sphere";
  std::string multiview_families = "box,cylinder,union";
  int image_size = kDefaultImageSize;
  double camera_distance = 2.5;
  bool spread_views = true;
  double occlusion_fraction = 0.0;
  bool write_features = true;
  bool depth_feature = true;
  int min_mask_pixels = static_cast<int>(kMinMaskPixels);
  double noisy_fraction = 0.0;
  double pose_noise_rotation = 0.25;
  double pose_noise_translation = 0.08;
  double predictor_noise_rotation = 0.3;
  double predictor_noise_translation = 0.2;
  double both_hands_fraction = 0.0;

  // curate
  double reproj_threshold = kDefaultReprojThreshold;
  double offset_fraction = 0.05;

  // sample and train
  int sampling_total = 8192;
  int sampling_hull_positive = 4096;
  int sampling_hand_points = kNumHandVertices;
  int sampling_proposal_cap = 1'000'000;
  double lambda_visual_hull = 1.0;
  double lambda_consistency = 1.0;
  double lambda_shape_prior = 0.25;
  int ratio_synthetic3d = 1;
  int ratio_multiview = 2;
  int batch_size = 64;
  int points_per_observation = 8192;
  int consistency_pairs = static_cast<int>(kDefaultConsistencyPairs);
  int slices_per_step = 4;
  int slice_size = kDefaultSliceSize;
  double slice_extent = 1.0;
  double learning_rate = 1e-5;
  std::string optimizer = "sgd";
  double momentum = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int steps = 1000;
  int hidden_layers = 8;
  int width = 512;
  int skip_layer = 4;
  std::string disc_hidden = "512,256";
  double disc_leaky_slope = 0.2;
  int synthetic3d_points = 8192;
  double near_surface_sigma = 0.05;

  // reconstruct
  int grid_resolution = kDefaultGridResolution;
  double iso = 0.5;
  int threads = 1;
  std::string frames = "test";

  // eval
  int surface_samples = static_cast<int>(kDefaultSurfaceSamples);
  double metric_scale = 0.1;  // meters per wrist-frame unit
  std::string taus_mm = "5,10";

  using FieldRef = std::variant<std::uint64_t*, int*, double*, bool*, std::string*>;

  template <typename Fn>
  void for_each_field(Fn&& fn) {
    fn("seed", FieldRef(&seed));
    fn("num_synthetic3d", FieldRef(&num_synthetic3d));
    fn("synthetic3d_views", FieldRef(&synthetic3d_views));
    fn("num_multiview", FieldRef(&num_multiview));
    fn("views_per_sequence", FieldRef(&views_per_sequence));
    fn("holdout_views", FieldRef(&holdout_views));
    fn("synthetic3d_families", FieldRef(&synthetic3d_families));
    fn("multiview_families", FieldRef(&multiview_families));
    fn("image_size", FieldRef(&image_size));
    fn("camera_distance", FieldRef(&camera_distance));
    fn("spread_views", FieldRef(&spread_views));
    fn("occlusion_fraction", FieldRef(&occlusion_fraction));
    fn("write_features", FieldRef(&write_features));
    fn("depth_feature", FieldRef(&depth_feature));
    fn("min_mask_pixels", FieldRef(&min_mask_pixels));
    fn("noisy_fraction", FieldRef(&noisy_fraction));
    fn("pose_noise_rotation", FieldRef(&pose_noise_rotation));
    fn("pose_noise_translation", FieldRef(&pose_noise_translation));
    fn("predictor_noise_rotation", FieldRef(&predictor_noise_rotation));
    fn("predictor_noise_translation", FieldRef(&predictor_noise_translation));
    fn("both_hands_fraction", FieldRef(&both_hands_fraction));
    fn("reproj_threshold", FieldRef(&reproj_threshold));
    fn("offset_fraction", FieldRef(&offset_fraction));
    fn("sampling_total", FieldRef(&sampling_total));
    fn("sampling_hull_positive", FieldRef(&sampling_hull_positive));
    fn("sampling_hand_points", FieldRef(&sampling_hand_points));
    fn("sampling_proposal_cap", FieldRef(&sampling_proposal_cap));
    fn("lambda_visual_hull", FieldRef(&lambda_visual_hull));
    fn("lambda_consistency", FieldRef(&lambda_consistency));
    fn("lambda_shape_prior", FieldRef(&lambda_shape_prior));
    fn("ratio_synthetic3d", FieldRef(&ratio_synthetic3d));
    fn("ratio_multiview", FieldRef(&ratio_multiview));
    fn("batch_size", FieldRef(&batch_size));
    fn("points_per_observation", FieldRef(&points_per_observation));
    fn("consistency_pairs", FieldRef(&consistency_pairs));
    fn("slices_per_step", FieldRef(&slices_per_step));
    fn("slice_size", FieldRef(&slice_size));
    fn("slice_extent", FieldRef(&slice_extent));
    fn("learning_rate", FieldRef(&learning_rate));
    fn("optimizer", FieldRef(&optimizer));
    fn("momentum", FieldRef(&momentum));
    fn("adam_beta1", FieldRef(&adam_beta1));
    fn("adam_beta2", FieldRef(&adam_beta2));
    fn("adam_epsilon", FieldRef(&adam_epsilon));
    fn("steps", FieldRef(&steps));
    fn("hidden_layers", FieldRef(&hidden_layers));
    fn("width", FieldRef(&width));
    fn("skip_layer", FieldRef(&skip_layer));
    fn("disc_hidden", FieldRef(&disc_hidden));
    fn("disc_leaky_slope", FieldRef(&disc_leaky_slope));
    fn("synthetic3d_points", FieldRef(&synthetic3d_points));
    fn("near_surface_sigma", FieldRef(&near_surface_sigma));
    fn("grid_resolution", FieldRef(&grid_resolution));
    fn("iso", FieldRef(&iso));
    fn("threads", FieldRef(&threads));
    fn("frames", FieldRef(&frames));
    fn("surface_samples", FieldRef(&surface_samples));
    fn("metric_scale", FieldRef(&metric_scale));
    fn("taus_mm", FieldRef(&taus_mm));
  }

  std::vector<std::string> keys() {
    std::vector<std::string> out;
    for_each_field([&](const char* name, FieldRef) { out.emplace_back(name); });
    return out;
  }

  /// Sets one field from its textual form, as given on the command line.
  void set(const std::string& key, const std::string& text) {
    bool found = false;
    for_each_field([&](const char* name, FieldRef ref) {
      if (key != name) return;
      found = true;
      std::visit([&](auto* p) { parse_into(key, text, *p); }, ref);
    });
    if (!found) throw Error(ErrorCode::Config, "unknown configuration key '" + key + "'");
  }

  nlohmann::json to_json() {
    nlohmann::json j = nlohmann::json::object();
    for_each_field([&](const char* name, FieldRef ref) { std::visit([&](auto* p) { j[name] = *p; }, ref); });
    return j;
  }

  /// Applies a JSON object on top of the current values; unknown keys and
  /// mistyped values are rejected.
  void merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::Config, "configuration must be a JSON object");
    const auto known = keys();
    for (const auto& [key, value] : j.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw Error(ErrorCode::Config, "unknown configuration key '" + key + "'");
      }
    }
    for_each_field([&](const char* name, FieldRef ref) {
      if (!j.contains(name)) return;
      const auto& v = j.at(name);
      std::visit(
          [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            const bool ok = std::is_same_v<T, std::string> ? v.is_string()
                            : std::is_same_v<T, bool>      ? v.is_boolean()
                            : std::is_same_v<T, double>    ? v.is_number()
                                                           : v.is_number_integer();
            if (!ok) throw Error(ErrorCode::Config, std::string("wrong type for key '") + name + "'");
            if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, int>) {
              if (v.is_number_unsigned()) {
                *p = static_cast<T>(v.get<std::uint64_t>());
              } else {
                const auto x = v.get<std::int64_t>();
                if (x < 0 && std::is_same_v<T, std::uint64_t>) {
                  throw Error(ErrorCode::Config, std::string("key '") + name + "' must be non-negative");
                }
                *p = static_cast<T>(x);
              }
            } else {
              *p = v.get<T>();
            }
          },
          ref);
    });
  }

  static PipelineConfig from_file(const std::filesystem::path& path) {
    auto is = io::open_in(path);
    PipelineConfig cfg;
    try {
      cfg.merge_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Config, path.string() + ": " + e.what());
    }
    return cfg;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.lambda_visual_hull = lambda_visual_hull;
    t.lambda_consistency = lambda_consistency;
    t.lambda_shape_prior = lambda_shape_prior;
    t.ratio_synthetic3d = ratio_synthetic3d;
    t.ratio_multiview = ratio_multiview;
    t.batch_size = batch_size;
    t.points_per_observation = points_per_observation;
    t.consistency_pairs = consistency_pairs;
    t.slices_per_step = slices_per_step;
    t.slice_size = slice_size;
    t.slice_extent = slice_extent;
    t.learning_rate = learning_rate;
    if (optimizer == "sgd") {
      t.optimizer = OptimizerKind::Sgd;
    } else if (optimizer == "adam") {
      t.optimizer = OptimizerKind::Adam;
    } else {
      throw Error(ErrorCode::Config, "optimizer must be 'sgd' or 'adam'");
    }
    t.momentum = momentum;
    t.adam_beta1 = adam_beta1;
    t.adam_beta2 = adam_beta2;
    t.adam_epsilon = adam_epsilon;
    t.steps = steps;
    t.seed = derive_seed(seed, seed_stream::kTrainStep, 0);
    t.net.hidden_layers = hidden_layers;
    t.net.width = width;
    t.net.skip_layer = skip_layer;
    t.discriminator.hidden.clear();
    for (double h : parse_list(disc_hidden, "disc_hidden")) t.discriminator.hidden.push_back(static_cast<int>(h));
    t.discriminator.leaky_slope = disc_leaky_slope;
    t.sampling = sampling_config();
    t.synthetic3d_points = synthetic3d_points;
    t.near_surface_sigma = near_surface_sigma;
    return t;
  }

  SamplingConfig sampling_config() const {
    require(sampling_total > 0 && sampling_hull_positive >= 0 && sampling_hand_points >= 0 && sampling_proposal_cap > 0,
            "sampling counts must be non-negative");
    return {static_cast<std::size_t>(sampling_total), static_cast<std::size_t>(sampling_hull_positive),
            static_cast<std::size_t>(sampling_hand_points), static_cast<std::size_t>(sampling_proposal_cap)};
  }

  std::vector<double> taus() const { return parse_list(taus_mm, "taus_mm"); }

  static std::vector<double> parse_list(const std::string& text, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        out.push_back(io::parse_real(item));
      } catch (const Error&) {
        throw Error(ErrorCode::Config, "bad list entry '" + item + "' for key '" + key + "'");
      }
    }
    return out;
  }

 private:
  template <typename T>
  static void parse_into(const std::string& key, const std::string& text, T& out) {
    auto bad = [&] { return Error(ErrorCode::Config, "bad value '" + text + "' for key '" + key + "'"); };
    if constexpr (std::is_same_v<T, std::string>) {
      out = text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") {
        out = true;
      } else if (text == "false" || text == "0") {
        out = false;
      } else {
        throw bad();
      }
    } else if constexpr (std::is_same_v<T, double>) {
      try {
        out = io::parse_real(text);
      } catch (const Error&) {
        throw bad();
      }
    } else {
      T v{};
      const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
      if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw bad();
      out = v;
    }
  }
};

namespace pipeline {

namespace fs = std::filesystem;

inline ShapeFamily family_from_string(const std::string& s) {
  if (s == "sphere") return ShapeFamily::Sphere;
  if (s == "box") return ShapeFamily::Box;
  if (s == "cylinder") return ShapeFamily::Cylinder;
  if (s == "union") return ShapeFamily::Union;
  throw Error(ErrorCode::Config, "unknown shape family '" + s + "'");
}

inline std::vector<ShapeFamily> families(const std::string& list) {
  std::vector<ShapeFamily> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(family_from_string(item));
  if (out.empty()) throw Error(ErrorCode::Config, "shape family list is empty");
  return out;
}

inline std::string padded(int i, int width = 3) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << i;
  return os.str();
}

inline std::string frame_key(const std::string& seq, int frame) { return seq + "_" + padded(frame); }

// ---------------------------------------------------------------------------
// synth

struct SynthSummary {
  int sequences = 0;
  int frames = 0;
  int noisy_frames = 0;
};

/// Renders sequences of random analytic objects and writes masks, feature
/// grids, oracle shapes and the manifest under `out`.
inline SynthSummary cmd_synth(PipelineConfig cfg, const fs::path& out) {
  require(cfg.num_synthetic3d >= 0 && cfg.num_multiview >= 0 && cfg.holdout_views >= 0, "counts must be non-negative");
  require(cfg.noisy_fraction >= 0 && cfg.noisy_fraction <= 1, "noisy_fraction must be in [0, 1]");
  require(cfg.both_hands_fraction >= 0 && cfg.both_hands_fraction <= 1, "both_hands_fraction must be in [0, 1]");
  const auto fam3d = families(cfg.synthetic3d_families);
  const auto fam_mv = families(cfg.multiview_families);
  const HandFrame hand = make_hand_template();
  io::Manifest manifest;
  manifest.base = out;
  SynthSummary summary;

  const int total = cfg.num_synthetic3d + cfg.num_multiview;
  for (int s = 0; s < total; ++s) {
    const bool is3d = s < cfg.num_synthetic3d;
    const int local = is3d ? s : s - cfg.num_synthetic3d;
    io::SequenceRecord seq;
    seq.id = (is3d ? "s3d" : "mv") + padded(local);
    seq.role = is3d ? "synthetic3d" : "multiview";
    const auto& fams = is3d ? fam3d : fam_mv;
    const auto su = static_cast<std::uint64_t>(s);

    Rng shape_rng(derive_seed(cfg.seed, seed_stream::kShapes, su));
    const AnalyticShape shape = make_random_shape(fams[static_cast<std::size_t>(local) % fams.size()], shape_rng);
    seq.shape = "shapes/" + seq.id + ".json";
    io::write_shape(out / seq.shape, shape);

    const int train_views = is3d ? cfg.synthetic3d_views : cfg.views_per_sequence;
    const int holdout = is3d ? 0 : cfg.holdout_views;
    TrajectoryOptions topt;
    topt.distance = cfg.camera_distance;
    topt.spread = cfg.spread_views;
    topt.camera = default_camera(cfg.image_size);
    Rng traj_rng(derive_seed(cfg.seed, seed_stream::kTrajectory, su));
    const auto traj = make_trajectory(static_cast<std::size_t>(train_views + holdout), traj_rng, topt);
    SequenceOptions sopt;
    sopt.occlusion_fraction = cfg.occlusion_fraction;
    sopt.features = cfg.write_features;
    sopt.depth_feature = cfg.depth_feature;
    sopt.min_mask_pixels = static_cast<std::size_t>(cfg.min_mask_pixels);
    const auto views = generate_sequence(shape, traj, hand, sopt, derive_seed(cfg.seed, seed_stream::kOcclusion, su));

    Rng noise_rng(derive_seed(cfg.seed, seed_stream::kPoseNoise, su));
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& v = views[i];
      io::FrameRecord f;
      f.id = v.frame_id;
      f.split = static_cast<int>(i) < train_views ? "train" : "test";
      f.camera = v.camera;
      f.wrist = v.hand.wrist;
      f.joints = v.hand.joints;
      const std::string key = frame_key(seq.id, f.id);
      f.mask = "masks/" + key + ".pgm";
      io::write_pgm(out / f.mask, v.mask);
      if (v.feature_grid) {
        f.features = "features/" + key + ".hofg";
        auto os = io::open_out(out / f.features);
        io::write_feature_grid(os, *v.feature_grid);
        io::check_written(os, out / f.features);
      }
      f.global = v.global_feature;
      // Draws happen for every frame so that one frame's settings do not
      // shift the noise of the others.
      const bool noisy = noise_rng.uniform() < cfg.noisy_fraction;
      const bool both = noise_rng.uniform() < cfg.both_hands_fraction;
      const Vec3 axis = Vec3(noise_rng.normal(), noise_rng.normal(), noise_rng.normal()).normalized();
      const Vec3 shift = Vec3(noise_rng.normal(), noise_rng.normal(), noise_rng.normal()).normalized();
      if (!is3d && f.split == "train") {
        if (noisy) {
          // The recorded pose is wrong and the pose provider is unstable on
          // this frame; the mask still shows the true pose.
          f.wrist.rotation = rotation_from_axis_angle(axis, cfg.pose_noise_rotation) * f.wrist.rotation;
          f.wrist.translation += cfg.pose_noise_translation * shift;
          f.predictor_rotation_noise = cfg.predictor_noise_rotation;
          f.predictor_translation_noise = cfg.predictor_noise_translation;
          ++summary.noisy_frames;
        }
        if (both) f.contact = ContactLabel::Both;
      }
      seq.frames.push_back(std::move(f));
      ++summary.frames;
    }
    manifest.sequences.push_back(std::move(seq));
    ++summary.sequences;
  }
  fs::create_directories(out);
  io::write_manifest(out / "manifest.txt", manifest);
  return summary;
}

// ---------------------------------------------------------------------------
// curate

struct FrameDecision {
  std::string sequence;  // input sequence id
  int frame = 0;
  std::optional<double> reproj_std;
  std::string status;  // "kept" or the rule that removed the frame
};

struct CurateSummary {
  io::Manifest manifest;
  std::vector<FrameDecision> decisions;
  int frames_in = 0;
  int frames_out = 0;
};

/// Splits multiview tracks on contact changes and drops frames whose pose
/// prediction is unstable. Synthetic-3D sequences and test frames pass
/// through unchanged.
inline CurateSummary curate(const PipelineConfig& cfg, const io::Manifest& in) {
  CurateSummary out;
  out.manifest.base = in.base;
  const HandFrame hand = make_hand_template();
  SimulatedPosePredictor predictor(derive_seed(cfg.seed, seed_stream::kPredictor, 0));
  for (const auto& seq : in.sequences) {
    for (const auto& f : seq.frames) {
      predictor.add({seq.id, f.id}, {f.wrist, f.camera, f.predictor_rotation_noise, f.predictor_translation_noise,
                                     f.predictor_fail});
    }
  }

  for (const auto& seq : in.sequences) {
    out.frames_in += static_cast<int>(seq.frames.size());
    if (seq.role != "multiview") {
      for (const auto& f : seq.frames) out.decisions.push_back({seq.id, f.id, std::nullopt, "kept"});
      out.manifest.sequences.push_back(seq);
      continue;
    }
    std::vector<const io::FrameRecord*> train, test;
    for (const auto& f : seq.frames) (f.split == "train" ? train : test).push_back(&f);

    std::vector<ContactLabel> labels;
    for (const auto* f : train) labels.push_back(f->contact);
    const auto segments = curate_tracks(labels);
    std::vector<std::string> status(train.size());
    std::vector<std::optional<double>> stds(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      status[i] = labels[i] == ContactLabel::None   ? "no_contact"
                  : labels[i] == ContactLabel::Both ? "both_hands"
                                                    : "short_run";
    }

    std::vector<io::SequenceRecord> pieces;
    for (const auto& segment : segments) {
      std::vector<std::size_t> kept;
      for (std::size_t idx : segment.frames) {
        const auto* f = train[idx];
        const double width = f->camera.width;
        std::vector<std::array<double, 2>> offsets{{0.0, 0.0}};
        const double d = cfg.offset_fraction * width;
        for (const auto& o : std::vector<std::array<double, 2>>{{d, 0.0}, {-d, 0.0}, {0.0, d}, {0.0, -d}}) offsets.push_back(o);
        try {
          const auto q = frame_uncertainty(predictor, {seq.id, f->id}, hand.surface_points, offsets, cfg.reproj_threshold);
          stds[idx] = q.reproj_std;
          if (q.accepted) {
            kept.push_back(idx);
            status[idx] = "kept";
          } else {
            status[idx] = "reproj_uncertainty";
          }
        } catch (const Error& e) {
          if (e.code() != ErrorCode::PredictorFailure) throw;
          status[idx] = "predictor_failure";
        }
      }
      if (kept.size() < 2) {
        for (std::size_t idx : kept) status[idx] = "too_few_views";
        continue;
      }
      io::SequenceRecord piece;
      piece.role = seq.role;
      piece.shape = seq.shape;
      for (std::size_t idx : kept) piece.frames.push_back(*train[idx]);
      pieces.push_back(std::move(piece));
    }
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      pieces[p].id = pieces.size() == 1 ? seq.id : seq.id + "_p" + std::to_string(p);
    }
    for (std::size_t i = 0; i < train.size(); ++i) out.decisions.push_back({seq.id, train[i]->id, stds[i], status[i]});
    // Held-out frames stay with the first surviving piece.
    for (const auto* f : test) {
      out.decisions.push_back({seq.id, f->id, std::nullopt, pieces.empty() ? "sequence_dropped" : "kept"});
      if (!pieces.empty()) pieces.front().frames.push_back(*f);
    }
    for (auto& p : pieces) out.manifest.sequences.push_back(std::move(p));
  }
  for (const auto& s : out.manifest.sequences) out.frames_out += static_cast<int>(s.frames.size());
  return out;
}

inline void write_curation_report(std::ostream& os, const std::vector<FrameDecision>& decisions) {
  os << "sequence,frame,reproj_std,status\n";
  for (const auto& d : decisions) {
    os << d.sequence << ',' << d.frame << ',' << (d.reproj_std ? io::format_real(*d.reproj_std) : "") << ','
       << d.status << '\n';
  }
}

inline CurateSummary cmd_curate(const PipelineConfig& cfg, const fs::path& manifest_path, const fs::path& out) {
  const auto in = io::read_manifest(manifest_path);
  fs::create_directories(out);
  auto result = curate(cfg, in);
  result.manifest = io::rebase(std::move(result.manifest), out);
  io::write_manifest(out / "manifest.txt", result.manifest);
  auto os = io::open_out(out / "curation_report.csv");
  write_curation_report(os, result.decisions);
  io::check_written(os, out / "curation_report.csv");
  return result;
}

// ---------------------------------------------------------------------------
// sample

/// Writes one supervision archive per multiview sequence (training frames).
inline std::vector<std::string> cmd_sample(const PipelineConfig& cfg, const fs::path& manifest_path, const fs::path& out) {
  const auto m = io::read_manifest(manifest_path);
  const HandFrame hand = make_hand_template();
  std::vector<std::string> written;
  for (std::size_t s = 0; s < m.sequences.size(); ++s) {
    const auto& seq = m.sequences[s];
    if (seq.role != "multiview") continue;
    std::vector<ViewObservation> views;
    for (const auto& f : seq.frames) {
      if (f.split == "train") views.push_back(io::load_view(m, f, hand));
    }
    const auto batch = sample_training_points(views, hand, cfg.sampling_config(), derive_seed(cfg.seed, seed_stream::kSamples, s));
    const auto path = out / (seq.id + ".hosb");
    auto os = io::open_out(path);
    write_sample_batch(os, batch);
    io::check_written(os, path);
    written.push_back(path.string());
  }
  return written;
}

// ---------------------------------------------------------------------------
// train

inline TrainingData load_training_data(const std::vector<io::Manifest>& manifests) {
  TrainingData data;
  const HandFrame hand = make_hand_template();
  for (const auto& m : manifests) {
    for (const auto& seq : m.sequences) {
      if (seq.role == "synthetic3d") {
        const auto shape = io::read_shape(m.resolve(seq.shape));
        for (const auto& f : seq.frames) {
          if (f.split != "train") continue;
          data.synthetic3d.push_back({frame_key(seq.id, f.id), shape, io::load_view(m, f, hand)});
        }
      } else {
        MultiviewSequence mv{seq.id, {}};
        for (const auto& f : seq.frames) {
          if (f.split == "train") mv.views.push_back(io::load_view(m, f, hand));
        }
        if (!mv.views.empty()) data.multiview.push_back(std::move(mv));
      }
    }
  }
  return data;
}

/// Feature sizes the network is built for, taken from the data; all views
/// must agree.
inline std::pair<int, int> feature_dims(const TrainingData& data) {
  std::optional<std::pair<int, int>> dims;
  auto check = [&](const ViewObservation& v) {
    const std::pair<int, int> d{v.feature_grid ? v.feature_grid->channels : 0, static_cast<int>(v.global_feature.size())};
    if (dims && *dims != d) throw Error(ErrorCode::Config, "views disagree on feature sizes");
    dims = d;
  };
  for (const auto& item : data.synthetic3d) check(item.view);
  for (const auto& seq : data.multiview)
    for (const auto& v : seq.views) check(v);
  return dims.value_or(std::pair<int, int>{0, 0});
}

struct TrainSummary {
  int steps_done = 0;
  std::vector<std::string> dropped;
  std::optional<LossRecord> last;
};

/// Trains from the manifests, optionally resuming from a checkpoint, and
/// writes `checkpoint.bin` and `losses.csv` under `out`.
inline TrainSummary cmd_train(const PipelineConfig& cfg, const std::vector<fs::path>& manifest_paths, const fs::path& out,
                              const std::optional<fs::path>& resume = std::nullopt) {
  if (manifest_paths.empty()) throw Error(ErrorCode::Config, "no training manifest given");
  std::vector<io::Manifest> manifests;
  for (const auto& p : manifest_paths) manifests.push_back(io::read_manifest(p));
  auto data = load_training_data(manifests);
  if (data.synthetic3d.empty() && data.multiview.empty()) throw Error(ErrorCode::Config, "the manifests contain no training frames");
  TrainConfig tc = cfg.train_config();
  std::tie(tc.net.feature_channels, tc.net.global_dim) = feature_dims(data);
  Trainer trainer(tc, std::move(data));
  if (resume) {
    auto is = io::open_in(*resume);
    trainer.load_checkpoint(is);
  }
  trainer.run_to_completion();

  fs::create_directories(out);
  {
    auto os = io::open_out(out / "checkpoint.bin");
    trainer.save_checkpoint(os);
    io::check_written(os, out / "checkpoint.bin");
  }
  {
    auto os = io::open_out(out / "losses.csv");
    write_loss_csv(os, trainer.history());
    io::check_written(os, out / "losses.csv");
  }
  TrainSummary s;
  s.steps_done = trainer.steps_done();
  s.dropped = trainer.dropped_sequences();
  if (!trainer.history().empty()) s.last = trainer.history().back();
  return s;
}

// ---------------------------------------------------------------------------
// reconstruct

struct FrameSelection {
  const io::SequenceRecord* sequence = nullptr;
  const io::FrameRecord* frame = nullptr;
};

/// `selector` is "test", "train", "all", or a comma list of seq:frame.
inline std::vector<FrameSelection> select_frames(const io::Manifest& m, const std::string& selector) {
  std::vector<FrameSelection> out;
  if (selector == "test" || selector == "train" || selector == "all") {
    for (const auto& s : m.sequences)
      for (const auto& f : s.frames)
        if (selector == "all" || f.split == selector) out.push_back({&s, &f});
    return out;
  }
  std::stringstream ss(selector);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::Config, "frame selector entries look like seq:frame");
    const std::string sid = item.substr(0, colon);
    const int fid = io::parse_int(item.substr(colon + 1));
    bool found = false;
    for (const auto& s : m.sequences)
      for (const auto& f : s.frames)
        if (s.id == sid && f.id == fid) {
          out.push_back({&s, &f});
          found = true;
        }
    if (!found) throw Error(ErrorCode::Config, "no frame " + item + " in the manifest");
  }
  return out;
}

struct ReconstructionRecord {
  std::string id;
  std::string sequence;
  int frame = 0;
  bool empty = false;
};

inline void write_reconstruction_index(std::ostream& os, const std::vector<ReconstructionRecord>& recs) {
  os << "id,sequence,frame,status\n";
  for (const auto& r : recs) os << r.id << ',' << r.sequence << ',' << r.frame << ',' << (r.empty ? "empty" : "ok") << '\n';
}

inline std::vector<ReconstructionRecord> read_reconstruction_index(const fs::path& path) {
  auto is = io::open_in(path);
  std::string line;
  if (!std::getline(is, line) || line != "id,sequence,frame,status") throw Error(ErrorCode::Format, "bad reconstruction index " + path.string());
  std::vector<ReconstructionRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string id, seq, frame, status;
    std::getline(ls, id, ',');
    std::getline(ls, seq, ',');
    std::getline(ls, frame, ',');
    std::getline(ls, status, ',');
    if (status != "ok" && status != "empty") throw Error(ErrorCode::Format, "bad status in " + path.string());
    out.push_back({id, seq, io::parse_int(frame), status == "empty"});
  }
  return out;
}

/// Meshes the 0.5 level set of the network's (or, with `oracle`, the true
/// shape's) occupancy for each selected frame. Frames whose field has no
/// surface are recorded as empty and get no mesh file.
inline std::vector<ReconstructionRecord> cmd_reconstruct(const PipelineConfig& cfg, const std::optional<fs::path>& checkpoint,
                                                         const fs::path& manifest_path, const fs::path& out,
                                                         bool oracle = false) {
  const auto m = io::read_manifest(manifest_path);
  std::optional<OccupancyNet> net;
  if (!oracle) {
    if (!checkpoint) throw Error(ErrorCode::Config, "reconstruct needs a checkpoint");
    auto is = io::open_in(*checkpoint);
    net = load_occupancy_net(is);
  }
  const HandFrame hand = make_hand_template();
  fs::create_directories(out);
  std::vector<ReconstructionRecord> records;
  for (const auto& sel : select_frames(m, cfg.frames)) {
    ReconstructionRecord rec{frame_key(sel.sequence->id, sel.frame->id), sel.sequence->id, sel.frame->id, false};
    OccupancyGrid grid;
    if (oracle) {
      if (sel.sequence->shape.empty()) throw Error(ErrorCode::Config, "no oracle shape for " + sel.sequence->id);
      const auto shape = io::read_shape(m.resolve(sel.sequence->shape));
      grid = evaluate_grid(
          [&](std::span<const Vec3> pts, std::span<double> values) {
            for (std::size_t i = 0; i < pts.size(); ++i) values[i] = occupancy_oracle(shape, pts[i]) ? 1.0 : 0.0;
          },
          cfg.grid_resolution, cfg.threads);
    } else {
      grid = evaluate_grid(*net, io::load_view(m, *sel.frame, hand), cfg.grid_resolution, cfg.threads);
    }
    try {
      const auto mesh = marching_cubes(grid, cfg.iso);
      const auto path = out / (rec.id + ".obj");
      auto os = io::open_out(path);
      write_obj(os, mesh);
      io::check_written(os, path);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyField) throw;
      rec.empty = true;
    }
    records.push_back(rec);
  }
  auto os = io::open_out(out / "reconstructions.csv");
  write_reconstruction_index(os, records);
  io::check_written(os, out / "reconstructions.csv");
  return records;
}

// ---------------------------------------------------------------------------
// eval

struct EvalRow {
  std::string id;
  bool empty = false;
  double chamfer_mm = 0.0;
  std::vector<double> f;  // one per threshold
};

struct EvalReport {
  std::vector<double> taus_mm;
  std::vector<EvalRow> rows;
  int evaluated = 0;
  int empty = 0;
  double mean_chamfer_mm = 0.0;
  std::vector<double> mean_f;
};

/// Scores one mesh against an oracle shape; both surfaces are sampled with
/// seeds derived from `seed` and `index`.
inline EvalRow score_mesh(const MeshData& mesh, const AnalyticShape& truth, const PipelineConfig& cfg, std::size_t index) {
  const auto n = static_cast<std::size_t>(cfg.surface_samples);
  const auto rec = to_meters(sample_surface(mesh, n, derive_seed(cfg.seed, seed_stream::kSurface, 2 * index)), cfg.metric_scale);
  Rng rng(derive_seed(cfg.seed, seed_stream::kSurface, 2 * index + 1));
  const auto gt = to_meters(sample_shape_surface(truth, n, rng), cfg.metric_scale);
  EvalRow row;
  row.chamfer_mm = chamfer(rec, gt);
  for (double tau : cfg.taus()) row.f.push_back(fscore(rec, gt, tau).f);
  return row;
}

inline void summarize(EvalReport& r) {
  r.evaluated = r.empty = 0;
  r.mean_chamfer_mm = 0.0;
  r.mean_f.assign(r.taus_mm.size(), 0.0);
  for (const auto& row : r.rows) {
    if (row.empty) {
      ++r.empty;
      continue;
    }
    ++r.evaluated;
    r.mean_chamfer_mm += row.chamfer_mm;
    for (std::size_t t = 0; t < row.f.size(); ++t) r.mean_f[t] += row.f[t];
  }
  if (r.evaluated > 0) {
    r.mean_chamfer_mm /= r.evaluated;
    for (double& f : r.mean_f) f /= r.evaluated;
  }
}

inline std::string tau_label(double tau) {
  std::string s = io::format_real(tau);
  std::replace(s.begin(), s.end(), '.', 'p');
  return "f_at_" + s;
}

/// One record per mesh, then a `mean` record over non-empty meshes whose last
/// column counts the empty ones.
inline void write_eval_report(std::ostream& os, const EvalReport& r) {
  os << "id,cd_mm";
  for (double t : r.taus_mm) os << ',' << tau_label(t);
  os << ",empty\n";
  os << std::setprecision(9);
  for (const auto& row : r.rows) {
    os << row.id << ',';
    if (!row.empty) os << row.chamfer_mm;
    for (std::size_t t = 0; t < r.taus_mm.size(); ++t) {
      os << ',';
      if (!row.empty) os << row.f[t];
    }
    os << ',' << (row.empty ? 1 : 0) << '\n';
  }
  os << "mean,";
  if (r.evaluated > 0) os << r.mean_chamfer_mm;
  for (double f : r.mean_f) {
    os << ',';
    if (r.evaluated > 0) os << f;
  }
  os << ',' << r.empty << '\n';
}

/// Scores every mesh listed in `meshes/reconstructions.csv` against the
/// oracle shape of its sequence and writes `report` (CSV).
inline EvalReport cmd_eval(const PipelineConfig& cfg, const fs::path& meshes, const fs::path& manifest_path,
                           const fs::path& report) {
  const auto m = io::read_manifest(manifest_path);
  std::map<std::string, const io::SequenceRecord*> by_id;
  for (const auto& s : m.sequences) by_id[s.id] = &s;
  EvalReport r;
  r.taus_mm = cfg.taus();
  const auto recs = read_reconstruction_index(meshes / "reconstructions.csv");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& rec = recs[i];
    const auto it = by_id.find(rec.sequence);
    if (it == by_id.end() || it->second->shape.empty()) throw Error(ErrorCode::Config, "no oracle shape for " + rec.sequence);
    if (rec.empty) {
      r.rows.push_back({rec.id, true, 0.0, {}});
      continue;
    }
    auto is = io::open_in(meshes / (rec.id + ".obj"));
    const auto mesh = read_obj(is);
    auto row = score_mesh(mesh, io::read_shape(m.resolve(it->second->shape)), cfg, i);
    row.id = rec.id;
    r.rows.push_back(std::move(row));
  }
  summarize(r);
  auto os = io::open_out(report);
  write_eval_report(os, r);
  io::check_written(os, report);
  return r;
}

}  // namespace pipeline
}  // namespace handocc
