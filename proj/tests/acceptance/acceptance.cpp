// Acceptance suite: one PASS/FAIL line per criterion. Tolerances, sizes and
// budgets are pinned here; run with `--criterion N` for a single criterion.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "experiments.hpp"
#include "gradcheck.hpp"

using namespace handocc;
using namespace handocc::acceptance;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

AnalyticShape shape_for(int i, Rng& rng) {
  static const ShapeFamily order[] = {ShapeFamily::Sphere, ShapeFamily::Box, ShapeFamily::Cylinder, ShapeFamily::Union,
                                      ShapeFamily::Box, ShapeFamily::Sphere};
  return make_random_shape(order[i % 6], rng);
}

std::vector<ViewObservation> exact_views(const AnalyticShape& shape, std::size_t n, bool spread, std::uint64_t seed) {
  Rng rng(seed);
  TrajectoryOptions opt;
  opt.spread = spread;
  SequenceOptions sopt;
  sopt.features = false;
  return generate_sequence(shape, make_trajectory(n, rng, opt), make_hand_template(), sopt, seed);
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  constexpr int kShapes = 6;
  constexpr int kViews = 8;
  constexpr int kPoints = 100'000;
  std::size_t occupied = 0;
  std::size_t violations = 0;
  for (int s = 0; s < kShapes; ++s) {
    Rng rng(100 + s);
    const auto shape = shape_for(s, rng);
    const auto views = exact_views(shape, kViews, false, 200 + s);
    // Half of the points in the whole volume, half concentrated around the
    // object so that thousands of them are occupied.
    for (int i = 0; i < kPoints; ++i) {
      const Vec3 p = i % 2 == 0 ? uniform_in_cube(rng)
                                : Vec3(kObjectCenter + 0.5 * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
      if (!occupancy_oracle(shape, p)) continue;
      ++occupied;
      if (hull_label(p, views) == 0) ++violations;
    }
  }
  return {violations == 0 && occupied > 10'000,
          std::to_string(kShapes) + " shapes x " + std::to_string(kViews) + " views, " + std::to_string(occupied) +
              " occupied points, " + std::to_string(violations) + " labeled outside"};
}

Outcome criterion2() {
  constexpr int kViews = 12;
  constexpr int kResolution = 64;
  constexpr double kMinF = 0.95;
  const double tau_mm = 2.0 * (2.0 / (kResolution - 1)) * 0.1 * 1000.0;
  double worst = 1.0;
  std::ostringstream detail;
  int idx = 0;
  for (const auto family : {ShapeFamily::Sphere, ShapeFamily::Box}) {
    for (int k = 0; k < 3; ++k, ++idx) {
      Rng rng(300 + idx);
      const auto shape = make_random_shape(family, rng);
      const auto views = exact_views(shape, kViews, true, 400 + idx);
      const auto grid = evaluate_grid(
          [&](std::span<const Vec3> pts, std::span<double> out) {
            for (std::size_t i = 0; i < pts.size(); ++i) out[i] = hull_label(pts[i], views);
          },
          kResolution);
      const auto mesh = marching_cubes(grid);
      const auto rec = to_meters(sample_surface(mesh, kDefaultSurfaceSamples, 1), 0.1);
      const auto gt = to_meters(sample_shape_surface(shape, kDefaultSurfaceSamples, rng), 0.1);
      const double f = fscore(rec, gt, tau_mm).f;
      worst = std::min(worst, f);
      detail << (idx ? " " : "") << fmt(f, 3);
    }
  }
  return {worst >= kMinF, "F@" + fmt(tau_mm, 3) + "mm per shape (3 spheres, 3 boxes): " + detail.str() + ", min " +
                              fmt(worst, 3) + " >= " + fmt(kMinF)};
}

// Checks all four losses on one network; `stride` subsamples parameters.
struct GradReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;

  void add(const testing::GradCheckResult& r) {
    checked += r.checked;
    failed += r.failed;
    worst = std::max(worst, r.max_relative_error);
  }
};

GradReport check_all_losses(int layers, int width, int skip, std::vector<int> disc_hidden, int slice, std::size_t stride,
                            std::uint64_t seed) {
  OccupancyNetConfig cfg;
  cfg.hidden_layers = layers;
  cfg.width = width;
  cfg.skip_layer = skip;
  cfg.feature_channels = kSyntheticFeatureChannels;
  cfg.global_dim = kSyntheticGlobalDim;
  OccupancyNet net(cfg);
  Rng rng(seed);
  net.initialize(rng);
  net.mlp().layers().back().weight *= 10.0;

  Rng srng(seed + 1);
  const auto shape = make_random_shape(ShapeFamily::Box, srng);
  const auto traj = make_trajectory(3, srng);
  const auto views = generate_sequence(shape, traj, make_hand_template(), {}, seed + 2);
  std::vector<Vec3> pts;
  for (int i = 0; i < 6; ++i) pts.push_back(kObjectCenter + 0.3 * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  std::vector<std::uint8_t> oracle_labels, hull_labels;
  for (const Vec3& p : pts) {
    oracle_labels.push_back(occupancy_oracle(shape, p) ? 1 : 0);
    hull_labels.push_back(hull_label(p, views));
  }

  GradReport report;
  auto check = [&](nn::Mlp& mlp, auto&& loss) {
    report.add(testing::check_gradients(mlp, loss, 1e-5, 1e-4, 1e-7, stride));
  };
  // Direct 3D supervision and the visual-hull loss share the cross-entropy
  // form but see different labels and conditioning views.
  check(net.mlp(), [&](nn::Gradients* g) { return occupancy_ce_loss(net, pts, oracle_labels, views[0], g); });
  check(net.mlp(), [&](nn::Gradients* g) { return occupancy_ce_loss(net, pts, hull_labels, views[1], g); });
  const auto pairs = consistency_pairs(views.size(), pts.size(), seed + 3);
  check(net.mlp(), [&](nn::Gradients* g) { return consistency_loss(net, pts, pairs, views, g); });

  SliceDiscriminator disc(slice, {std::move(disc_hidden), 0.2});
  disc.initialize(rng);
  std::vector<SlicePlane> planes{random_slice_plane(rng, slice, 1.0), random_slice_plane(rng, slice, 1.0)};
  const std::vector<const ViewObservation*> fake_views{&views[0], &views[2]};
  check(net.mlp(), [&](nn::Gradients* g) { return shape_prior_loss(net, disc, slice_network(net, planes, fake_views), g); });
  const auto real = slice_network(net, {random_slice_plane(rng, slice, 1.0)}, std::vector<const ViewObservation*>{&views[1]});
  const auto fake = slice_network(net, planes, fake_views);
  check(disc.mlp(), [&](nn::Gradients* g) { return discriminator_objective(disc, real.slices, fake.slices, g); });
  return report;
}

Outcome criterion3() {
  const auto small = check_all_losses(3, 16, -1, {12, 8}, 4, 1, 11);
  const auto deep = check_all_losses(8, 12, 4, {12, 8}, 4, 1, 12);
  // Full width: an evenly strided subset (odd stride, so it walks through
  // weights and biases of every layer).
  const auto full = check_all_losses(8, 512, 4, {512, 256}, 8, 2999, 13);
  const bool pass = small.failed == 0 && deep.failed == 0 && full.failed == 0 && full.checked > 2000;
  auto line = [](const std::string& name, const GradReport& r) {
    return name + " " + std::to_string(r.checked - r.failed) + "/" + std::to_string(r.checked) + " (max rel err " +
           fmt(r.worst, 2) + ")";
  };
  return {pass, line("3x16 all params", small) + "; " + line("8x12 all params", deep) + "; " +
                    line("8x512 every 2999th", full) + "; tol 1e-4 at h=1e-5 (misses re-checked at 1e-6 and 1e-4)"};
}

/// Shared learning setup: a small network trained with Adam on renders at
/// 128x128. Hull-positive samples are 128 of 8192, close to the
/// fraction of the domain the objects fill (see the README).
PipelineConfig learning_config() {
  PipelineConfig cfg;
  cfg.hidden_layers = 4;
  cfg.width = 64;
  cfg.skip_layer = 2;
  cfg.disc_hidden = "64,32";
  cfg.slice_size = 16;
  cfg.slices_per_step = 2;
  cfg.batch_size = 4;
  cfg.points_per_observation = 512;
  cfg.consistency_pairs = 256;
  cfg.sampling_hull_positive = 128;
  cfg.optimizer = "adam";
  cfg.learning_rate = 1e-3;
  cfg.surface_samples = 4000;
  return cfg;
}

Outcome criterion4() {
  constexpr double kMinF = 0.80;
  PipelineConfig cfg = learning_config();
  cfg.seed = 1;
  cfg.num_synthetic3d = 0;
  cfg.num_multiview = 20;
  cfg.views_per_sequence = 10;
  cfg.holdout_views = 1;
  cfg.multiview_families = "sphere,box,cylinder";
  cfg.lambda_visual_hull = 1.0;
  cfg.lambda_consistency = 1.0;
  cfg.lambda_shape_prior = 0.0;
  cfg.steps = 5000;
  ScratchDir dir("criterion4");
  pipeline::cmd_synth(cfg, dir.path());
  const auto score = train_and_score(cfg, io::read_manifest(dir.path() / "manifest.txt"), 5);
  return {score.mean_f >= kMinF && score.frames == 5,
          "mean F@" + fmt(two_voxel_tau_mm(cfg), 3) + "mm over " + std::to_string(score.frames) + " held-out views = " +
              fmt(score.mean_f) + " (" + std::to_string(score.empty) + " empty) after " + std::to_string(cfg.steps) +
              " steps, need >= " + fmt(kMinF)};
}

Outcome criterion5() {
  struct Variant {
    const char* name;
    double occ, consis, shape;
  };
  const Variant variants[] = {{"L3D", 0, 0, 0}, {"+occ", 1, 0, 0}, {"+consis", 1, 1, 0}, {"+shape", 1, 1, 0.25}};
  constexpr int kSeeds = 3;
  double mean[4] = {};
  for (int seed = 0; seed < kSeeds; ++seed) {
    PipelineConfig cfg = learning_config();
    cfg.seed = 50 + static_cast<std::uint64_t>(seed);
    // Direct 3D supervision on one family, multiview supervision on others of
    // similar size. Short tracks, and features without the depth channel so
    // that the synthetic-3D set does not transfer for free.
    cfg.num_synthetic3d = 8;
    cfg.synthetic3d_views = 4;
    cfg.synthetic3d_families = "box";
    cfg.num_multiview = 16;
    cfg.views_per_sequence = 5;
    cfg.holdout_views = 1;
    cfg.multiview_families = "cylinder,union";
    cfg.occlusion_fraction = 0.3;
    cfg.depth_feature = false;
    cfg.slice_size = 32;
    cfg.steps = 2000;
    ScratchDir dir("criterion5_" + std::to_string(seed));
    pipeline::cmd_synth(cfg, dir.path());
    const auto manifest = io::read_manifest(dir.path() / "manifest.txt");
    for (int v = 0; v < 4; ++v) {
      cfg.lambda_visual_hull = variants[v].occ;
      cfg.lambda_consistency = variants[v].consis;
      cfg.lambda_shape_prior = variants[v].shape;
      mean[v] += train_and_score(cfg, manifest).mean_f / kSeeds;
    }
  }
  const bool first = mean[1] > mean[0];
  const bool later = mean[2] >= mean[1] && mean[3] >= mean[2];
  std::string detail = "3-seed mean F@2vox:";
  for (int v = 0; v < 4; ++v) detail += std::string(" ") + variants[v].name + "=" + fmt(mean[v]);
  detail += first ? "; first gap positive" : "; first gap NOT positive";
  detail += later ? ", later gaps non-negative" : ", a later gap is negative";
  return {first && later, detail};
}

Outcome criterion6() {
  Rng rng(600);
  auto cloud = [&](std::size_t n) {
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    return out;
  };
  auto brute = [](const Vec3& q, const std::vector<Vec3>& c) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : c) best = std::min(best, (p - q).norm());
    return best;
  };
  int identity_failures = 0;
  int symmetry_failures = 0;
  double worst = 0.0;
  constexpr int kTrials = 1000;
  for (int t = 0; t < kTrials; ++t) {
    const auto a = cloud(1 + rng.index(200));
    const auto b = cloud(1 + rng.index(200));
    const double tau = rng.uniform(0.5, 40.0);
    const auto self = fscore(a, a, tau);
    if (chamfer(a, a) != 0.0 || self.precision != 1.0 || self.recall != 1.0 || self.f != 1.0) ++identity_failures;
    if (chamfer(a, b) != chamfer(b, a)) ++symmetry_failures;
    double sa = 0, sb = 0, pa = 0, rb = 0;
    for (const Vec3& p : a) {
      const double d = brute(p, b);
      sa += d;
      pa += d <= tau / 1000.0;
    }
    for (const Vec3& p : b) {
      const double d = brute(p, a);
      sb += d;
      rb += d <= tau / 1000.0;
    }
    const double cd = (sa / a.size() + sb / b.size()) * 1000.0;
    const double prec = pa / a.size(), rec = rb / b.size();
    const double f = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    const auto got = fscore(a, b, tau);
    worst = std::max({worst, std::abs(chamfer(a, b) - cd), std::abs(got.precision - prec), std::abs(got.recall - rec),
                      std::abs(got.f - f)});
  }
  return {identity_failures == 0 && symmetry_failures == 0 && worst <= 1e-9,
          std::to_string(kTrials) + " trials: identity failures " + std::to_string(identity_failures) +
              ", symmetry failures " + std::to_string(symmetry_failures) + ", max |fast - brute| " + fmt(worst, 3) +
              " (tol 1e-9)"};
}

Outcome criterion7() {
  const auto sphere = AnalyticShape::sphere(0.5);
  const auto grid = evaluate_grid(
      [&](std::span<const Vec3> pts, std::span<double> out) {
        for (std::size_t i = 0; i < pts.size(); ++i) out[i] = occupancy_oracle(sphere, pts[i]) ? 1.0 : 0.0;
      },
      64);
  const auto mesh = marching_cubes(grid);
  double worst = 0.0;
  for (const Vec3& v : mesh.vertices) worst = std::max(worst, std::abs(v.norm() - 0.5));
  const int chi = euler_characteristic(mesh);
  return {worst <= grid.spacing() && chi == 2,
          std::to_string(mesh.vertices.size()) + " vertices, max |r - 0.5| = " + fmt(worst, 4) + " <= spacing " +
              fmt(grid.spacing(), 4) + ", Euler characteristic " + std::to_string(chi)};
}

Outcome criterion8() {
  constexpr int kSeeds = 3;
  double raw = 0.0;
  double filtered = 0.0;
  int removed_total = 0;
  int noisy_total = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    PipelineConfig cfg = learning_config();
    cfg.seed = 80 + static_cast<std::uint64_t>(seed);
    cfg.num_synthetic3d = 0;
    // Dense views: the clean hull is then tight, so a wrong pose can only
    // carve away object. With ~10 views the loose hull hides the damage.
    cfg.num_multiview = 10;
    cfg.views_per_sequence = 30;
    cfg.holdout_views = 1;
    cfg.multiview_families = "sphere,box,cylinder";
    cfg.noisy_fraction = 0.3;
    cfg.lambda_shape_prior = 0.0;
    cfg.steps = 2000;
    ScratchDir dir("criterion8_" + std::to_string(seed));
    noisy_total += pipeline::cmd_synth(cfg, dir.path()).noisy_frames;
    const auto manifest = io::read_manifest(dir.path() / "manifest.txt");
    const auto curated = pipeline::curate(cfg, manifest);
    removed_total += curated.frames_in - curated.frames_out;
    raw += train_and_score(cfg, manifest).mean_f / kSeeds;
    filtered += train_and_score(cfg, curated.manifest).mean_f / kSeeds;
  }
  return {filtered > raw, "3-seed mean F@2vox without filtering " + fmt(raw) + ", with filtering " + fmt(filtered) + " (" +
                              std::to_string(removed_total) + " frames removed, " + std::to_string(noisy_total) +
                              " noisy injected)"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HANDOCC_CLI_PATH) + " " + args + " > /dev/null";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome criterion9() {
  ScratchDir dir("criterion9");
  const fs::path config = dir.path() / "config.json";
  {
    PipelineConfig cfg = learning_config();
    cfg.num_synthetic3d = 2;
    cfg.num_multiview = 4;
    cfg.views_per_sequence = 6;
    cfg.holdout_views = 1;
    cfg.noisy_fraction = 0.2;
    cfg.steps = 500;
    cfg.grid_resolution = 48;
    cfg.surface_samples = 3000;
    std::ofstream os(config);
    os << cfg.to_json().dump(2) << '\n';
  }
  std::vector<std::string> reports;
  for (int run = 0; run < 2; ++run) {
    const fs::path root = dir.path() / ("run" + std::to_string(run));
    const std::string common = " --config " + config.string() + " --seed 9";
    const bool ok = run_cli("synth" + common + " --out " + (root / "data").string()) == 0 &&
                    run_cli("curate" + common + " --manifest " + (root / "data/manifest.txt").string() + " --out " +
                            (root / "curated").string()) == 0 &&
                    run_cli("train" + common + " --manifest " + (root / "curated/manifest.txt").string() + " --out " +
                            (root / "model").string()) == 0 &&
                    run_cli("reconstruct" + common + " --checkpoint " + (root / "model/checkpoint.bin").string() +
                            " --manifest " + (root / "curated/manifest.txt").string() + " --out " +
                            (root / "meshes").string()) == 0 &&
                    run_cli("eval" + common + " --manifest " + (root / "curated/manifest.txt").string() + " --meshes " +
                            (root / "meshes").string() + " --out " + (root / "report.csv").string()) == 0;
    if (!ok) return {false, "pipeline run " + std::to_string(run) + " failed"};
    reports.push_back(slurp(root / "report.csv"));
  }
  const bool same = reports[0] == reports[1] && !reports[0].empty();
  const auto lines = std::count(reports[0].begin(), reports[0].end(), '\n');
  return {same, std::string(same ? "byte-identical" : "DIFFERENT") + " metric reports from two synth->curate->train(500)->"
                "reconstruct->eval runs (" + std::to_string(lines) + " lines, " + std::to_string(reports[0].size()) +
                " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-9)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"visual-hull soundness", criterion1},     {"hull convergence", criterion2},
      {"gradient correctness", criterion3},      {"learning works", criterion4},
      {"loss ablation trend", criterion5},       {"metric identities", criterion6},
      {"marching cubes fidelity", criterion7},   {"filtering efficacy", criterion8},
      {"determinism", criterion9},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (only != 0 && n != only) continue;
    Stopwatch sw;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << " - " << o.detail
              << " [" << fmt(sw.seconds(), 3) << " s]" << std::endl;
  }
  return all ? 0 : 1;
}
