#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "handocc/pipeline.hpp"

using namespace handocc;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("handocc_unit_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.num_synthetic3d = 1;
  cfg.synthetic3d_views = 3;
  cfg.num_multiview = 2;
  cfg.views_per_sequence = 6;
  cfg.holdout_views = 1;
  cfg.image_size = 64;
  cfg.hidden_layers = 2;
  cfg.width = 8;
  cfg.skip_layer = -1;
  cfg.disc_hidden = "8";
  cfg.slice_size = 4;
  cfg.slices_per_step = 1;
  cfg.batch_size = 2;
  cfg.points_per_observation = 32;
  cfg.consistency_pairs = 16;
  cfg.sampling_total = 256;
  cfg.sampling_hull_positive = 64;
  cfg.sampling_hand_points = 32;
  cfg.synthetic3d_points = 256;
  cfg.optimizer = "adam";
  cfg.learning_rate = 1e-3;
  cfg.steps = 6;
  cfg.grid_resolution = 24;
  cfg.surface_samples = 2000;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// io

TEST(Io, PgmRoundTrip) {
  Bitmap m(5, 3);
  m.at(0, 0) = 1;
  m.at(2, 4) = 1;
  m.at(1, 2) = 1;
  std::stringstream ss;
  io::write_pgm(ss, m);
  EXPECT_EQ(io::read_pgm(ss), m);
}

TEST(Io, PgmRejectsGrayLevels) {
  std::stringstream ss;
  ss << "P5\n2 1\n255\n";
  ss.put(static_cast<char>(0));
  ss.put(static_cast<char>(128));
  try {
    io::read_pgm(ss);
    FAIL() << "expected a format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
  }
}

TEST(Io, FeatureGridRoundTripIsFloat32) {
  FeatureGrid g(2, 3, 4);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = 0.1 * static_cast<double>(i) - 0.7;
  std::stringstream ss;
  io::write_feature_grid(ss, g);
  const auto back = io::read_feature_grid(ss);
  ASSERT_EQ(back.values.size(), g.values.size());
  for (std::size_t i = 0; i < g.values.size(); ++i) EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(g.values[i])));
}

TEST(Io, ShapeJsonRoundTrip) {
  Rng rng(3);
  for (const auto family : {ShapeFamily::Sphere, ShapeFamily::Box, ShapeFamily::Cylinder, ShapeFamily::Union}) {
    const auto shape = make_random_shape(family, rng);
    const auto back = io::shape_from_json(io::shape_to_json(shape));
    for (int i = 0; i < 500; ++i) {
      const Vec3 p = kObjectCenter + 0.4 * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      EXPECT_EQ(occupancy_oracle(shape, p), occupancy_oracle(back, p));
    }
  }
}

TEST(Io, ShapeJsonRejectsNonRotation) {
  auto j = io::shape_to_json(AnalyticShape::sphere(0.2));
  j["pose"]["R"] = {2, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_THROW(io::shape_from_json(j), Error);
}

TEST(Io, ManifestRoundTripIsByteStable) {
  TempDir dir;
  pipeline::cmd_synth(tiny_config(), dir.path());
  const auto text = slurp(dir / "manifest.txt");
  const auto m = io::read_manifest(dir / "manifest.txt");
  std::stringstream ss;
  io::write_manifest(ss, m);
  EXPECT_EQ(ss.str(), text);
  EXPECT_EQ(m.sequences.size(), 3u);
}

TEST(Io, ManifestRejectsUnknownKey) {
  std::stringstream ss;
  ss << "handocc-manifest 1\nsequence mv000 role=multiview colour=red\n";
  try {
    io::parse_manifest(ss, ".", false);
    FAIL() << "expected a format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
  }
}

TEST(Io, ManifestRejectsMissingFiles) {
  TempDir dir;
  pipeline::cmd_synth(tiny_config(), dir.path());
  fs::remove(dir / "masks/mv000_000.pgm");
  try {
    io::read_manifest(dir / "manifest.txt");
    FAIL() << "expected an io error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
}

TEST(Io, LoadedViewMatchesRenderedMask) {
  TempDir dir;
  pipeline::cmd_synth(tiny_config(), dir.path());
  const auto m = io::read_manifest(dir / "manifest.txt");
  const auto& seq = m.sequences.back();
  const auto shape = io::read_shape(m.resolve(seq.shape));
  const auto& f = seq.frames.front();
  const auto view = io::load_view(m, f, make_hand_template());
  EXPECT_EQ(view.mask, render_mask(shape, f.wrist, f.camera));
  EXPECT_EQ(view.hand.surface_points.size(), static_cast<std::size_t>(kNumHandVertices));
}

// ---------------------------------------------------------------------------
// config

TEST(Config, UnknownKeyIsAConfigError) {
  PipelineConfig cfg;
  try {
    cfg.set("learning_rte", "0.1");
    FAIL() << "expected a config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
  }
  EXPECT_THROW(cfg.merge_json(nlohmann::json{{"stepz", 3}}), Error);
  EXPECT_THROW(cfg.merge_json(nlohmann::json{{"steps", "many"}}), Error);
  EXPECT_THROW(cfg.set("steps", "3.5"), Error);
}

TEST(Config, JsonRoundTripCoversEveryKey) {
  PipelineConfig cfg = tiny_config();
  cfg.seed = 77;
  cfg.taus_mm = "1,2,3";
  PipelineConfig back;
  back.merge_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(cfg.to_json().size(), cfg.keys().size());
}

// ---------------------------------------------------------------------------
// synth and curate

TEST(Synth, SameSeedGivesIdenticalFiles) {
  TempDir a, b;
  pipeline::cmd_synth(tiny_config(), a / "out");
  pipeline::cmd_synth(tiny_config(), b / "out");
  for (const auto& entry : fs::recursive_directory_iterator(a / "out")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a / "out");
    EXPECT_EQ(slurp(entry.path()), slurp(b / "out" / rel)) << rel;
  }
}

TEST(Synth, ZeroSequencesGiveAValidEmptyManifest) {
  TempDir dir;
  auto cfg = tiny_config();
  cfg.num_synthetic3d = 0;
  cfg.num_multiview = 0;
  const auto s = pipeline::cmd_synth(cfg, dir.path());
  EXPECT_EQ(s.sequences, 0);
  EXPECT_TRUE(io::read_manifest(dir / "manifest.txt").sequences.empty());
}

TEST(Synth, HoldoutFramesAreMarkedTest) {
  TempDir dir;
  pipeline::cmd_synth(tiny_config(), dir.path());
  const auto m = io::read_manifest(dir / "manifest.txt");
  for (const auto& seq : m.sequences) {
    const auto tests = std::count_if(seq.frames.begin(), seq.frames.end(), [](const auto& f) { return f.split == "test"; });
    EXPECT_EQ(tests, seq.role == "multiview" ? 1 : 0) << seq.id;
  }
}

TEST(Curate, RemovesExactlyTheNoisyFrames) {
  TempDir dir;
  auto cfg = tiny_config();
  cfg.num_multiview = 4;
  cfg.views_per_sequence = 10;
  cfg.noisy_fraction = 0.2;
  cfg.image_size = 128;  // the default threshold is in pixels at this size
  const auto synth = pipeline::cmd_synth(cfg, dir.path());
  ASSERT_GT(synth.noisy_frames, 0);
  const auto m = io::read_manifest(dir / "manifest.txt");
  std::set<std::pair<std::string, int>> noisy;
  for (const auto& seq : m.sequences)
    for (const auto& f : seq.frames)
      if (f.predictor_rotation_noise > 0.0) noisy.insert({seq.id, f.id});
  ASSERT_EQ(static_cast<int>(noisy.size()), synth.noisy_frames);

  const auto out = pipeline::curate(cfg, m);
  std::set<std::pair<std::string, int>> removed;
  for (const auto& d : out.decisions) {
    if (d.status != "kept") {
      EXPECT_EQ(d.status, "reproj_uncertainty");
      removed.insert({d.sequence, d.frame});
    }
  }
  EXPECT_EQ(removed, noisy);
  EXPECT_EQ(out.frames_in - out.frames_out, synth.noisy_frames);
}

TEST(Curate, BothHandsFramesSplitTheTrack) {
  TempDir dir;
  auto cfg = tiny_config();
  cfg.num_synthetic3d = 0;
  cfg.num_multiview = 1;
  cfg.views_per_sequence = 12;
  cfg.holdout_views = 0;
  pipeline::cmd_synth(cfg, dir.path());
  auto m = io::read_manifest(dir / "manifest.txt");
  for (int i : {5, 6}) m.sequences[0].frames[static_cast<std::size_t>(i)].contact = ContactLabel::Both;
  const auto out = pipeline::curate(cfg, m);
  ASSERT_EQ(out.manifest.sequences.size(), 2u);
  EXPECT_EQ(out.manifest.sequences[0].id, "mv000_p0");
  EXPECT_EQ(out.manifest.sequences[0].frames.size(), 5u);
  EXPECT_EQ(out.manifest.sequences[1].frames.size(), 5u);
  EXPECT_EQ(std::count_if(out.decisions.begin(), out.decisions.end(), [](const auto& d) { return d.status == "both_hands"; }), 2);
}

TEST(Curate, ReportHasOneLinePerInputFrame) {
  TempDir dir;
  auto cfg = tiny_config();
  pipeline::cmd_synth(cfg, dir / "data");
  const auto s = pipeline::cmd_curate(cfg, dir / "data/manifest.txt", dir / "curated");
  const auto text = slurp(dir / "curated/curation_report.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), s.frames_in + 1);
  // The rebased manifest resolves against the original files.
  EXPECT_NO_THROW(io::read_manifest(dir / "curated/manifest.txt"));
}

// ---------------------------------------------------------------------------
// train, reconstruct, eval

TEST(Train, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  auto cfg = tiny_config();
  pipeline::cmd_synth(cfg, dir / "data");
  const std::vector<fs::path> manifests{dir / "data/manifest.txt"};
  pipeline::cmd_train(cfg, manifests, dir / "full");
  auto half = cfg;
  half.steps = 3;
  pipeline::cmd_train(half, manifests, dir / "half");
  pipeline::cmd_train(cfg, manifests, dir / "resumed", dir / "half/checkpoint.bin");
  EXPECT_EQ(slurp(dir / "full/checkpoint.bin"), slurp(dir / "resumed/checkpoint.bin"));
}

TEST(Reconstruct, OracleMeshesScoreNearOne) {
  TempDir dir;
  auto cfg = tiny_config();
  cfg.grid_resolution = 64;
  cfg.surface_samples = 10000;
  cfg.taus_mm = "5";
  pipeline::cmd_synth(cfg, dir / "data");
  const auto recs = pipeline::cmd_reconstruct(cfg, std::nullopt, dir / "data/manifest.txt", dir / "meshes", true);
  ASSERT_EQ(recs.size(), 2u);  // one held-out frame per multiview sequence
  const auto report = pipeline::cmd_eval(cfg, dir / "meshes", dir / "data/manifest.txt", dir / "report.csv");
  EXPECT_EQ(report.empty, 0);
  for (const auto& row : report.rows) EXPECT_GE(row.f[0], 0.99) << row.id;
}

TEST(Reconstruct, SwappedShapesScoreLow) {
  TempDir dir;
  auto cfg = tiny_config();
  cfg.num_synthetic3d = 0;
  cfg.multiview_families = "sphere,box";
  cfg.grid_resolution = 48;
  cfg.taus_mm = "2";
  pipeline::cmd_synth(cfg, dir / "data");
  pipeline::cmd_reconstruct(cfg, std::nullopt, dir / "data/manifest.txt", dir / "meshes", true);
  // Pair each mesh with the other sequence's oracle shape.
  auto m = io::read_manifest(dir / "data/manifest.txt");
  std::swap(m.sequences[0].shape, m.sequences[1].shape);
  io::write_manifest(dir / "data/swapped.txt", m);
  const auto report = pipeline::cmd_eval(cfg, dir / "meshes", dir / "data/swapped.txt", dir / "report.csv");
  for (const auto& row : report.rows) EXPECT_LT(row.f[0], 0.5) << row.id;
}

TEST(Eval, ReportFormat) {
  pipeline::EvalReport r;
  r.taus_mm = {5, 10};
  r.rows.push_back({"a", false, 2.5, {0.5, 1.0}});
  r.rows.push_back({"b", true, 0.0, {}});
  r.rows.push_back({"c", false, 1.5, {1.0, 1.0}});
  pipeline::summarize(r);
  std::stringstream ss;
  pipeline::write_eval_report(ss, r);
  EXPECT_EQ(ss.str(),
            "id,cd_mm,f_at_5,f_at_10,empty\n"
            "a,2.5,0.5,1,0\n"
            "b,,,,1\n"
            "c,1.5,1,1,0\n"
            "mean,2,0.75,1,1\n");
}

TEST(Eval, UntrainedNetworkRunsEndToEnd) {
  TempDir dir;
  auto cfg = tiny_config();
  pipeline::cmd_synth(cfg, dir / "data");
  pipeline::cmd_train(cfg, {dir / "data/manifest.txt"}, dir / "model");
  const auto recs =
      pipeline::cmd_reconstruct(cfg, dir / "model/checkpoint.bin", dir / "data/manifest.txt", dir / "meshes");
  const auto report = pipeline::cmd_eval(cfg, dir / "meshes", dir / "data/manifest.txt", dir / "report.csv");
  EXPECT_EQ(report.rows.size(), recs.size());
  EXPECT_EQ(report.evaluated + report.empty, static_cast<int>(recs.size()));
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct CliResult {
  int status = 0;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const auto err_path = scratch / "stderr.txt";
  const std::string cmd = std::string(HANDOCC_CLI_PATH) + " " + args + " > /dev/null 2> " + err_path.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err_path)};
}

}  // namespace

TEST(Cli, UnknownConfigKeyIsReported) {
  TempDir dir;
  {
    std::ofstream os(dir / "cfg.json");
    os << R"({"stepz": 3})";
  }
  const auto r = run_cli("synth --config " + (dir / "cfg.json").string() + " --out " + (dir / "o").string(), dir.path());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: config: ", 0), 0u) << r.err;
}

TEST(Cli, MissingManifestIsAnIoError) {
  TempDir dir;
  const auto r = run_cli("curate --manifest " + (dir / "nope.txt").string() + " --out " + (dir / "o").string(), dir.path());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: io: ", 0), 0u) << r.err;
}

TEST(Cli, BadUsageExitsWithTwo) {
  TempDir dir;
  const auto r = run_cli("synth --no-such-flag", dir.path());
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
}

TEST(Cli, SynthMatchesLibrary) {
  TempDir dir;
  {
    std::ofstream os(dir / "cfg.json");
    os << tiny_config().to_json().dump();
  }
  const auto r = run_cli("synth --config " + (dir / "cfg.json").string() + " --out " + (dir / "cli").string(), dir.path());
  ASSERT_EQ(r.status, 0) << r.err;
  pipeline::cmd_synth(tiny_config(), dir / "lib");
  EXPECT_EQ(slurp(dir / "cli/manifest.txt"), slurp(dir / "lib/manifest.txt"));
}
