#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "handocc/binary_io.hpp"
#include "handocc/scene_synth.hpp"
#include "handocc/supervision.hpp"

namespace handocc::io {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return os;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path.string());
  return is;
}

inline void check_written(const std::ostream& os, const fs::path& path) {
  if (!os) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

/// Shortest text that parses back to exactly the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_real(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Format, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline int parse_int(std::string_view s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Format, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Masks as binary portable graymaps, 0 for background and 255 for object

inline void write_pgm(std::ostream& os, const Bitmap& mask) {
  os << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  for (std::uint8_t p : mask.pixels) os.put(static_cast<char>(p ? 255 : 0));
}

inline Bitmap read_pgm(std::istream& is) {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (!is || magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorCode::Format, "not an 8-bit P5 graymap");
  is.get();
  Bitmap mask(w, h);
  for (auto& p : mask.pixels) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw Error(ErrorCode::Format, "truncated graymap");
    if (c != 0 && c != 255) throw Error(ErrorCode::Format, "mask pixels must be 0 or 255");
    p = c ? 1 : 0;
  }
  return mask;
}

inline void write_pgm(const fs::path& path, const Bitmap& mask) {
  auto os = open_out(path);
  write_pgm(os, mask);
  check_written(os, path);
}

inline Bitmap read_pgm(const fs::path& path) {
  auto is = open_in(path);
  try {
    return read_pgm(is);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Feature grids: "HOFG", version, C, H, W, then float32 values in C-H-W order

inline constexpr std::uint32_t kFeatureGridVersion = 1;

inline void write_feature_grid(std::ostream& os, const FeatureGrid& g) {
  binary::write_tag(os, "HOFG");
  binary::write_u32(os, kFeatureGridVersion);
  binary::write_u32(os, static_cast<std::uint32_t>(g.channels));
  binary::write_u32(os, static_cast<std::uint32_t>(g.height));
  binary::write_u32(os, static_cast<std::uint32_t>(g.width));
  for (double v : g.values) binary::write_f32(os, static_cast<float>(v));
}

inline FeatureGrid read_feature_grid(std::istream& is) {
  binary::expect_tag(is, "HOFG");
  if (binary::read_u32(is) != kFeatureGridVersion) throw Error(ErrorCode::Format, "unsupported feature grid version");
  const auto c = binary::read_u32(is);
  const auto h = binary::read_u32(is);
  const auto w = binary::read_u32(is);
  if (c == 0 || h == 0 || w == 0 || c > 4096 || h > 65536 || w > 65536) throw Error(ErrorCode::Format, "bad feature grid shape");
  FeatureGrid g(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  for (double& v : g.values) v = binary::read_f32(is);
  return g;
}

// ---------------------------------------------------------------------------
// Analytic shapes as JSON

inline nlohmann::json pose_to_json(const RigidTransform& t) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(t.rotation(i, j));
  return {{"R", r}, {"t", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

inline RigidTransform pose_from_json(const nlohmann::json& j) {
  const auto& r = j.at("R");
  const auto& t = j.at("t");
  if (r.size() != 9 || t.size() != 3) throw Error(ErrorCode::Format, "pose needs R[9] and t[3]");
  RigidTransform out;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) out.rotation(i, k) = r.at(static_cast<std::size_t>(3 * i + k)).get<double>();
  for (int i = 0; i < 3; ++i) out.translation[i] = t.at(static_cast<std::size_t>(i)).get<double>();
  if (!is_rotation(out.rotation, 1e-6)) throw Error(ErrorCode::Format, "pose rotation is not a rotation matrix");
  return out;
}

inline nlohmann::json shape_to_json(const AnalyticShape& s) {
  nlohmann::json j;
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          j = {{"type", "sphere"}, {"radius", g.radius}};
        } else if constexpr (std::is_same_v<T, Box>) {
          j = {{"type", "box"}, {"half_extents", {g.half_extents.x(), g.half_extents.y(), g.half_extents.z()}}};
        } else if constexpr (std::is_same_v<T, Cylinder>) {
          j = {{"type", "cylinder"}, {"radius", g.radius}, {"half_height", g.half_height}};
        } else {
          nlohmann::json members = nlohmann::json::array();
          for (const auto& m : g.members) members.push_back(shape_to_json(m));
          j = {{"type", "union"}, {"members", members}};
        }
      },
      s.geometry);
  j["pose"] = pose_to_json(s.pose_in_wrist);
  return j;
}

inline AnalyticShape shape_from_json(const nlohmann::json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    const RigidTransform pose = j.contains("pose") ? pose_from_json(j.at("pose")) : RigidTransform{};
    AnalyticShape s;
    if (type == "sphere") {
      s = AnalyticShape::sphere(j.at("radius").get<double>(), pose);
    } else if (type == "box") {
      const auto& h = j.at("half_extents");
      s = AnalyticShape::box(Vec3(h.at(0).get<double>(), h.at(1).get<double>(), h.at(2).get<double>()), pose);
    } else if (type == "cylinder") {
      s = AnalyticShape::cylinder(j.at("radius").get<double>(), j.at("half_height").get<double>(), pose);
    } else if (type == "union") {
      std::vector<AnalyticShape> members;
      for (const auto& m : j.at("members")) members.push_back(shape_from_json(m));
      s = AnalyticShape::make_union(std::move(members), pose);
    } else {
      throw Error(ErrorCode::Format, "unknown shape type '" + type + "'");
    }
    validate_shape(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad shape description: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::Format, e.what());
  }
}

inline void write_shape(const fs::path& path, const AnalyticShape& s) {
  auto os = open_out(path);
  os << shape_to_json(s).dump(2) << '\n';
  check_written(os, path);
}

inline AnalyticShape read_shape(const fs::path& path) {
  auto is = open_in(path);
  try {
    return shape_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset manifest
//
//   handocc-manifest 1
//   sequence <id> role=<multiview|synthetic3d> [shape=<json path>]
//   frame <id> split=<train|test> mask=<pgm path> K=fx,fy,cx,cy,w,h R=<9> t=<3>
//         joints=<15 x (R 9, t 3)> contact=<left|right|both|none>
//         [features=<path>] [global=<list>] [predictor_noise=<rad>,<units>] [predictor_fail=1]
//
// One record per line; frames belong to the preceding sequence. Paths are
// relative to the manifest's directory.

inline constexpr int kManifestVersion = 1;

inline std::string_view to_string(ContactLabel c) {
  switch (c) {
    case ContactLabel::Left: return "left";
    case ContactLabel::Right: return "right";
    case ContactLabel::Both: return "both";
    case ContactLabel::None: return "none";
  }
  return "none";
}

inline ContactLabel contact_from_string(std::string_view s) {
  if (s == "left") return ContactLabel::Left;
  if (s == "right") return ContactLabel::Right;
  if (s == "both") return ContactLabel::Both;
  if (s == "none") return ContactLabel::None;
  throw Error(ErrorCode::Format, "unknown contact label '" + std::string(s) + "'");
}

struct FrameRecord {
  int id = 0;
  std::string split = "train";
  std::string mask;
  CameraIntrinsics camera;
  RigidTransform wrist;
  std::vector<RigidTransform> joints = std::vector<RigidTransform>(kNumJoints);
  ContactLabel contact = ContactLabel::Right;
  std::string features;
  std::vector<double> global;
  double predictor_rotation_noise = 0.0;
  double predictor_translation_noise = 0.0;
  bool predictor_fail = false;
};

struct SequenceRecord {
  std::string id;
  std::string role = "multiview";
  std::string shape;
  std::vector<FrameRecord> frames;
};

struct Manifest {
  fs::path base;  // directory that relative paths resolve against
  std::vector<SequenceRecord> sequences;

  fs::path resolve(const std::string& p) const { return base / p; }
};

namespace detail {

inline std::string join_reals(const double* v, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ',';
    out += format_real(v[i]);
  }
  return out;
}

inline std::vector<double> split_reals(std::string_view s) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(parse_real(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string pose_text(const RigidTransform& t, bool with_keys) {
  std::vector<double> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(t.rotation(i, j));
  const std::string rs = join_reals(r.data(), 9);
  const std::string ts = join_reals(t.translation.data(), 3);
  return with_keys ? "R=" + rs + " t=" + ts : rs + "," + ts;
}

inline RigidTransform pose_from_values(const double* v, const std::string& what) {
  RigidTransform t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t.rotation(i, j) = v[3 * i + j];
  t.translation = Vec3(v[9], v[10], v[11]);
  if (!is_rotation(t.rotation, 1e-6)) throw Error(ErrorCode::Format, what + " is not a rotation matrix");
  return t;
}

inline bool valid_token(const std::string& s) {
  return !s.empty() && s.find_first_of(" \t\r\n=") == std::string::npos;
}

}  // namespace detail

inline void write_manifest(std::ostream& os, const Manifest& m) {
  os << "handocc-manifest " << kManifestVersion << '\n';
  for (const auto& seq : m.sequences) {
    require(detail::valid_token(seq.id), "sequence id must be a single token");
    os << "sequence " << seq.id << " role=" << seq.role;
    if (!seq.shape.empty()) os << " shape=" << seq.shape;
    os << '\n';
    for (const auto& f : seq.frames) {
      const double k[6] = {f.camera.fx, f.camera.fy, f.camera.cx, f.camera.cy, static_cast<double>(f.camera.width),
                           static_cast<double>(f.camera.height)};
      os << "frame " << f.id << " split=" << f.split << " mask=" << f.mask << " K=" << detail::join_reals(k, 6) << ' '
         << detail::pose_text(f.wrist, true) << " joints=";
      for (std::size_t j = 0; j < f.joints.size(); ++j) os << (j ? "," : "") << detail::pose_text(f.joints[j], false);
      os << " contact=" << to_string(f.contact);
      if (!f.features.empty()) os << " features=" << f.features;
      if (!f.global.empty()) os << " global=" << detail::join_reals(f.global.data(), f.global.size());
      if (f.predictor_rotation_noise > 0 || f.predictor_translation_noise > 0) {
        os << " predictor_noise=" << format_real(f.predictor_rotation_noise) << ','
           << format_real(f.predictor_translation_noise);
      }
      if (f.predictor_fail) os << " predictor_fail=1";
      os << '\n';
    }
  }
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  auto os = open_out(path);
  write_manifest(os, m);
  check_written(os, path);
}

/// Parses a manifest; `base` is where relative paths resolve. With
/// `check_files`, every referenced file must exist.
inline Manifest parse_manifest(std::istream& is, const fs::path& base, bool check_files = true) {
  Manifest m;
  m.base = base;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) -> Error {
    return Error(ErrorCode::Format, "manifest line " + std::to_string(lineno) + ": " + msg);
  };
  if (!std::getline(is, line)) throw Error(ErrorCode::Format, "empty manifest");
  ++lineno;
  if (line != "handocc-manifest " + std::to_string(kManifestVersion)) throw fail("bad header '" + line + "'");
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind, id;
    ls >> kind >> id;
    std::map<std::string, std::string> kv;
    for (std::string tok; ls >> tok;) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) throw fail("expected key=value, got '" + tok + "'");
      if (!kv.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second) throw fail("duplicate key " + tok.substr(0, eq));
    }
    auto take = [&](const std::string& key, bool required) -> std::string {
      const auto it = kv.find(key);
      if (it == kv.end()) {
        if (required) throw fail("missing " + key);
        return {};
      }
      std::string v = it->second;
      kv.erase(it);
      return v;
    };
    try {
      if (kind == "sequence") {
        SequenceRecord s;
        s.id = id;
        if (!detail::valid_token(id)) throw fail("missing sequence id");
        s.role = take("role", true);
        if (s.role != "multiview" && s.role != "synthetic3d") throw fail("unknown role " + s.role);
        s.shape = take("shape", false);
        if (s.role == "synthetic3d" && s.shape.empty()) throw fail("synthetic3d sequences need a shape");
        m.sequences.push_back(std::move(s));
      } else if (kind == "frame") {
        if (m.sequences.empty()) throw fail("frame before any sequence");
        FrameRecord f;
        f.id = parse_int(id);
        f.split = take("split", true);
        if (f.split != "train" && f.split != "test") throw fail("split must be train or test");
        f.mask = take("mask", true);
        const auto k = detail::split_reals(take("K", true));
        if (k.size() != 6) throw fail("K needs 6 values");
        f.camera = {k[0], k[1], k[2], k[3], static_cast<int>(k[4]), static_cast<int>(k[5])};
        if (!f.camera.valid() || k[4] != f.camera.width || k[5] != f.camera.height) throw fail("invalid intrinsics");
        auto r = detail::split_reals(take("R", true));
        const auto t = detail::split_reals(take("t", true));
        if (r.size() != 9 || t.size() != 3) throw fail("R needs 9 values and t 3");
        r.insert(r.end(), t.begin(), t.end());
        f.wrist = detail::pose_from_values(r.data(), "wrist R");
        const auto joints = detail::split_reals(take("joints", true));
        if (joints.size() != 12 * kNumJoints) throw fail("joints need 180 values");
        for (int j = 0; j < kNumJoints; ++j) {
          f.joints[static_cast<std::size_t>(j)] = detail::pose_from_values(joints.data() + 12 * j, "joint R");
        }
        f.contact = contact_from_string(take("contact", true));
        f.features = take("features", false);
        f.global = detail::split_reals(take("global", false));
        const auto noise = detail::split_reals(take("predictor_noise", false));
        if (!noise.empty()) {
          if (noise.size() != 2 || noise[0] < 0 || noise[1] < 0) throw fail("predictor_noise needs 2 non-negative values");
          f.predictor_rotation_noise = noise[0];
          f.predictor_translation_noise = noise[1];
        }
        f.predictor_fail = take("predictor_fail", false) == "1";
        m.sequences.back().frames.push_back(std::move(f));
      } else {
        throw fail("unknown record '" + kind + "'");
      }
    } catch (const Error& e) {
      if (std::string_view(e.what()).starts_with("manifest line")) throw;
      throw fail(e.what());
    }
    if (!kv.empty()) throw fail("unknown key " + kv.begin()->first);
  }
  if (check_files) {
    auto exists = [&](const std::string& p) {
      if (!fs::exists(m.resolve(p))) throw Error(ErrorCode::Io, "missing file " + m.resolve(p).string());
    };
    for (const auto& s : m.sequences) {
      if (!s.shape.empty()) exists(s.shape);
      for (const auto& f : s.frames) {
        exists(f.mask);
        if (!f.features.empty()) exists(f.features);
      }
    }
  }
  return m;
}

inline Manifest read_manifest(const fs::path& path, bool check_files = true) {
  auto is = open_in(path);
  return parse_manifest(is, path.parent_path(), check_files);
}

/// Rewrites the manifest's relative paths so they resolve from `new_base`.
inline Manifest rebase(Manifest m, const fs::path& new_base) {
  auto fix = [&](std::string& p) {
    if (p.empty()) return;
    const fs::path abs = fs::absolute(m.resolve(p)).lexically_normal();
    p = abs.lexically_relative(fs::absolute(new_base).lexically_normal()).generic_string();
  };
  for (auto& s : m.sequences) {
    fix(s.shape);
    for (auto& f : s.frames) {
      fix(f.mask);
      fix(f.features);
    }
  }
  m.base = new_base;
  return m;
}

/// Loads one frame as an observation. The hand surface comes from the
/// template; the manifest carries the wrist and joint poses.
inline ViewObservation load_view(const Manifest& m, const FrameRecord& f, const HandFrame& hand_template) {
  ViewObservation v;
  v.frame_id = f.id;
  v.camera = f.camera;
  v.hand = hand_template;
  v.hand.wrist = f.wrist;
  v.hand.joints = f.joints;
  v.mask = read_pgm(m.resolve(f.mask));
  if (v.mask.width != f.camera.width || v.mask.height != f.camera.height) {
    throw Error(ErrorCode::Format, "mask size does not match intrinsics: " + f.mask);
  }
  if (!f.features.empty()) {
    auto is = open_in(m.resolve(f.features));
    v.feature_grid = read_feature_grid(is);
  }
  v.global_feature = f.global;
  return v;
}

}  // namespace handocc::io
