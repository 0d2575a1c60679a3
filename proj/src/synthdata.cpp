#include "qscraft/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "qscraft/error.hpp"

namespace qscraft::synthdata {

namespace fs = std::filesystem;

namespace {

constexpr double kHeadGap = 0.01;
constexpr double kHandScale = 1.25;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Coordinates relative to the frame centre column (u = x − 0.5) so mirroring
// is an exact sign flip.
struct Point {
  double u = 0;
  double y = 0;
};

Point along(Point from, double length, double angle, double side) {
  return {from.u + side * length * std::sin(angle), from.y + length * std::cos(angle)};
}

struct Capsule {
  Point a, b;
  double radius;
  int layer;
};

struct Disc {
  Point c;
  double radius;
  int layer;
};

enum Layer { kBackground = 0, kPants, kShirt, kSkin, kLayerCount };

double segment_distance2(Point p, Point a, Point b) {
  const double du = b.u - a.u, dy = b.y - a.y;
  const double len2 = du * du + dy * dy;
  double t = 0;
  if (len2 > 0) t = std::clamp(((p.u - a.u) * du + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  const double cu = p.u - (a.u + t * du), cy = p.y - (a.y + t * dy);
  return cu * cu + cy * cy;
}

struct Skeleton {
  Point hip, neck, torso_mid, head;
  Point l_elbow, r_elbow, l_hand, r_hand, l_foot, r_foot;
};

Skeleton skeleton(const FigureSpec& s, const PoseParams& p) {
  Skeleton k;
  k.hip = {p.root_x, p.root_y};
  k.neck = {k.hip.u + s.torso_length * std::sin(p.torso_angle),
            k.hip.y - s.torso_length * std::cos(p.torso_angle)};
  k.torso_mid = {0.5 * (k.hip.u + k.neck.u), 0.5 * (k.hip.y + k.neck.y)};
  const double head_offset = s.head_radius + kHeadGap;
  k.head = {k.neck.u + head_offset * std::sin(p.torso_angle),
            k.neck.y - head_offset * std::cos(p.torso_angle)};
  k.l_elbow = along(k.neck, s.upper_arm, p.left_shoulder, -1.0);
  k.r_elbow = along(k.neck, s.upper_arm, p.right_shoulder, 1.0);
  k.l_hand = along(k.l_elbow, s.forearm, p.left_shoulder + p.left_elbow, -1.0);
  k.r_hand = along(k.r_elbow, s.forearm, p.right_shoulder + p.right_elbow, 1.0);
  k.l_foot = along(k.hip, s.leg, p.left_hip, -1.0);
  k.r_foot = along(k.hip, s.leg, p.right_hip, 1.0);
  return k;
}

void check_inside(Point c, double radius, const char* what) {
  const bool inside = c.u - radius >= -0.5 && c.u + radius <= 0.5 && c.y - radius >= 0.0 &&
                      c.y + radius <= 1.0;
  if (!inside) reject(std::string("figure leaves the frame at ") + what);
}

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  return {u(rng), u(rng), u(rng)};
}

double color_distance(const Rgb& a, const Rgb& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

Rgb distinct_color(std::mt19937_64& rng, const std::vector<Rgb>& avoid, double min_distance) {
  for (;;) {
    auto c = random_color(rng);
    bool ok = true;
    for (const auto& a : avoid) ok = ok && color_distance(a, c) >= min_distance;
    if (ok) return c;
  }
}

}  // namespace

void FigureSpec::validate() const {
  for (double v : {torso_length, upper_arm, forearm, leg, head_radius, limb_radius, torso_radius}) {
    if (!(v > 0)) reject("figure lengths and thickness must be positive");
  }
  if (image_size < 4) reject("image size too small");
}

PoseParams PoseParams::mirrored() const {
  PoseParams m = *this;
  m.root_x = -root_x;
  m.torso_angle = -torso_angle;
  m.left_shoulder = right_shoulder;
  m.left_elbow = right_elbow;
  m.right_shoulder = left_shoulder;
  m.right_elbow = left_elbow;
  m.left_hip = right_hip;
  m.right_hip = left_hip;
  return m;
}

std::string_view to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::kArmRaise: return "arm_raise";
    case MotionKind::kWave: return "wave";
    case MotionKind::kLegLift: return "leg_lift";
    case MotionKind::kTorsoSway: return "torso_sway";
    case MotionKind::kJumpingJack: return "jumping_jack";
    case MotionKind::kCount: break;
  }
  return "unknown";
}

void MotionProgram::validate() const {
  if (frames.size() < 2) reject("motion program needs at least 2 frames");
  for (const auto& p : frames) {
    const bool ok = std::abs(p.torso_angle) <= 0.35 && p.left_shoulder >= -0.5 &&
                    p.left_shoulder <= 2.9 && p.right_shoulder >= -0.5 && p.right_shoulder <= 2.9 &&
                    p.left_elbow >= -0.3 && p.left_elbow <= 1.7 && p.right_elbow >= -0.3 &&
                    p.right_elbow <= 1.7 && p.left_hip >= -0.3 && p.left_hip <= 1.3 &&
                    p.right_hip >= -0.3 && p.right_hip <= 1.3;
    if (!ok) reject("motion program exceeds articulation limits");
  }
}

MotionProgram make_program(MotionKind kind, int64_t frames, std::mt19937_64& rng) {
  if (frames < 2) reject("motion program needs at least 2 frames");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  PoseParams base;
  base.root_x = range(-0.06, 0.06);
  base.root_y = range(0.60, 0.64);
  base.left_shoulder = base.right_shoulder = 0.55;
  base.left_elbow = base.right_elbow = 0.25;
  base.left_hip = base.right_hip = 0.12;
  const double phase = range(0.0, kTwoPi);
  const bool flip = u01(rng) < 0.5;

  MotionProgram program;
  program.kind = kind;
  for (int64_t t = 0; t < frames; ++t) {
    const double angle = kTwoPi * static_cast<double>(t) / static_cast<double>(frames) + phase;
    const double rise = 0.5 * (1.0 - std::cos(angle));  // in [0, 1]
    const double swing = std::sin(angle);
    PoseParams p = base;
    switch (kind) {
      case MotionKind::kArmRaise: {
        p.left_shoulder = p.right_shoulder = 0.55 + 2.0 * rise;
        p.left_elbow = p.right_elbow = 0.25 - 0.15 * rise;
        break;
      }
      case MotionKind::kWave: {
        p.right_shoulder = 2.3;
        p.right_elbow = 0.6 + 0.55 * swing;
        break;
      }
      case MotionKind::kLegLift: {
        p.right_hip = 0.12 + 0.95 * rise;
        p.left_shoulder = p.right_shoulder = 0.9;
        break;
      }
      case MotionKind::kTorsoSway: {
        p.torso_angle = 0.25 * swing;
        p.left_shoulder = 0.2 + 0.45 * swing;
        p.right_shoulder = 0.2 - 0.45 * swing;
        break;
      }
      case MotionKind::kJumpingJack: {
        p.left_shoulder = p.right_shoulder = 0.55 + 1.9 * rise;
        p.left_hip = p.right_hip = 0.12 + 0.35 * rise;
        break;
      }
      case MotionKind::kCount: reject("invalid motion kind");
    }
    program.frames.push_back(flip ? p.mirrored() : p);
  }
  program.validate();
  return program;
}

Appearance sample_appearance(uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xA11CE));
  Appearance a;
  a.background = random_color(rng);
  a.shirt = distinct_color(rng, {a.background}, 0.45);
  a.pants = distinct_color(rng, {a.background, a.shirt}, 0.35);
  a.skin = distinct_color(rng, {a.background, a.shirt}, 0.35);
  return a;
}

RenderedFrame render_figure(const FigureSpec& spec, const PoseParams& pose) {
  spec.validate();
  const Skeleton k = skeleton(spec, pose);
  const double hand_r = spec.limb_radius * kHandScale;

  std::vector<Capsule> capsules{
      {k.hip, k.l_foot, spec.limb_radius, kPants},
      {k.hip, k.r_foot, spec.limb_radius, kPants},
      {k.neck, k.l_elbow, spec.limb_radius, kShirt},
      {k.l_elbow, k.l_hand, spec.limb_radius, kShirt},
      {k.neck, k.r_elbow, spec.limb_radius, kShirt},
      {k.r_elbow, k.r_hand, spec.limb_radius, kShirt},
  };
  std::vector<Disc> hands{{k.l_hand, hand_r, kSkin}, {k.r_hand, hand_r, kSkin}};
  const Capsule torso{k.hip, k.neck, spec.torso_radius, kShirt};
  const Disc head{k.head, spec.head_radius, kSkin};

  for (const auto& c : capsules) {
    check_inside(c.a, c.radius, "limb");
    check_inside(c.b, c.radius, "limb");
  }
  for (const auto& d : hands) check_inside(d.c, d.radius, "hand");
  check_inside(torso.a, torso.radius, "torso");
  check_inside(torso.b, torso.radius, "torso");
  check_inside(head.c, head.radius, "head");

  const int64_t size = spec.image_size;
  const auto& look = spec.appearance;
  const std::array<Rgb, kLayerCount> palette{look.background, look.pants, look.shirt, look.skin};
  auto pixels = torch::empty({size, size, 3}, torch::kFloat32);
  auto px = pixels.accessor<float, 3>();
  const double denom = 2.0 * static_cast<double>(size);
  constexpr std::array<double, 2> kOffsets{-0.5, 0.5};

  for (int64_t i = 0; i < size; ++i) {
    for (int64_t j = 0; j < size; ++j) {
      std::array<int, kLayerCount> hits{};
      for (double sy : kOffsets) {
        for (double sx : kOffsets) {
          const Point p{(2.0 * static_cast<double>(j) + 1.0 + sx - static_cast<double>(size)) / denom,
                        (2.0 * static_cast<double>(i) + 1.0 + sy) / denom};
          int layer = kBackground;
          for (const auto& c : capsules) {
            if (segment_distance2(p, c.a, c.b) <= c.radius * c.radius) layer = c.layer;
          }
          for (const auto& d : hands) {
            if (segment_distance2(p, d.c, d.c) <= d.radius * d.radius) layer = d.layer;
          }
          if (segment_distance2(p, torso.a, torso.b) <= torso.radius * torso.radius) layer = torso.layer;
          if (segment_distance2(p, head.c, head.c) <= head.radius * head.radius) layer = head.layer;
          ++hits[static_cast<size_t>(layer)];
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = 0;
        for (int layer = 0; layer < kLayerCount; ++layer) {
          v += hits[static_cast<size_t>(layer)] * palette[static_cast<size_t>(layer)][static_cast<size_t>(ch)];
        }
        px[i][j][ch] = static_cast<float>(std::round(v / 4.0 * 255.0) / 255.0);
      }
    }
  }

  // Elbows and hands passing behind the torso are occluded.
  const double hidden2 = 0.8 * spec.torso_radius * 0.8 * spec.torso_radius;
  auto keypoint = [&](Point p, bool may_hide) {
    if (may_hide && segment_distance2(p, torso.a, torso.b) < hidden2) {
      return condition::Keypoint::occluded();
    }
    return condition::Keypoint{p.u + 0.5, p.y};
  };
  RenderedFrame out;
  out.pose.points = {keypoint(k.head, false),    keypoint(k.torso_mid, false),
                     keypoint(k.l_elbow, true),  keypoint(k.r_elbow, true),
                     keypoint(k.l_hand, true),   keypoint(k.r_hand, true),
                     keypoint(k.l_foot, false),  keypoint(k.r_foot, false)};
  out.image = quantize_to_u8(Image{pixels});
  return out;
}

Sequence generate_sequence(FigureSpec spec, const MotionProgram& program, uint64_t seed) {
  program.validate();
  spec.appearance = sample_appearance(seed);
  Sequence seq;
  seq.seed = seed;
  seq.kind = program.kind;
  for (const auto& params : program.frames) {
    auto frame = render_figure(spec, params);
    seq.frames.push_back(std::move(frame.image));
    seq.poses.push_back(std::move(frame.pose));
  }
  return seq;
}

std::string frame_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04lld.png", static_cast<long long>(index));
  return buf;
}

namespace {

std::string sequence_id(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%04lld", static_cast<long long>(index));
  return buf;
}

std::vector<Sequence> make_split(const DataConfig& config, uint64_t split_tag, int count) {
  const int kinds = static_cast<int>(MotionKind::kCount);
  std::vector<Sequence> out;
  for (int i = 0; i < count; ++i) {
    const uint64_t seed = mix_seed(mix_seed(config.seed, split_tag), static_cast<uint64_t>(i));
    std::mt19937_64 rng(seed);
    FigureSpec spec;
    spec.image_size = config.image_size;
    auto program = make_program(static_cast<MotionKind>(i % kinds), config.frames_per_sequence, rng);
    auto seq = generate_sequence(spec, program, seed);
    seq.id = sequence_id(i);
    out.push_back(std::move(seq));
  }
  return out;
}

nlohmann::json split_manifest(const std::vector<Sequence>& split) {
  auto seqs = nlohmann::json::array();
  int64_t frames = 0;
  for (const auto& s : split) {
    seqs.push_back({{"id", s.id},
                    {"seed", s.seed},
                    {"kind", static_cast<int>(s.kind)},
                    {"kind_name", std::string(to_string(s.kind))},
                    {"frames", s.frames.size()}});
    frames += static_cast<int64_t>(s.frames.size());
  }
  return {{"count", split.size()}, {"frames", frames}, {"sequences", seqs}};
}

}  // namespace

Dataset make_dataset(const DataConfig& config) {
  Dataset d;
  d.image_size = config.image_size;
  d.seed = config.seed;
  d.train = make_split(config, 1, config.train_sequences);
  d.test = make_split(config, 2, config.test_sequences);
  return d;
}

nlohmann::json export_dataset(const Dataset& dataset, const fs::path& root, bool force) {
  const auto manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path) && !force) {
    throw Error(ErrorKind::kAlreadyExists,
                "dataset already exists at " + root.string() + " (use --force to overwrite)");
  }
  std::error_code ec;
  for (const char* split : {"train", "test"}) fs::remove_all(root / split, ec);
  nlohmann::json manifest{{"image_size", dataset.image_size},
                          {"seed", dataset.seed},
                          {"keypoints", static_cast<int>(kKeypointCount)}};
  const std::pair<const char*, const std::vector<Sequence>*> splits[] = {
      {"train", &dataset.train}, {"test", &dataset.test}};
  for (const auto& [name, seqs] : splits) {
    for (const auto& s : *seqs) {
      const auto dir = root / name / s.id;
      fs::create_directories(dir, ec);
      if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
      for (size_t f = 0; f < s.frames.size(); ++f) {
        write_png(dir / frame_name(static_cast<int64_t>(f)), s.frames[f]);
      }
      condition::write_poses(dir / "poses.json", s.poses);
    }
    manifest["splits"][name] = split_manifest(*seqs);
  }
  std::ofstream out(manifest_path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + manifest_path.string());
  out << manifest.dump(2) << "\n";
  return manifest;
}

Dataset import_dataset(const fs::path& root) {
  const auto manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "no dataset manifest at " + manifest_path.string());
  nlohmann::json manifest;
  in >> manifest;
  Dataset d;
  d.image_size = manifest.at("image_size").get<int>();
  d.seed = manifest.at("seed").get<uint64_t>();
  for (const char* name : {"train", "test"}) {
    auto& target = std::string(name) == "train" ? d.train : d.test;
    if (!manifest["splits"].contains(name)) continue;
    for (const auto& rec : manifest["splits"][name]["sequences"]) {
      Sequence s;
      s.id = rec.at("id").get<std::string>();
      s.seed = rec.at("seed").get<uint64_t>();
      s.kind = static_cast<MotionKind>(rec.at("kind").get<int>());
      const auto dir = root / name / s.id;
      const auto frames = rec.at("frames").get<int64_t>();
      for (int64_t f = 0; f < frames; ++f) s.frames.push_back(read_png(dir / frame_name(f)));
      s.poses = condition::read_poses(dir / "poses.json");
      if (static_cast<int64_t>(s.poses.size()) != frames) {
        reject("pose count does not match frame count in " + dir.string());
      }
      target.push_back(std::move(s));
    }
  }
  return d;
}

}  // namespace qscraft::synthdata
