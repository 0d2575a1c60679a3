#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "qscraft/condition.hpp"
#include "qscraft/config.hpp"
#include "qscraft/image.hpp"

namespace qscraft::synthdata {

// Keypoint order of every PoseFrame produced here.
enum KeypointId : int {
  kHead = 0,
  kTorso,
  kLeftElbow,
  kRightElbow,
  kLeftHand,
  kRightHand,
  kLeftFoot,
  kRightFoot,
  kKeypointCount,
};

using Rgb = std::array<double, 3>;

struct Appearance {
  Rgb background{0.2, 0.3, 0.4};
  Rgb skin{0.9, 0.75, 0.6};
  Rgb shirt{0.8, 0.2, 0.2};
  Rgb pants{0.1, 0.1, 0.5};
};

// Lengths are fractions of the frame side; "left" is the image-left limb.
struct FigureSpec {
  double torso_length = 0.26;
  double upper_arm = 0.14;
  double forearm = 0.13;
  double leg = 0.28;
  double head_radius = 0.07;
  double limb_radius = 0.035;
  double torso_radius = 0.06;
  int image_size = 64;
  Appearance appearance;

  void validate() const;
};

// Joint parameters of one frame. Angles in radians measured from straight
// down, positive pointing away from the body midline.
struct PoseParams {
  double root_x = 0.0;  // hip offset from the frame centre
  double root_y = 0.62;
  double torso_angle = 0.0;  // positive leans right
  double left_shoulder = 0.3, left_elbow = 0.2;
  double right_shoulder = 0.3, right_elbow = 0.2;
  double left_hip = 0.1, right_hip = 0.1;

  PoseParams mirrored() const;
};

enum class MotionKind : int { kArmRaise = 0, kWave, kLegLift, kTorsoSway, kJumpingJack, kCount };

std::string_view to_string(MotionKind kind);

struct MotionProgram {
  MotionKind kind = MotionKind::kArmRaise;
  std::vector<PoseParams> frames;

  int64_t length() const { return static_cast<int64_t>(frames.size()); }
  void validate() const;
};

// Random program of `kind` with T frames; angles respect articulation limits.
MotionProgram make_program(MotionKind kind, int64_t frames, std::mt19937_64& rng);

Appearance sample_appearance(uint64_t seed);

struct RenderedFrame {
  Image image;
  condition::PoseFrame pose;
};

// Rasterizes with 2×2 supersampling and rounds to the 8-bit grid. Keypoints
// of limbs that pass behind the torso are reported as occluded.
RenderedFrame render_figure(const FigureSpec& spec, const PoseParams& pose);

struct Sequence {
  std::string id;
  uint64_t seed = 0;
  MotionKind kind = MotionKind::kArmRaise;
  std::vector<Image> frames;
  std::vector<condition::PoseFrame> poses;
};

// Same figure and background throughout; appearance drawn from `seed`.
Sequence generate_sequence(FigureSpec spec, const MotionProgram& program, uint64_t seed);

struct Dataset {
  int image_size = 0;
  uint64_t seed = 0;
  std::vector<Sequence> train;
  std::vector<Sequence> test;
};

// Deterministic dataset for `config`: motion kinds cycle across sequences.
Dataset make_dataset(const DataConfig& config);

// Writes <root>/<split>/<seq_id>/frame_%04d.png + poses.json and
// <root>/manifest.json. Refuses to overwrite an existing manifest unless `force`.
nlohmann::json export_dataset(const Dataset& dataset, const std::filesystem::path& root, bool force);
Dataset import_dataset(const std::filesystem::path& root);

std::string frame_name(int64_t index);

}  // namespace qscraft::synthdata
