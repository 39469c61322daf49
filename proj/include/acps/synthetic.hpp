#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "acps/core.hpp"

namespace acps {

/// Joint classes share appearance between the left and right side.
inline constexpr int kJointClasses = 7;  // head, shoulder, elbow, wrist, hip, knee, ankle
int joint_class(int joint);

struct ActionStyle {
  std::string name;
  double arm_raise = 0.5;  // upper-arm angle from hanging down, radians
  double arm_bend = 0.0;   // forearm angle relative to the upper arm
  double leg_spread = 0.1;
  double knee_bend = 0.0;
  double lean = 0.0;
  double swing_amplitude = 0.3;
  double swing_rate = 0.5;  // radians per frame
  bool mirrored_swing = false;
  /// Appearance pattern (feature channel) of each joint class.
  std::array<int, kJointClasses> signature{};
};

struct BodyProportions {
  double torso = 11.0;
  double head = 5.0;
  double shoulder_half = 4.0;
  double hip_half = 3.0;
  double upper_arm = 7.0;
  double forearm = 6.0;
  double thigh = 8.0;
  double shin = 8.0;
};

struct SyntheticSpec {
  int width = 48;
  int height = 56;
  int patterns = 7;  // feature channels
  int frames = 10;
  double blob_sigma = 1.5;
  double noise = 0.05;
  int distractors = 2;
  double angle_jitter = 0.08;
  double position_jitter = 3.0;
  BodyProportions body;
  std::vector<ActionStyle> styles;

  int action_count() const { return static_cast<int>(styles.size()); }

  /// Styles drawn from `spec_seed`: arm and leg angles are stratified so
  /// that actions differ in pose, and each action gets its own permutation
  /// of appearance patterns over the joint classes.
  static SyntheticSpec make(int actions, std::uint64_t spec_seed = 7);
};

/// One pose sequence of the given action; deterministic in `rng`.
std::vector<Pose> sample_poses(const SyntheticSpec& spec, int action, std::mt19937_64& rng);

/// Gaussian blobs on each joint's pattern channel, distractor blobs and
/// additive noise.
FeatureStack render_frame(const SyntheticSpec& spec, const Pose& pose, int action, std::mt19937_64& rng);

struct Video {
  std::vector<FeatureStack> frames;
  VideoAnnotation annotation;
};

struct Dataset {
  std::vector<std::string> action_names;
  std::vector<Video> videos;

  int action_count() const { return static_cast<int>(action_names.size()); }
};

/// Video v has action v mod |A| and draws from mix_seed(seed, v).
Dataset generate_synthetic(const SyntheticSpec& spec, int videos, std::uint64_t seed);

/// Directory with manifest.json and videos/vid_NNN/{annotation.json, frame_NNN.fstk}.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace acps
