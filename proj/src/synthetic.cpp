#include "acps/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "acps/errors.hpp"
#include "acps/parallel.hpp"
#include "json.hpp"

namespace acps {

int joint_class(int j) { return j == 0 ? 0 : (j + 1) / 2; }

SyntheticSpec SyntheticSpec::make(int actions, std::uint64_t spec_seed) {
  if (actions < 1) throw std::invalid_argument("SyntheticSpec: need at least one action");
  SyntheticSpec spec;
  std::mt19937_64 rng(spec_seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  std::vector<int> leg_order(actions);
  std::iota(leg_order.begin(), leg_order.end(), 0);
  std::shuffle(leg_order.begin(), leg_order.end(), rng);

  for (int a = 0; a < actions; ++a) {
    ActionStyle s;
    s.name = "action" + std::to_string(a);
    s.arm_raise = 0.3 + (a + uni(0.2, 0.8)) * 2.4 / actions;
    s.arm_bend = uni(-0.8, 0.8);
    s.leg_spread = 0.05 + (leg_order[a] + uni(0.2, 0.8)) * 0.5 / actions;
    s.knee_bend = uni(-0.3, 0.3);
    s.lean = uni(-0.15, 0.15);
    s.swing_amplitude = uni(0.1, 0.5);
    s.swing_rate = uni(0.3, 0.8);
    s.mirrored_swing = u01(rng) < 0.5;
    std::vector<int> perm(spec.patterns);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::copy_n(perm.begin(), kJointClasses, s.signature.begin());
    spec.styles.push_back(std::move(s));
  }
  return spec;
}

std::vector<Pose> sample_poses(const SyntheticSpec& spec, int action, std::mt19937_64& rng) {
  const ActionStyle& st = spec.styles.at(action);
  const BodyProportions& b = spec.body;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> jit(0.0, spec.angle_jitter);
  const double pj = spec.position_jitter;
  const double cx = 0.5 * spec.width + pj * (2 * u01(rng) - 1);
  const double cy = 0.5 * spec.height + 4.0 + pj * (2 * u01(rng) - 1);
  const double phase = 2.0 * 3.141592653589793 * u01(rng);

  std::vector<Pose> poses;
  for (int t = 0; t < spec.frames; ++t) {
    const double swing = st.swing_amplitude * std::sin(st.swing_rate * t + phase);
    const double lean = st.lean + 0.5 * jit(rng);
    const Point2 up{std::sin(lean), -std::cos(lean)};
    const Point2 right{std::cos(lean), std::sin(lean)};
    const Point2 down{-up.x, -up.y};
    auto dir = [&](double angle, double side) { return std::cos(angle) * down + (side * std::sin(angle)) * right; };

    Pose p;
    p.frame_index = t;
    p.joints.assign(kBodyJoints, Point2{});
    const Point2 hip_mid{cx, cy};
    const Point2 neck = hip_mid + b.torso * up;
    p.joints[joint::head] = neck + b.head * up;
    for (int side_index = 0; side_index < 2; ++side_index) {
      const double s = side_index == 0 ? 1.0 : -1.0;  // left joints on the image right
      const int off = side_index;                      // left = odd index, right = even
      const double arm_swing = (side_index == 1 && st.mirrored_swing) ? -swing : swing;
      const double upper = st.arm_raise + arm_swing + jit(rng);
      const double fore = upper + st.arm_bend + jit(rng);
      const double thigh = st.leg_spread + 0.3 * arm_swing + jit(rng);
      const double shin = thigh + st.knee_bend + jit(rng);
      const Point2 shoulder = neck + (s * b.shoulder_half) * right;
      const Point2 elbow = shoulder + b.upper_arm * dir(upper, s);
      const Point2 hip = hip_mid + (s * b.hip_half) * right;
      const Point2 knee = hip + b.thigh * dir(thigh, s);
      p.joints[joint::l_shoulder + off] = shoulder;
      p.joints[joint::l_elbow + off] = elbow;
      p.joints[joint::l_wrist + off] = elbow + b.forearm * dir(fore, s);
      p.joints[joint::l_hip + off] = hip;
      p.joints[joint::l_knee + off] = knee;
      p.joints[joint::l_ankle + off] = knee + b.shin * dir(shin, s);
    }
    poses.push_back(std::move(p));
  }
  return poses;
}

namespace {

void stamp(FeatureStack& fs, int channel, Point2 c, double sigma, double amplitude) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  const int x0 = static_cast<int>(std::floor(c.x)), y0 = static_cast<int>(std::floor(c.y));
  for (int y = std::max(0, y0 - r); y <= std::min(fs.height() - 1, y0 + r + 1); ++y) {
    for (int x = std::max(0, x0 - r); x <= std::min(fs.width() - 1, x0 + r + 1); ++x) {
      const double d2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
      fs.at(channel, y, x) += static_cast<float>(amplitude * std::exp(-d2 / (2 * sigma * sigma)));
    }
  }
}

}  // namespace

FeatureStack render_frame(const SyntheticSpec& spec, const Pose& pose, int action, std::mt19937_64& rng) {
  FeatureStack fs(spec.width, spec.height, spec.patterns);
  const ActionStyle& st = spec.styles.at(action);
  for (int j = 0; j < kBodyJoints; ++j) stamp(fs, st.signature[joint_class(j)], pose.joints[j], spec.blob_sigma, 1.0);
  std::uniform_real_distribution<double> ux(0.0, spec.width - 1.0), uy(0.0, spec.height - 1.0);
  std::uniform_int_distribution<int> pat(0, spec.patterns - 1);
  for (int d = 0; d < spec.distractors; ++d) {
    const int c = pat(rng);
    const Point2 at{ux(rng), uy(rng)};
    stamp(fs, c, at, spec.blob_sigma, 1.0);
  }
  if (spec.noise > 0) {
    std::normal_distribution<double> n(0.0, spec.noise);
    for (float& v : fs.data()) v += static_cast<float>(n(rng));
  }
  return fs;
}

Dataset generate_synthetic(const SyntheticSpec& spec, int videos, std::uint64_t seed) {
  Dataset ds;
  for (const auto& s : spec.styles) ds.action_names.push_back(s.name);
  ds.videos.resize(videos);
  for (int v = 0; v < videos; ++v) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(v)));
    const int action = v % spec.action_count();
    Video& vid = ds.videos[v];
    vid.annotation.action = action;
    vid.annotation.action_name = ds.action_names[action];
    vid.annotation.frames = sample_poses(spec, action, rng);
    for (const Pose& p : vid.annotation.frames) {
      vid.annotation.person_size.push_back(person_size_from_pose(p));
      vid.frames.push_back(render_frame(spec, p, action, rng));
    }
  }
  return ds;
}

namespace {

std::string numbered(const char* prefix, int i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%03d%s", prefix, i, suffix);
  return buf;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "videos");
  nlohmann::ordered_json manifest;
  manifest["format"] = "acps-dataset";
  manifest["version"] = 1;
  manifest["actions"] = ds.action_names;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (std::size_t v = 0; v < ds.videos.size(); ++v) {
    const Video& vid = ds.videos[v];
    const std::string name = numbered("vid_", static_cast<int>(v), "");
    const fs::path vdir = dir / "videos" / name;
    fs::create_directories(vdir);
    save_annotation(vdir / "annotation.json", vid.annotation);
    for (std::size_t f = 0; f < vid.frames.size(); ++f) {
      save_feature_stack(vdir / numbered("frame_", static_cast<int>(f), ".fstk"), vid.frames[f]);
    }
    list.push_back({{"path", "videos/" + name}, {"action", vid.annotation.action}, {"frames", vid.frames.size()}});
  }
  manifest["videos"] = list;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  using R = FormatError::Reason;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(R::parse, "dataset manifest: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    ds.action_names = manifest.at("actions").get<std::vector<std::string>>();
    for (const auto& entry : manifest.at("videos")) {
      Video vid;
      const std::filesystem::path vdir = dir / entry.at("path").get<std::string>();
      vid.annotation = load_annotation(vdir / "annotation.json");
      const int frames = entry.at("frames").get<int>();
      if (frames != static_cast<int>(vid.annotation.frames.size())) {
        throw FormatError(R::corrupt, "dataset: frame count of " + vdir.string() + " disagrees with its annotation");
      }
      for (int f = 0; f < frames; ++f) vid.frames.push_back(load_feature_stack(vdir / numbered("frame_", f, ".fstk")));
      ds.videos.push_back(std::move(vid));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(R::parse, "dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace acps
