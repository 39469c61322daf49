#include "acps/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "acps/binary_io.hpp"
#include "acps/errors.hpp"

namespace acps {

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

int mirror_joint(int j) {
  if (j == joint::head) return j;
  // Left/right pairs are adjacent with the left joint at the odd index.
  return (j % 2 == 1) ? j + 1 : j - 1;
}

KinematicTree KinematicTree::body() {
  KinematicTree t;
  t.joints.assign(kJointNames.begin(), kJointNames.end());
  t.root = joint::head;
  t.edges = {{joint::l_shoulder, joint::head},    {joint::r_shoulder, joint::head},
             {joint::l_elbow, joint::l_shoulder}, {joint::r_elbow, joint::r_shoulder},
             {joint::l_wrist, joint::l_elbow},    {joint::r_wrist, joint::r_elbow},
             {joint::l_hip, joint::l_shoulder},   {joint::r_hip, joint::r_shoulder},
             {joint::l_knee, joint::l_hip},       {joint::r_knee, joint::r_hip},
             {joint::l_ankle, joint::l_knee},     {joint::r_ankle, joint::r_knee}};
  return t;
}

std::vector<TreeViolation> validate_tree(const KinematicTree& tree) {
  using Kind = TreeViolation::Kind;
  std::vector<TreeViolation> out;
  const int n = tree.joint_count();
  if (n == 0) {
    out.push_back({Kind::edge_count, -1, "tree has no joints"});
    return out;
  }
  if (tree.root < 0 || tree.root >= n) {
    out.push_back({Kind::bad_index, tree.root, "root index out of range"});
    return out;
  }
  if (static_cast<int>(tree.edges.size()) != n - 1) {
    out.push_back({Kind::edge_count, -1,
                   "expected " + std::to_string(n - 1) + " edges, found " +
                       std::to_string(tree.edges.size())});
  }

  std::vector<int> parent(n, -1);
  std::vector<int> parent_count(n, 0);
  bool indices_ok = true;
  for (const Edge& e : tree.edges) {
    if (e.child < 0 || e.child >= n || e.parent < 0 || e.parent >= n) {
      out.push_back({Kind::bad_index, e.child, "edge references a joint out of range"});
      indices_ok = false;
      continue;
    }
    if (e.child == e.parent) {
      out.push_back({Kind::self_loop, e.child, "joint is its own parent"});
      continue;
    }
    if (++parent_count[e.child] == 1) parent[e.child] = e.parent;
  }
  for (int j = 0; j < n; ++j) {
    if (parent_count[j] > 1) {
      out.push_back({Kind::multi_parent, j, tree.joints[j] + " has " +
                                               std::to_string(parent_count[j]) + " parents"});
    }
  }
  if (parent_count[tree.root] > 0) {
    out.push_back({Kind::root_has_parent, tree.root, "root joint has a parent"});
  }
  if (!indices_ok) return out;

  // Cycles along the (first) parent chain.
  std::vector<int> state(n, 0);  // 0 unvisited, 1 on stack, 2 done
  std::vector<bool> on_cycle(n, false);
  for (int start = 0; start < n; ++start) {
    std::vector<int> path;
    int j = start;
    while (j >= 0 && state[j] == 0) {
      state[j] = 1;
      path.push_back(j);
      j = parent[j];
    }
    if (j >= 0 && state[j] == 1) {
      for (auto it = std::find(path.begin(), path.end(), j); it != path.end(); ++it) {
        on_cycle[*it] = true;
      }
    }
    for (int p : path) state[p] = 2;
  }
  for (int j = 0; j < n; ++j) {
    if (on_cycle[j]) out.push_back({Kind::cycle, j, tree.joints[j] + " lies on a cycle"});
  }

  // Reachability from the root over child links.
  std::vector<std::vector<int>> children(n);
  for (const Edge& e : tree.edges) {
    if (e.child != e.parent) children[e.parent].push_back(e.child);
  }
  std::vector<bool> seen(n, false);
  std::vector<int> stack{tree.root};
  seen[tree.root] = true;
  while (!stack.empty()) {
    int j = stack.back();
    stack.pop_back();
    for (int c : children[j]) {
      if (!seen[c]) {
        seen[c] = true;
        stack.push_back(c);
      }
    }
  }
  for (int j = 0; j < n; ++j) {
    if (!seen[j] && !on_cycle[j]) {
      out.push_back({Kind::disconnected, j, tree.joints[j] + " is not reachable from the root"});
    }
  }
  return out;
}

TreeTopology::TreeTopology(const KinematicTree& tree) : root_(tree.root) {
  auto violations = validate_tree(tree);
  if (!violations.empty()) {
    std::string msg = "invalid kinematic tree:";
    for (const auto& v : violations) msg += " " + v.message + ";";
    throw std::invalid_argument(msg);
  }
  const int n = tree.joint_count();
  parent_.assign(n, -1);
  children_.assign(n, {});
  for (const Edge& e : tree.edges) {
    parent_[e.child] = e.parent;
    children_[e.parent].push_back(e.child);
  }
  for (auto& c : children_) std::sort(c.begin(), c.end());
  order_.reserve(n);
  order_.push_back(root_);
  for (std::size_t i = 0; i < order_.size(); ++i) {
    for (int c : children_[order_[i]]) order_.push_back(c);
  }
}

double upper_body_size(const Pose& pose) {
  const auto& p = pose.joints;
  Point2 hips = 0.5 * (p[joint::l_hip] + p[joint::r_hip]);
  return distance(p[joint::head], hips);
}

// ---------------------------------------------------------------------------

ActionPrior ActionPrior::uniform(int actions) {
  if (actions < 1) throw std::invalid_argument("action prior needs at least one action");
  return {std::vector<double>(actions, 1.0 / actions), PriorMode::uniform};
}

ActionPrior ActionPrior::hard(int actions, int action) {
  if (action < 0 || action >= actions) throw std::invalid_argument("hard prior action out of range");
  std::vector<double> p(actions, 0.0);
  p[action] = 1.0;
  return {std::move(p), PriorMode::hard};
}

ActionPrior ActionPrior::soft(std::vector<double> probs) {
  if (probs.empty()) throw std::invalid_argument("action prior needs at least one action");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("action prior entry is negative or non-finite");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("action prior does not sum to 1");
  return {std::move(probs), PriorMode::soft};
}

int ActionPrior::argmax() const {
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// ---------------------------------------------------------------------------

FeatureStack::FeatureStack(int width, int height, int channels, double scale_factor)
    : FeatureStack(width, height, channels,
                   std::vector<float>(static_cast<std::size_t>(std::max(width, 0)) *
                                      std::max(height, 0) * std::max(channels, 0)),
                   scale_factor) {}

FeatureStack::FeatureStack(int width, int height, int channels, std::vector<float> data,
                           double scale_factor)
    : width_(width), height_(height), channels_(channels), scale_factor_(scale_factor),
      data_(std::move(data)) {
  if (width <= 0 || height <= 0 || channels <= 0) {
    throw std::invalid_argument("feature stack dimensions must be positive");
  }
  if (!(scale_factor > 0.0)) throw std::invalid_argument("feature stack scale must be positive");
  if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw std::invalid_argument("feature stack data length does not match dimensions");
  }
}

float FeatureStack::clamped(int c, int y, int x) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return data_[index(c, y, x)];
}

std::span<const float> FeatureStack::channel(int c) const {
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c) * width_ * height_,
                                               static_cast<std::size_t>(width_) * height_);
}

namespace {
constexpr std::string_view kStackMagic{"FSTK1\0", 6};
}

std::vector<std::uint8_t> encode_feature_stack(const FeatureStack& stack) {
  io::ByteWriter w;
  w.put_bytes(kStackMagic);
  w.put(static_cast<std::uint32_t>(stack.width()));
  w.put(static_cast<std::uint32_t>(stack.height()));
  w.put(static_cast<std::uint32_t>(stack.channels()));
  for (float v : stack.data()) w.put(v);
  return std::move(w.bytes());
}

FeatureStack decode_feature_stack(std::span<const std::uint8_t> bytes) {
  using R = FormatError::Reason;
  io::ByteReader r(bytes, R::truncated);
  if (r.remaining() < kStackMagic.size() || r.get_bytes(kStackMagic.size()) != kStackMagic) {
    throw FormatError(R::bad_magic, "FSTK: bad magic");
  }
  const auto width = r.get<std::uint32_t>();
  const auto height = r.get<std::uint32_t>();
  const auto channels = r.get<std::uint32_t>();
  if (width == 0 || height == 0 || channels == 0 || width > (1u << 20) || height > (1u << 20)) {
    throw FormatError(R::corrupt, "FSTK: implausible dimensions");
  }
  const std::uint64_t count = std::uint64_t{width} * height * channels;
  if (r.remaining() < count * sizeof(float)) {
    throw FormatError(R::truncated, "FSTK: truncated payload (expected " +
                                        std::to_string(count * sizeof(float)) + " bytes, found " +
                                        std::to_string(r.remaining()) + ")");
  }
  std::vector<float> data(count);
  for (auto& v : data) {
    v = r.get<float>();
    if (!std::isfinite(v)) throw FormatError(R::non_finite, "FSTK: non-finite value in payload");
  }
  if (r.remaining() != 0) throw FormatError(R::corrupt, "FSTK: trailing bytes after payload");
  return FeatureStack(static_cast<int>(width), static_cast<int>(height),
                      static_cast<int>(channels), std::move(data));
}

void save_feature_stack(const std::filesystem::path& path, const FeatureStack& stack) {
  io::write_file(path.string(), encode_feature_stack(stack));
}

FeatureStack load_feature_stack(const std::filesystem::path& path) {
  return decode_feature_stack(io::read_file(path.string()));
}

FeatureStack resample_bilinear(const FeatureStack& stack, int width, int height) {
  FeatureStack out(width, height, stack.channels(), stack.scale_factor());
  const double sx = static_cast<double>(stack.width()) / width;
  const double sy = static_cast<double>(stack.height()) / height;

  struct Tap {
    int i0, i1;
    double t;
  };
  auto taps = [](int n_out, int n_in, double s) {
    std::vector<Tap> v(n_out);
    for (int i = 0; i < n_out; ++i) {
      double src = std::clamp((i + 0.5) * s - 0.5, 0.0, static_cast<double>(n_in - 1));
      int i0 = static_cast<int>(std::floor(src));
      int i1 = std::min(i0 + 1, n_in - 1);
      v[i] = {i0, i1, src - i0};
    }
    return v;
  };
  const auto tx = taps(width, stack.width(), sx);
  const auto ty = taps(height, stack.height(), sy);

  for (int c = 0; c < stack.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < width; ++x) {
        const Tap& b = tx[x];
        double top = (1.0 - b.t) * stack.at(c, a.i0, b.i0) + b.t * stack.at(c, a.i0, b.i1);
        double bot = (1.0 - b.t) * stack.at(c, a.i1, b.i0) + b.t * stack.at(c, a.i1, b.i1);
        out.at(c, y, x) = static_cast<float>((1.0 - a.t) * top + a.t * bot);
      }
    }
  }
  return out;
}

ScalePyramid build_pyramid(const FeatureStack& stack, int count, double factor) {
  if (count < 1) throw std::invalid_argument("pyramid needs at least one level");
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("pyramid factor must lie in (0,1)");
  ScalePyramid pyr;
  pyr.factor = factor;
  pyr.levels.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double s = std::pow(factor, i);
    if (i == 0) {
      pyr.levels.push_back(stack);
      pyr.levels.back().set_scale_factor(s);
      continue;
    }
    const int w = static_cast<int>(std::lround(stack.width() * s));
    const int h = static_cast<int>(std::lround(stack.height() * s));
    if (w < 8 || h < 8) {
      throw std::invalid_argument("pyramid level " + std::to_string(i) + " would be " +
                                  std::to_string(w) + "x" + std::to_string(h) +
                                  " px, below the 8 px minimum");
    }
    FeatureStack level = resample_bilinear(stack, w, h);
    level.set_scale_factor(s);
    pyr.levels.push_back(std::move(level));
  }
  return pyr;
}

// ---------------------------------------------------------------------------

double person_size_from_pose(const Pose& pose) {
  double x0 = pose.joints.front().x, x1 = x0, y0 = pose.joints.front().y, y1 = y0;
  for (const Point2& p : pose.joints) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return 0.5 * std::hypot(x1 - x0, y1 - y0);
}

std::string annotation_to_json(const VideoAnnotation& ann) {
  nlohmann::json j;
  j["action"] = ann.action;
  j["action_name"] = ann.action_name;
  j["joints"] = std::vector<std::string>(kJointNames.begin(), kJointNames.end());
  auto& frames = j["frames"] = nlohmann::json::array();
  for (std::size_t f = 0; f < ann.frames.size(); ++f) {
    const Pose& p = ann.frames[f];
    nlohmann::json fr;
    fr["index"] = p.frame_index;
    fr["scale"] = p.scale;
    fr["person_size"] = ann.person_size.at(f);
    auto& pts = fr["joints"] = nlohmann::json::array();
    for (const Point2& q : p.joints) pts.push_back({q.x, q.y});
    frames.push_back(std::move(fr));
  }
  return j.dump(1);
}

VideoAnnotation annotation_from_json(std::string_view text) {
  using R = FormatError::Reason;
  VideoAnnotation ann;
  try {
    auto j = nlohmann::json::parse(text);
    ann.action = j.at("action").get<int>();
    ann.action_name = j.value("action_name", std::string{});
    auto names = j.at("joints").get<std::vector<std::string>>();
    if (names.size() != kJointNames.size() ||
        !std::equal(names.begin(), names.end(), kJointNames.begin())) {
      throw FormatError(R::parse, "annotation: joint list does not match the 13-joint body model");
    }
    for (const auto& fr : j.at("frames")) {
      Pose p;
      p.frame_index = fr.at("index").get<int>();
      p.scale = fr.value("scale", 1.0);
      for (const auto& q : fr.at("joints")) {
        p.joints.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
      }
      if (p.joints.size() != kJointNames.size()) {
        throw FormatError(R::parse, "annotation: frame has wrong joint count");
      }
      for (const Point2& q : p.joints) {
        if (!std::isfinite(q.x) || !std::isfinite(q.y)) {
          throw FormatError(R::non_finite, "annotation: non-finite joint coordinate");
        }
      }
      double ps = fr.at("person_size").get<double>();
      if (!(ps > 0.0)) throw FormatError(R::parse, "annotation: person_size must be positive");
      ann.person_size.push_back(ps);
      ann.frames.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(R::parse, std::string("annotation: ") + e.what());
  }
  return ann;
}

void save_annotation(const std::filesystem::path& path, const VideoAnnotation& ann) {
  write_text_file(path, annotation_to_json(ann));
}

VideoAnnotation load_annotation(const std::filesystem::path& path) {
  return annotation_from_json(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

namespace io {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace io
}  // namespace acps
