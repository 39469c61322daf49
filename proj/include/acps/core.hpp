#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acps {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
double distance(Point2 a, Point2 b);

// ---------------------------------------------------------------------------
// Body model
// ---------------------------------------------------------------------------

inline constexpr int kBodyJoints = 13;

/// Joint order of the 13-joint body model. Names are fixed and used verbatim
/// in annotation files.
inline constexpr std::array<std::string_view, kBodyJoints> kJointNames = {
    "head",    "l-shoulder", "r-shoulder", "l-elbow", "r-elbow", "l-wrist", "r-wrist",
    "l-hip",   "r-hip",      "l-knee",     "r-knee",  "l-ankle", "r-ankle"};

namespace joint {
inline constexpr int head = 0, l_shoulder = 1, r_shoulder = 2, l_elbow = 3, r_elbow = 4,
                     l_wrist = 5, r_wrist = 6, l_hip = 7, r_hip = 8, l_knee = 9, r_knee = 10,
                     l_ankle = 11, r_ankle = 12;
}

/// Index of the left/right counterpart of a body joint (head maps to itself).
int mirror_joint(int j);

struct Edge {
  int child = 0;
  int parent = 0;
};

struct KinematicTree {
  std::vector<std::string> joints;
  std::vector<Edge> edges;
  int root = 0;

  int joint_count() const { return static_cast<int>(joints.size()); }

  /// 13-joint body rooted at the head; hips hang off the shoulders.
  static KinematicTree body();
};

struct TreeViolation {
  enum class Kind { edge_count, bad_index, self_loop, multi_parent, root_has_parent, cycle, disconnected };
  Kind kind;
  int joint = -1;
  std::string message;
};

/// Empty result means the tree satisfies every invariant.
std::vector<TreeViolation> validate_tree(const KinematicTree& tree);

/// Parent/child structure of a validated tree. Construction throws
/// std::invalid_argument listing the violations otherwise.
class TreeTopology {
 public:
  explicit TreeTopology(const KinematicTree& tree);

  int root() const { return root_; }
  int size() const { return static_cast<int>(parent_.size()); }
  int parent(int j) const { return parent_[j]; }
  const std::vector<int>& children(int j) const { return children_[j]; }
  /// Root first; every joint appears after its parent.
  const std::vector<int>& top_down() const { return order_; }

 private:
  int root_;
  std::vector<int> parent_;
  std::vector<std::vector<int>> children_;
  std::vector<int> order_;
};

struct Pose {
  std::vector<Point2> joints;
  double scale = 1.0;
  int frame_index = 0;
};

/// Distance from the head to the hip midpoint.
double upper_body_size(const Pose& pose);

// ---------------------------------------------------------------------------
// Action prior
// ---------------------------------------------------------------------------

enum class PriorMode { uniform, soft, hard };

struct ActionPrior {
  std::vector<double> probs;
  PriorMode mode = PriorMode::uniform;

  static ActionPrior uniform(int actions);
  static ActionPrior hard(int actions, int action);
  /// Validates nonnegativity and unit sum (1e-9).
  static ActionPrior soft(std::vector<double> probs);

  int size() const { return static_cast<int>(probs.size()); }
  int argmax() const;
};

// ---------------------------------------------------------------------------
// Feature stacks
// ---------------------------------------------------------------------------

class FeatureStack {
 public:
  FeatureStack() = default;
  FeatureStack(int width, int height, int channels, double scale_factor = 1.0);
  FeatureStack(int width, int height, int channels, std::vector<float> data,
               double scale_factor = 1.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  double scale_factor() const { return scale_factor_; }
  void set_scale_factor(double s) { scale_factor_ = s; }

  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  /// Coordinates outside the stack are clamped to the border.
  float clamped(int c, int y, int x) const;

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::span<const float> channel(int c) const;

  friend bool operator==(const FeatureStack&, const FeatureStack&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  double scale_factor_ = 1.0;
  std::vector<float> data_;
};

std::vector<std::uint8_t> encode_feature_stack(const FeatureStack& stack);
FeatureStack decode_feature_stack(std::span<const std::uint8_t> bytes);
void save_feature_stack(const std::filesystem::path& path, const FeatureStack& stack);
FeatureStack load_feature_stack(const std::filesystem::path& path);

/// Bilinear resampling of every channel, half-pixel-centred coordinates.
FeatureStack resample_bilinear(const FeatureStack& stack, int width, int height);

struct ScalePyramid {
  std::vector<FeatureStack> levels;
  double factor = 0.8;

  int count() const { return static_cast<int>(levels.size()); }
};

ScalePyramid build_pyramid(const FeatureStack& stack, int count, double factor);

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

struct VideoAnnotation {
  std::vector<Pose> frames;
  int action = 0;
  std::string action_name;
  std::vector<double> person_size;
};

/// Half the diagonal of the joints' bounding box.
double person_size_from_pose(const Pose& pose);

std::string annotation_to_json(const VideoAnnotation& ann);
VideoAnnotation annotation_from_json(std::string_view text);
void save_annotation(const std::filesystem::path& path, const VideoAnnotation& ann);
VideoAnnotation load_annotation(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace acps
