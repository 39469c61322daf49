#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "acps/core.hpp"

namespace acps {

/// One annotated training frame as seen by forest training.
struct LabeledFrame {
  const FeatureStack* stack = nullptr;
  Pose pose;
  int action = 0;
};

struct PatchSample {
  int image = 0;  // index into the frame list
  int x = 0;
  int y = 0;
  int label = 0;  // 0 background, 1 the forest's joint
  Point2 offset;  // joint centre minus patch centre; zero for background
  int action = 0;
};

struct PatchConfig {
  int positives = 50000;
  int negatives = 50000;
  int images = 5000;
  double positive_radius = 5.0;
  /// Negatives lie strictly farther than this from the joint.
  double negative_exclusion = 5.0;
  std::uint64_t seed = 0;
};

/// Distinct (image, pixel) samples drawn without replacement. Throws
/// std::invalid_argument if the selected images cannot supply the counts.
std::vector<PatchSample> sample_patches(std::span<const LabeledFrame> frames, int joint,
                                        const PatchConfig& config);

enum class Goodness : std::uint8_t { classification = 0, regression = 1 };

struct SplitTest {
  int channel = 0;
  int dx = 0;
  int dy = 0;
  float threshold = 0.0f;

  /// Left iff the clamped value is below the threshold; ties route right.
  bool goes_left(const FeatureStack& stack, int x, int y) const {
    return stack.clamped(channel, y + dy, x + dx) < threshold;
  }

  friend bool operator==(const SplitTest&, const SplitTest&) = default;
};

struct Vote {
  double dx = 0.0;
  double dy = 0.0;
  /// Joint mass p(c=j|a,L) * p(d|a,L); per-action weights sum to p(c=j|a,L).
  double weight = 0.0;

  friend bool operator==(const Vote&, const Vote&) = default;
};

struct ActionLeaf {
  std::uint32_t samples = 0;
  std::uint32_t foreground = 0;
  double p_foreground = 0.0;
  std::vector<Vote> votes;

  friend bool operator==(const ActionLeaf&, const ActionLeaf&) = default;
};

struct LeafModel {
  std::vector<ActionLeaf> actions;

  /// Action-marginal leaf with uniform action weights: each action's table
  /// scaled by 1/|A|. Actions that never reached the leaf contribute nothing.
  LeafModel pooled() const;

  friend bool operator==(const LeafModel&, const LeafModel&) = default;
};

struct TreeConfig {
  int max_depth = 20;
  int min_leaf = 20;
  int candidates = 40000;
  int window_radius = 12;
  int vote_cap = 50;
  int threshold_subsample = 256;

  friend bool operator==(const TreeConfig&, const TreeConfig&) = default;
};

class RegressionTree {
 public:
  struct Node {
    bool leaf = true;
    Goodness goodness = Goodness::classification;
    SplitTest split;
    int left = -1;
    int right = -1;
    int leaf_index = -1;
    int depth = 0;

    friend bool operator==(const Node&, const Node&) = default;
  };

  RegressionTree() = default;
  RegressionTree(std::vector<Node> nodes, std::vector<LeafModel> leaves)
      : nodes_(std::move(nodes)), leaves_(std::move(leaves)) {}

  const LeafModel& predict(const FeatureStack& stack, int x, int y) const {
    return leaves_[leaf_index(stack, x, y)];
  }
  int leaf_index(const FeatureStack& stack, int x, int y) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<LeafModel>& leaves() const { return leaves_; }
  int depth() const;

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;

 private:
  std::vector<Node> nodes_;  // pre-order; nodes_[0] is the root
  std::vector<LeafModel> leaves_;
};

/// Leaf statistics from raw samples; votes are compressed to `vote_cap`
/// weighted centres per action when needed.
LeafModel make_leaf(std::span<const PatchSample> samples, int action_count, int vote_cap,
                    std::uint64_t seed);

/// Classification: information gain in bits over the labels. Regression:
/// reduction of the trace of the foreground offset covariance, children
/// weighted by their share of foreground samples. An empty side scores -inf.
double split_goodness(std::span<const PatchSample> samples, std::span<const std::uint8_t> goes_left,
                      Goodness mode);

double split_goodness(const SplitTest& test, std::span<const PatchSample> samples,
                      std::span<const LabeledFrame> frames, Goodness mode);

RegressionTree train_tree(std::span<const PatchSample> samples, std::span<const LabeledFrame> frames,
                          int action_count, const TreeConfig& config, std::uint64_t seed);

struct ConditionalForest {
  int joint = 0;
  int action_count = 1;
  /// Trees [0, train_trees) were grown on the training split, the rest on
  /// the validation split.
  int train_trees = 0;
  std::uint64_t seed = 0;
  TreeConfig config;
  std::vector<RegressionTree> trees;

  /// Forest restricted to trees [first, first + count).
  ConditionalForest subset(int first, int count) const;

  friend bool operator==(const ConditionalForest&, const ConditionalForest&) = default;
};

struct ForestTrainingConfig {
  PatchConfig patches;
  TreeConfig tree;
  int trees = 20;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Half the trees on `train`, half on `validation` (all on `train` when the
/// validation split is empty). Every tree draws its own patch sample.
ConditionalForest train_forest(std::span<const LabeledFrame> train,
                               std::span<const LabeledFrame> validation, int joint,
                               int action_count, const ForestTrainingConfig& config);

std::vector<std::uint8_t> encode_forest(const ConditionalForest& forest);
ConditionalForest decode_forest(std::span<const std::uint8_t> bytes);
void save_forest(const std::filesystem::path& path, const ConditionalForest& forest);
ConditionalForest load_forest(const std::filesystem::path& path);

}  // namespace acps
