#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acps/action.hpp"
#include "acps/core.hpp"
#include "acps/forest.hpp"
#include "acps/inference.hpp"
#include "acps/pairwise.hpp"
#include "acps/sharing.hpp"
#include "acps/synthetic.hpp"
#include "acps/unary.hpp"

namespace acps {

enum class ConditionMode { independent, cond_hard, cond_soft };
enum class PriorSource { predicted, ground_truth };

std::string to_string(ConditionMode m);
ConditionMode condition_mode_from_string(const std::string& s);

struct AcpsConfig {
  ConditionMode unary = ConditionMode::independent;
  bool sharing = false;
  ConditionMode binary = ConditionMode::independent;
  /// 1 = uniform-prior pass only; each further pass re-estimates the prior
  /// from the previous pass's poses.
  int iterations = 2;
  int scales = 4;
  double factor = 0.8;
  PriorSource prior_source = PriorSource::predicted;

  /// Row label such as "Cond.hard+AS".
  std::string unary_label() const;
  std::string binary_label() const;
};

struct Models {
  KinematicTree tree = KinematicTree::body();
  std::vector<std::string> action_names;
  std::vector<ConditionalForest> forests;  // one per joint
  std::optional<PairwiseStatistics> pairwise;
  std::optional<SharingWeights> sharing;
  std::optional<ActionModel> action;

  int action_count() const { return static_cast<int>(action_names.size()); }
};

/// Pose sequences the action classifier is trained on.
enum class ActionTrainingSource {
  estimated,     // pass-1 estimates from the trees not trained on the video
  ground_truth,  // annotated poses
};

struct TrainingConfig {
  ForestTrainingConfig forest;
  PairwiseFitOptions pairwise;
  SharingConfig sharing;
  ActionClassifierConfig action;
  double smoothing_sigma = 3.0;
  int negatives = 10;
  double negative_exclusion = 5.0;
  double nms_radius = 5.0;
  ActionTrainingSource action_source = ActionTrainingSource::estimated;
  int scales = 4;  // pyramid used for the estimated training poses
  double factor = 0.8;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Per action, the first ceil(n/2) of its videos form the training split and
/// the rest the validation split.
struct Split {
  std::vector<int> train;
  std::vector<int> validation;
};
Split split_training_videos(const Dataset& dataset);

std::vector<ConditionalForest> train_forests(const Dataset& dataset, const Split& split,
                                             const TrainingConfig& config);
/// Deformation statistics from the ground-truth poses of every training video.
PairwiseStatistics fit_pairwise_model(const Dataset& dataset, const TrainingConfig& config);
/// Applies the training-split trees to the validation videos and fits one
/// sharing vector per action on the smoothed responses.
SharingWeights learn_sharing_weights(const Dataset& dataset, const Split& split,
                                     std::span<const ConditionalForest> forests,
                                     const TrainingConfig& config);
/// Uniform-prior estimates for every video of the dataset, each from the
/// half of the forest that did not see it: training-split videos use the
/// validation trees and vice versa. `models` needs forests and pairwise.
std::vector<std::vector<Pose>> held_out_poses(const Dataset& dataset, const Split& split,
                                              const Models& models, int scales, double factor,
                                              int threads = 1);

/// Classifier over one pose sequence per training video, taken from
/// held_out_poses or from the annotations depending on config.action_source.
ActionModel train_action_model(const Dataset& dataset, const Split& split, const Models& models,
                               const TrainingConfig& config);

Models train_models(const Dataset& dataset, const TrainingConfig& config);

/// Per-action vote maps of every joint at every pyramid level:
/// maps[level][joint][action].
struct FrameEvidence {
  std::vector<std::vector<std::vector<ScoreMap>>> maps;
};

FrameEvidence compute_evidence(const FeatureStack& stack, const Models& models, int scales,
                               double factor);

/// Unary maps of one pyramid level under the given mode and prior.
std::vector<ScoreMap> unaries_for(const FrameEvidence& evidence, int level, ConditionMode mode,
                                  bool sharing, const ActionPrior& prior, const Models& models);

struct VideoResult {
  std::vector<PoseEstimate> poses;
  ActionPrior prior;  // prior used by the returned pass
  std::vector<PoseEstimate> first_pass;
};

/// Pass 1 under the uniform prior, then iterations - 1 conditioned passes.
/// Throws ModelError when the config needs a component that is missing.
VideoResult run_acps(const Video& video, const Models& models, const AcpsConfig& config,
                     int threads = 1);

/// Runs several configs on one video, sharing the vote maps and pass 1.
/// Every config must use the same pyramid settings.
std::vector<VideoResult> run_acps_grid(const Video& video, const Models& models,
                                       std::span<const AcpsConfig> configs, int threads = 1);

struct ApkResult {
  std::vector<double> per_joint;
  double mean = 0.0;
  int frames = 0;
};

/// Fraction of frames whose joint lies within threshold * person_size of the
/// ground truth, per joint, and the mean over joints.
ApkResult apk(std::span<const std::vector<Pose>> predictions,
              std::span<const VideoAnnotation> annotations, double threshold);

struct AblationCell {
  AcpsConfig config;
  std::vector<double> apk;  // one per threshold
};

struct AblationTable {
  std::vector<double> thresholds;
  std::vector<AblationCell> cells;

  std::string to_text() const;
  std::string to_csv() const;
};

/// The 5 x 3 grid: unary rows Indep., Cond.hard, Cond.hard+AS, Cond.soft,
/// Cond.soft+AS against binary columns Indep., Cond.hard, Cond.soft.
std::vector<AcpsConfig> ablation_grid(const AcpsConfig& base);

AblationTable run_ablation(const Dataset& test, const Models& models,
                           std::span<const AcpsConfig> grid, std::span<const double> thresholds,
                           int threads = 1);

/// Binary PPM of one feature channel with the skeleton drawn on top.
void write_overlay(const std::filesystem::path& path, const FeatureStack& stack, int channel,
                   const Pose& pose, const KinematicTree& tree);

}  // namespace acps
