#pragma once

#include <span>
#include <vector>

#include "acps/core.hpp"
#include "acps/forest.hpp"

namespace acps {

inline constexpr int kMixedAction = -1;

/// Per-pixel joint likelihood. Values are stored in double precision so that
/// algebraic identities between mixing routes hold to 1e-9.
struct ScoreMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  int joint = 0;
  int action = kMixedAction;
  double scale = 1.0;

  ScoreMap() = default;
  ScoreMap(int w, int h, int joint_id = 0, int action_id = kMixedAction, double s = 1.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0), joint(joint_id),
        action(action_id), scale(s) {}

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
};

/// Dense voting: every pixel's patch is routed through every tree and each
/// stored vote adds weight / |F| at pixel + offset (rounded to the nearest
/// pixel; votes landing outside the map are dropped). Returns one map per
/// action of the forest. Trees are evaluated in parallel into private
/// buffers that are summed in tree order.
std::vector<ScoreMap> vote_maps(const ConditionalForest& forest, const FeatureStack& stack,
                                int threads = 1);

/// Vote map of the action-pooled leaves (uniform action weights).
ScoreMap pooled_vote_map(const ConditionalForest& forest, const FeatureStack& stack,
                         int threads = 1);

ScoreMap mix_prior(std::span<const ScoreMap> per_action, const ActionPrior& prior);

/// Pointwise sum of gamma[a'] * map[a']; gamma must lie on the simplex (1e-6).
ScoreMap apply_sharing(std::span<const ScoreMap> per_action, std::span<const double> gamma);

/// Convolution with the unnormalised kernel exp(-|d|^2 / sigma^2), truncated
/// to a (2r+1)^2 window with r = ceil(3 sigma). No border renormalisation.
ScoreMap smooth(const ScoreMap& map, double sigma);

/// Sum of the truncated 2-D kernel used by smooth().
double smoothing_kernel_sum(double sigma);

/// Single-channel FSTK view of a map (float32).
FeatureStack to_feature_stack(const ScoreMap& map);

}  // namespace acps
