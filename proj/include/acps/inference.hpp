#pragma once

#include <span>
#include <vector>

#include "acps/core.hpp"
#include "acps/pairwise.hpp"
#include "acps/unary.hpp"

namespace acps {

/// Values below this are raised to it before taking logs.
inline constexpr double kUnaryFloor = 1e-12;

/// Result of passing a child's log-score field through one deformation
/// term (or the max over all of an edge's clusters).
struct Message {
  int width = 0;
  int height = 0;
  std::vector<double> score;  // log domain, may be -inf
  std::vector<int> child;     // flat index y * width + x of the best child location
  std::vector<int> cluster;   // index into the edge's cluster list

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

/// out(p) = max_q [score(q) + log w - 1/2 (q - p - mu)^T Sigma^-1 (q - p - mu)].
/// Axis-aligned covariances use two separable lower-envelope passes. A
/// rotated covariance is handled exactly by completing the square along x:
/// every row gets its own lower envelope, queried at a sheared position, and
/// the remaining y term is maximised with pruning by the row maxima.
Message distance_transform(const ScoreMap& log_score, const DeformationCluster& cluster);

/// O(n^2) reference with the same tie rule (smallest y, then x).
Message distance_transform_brute(const ScoreMap& log_score, const DeformationCluster& cluster);

/// log(max(v, kUnaryFloor)) pointwise.
ScoreMap log_unary(const ScoreMap& map);

struct PoseEstimate {
  Pose pose;
  std::vector<double> unary_log;  // per joint, at the chosen location
  std::vector<int> clusters;      // per joint; -1 for the root
  int scale_index = 0;
  double log_posterior = 0.0;
};

/// Exact MAP over the tree. `unaries` are likelihood maps (one per joint,
/// same size), floored and logged internally. Every non-root joint needs an
/// edge in `pairwise` whose parent matches the tree.
PoseEstimate max_product(const KinematicTree& tree, std::span<const ScoreMap> unaries,
                         const PairwiseModel& pairwise);

/// Sum of log unaries plus, per edge, the best cluster's log deformation
/// score for the given configuration. Locations are rounded to pixels.
double score_configuration(const KinematicTree& tree, std::span<const ScoreMap> unaries,
                           const PairwiseModel& pairwise, const Pose& pose);

/// Runs max_product on every level and keeps the highest posterior (ties to
/// the finer level). Coordinates are mapped back to level 0 by dividing by
/// factor^i.
PoseEstimate infer_multiscale(const KinematicTree& tree,
                              std::span<const std::vector<ScoreMap>> levels,
                              const PairwiseModel& pairwise, double factor, int threads = 1);

}  // namespace acps
