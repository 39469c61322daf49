#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "acps/core.hpp"

namespace acps {

struct Cov2 {
  double xx = 1.0;
  double xy = 0.0;
  double yy = 1.0;

  double det() const { return xx * yy - xy * xy; }
  friend bool operator==(const Cov2&, const Cov2&) = default;
};

/// Eigenvalues are clamped from below at `floor`.
Cov2 floor_eigenvalues(const Cov2& c, double floor);

inline constexpr double kCovarianceFloor = 1e-4;

struct DeformationCluster {
  Point2 mean;
  Cov2 cov;
  double weight = 1.0;
  int id = 0;

  friend bool operator==(const DeformationCluster&, const DeformationCluster&) = default;
};

/// w * exp(-1/2 (d - mu)^T Sigma^-1 (d - mu)).
double eval_cluster(const DeformationCluster& cluster, Point2 d);
/// log w - 1/2 (d - mu)^T Sigma^-1 (d - mu).
double log_eval_cluster(const DeformationCluster& cluster, Point2 d);

struct EdgeModel {
  int child = 0;
  int parent = 0;
  std::vector<DeformationCluster> clusters;

  friend bool operator==(const EdgeModel&, const EdgeModel&) = default;
};

struct PairwiseModel {
  double alpha = 0.1;
  std::string fitted_under = "none";
  std::vector<EdgeModel> edges;

  /// Edge whose child is `joint`; throws if absent.
  const EdgeModel& edge_for_child(int joint) const;

  friend bool operator==(const PairwiseModel&, const PairwiseModel&) = default;
};

struct TrainingPose {
  Pose pose;
  int action = 0;
};

struct PairwiseFitOptions {
  int clusters = 24;
  double alpha = 0.1;
  int restarts = 10;
  int max_iterations = 100;
  std::uint64_t seed = 0;
};

/// Offsets d = x_child - x_parent are clustered with (weighted) k-means;
/// each cluster becomes a Gaussian with floored covariance and weight
/// (weighted frequency)^alpha. With a prior, pose weights are
/// p_A(label); zero-weight poses are ignored.
PairwiseModel fit_pairwise(std::span<const TrainingPose> poses, const KinematicTree& tree,
                           const PairwiseFitOptions& options, const ActionPrior* prior = nullptr);

/// Per-cluster, per-action moments over a fixed (unweighted) clustering.
struct ClusterMoments {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;

  friend bool operator==(const ClusterMoments&, const ClusterMoments&) = default;
};

struct EdgeStatistics {
  int child = 0;
  int parent = 0;
  std::vector<std::vector<ClusterMoments>> clusters;  // [k][action]

  friend bool operator==(const EdgeStatistics&, const EdgeStatistics&) = default;
};

/// Clustering fitted once on all poses, with sufficient statistics kept per
/// action so the model can be re-weighted under any prior without re-running
/// k-means.
struct PairwiseStatistics {
  double alpha = 0.1;
  int action_count = 1;
  std::vector<EdgeStatistics> edges;

  /// Clusters that receive no weight under the prior are dropped.
  PairwiseModel condition(const ActionPrior& prior) const;

  friend bool operator==(const PairwiseStatistics&, const PairwiseStatistics&) = default;
};

PairwiseStatistics fit_pairwise_statistics(std::span<const TrainingPose> poses,
                                           const KinematicTree& tree, int action_count,
                                           const PairwiseFitOptions& options);

std::string pairwise_to_text(const PairwiseStatistics& stats);
PairwiseStatistics pairwise_from_text(const std::string& text);
void save_pairwise(const std::filesystem::path& path, const PairwiseStatistics& stats);
PairwiseStatistics load_pairwise(const std::filesystem::path& path);

/// Human-readable mu/Sigma/w table of a fitted model.
std::string describe_pairwise(const PairwiseModel& model);

}  // namespace acps
