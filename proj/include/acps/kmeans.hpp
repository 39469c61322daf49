#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace acps {

struct KMeansOptions {
  int restarts = 10;
  int max_iterations = 100;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  int dim = 0;
  std::vector<double> centers;  // k rows of `dim`
  std::vector<int> assignment;
  /// Weighted within-cluster sum of squared distances.
  double objective = 0.0;
  /// Objective after each Lloyd iteration of the winning restart.
  std::vector<double> history;

  int k() const { return dim == 0 ? 0 : static_cast<int>(centers.size()) / dim; }
  std::span<const double> center(int c) const {
    return std::span<const double>(centers).subspan(static_cast<std::size_t>(c) * dim, dim);
  }
};

/// Weighted Lloyd iterations with k-means++ seeding. `points` holds n rows of
/// `dim` values; `weights` may be empty (all ones). Zero-weight points are
/// assigned but never seed or move a center. Restart r draws from
/// mix_seed(seed, r), so a run with more restarts replays the shorter run's
/// candidates first; the lowest objective wins with ties to the earliest.
/// Empty clusters are reseeded at the point farthest from its center.
KMeansResult weighted_kmeans(std::span<const double> points, int dim,
                             std::span<const double> weights, int k,
                             const KMeansOptions& options);

/// Number of distinct rows among points with positive weight.
int count_distinct_rows(std::span<const double> points, int dim,
                        std::span<const double> weights = {});

}  // namespace acps
