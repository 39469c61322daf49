#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "acps/core.hpp"
#include "acps/unary.hpp"

namespace acps {

struct PixelPeak {
  int x = 0;
  int y = 0;
  double value = 0.0;
};

/// Strict 8-neighbourhood maxima of `map`, strongest first, with greedy
/// suppression of peaks within `nms_radius` of an accepted one. Peaks within
/// `exclusion` px of `gt` are skipped. Plateaus yield no modes.
std::vector<PixelPeak> mine_negatives(const ScoreMap& map, Point2 gt, int count = 10,
                                      double exclusion = 5.0, double nms_radius = 5.0);

/// Smoothed per-action responses for one joint of one validation image.
struct JointResponses {
  std::vector<double> positive;                // phi*(x_gt | a') for every a'
  std::vector<std::vector<double>> negatives;  // one vector per mined location
};

struct SharingImage {
  std::vector<JointResponses> joints;
};

struct SharingProblem {
  int action = 0;
  std::vector<SharingImage> images;
};

struct SharingConfig {
  double lambda = 0.4;
  /// Temperature of the log-sum-exp soft maximum over negatives.
  double temperature = 1.0;
  int max_iterations = 2000;
  double relative_tolerance = 1e-7;
  double initial_step = 0.1;
};

double sharing_objective(std::span<const double> gamma, const SharingProblem& problem,
                         const SharingConfig& config);
std::vector<double> sharing_gradient(std::span<const double> gamma, const SharingProblem& problem,
                                     const SharingConfig& config);

/// Euclidean projection onto the probability simplex.
std::vector<double> project_to_simplex(std::span<const double> v);

struct SharingFit {
  std::vector<double> gamma;
  std::vector<double> objective_trace;  // accepted iterates, starting at uniform
  int iterations = 0;
};

/// Projected gradient ascent with backtracking from the uniform start.
SharingFit fit_sharing(const SharingProblem& problem, int action_count, const SharingConfig& config);

struct SharingWeights {
  /// gamma[a] is the sharing vector used for action a.
  std::vector<std::vector<double>> gamma;

  int action_count() const { return static_cast<int>(gamma.size()); }
  static SharingWeights identity(int actions);
};

/// problems[a] must hold the validation images of action a. Throws
/// std::invalid_argument naming every action without data.
SharingWeights learn_sharing(std::span<const SharingProblem> problems, int action_count,
                             const SharingConfig& config, int threads = 1);

/// Collects responses for one image and joint from the smoothed per-action
/// maps. Negatives are mined on the uniform mixture of those maps.
JointResponses collect_responses(std::span<const ScoreMap> smoothed_per_action, Point2 gt,
                                 int negatives = 10, double exclusion = 5.0,
                                 double nms_radius = 5.0);

/// Text matrix, one row per action, 9 significant digits.
std::string sharing_to_text(const SharingWeights& w);
SharingWeights sharing_from_text(const std::string& text);
void save_sharing(const std::filesystem::path& path, const SharingWeights& w);
SharingWeights load_sharing(const std::filesystem::path& path);

}  // namespace acps
