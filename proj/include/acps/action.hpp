#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "acps/core.hpp"

namespace acps {

inline constexpr int kCompletedJoints = 15;
inline constexpr int kNeck = 13;
inline constexpr int kBelly = 14;

/// Appends neck = mean(head, shoulder midpoint) and belly = mean of both
/// shoulders and hips to a 13-joint pose.
Pose complete_joints(const Pose& pose);

/// Hip midpoint at the origin, unit neck-to-belly distance (floored 1e-6).
Pose normalize_pose(const Pose& completed);

/// Edges of the 15-joint skeleton used for orientation descriptors.
const std::vector<Edge>& skeleton_edges();

enum class DescriptorKind { coordinate, distance, orientation, coordinate_delta, orientation_delta };

struct DescriptorType {
  std::string name;
  DescriptorKind kind;
  int dim = 0;
};

/// Every joint, joint pair and skeleton edge stream, in a fixed order.
const std::vector<DescriptorType>& descriptor_registry();

struct DescriptorSet {
  /// streams[t] holds the samples of descriptor type t, each of
  /// descriptor_registry()[t].dim values.
  std::vector<std::vector<std::vector<double>>> streams;
};

/// Per-frame coordinates, pairwise distances and edge orientations (sin, cos)
/// of the normalised 15-joint poses, plus frame-to-frame differences of the
/// coordinates and orientations. Throws std::invalid_argument for fewer than
/// two frames.
DescriptorSet compute_descriptors(std::span<const Pose> sequence);

struct Codebook {
  int type = 0;
  int dim = 0;
  std::vector<std::vector<double>> centers;
  double compactness = 0.0;

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

/// Best of `restarts` k-means runs by compactness (within-cluster sum of
/// squares). Throws std::invalid_argument with fewer than k distinct samples.
Codebook build_codebook(std::span<const std::vector<double>> samples, int k, int restarts,
                        std::uint64_t seed);

/// Hard-assignment histogram, L1-normalised; an empty stream is uniform.
std::vector<double> video_histogram(std::span<const std::vector<double>> stream,
                                    const Codebook& codebook);

/// 1/2 sum (h - g)^2 / (h + g), skipping bins where h + g = 0.
double chi2_distance(std::span<const double> h, std::span<const double> g);

/// histograms[video][channel].
using HistogramTable = std::vector<std::vector<std::vector<double>>>;

struct KernelMatrix {
  std::vector<std::vector<double>> values;
  /// Off-diagonal mean distance per channel; 0 marks a dropped channel.
  std::vector<double> channel_means;
  int channels_used = 0;
};

/// K(i, j) = exp(-(1/L) sum_t D_t(i, j) / mu_t) over channels whose distance
/// is not identically zero. Throws std::invalid_argument for fewer than two
/// videos.
KernelMatrix build_kernel(const HistogramTable& histograms);

/// Kernel values between one video and every reference video, using the
/// channel means of a training kernel.
std::vector<double> kernel_row(const std::vector<std::vector<double>>& histograms,
                               const HistogramTable& reference,
                               std::span<const double> channel_means);

struct BinarySvm {
  std::vector<double> alpha;
  std::vector<int> labels;  // +1 / -1 per training video
  double bias = 0.0;
  int iterations = 0;

  double decision(std::span<const double> kernel_row) const;

  friend bool operator==(const BinarySvm&, const BinarySvm&) = default;
};

/// Soft-margin dual on a precomputed kernel, solved by SMO with maximal
/// violating pairs until the violation drops below `tolerance`.
BinarySvm train_binary_svm(const std::vector<std::vector<double>>& kernel, std::span<const int> labels,
                           double C, double tolerance = 1e-3, int max_iterations = 1000000);

/// Largest KKT violation m(alpha) - M(alpha) of a solution.
double kkt_violation(const BinarySvm& svm, const std::vector<std::vector<double>>& kernel, double C);

struct ActionClassifierConfig {
  int codebook_size = 20;
  int restarts = 8;
  double C = 100.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct ActionModel {
  int action_count = 0;
  double C = 100.0;
  double temperature = 1.0;
  /// One entry per registry type; types without a usable codebook have no
  /// centers and are left out of the kernel.
  std::vector<Codebook> codebooks;
  std::vector<double> channel_means;
  HistogramTable train_histograms;
  std::vector<int> train_labels;
  std::vector<BinarySvm> svms;  // one-vs-all, per action

  std::vector<std::vector<double>> histograms(std::span<const Pose> sequence) const;
  std::vector<double> decision_values(std::span<const Pose> sequence) const;

  friend bool operator==(const ActionModel&, const ActionModel&) = default;
};

/// One-vs-all SVMs over the multi-channel chi-square kernel. Codebook sizes
/// shrink to the number of distinct samples of a type; types with fewer than
/// two are dropped. Throws std::invalid_argument if some action has no video.
ActionModel train_svm(std::span<const std::vector<Pose>> videos, std::span<const int> labels,
                      int action_count, const ActionClassifierConfig& config);

/// softmax(f / temperature) over the decision values, or the one-hot argmax
/// (ties to the lowest index) when `mode` is hard.
ActionPrior prior_from_decisions(std::span<const double> decisions, double temperature, PriorMode mode);

ActionPrior predict_prior(std::span<const Pose> sequence, const ActionModel& model,
                          PriorMode mode = PriorMode::soft);

void save_action_model(const std::filesystem::path& dir, const ActionModel& model);
ActionModel load_action_model(const std::filesystem::path& dir);

}  // namespace acps
