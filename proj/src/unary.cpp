#include "acps/unary.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "acps/parallel.hpp"

namespace acps {

namespace {

using LeafLookup = std::function<const LeafModel&(int tree, int leaf)>;

std::vector<ScoreMap> accumulate_votes(const ConditionalForest& forest, const FeatureStack& stack,
                                       int actions, const LeafLookup& leaf_of, int threads) {
  const int w = stack.width(), h = stack.height();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  const int n_trees = static_cast<int>(forest.trees.size());

  std::vector<std::vector<double>> buffers(n_trees);
  parallel_for(n_trees, threads, [&](int t) {
    auto& buf = buffers[t];
    buf.assign(plane * actions, 0.0);
    const RegressionTree& tree = forest.trees[t];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const LeafModel& leaf = leaf_of(t, tree.leaf_index(stack, x, y));
        for (int a = 0; a < actions; ++a) {
          double* dst = buf.data() + plane * a;
          for (const Vote& v : leaf.actions[a].votes) {
            const long tx = x + std::lround(v.dx);
            const long ty = y + std::lround(v.dy);
            if (tx < 0 || ty < 0 || tx >= w || ty >= h) continue;
            dst[static_cast<std::size_t>(ty) * w + tx] += v.weight;
          }
        }
      }
    }
  });

  std::vector<ScoreMap> maps;
  const double inv = n_trees > 0 ? 1.0 / n_trees : 0.0;
  for (int a = 0; a < actions; ++a) {
    ScoreMap m(w, h, forest.joint, actions == 1 ? kMixedAction : a, stack.scale_factor());
    for (int t = 0; t < n_trees; ++t) {
      const double* src = buffers[t].data() + plane * a;
      for (std::size_t i = 0; i < plane; ++i) m.values[i] += src[i];
    }
    for (double& v : m.values) v *= inv;
    maps.push_back(std::move(m));
  }
  return maps;
}

void require_same_shape(std::span<const ScoreMap> maps) {
  if (maps.empty()) throw std::invalid_argument("no score maps given");
  for (const auto& m : maps) {
    if (m.width != maps[0].width || m.height != maps[0].height) {
      throw std::invalid_argument("score maps differ in dimensions");
    }
  }
}

ScoreMap weighted_sum(std::span<const ScoreMap> maps, std::span<const double> weights) {
  ScoreMap out(maps[0].width, maps[0].height, maps[0].joint, kMixedAction, maps[0].scale);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < maps.size(); ++a) s += weights[a] * maps[a].values[i];
    out.values[i] = s;
  }
  return out;
}

}  // namespace

std::vector<ScoreMap> vote_maps(const ConditionalForest& forest, const FeatureStack& stack,
                                int threads) {
  return accumulate_votes(
      forest, stack, forest.action_count,
      [&](int t, int l) -> const LeafModel& { return forest.trees[t].leaves()[l]; }, threads);
}

ScoreMap pooled_vote_map(const ConditionalForest& forest, const FeatureStack& stack, int threads) {
  std::vector<std::vector<LeafModel>> pooled(forest.trees.size());
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    for (const auto& leaf : forest.trees[t].leaves()) pooled[t].push_back(leaf.pooled());
  }
  auto maps = accumulate_votes(
      forest, stack, 1, [&](int t, int l) -> const LeafModel& { return pooled[t][l]; }, threads);
  return std::move(maps[0]);
}

ScoreMap mix_prior(std::span<const ScoreMap> per_action, const ActionPrior& prior) {
  require_same_shape(per_action);
  if (prior.size() != static_cast<int>(per_action.size())) {
    throw std::invalid_argument("mix_prior: prior covers " + std::to_string(prior.size()) +
                                " actions, maps cover " + std::to_string(per_action.size()));
  }
  return weighted_sum(per_action, prior.probs);
}

ScoreMap apply_sharing(std::span<const ScoreMap> per_action, std::span<const double> gamma) {
  require_same_shape(per_action);
  if (gamma.size() != per_action.size()) throw std::invalid_argument("apply_sharing: size mismatch");
  double sum = 0.0;
  for (double g : gamma) {
    if (!(g >= -1e-6)) throw std::invalid_argument("apply_sharing: negative sharing weight");
    sum += g;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("apply_sharing: weights off the simplex");
  return weighted_sum(per_action, gamma);
}

namespace {
std::vector<double> kernel_1d(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("smooth: sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  for (int d = -r; d <= r; ++d) k[d + r] = std::exp(-(d * d) / (sigma * sigma));
  return k;
}
}  // namespace

double smoothing_kernel_sum(double sigma) {
  double s = 0.0;
  for (double v : kernel_1d(sigma)) s += v;
  return s * s;
}

ScoreMap smooth(const ScoreMap& map, double sigma) {
  const auto k = kernel_1d(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int w = map.width, h = map.height;
  ScoreMap tmp = map, out = map;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = std::max(-r, -x); d <= std::min(r, w - 1 - x); ++d) s += k[d + r] * map.at(x + d, y);
      tmp.at(x, y) = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = std::max(-r, -y); d <= std::min(r, h - 1 - y); ++d) s += k[d + r] * tmp.at(x, y + d);
      out.at(x, y) = s;
    }
  }
  return out;
}

FeatureStack to_feature_stack(const ScoreMap& map) {
  std::vector<float> data(map.values.begin(), map.values.end());
  return FeatureStack(map.width, map.height, 1, std::move(data), map.scale);
}

}  // namespace acps
