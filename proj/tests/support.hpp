#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "acps/core.hpp"
#include "acps/pairwise.hpp"
#include "acps/unary.hpp"

namespace acps::testing {

inline ScoreMap random_map(std::mt19937_64& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
  ScoreMap m(w, h);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : m.values) v = u(rng);
  return m;
}


/// Random rooted tree over J joints with a random root.
inline KinematicTree random_tree(std::mt19937_64& rng, int J) {
  std::vector<int> perm(J);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  KinematicTree t;
  for (int j = 0; j < J; ++j) t.joints.push_back("j" + std::to_string(j));
  t.root = perm[0];
  for (int i = 1; i < J; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    t.edges.push_back({perm[i], perm[pick(rng)]});
  }
  return t;
}

inline Cov2 random_cov(std::mt19937_64& rng, bool rotated) {
  std::uniform_real_distribution<double> s(0.5, 8.0), ang(0.0, 3.141592653589793);
  const double a = s(rng), b = s(rng);
  if (!rotated) return {a, 0.0, b};
  const double t = ang(rng), c = std::cos(t), n = std::sin(t);
  return {a * c * c + b * n * n, (a - b) * c * n, a * n * n + b * c * c};
}

inline PairwiseModel random_pairwise(std::mt19937_64& rng, const KinematicTree& tree, int K,
                                     bool allow_rotated = true) {
  std::uniform_real_distribution<double> mu(-3.0, 3.0), wt(0.2, 1.0);
  std::bernoulli_distribution rot(0.5);
  PairwiseModel m;
  for (const Edge& e : tree.edges) {
    EdgeModel em{e.child, e.parent, {}};
    for (int k = 0; k < K; ++k) {
      em.clusters.push_back({{mu(rng), mu(rng)}, random_cov(rng, allow_rotated && rot(rng)), wt(rng), k});
    }
    m.edges.push_back(std::move(em));
  }
  return m;
}

}  // namespace acps::testing
