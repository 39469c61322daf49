#include <cmath>
#include <random>

#include "acps/forest.hpp"
#include "acps/unary.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace acps;
using acps::testing::random_map;

namespace {

// Depth-1 tree: pixels whose channel-0 value is >= 0.5 reach `hot`, the rest
// reach `cold`.
RegressionTree switch_tree(LeafModel cold, LeafModel hot) {
  RegressionTree::Node root;
  root.leaf = false;
  root.split = {0, 0, 0, 0.5f};
  root.left = 1;
  root.right = 2;
  RegressionTree::Node l, r;
  l.leaf_index = 0;
  l.depth = r.depth = 1;
  r.leaf_index = 1;
  return RegressionTree({root, l, r}, {std::move(cold), std::move(hot)});
}

LeafModel leaf_with(std::vector<ActionLeaf> actions) { return LeafModel{std::move(actions)}; }

ActionLeaf action_leaf(double p, std::vector<Vote> votes) {
  ActionLeaf a;
  a.samples = 10;
  a.p_foreground = p;
  a.votes = std::move(votes);
  return a;
}

ConditionalForest forest_of(std::vector<RegressionTree> trees, int actions) {
  ConditionalForest f;
  f.action_count = actions;
  f.trees = std::move(trees);
  f.train_trees = static_cast<int>(f.trees.size());
  return f;
}

double total(const ScoreMap& m) {
  double s = 0.0;
  for (double v : m.values) s += v;
  return s;
}

}  // namespace

TEST_CASE("a single hot patch votes at patch + offset") {
  FeatureStack stack(12, 10, 1);
  stack.at(0, 5, 5) = 1.0f;
  const LeafModel cold = leaf_with({action_leaf(0.0, {})});
  const LeafModel hot = leaf_with({action_leaf(1.0, {{2, 0, 1.0}})});
  const auto maps = vote_maps(forest_of({switch_tree(cold, hot)}, 1), stack);
  REQUIRE(maps.size() == 1);
  const ScoreMap& m = maps[0];
  int best = 0;
  for (std::size_t i = 1; i < m.size(); ++i) {
    if (m.values[i] > m.values[best]) best = static_cast<int>(i);
  }
  CHECK(best % 12 == 7);
  CHECK(best / 12 == 5);
  CHECK(m.at(7, 5) == 1.0);
  CHECK(total(m) == 1.0);
}

TEST_CASE("zero foreground probability gives an all-zero map") {
  std::mt19937_64 rng(1);
  FeatureStack stack(9, 9, 1);
  std::uniform_real_distribution<float> u(0, 1);
  for (float& v : stack.data()) v = u(rng);
  const LeafModel zero = leaf_with({action_leaf(0.0, {}), action_leaf(0.0, {})});
  const auto maps = vote_maps(forest_of({switch_tree(zero, zero)}, 2), stack);
  for (const auto& m : maps) CHECK(total(m) == 0.0);
}

TEST_CASE("two trees average their single-tree maps") {
  std::mt19937_64 rng(2);
  FeatureStack stack(14, 11, 1);
  std::bernoulli_distribution coin(0.3);
  for (float& v : stack.data()) v = coin(rng) ? 1.0f : 0.0f;
  const LeafModel cold = leaf_with({action_leaf(0.2, {{0, 1, 0.2}})});
  const RegressionTree t1 = switch_tree(cold, leaf_with({action_leaf(0.9, {{3, -1, 0.5}, {-2, 2, 0.4}})}));
  const RegressionTree t2 = switch_tree(cold, leaf_with({action_leaf(0.6, {{-4, 0, 0.6}})}));
  const ScoreMap a = vote_maps(forest_of({t1}, 1), stack)[0];
  const ScoreMap b = vote_maps(forest_of({t2}, 1), stack)[0];
  const ScoreMap both = vote_maps(forest_of({t1, t2}, 1), stack)[0];
  for (std::size_t i = 0; i < both.size(); ++i) {
    CHECK(both.values[i] == doctest::Approx(0.5 * (a.values[i] + b.values[i])).epsilon(1e-12));
  }
}

TEST_CASE("votes never create mass") {
  std::mt19937_64 rng(3);
  FeatureStack stack(10, 8, 1);
  std::uniform_real_distribution<float> u(0, 1);
  for (float& v : stack.data()) v = u(rng);
  const LeafModel cold = leaf_with({action_leaf(0.3, {{1, 1, 0.1}, {0, 0, 0.2}}), action_leaf(0.0, {})});
  const LeafModel hot = leaf_with({action_leaf(0.7, {{-1, 0, 0.7}}), action_leaf(0.5, {{9, 9, 0.5}})});
  const auto maps = vote_maps(forest_of({switch_tree(cold, hot)}, 2), stack);
  CHECK(total(maps[0]) <= 80 * 0.7 + 1e-9);
  CHECK(total(maps[1]) <= 80 * 0.5 + 1e-9);
  for (const auto& m : maps) {
    for (double v : m.values) CHECK(v >= 0.0);
  }
}

TEST_CASE("mix_prior on hand fixtures") {
  ScoreMap m1(2, 2), m2(2, 2);
  m1.values = {1, 2, 3, 4};
  m2.values = {4, 0, 2, 8};
  const ScoreMap maps[] = {m1, m2};
  CHECK(mix_prior(maps, ActionPrior::hard(2, 1)).values == m2.values);
  CHECK(mix_prior(maps, ActionPrior::uniform(2)).values == std::vector<double>{2.5, 1, 2.5, 6});
  const ScoreMap mixed = mix_prior(maps, ActionPrior::soft({0.3, 0.7}));
  const double expect[] = {0.3 * 1 + 0.7 * 4, 0.3 * 2, 0.3 * 3 + 0.7 * 2, 0.3 * 4 + 0.7 * 8};
  for (int i = 0; i < 4; ++i) CHECK(mixed.values[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  CHECK_THROWS_AS(mix_prior(maps, ActionPrior::uniform(3)), std::invalid_argument);
  const ScoreMap odd[] = {m1, ScoreMap(3, 2)};
  CHECK_THROWS_AS(mix_prior(odd, ActionPrior::uniform(2)), std::invalid_argument);
}

TEST_CASE("apply_sharing on hand fixtures") {
  ScoreMap m1(2, 2), m2(2, 2);
  m1.values = {1, 2, 3, 4};
  m2.values = {4, 0, 2, 8};
  const ScoreMap maps[] = {m1, m2};
  const double one_hot[] = {1.0, 0.0};
  CHECK(apply_sharing(maps, one_hot).values == m1.values);
  const double g[] = {0.25, 0.75};
  const ScoreMap s = apply_sharing(maps, g);
  const double expect[] = {3.25, 0.5, 2.25, 7.0};
  for (int i = 0; i < 4; ++i) CHECK(s.values[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  const double off[] = {0.5, 0.6};
  CHECK_THROWS_AS(apply_sharing(maps, off), std::invalid_argument);
  const double neg[] = {-0.5, 1.5};
  CHECK_THROWS_AS(apply_sharing(maps, neg), std::invalid_argument);
}

TEST_CASE("uniform prior and uniform sharing agree pointwise") {
  std::mt19937_64 rng(4);
  for (int A = 1; A <= 5; ++A) {
    std::vector<ScoreMap> maps;
    for (int a = 0; a < A; ++a) maps.push_back(random_map(rng, 7, 6, 0.0, 3.0));
    const std::vector<double> g(A, 1.0 / A);
    const ScoreMap p = mix_prior(maps, ActionPrior::uniform(A));
    const ScoreMap s = apply_sharing(maps, g);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p.values[i] - s.values[i]) <= 1e-12);
  }
}

TEST_CASE("mixing is linear and keeps maps nonnegative") {
  std::mt19937_64 rng(5);
  std::vector<ScoreMap> x, y, sum;
  for (int a = 0; a < 3; ++a) {
    x.push_back(random_map(rng, 5, 5));
    y.push_back(random_map(rng, 5, 5));
    ScoreMap s = x.back();
    for (std::size_t i = 0; i < s.size(); ++i) s.values[i] += y.back().values[i];
    sum.push_back(s);
  }
  const ActionPrior p = ActionPrior::soft({0.2, 0.5, 0.3});
  const ScoreMap mx = mix_prior(x, p), my = mix_prior(y, p), ms = mix_prior(sum, p);
  for (std::size_t i = 0; i < ms.size(); ++i) {
    CHECK(ms.values[i] == doctest::Approx(mx.values[i] + my.values[i]).epsilon(1e-12));
    CHECK(mx.values[i] >= 0.0);
  }
}

TEST_CASE("smoothing a delta stamps the unnormalised kernel") {
  ScoreMap m(31, 31);
  m.at(15, 15) = 1.0;
  const ScoreMap s = smooth(m, 3.0);
  CHECK(s.at(15, 15) == 1.0);
  CHECK(s.at(16, 15) == doctest::Approx(std::exp(-1.0 / 9.0)).epsilon(1e-14));
  CHECK(s.at(17, 17) == doctest::Approx(std::exp(-8.0 / 9.0)).epsilon(1e-14));
  CHECK(s.at(15 + 9, 15) > 0.0);
  CHECK(s.at(15 + 10, 15) == 0.0);
}

TEST_CASE("smoothing a constant map scales interior pixels by the kernel sum") {
  const double sigma = 3.0, v = 0.7;
  const int r = 9;
  double direct = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) direct += std::exp(-(dx * dx + dy * dy) / (sigma * sigma));
  }
  CHECK(smoothing_kernel_sum(sigma) == doctest::Approx(direct).epsilon(1e-12));
  ScoreMap m(40, 40);
  for (double& x : m.values) x = v;
  const ScoreMap s = smooth(m, sigma);
  CHECK(s.at(20, 20) == doctest::Approx(v * direct).epsilon(1e-12));
  CHECK(s.at(0, 0) < s.at(20, 20));  // border pixels lose mass
}

TEST_CASE("smoothing is linear and translation-equivariant") {
  std::mt19937_64 rng(6);
  const ScoreMap a = random_map(rng, 30, 24), b = random_map(rng, 30, 24);
  ScoreMap ab = a;
  for (std::size_t i = 0; i < ab.size(); ++i) ab.values[i] += b.values[i];
  const ScoreMap sa = smooth(a, 1.5), sb = smooth(b, 1.5), sab = smooth(ab, 1.5);
  for (std::size_t i = 0; i < sab.size(); ++i) {
    CHECK(sab.values[i] == doctest::Approx(sa.values[i] + sb.values[i]).epsilon(1e-12));
  }
  ScoreMap shifted(30, 24);
  for (int y = 0; y < 24; ++y) {
    for (int x = 1; x < 30; ++x) shifted.at(x, y) = a.at(x - 1, y);
  }
  const ScoreMap ss = smooth(shifted, 1.5);
  // Interior: farther than the kernel radius (5) from every border.
  for (int y = 6; y < 18; ++y) {
    for (int x = 7; x < 23; ++x) CHECK(ss.at(x, y) == doctest::Approx(sa.at(x - 1, y)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(smooth(a, 0.0), std::invalid_argument);
}

TEST_CASE("score map exports as a one-channel stack") {
  std::mt19937_64 rng(7);
  const ScoreMap m = random_map(rng, 6, 4);
  const FeatureStack s = to_feature_stack(m);
  CHECK(s.channels() == 1);
  CHECK(s.at(0, 3, 5) == static_cast<float>(m.at(5, 3)));
}
