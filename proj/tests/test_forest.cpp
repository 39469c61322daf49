#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "acps/errors.hpp"
#include "acps/forest.hpp"
#include "acps/synthetic.hpp"
#include "acps/unary.hpp"
#include "doctest.h"

using namespace acps;

namespace {

struct Fixture {
  Dataset ds;
  std::vector<LabeledFrame> frames;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    SyntheticSpec spec = SyntheticSpec::make(2, 11);
    spec.frames = 4;
    x.ds = generate_synthetic(spec, 4, 5);
    for (const auto& v : x.ds.videos) {
      for (std::size_t i = 0; i < v.frames.size(); ++i) {
        x.frames.push_back({&v.frames[i], v.annotation.frames[i], v.annotation.action});
      }
    }
    return x;
  }();
  return f;
}

ForestTrainingConfig small_config(std::uint64_t seed) {
  ForestTrainingConfig c;
  c.trees = 2;
  c.tree.max_depth = 6;
  c.tree.min_leaf = 5;
  c.tree.candidates = 60;
  c.tree.vote_cap = 8;
  c.patches.positives = 80;
  c.patches.negatives = 80;
  c.patches.images = 16;
  c.seed = seed;
  return c;
}

PatchSample sample(int label, double ox, double oy, int action = 0, int image = 0) {
  PatchSample s;
  s.image = image;
  s.label = label;
  s.offset = label ? Point2{ox, oy} : Point2{};
  s.action = action;
  return s;
}

void walk(const RegressionTree& t, int n, int depth, int& max_depth) {
  const auto& node = t.nodes()[n];
  max_depth = std::max(max_depth, depth);
  if (node.leaf) return;
  walk(t, node.left, depth + 1, max_depth);
  walk(t, node.right, depth + 1, max_depth);
}

}  // namespace

TEST_CASE("sample_patches honours counts, labels and the seed") {
  const auto& fx = fixture();
  PatchConfig pc;
  pc.positives = 100;
  pc.negatives = 100;
  pc.images = 10;
  pc.seed = 3;
  const auto a = sample_patches(fx.frames, joint::l_wrist, pc);
  REQUIRE(a.size() == 200);
  int pos = 0;
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& s : a) {
    pos += s.label;
    seen.insert({s.image, s.x, s.y});
    const Point2 gt = fx.frames[s.image].pose.joints[joint::l_wrist];
    const double d = std::hypot(s.x - gt.x, s.y - gt.y);
    if (s.label) {
      CHECK(d <= pc.positive_radius);
      CHECK(s.offset.x == doctest::Approx(gt.x - s.x));
      CHECK(s.offset.y == doctest::Approx(gt.y - s.y));
    } else {
      CHECK(d > pc.negative_exclusion);
      CHECK(s.offset.x == 0.0);
      CHECK(s.offset.y == 0.0);
    }
    CHECK(s.action == fx.frames[s.image].action);
  }
  CHECK(pos == 100);
  CHECK(seen.size() == 200);

  const auto b = sample_patches(fx.frames, joint::l_wrist, pc);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
  }

  pc.positives = 100000;
  CHECK_THROWS_AS(sample_patches(fx.frames, joint::l_wrist, pc), std::invalid_argument);
}

TEST_CASE("split goodness on hand fixtures") {
  std::vector<PatchSample> s;
  for (int i = 0; i < 4; ++i) s.push_back(sample(1, 0, 0));
  for (int i = 0; i < 4; ++i) s.push_back(sample(0, 0, 0));
  std::vector<std::uint8_t> pure = {1, 1, 1, 1, 0, 0, 0, 0};
  CHECK(split_goodness(s, pure, Goodness::classification) == doctest::Approx(1.0));
  std::vector<std::uint8_t> same_ratio = {1, 1, 0, 0, 1, 1, 0, 0};
  CHECK(split_goodness(s, same_ratio, Goodness::classification) == doctest::Approx(0.0));
  std::vector<std::uint8_t> all_left(8, 1);
  CHECK(split_goodness(s, all_left, Goodness::classification) == -INFINITY);

  std::vector<PatchSample> r;
  for (int i = 0; i < 5; ++i) r.push_back(sample(1, 5, 0));
  for (int i = 0; i < 5; ++i) r.push_back(sample(1, -5, 0));
  std::vector<std::uint8_t> halves = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  CHECK(split_goodness(r, halves, Goodness::regression) == doctest::Approx(25.0));
}

TEST_CASE("information gain is never negative") {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 200; ++t) {
    std::vector<PatchSample> s;
    std::vector<std::uint8_t> left;
    for (int i = 0; i < 20; ++i) {
      s.push_back(sample(coin(rng), 0, 0));
      left.push_back(coin(rng));
    }
    const double g = split_goodness(s, left, Goodness::classification);
    if (std::isfinite(g)) CHECK(g >= -1e-12);
  }
}

TEST_CASE("pure samples make a single leaf") {
  FeatureStack stack(16, 16, 1);
  const LabeledFrame frame{&stack, {}, 0};
  std::vector<PatchSample> s;
  for (int i = 0; i < 50; ++i) s.push_back(sample(1, i % 3, 1));
  TreeConfig cfg;
  cfg.min_leaf = 2;
  cfg.candidates = 20;
  const RegressionTree t = train_tree(s, std::span(&frame, 1), 1, cfg, 1);
  REQUIRE(t.nodes().size() == 1);
  CHECK(t.leaves()[0].actions[0].p_foreground == 1.0);
}

TEST_CASE("depth limit 0 leaves a single root leaf") {
  FeatureStack stack(16, 16, 1);
  const LabeledFrame frame{&stack, {}, 0};
  std::vector<PatchSample> s;
  for (int i = 0; i < 40; ++i) s.push_back(sample(i % 2, 1, 1));
  TreeConfig cfg;
  cfg.max_depth = 0;
  cfg.min_leaf = 1;
  const RegressionTree t = train_tree(s, std::span(&frame, 1), 1, cfg, 1);
  REQUIRE(t.nodes().size() == 1);
  CHECK(t.leaves()[0].actions[0].p_foreground == doctest::Approx(0.5));
  CHECK(t.leaves()[0].actions[0].samples == 40);
}

TEST_CASE("separable values: classification roots split into pure children") {
  // One constant stack per sample so the split value ignores the offset.
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> lo(0.0f, 1.0f), hi(5.0f, 6.0f);
  std::vector<FeatureStack> stacks;
  std::vector<PatchSample> s;
  for (int i = 0; i < 40; ++i) {
    const bool fg = i % 2 == 0;
    const float v = fg ? hi(rng) : lo(rng);
    stacks.emplace_back(4, 4, 1, std::vector<float>(16, v));
    s.push_back(sample(fg, 0, 0, 0, i));
  }
  std::vector<LabeledFrame> frames;
  for (const auto& st : stacks) frames.push_back({&st, {}, 0});

  // Enumerate every threshold between consecutive values: the best gain is 1 bit.
  std::vector<float> vals;
  for (const auto& st : stacks) vals.push_back(st.at(0, 0, 0));
  std::sort(vals.begin(), vals.end());
  double best = -INFINITY;
  for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
    SplitTest t{0, 0, 0, 0.5f * (vals[i] + vals[i + 1])};
    best = std::max(best, split_goodness(t, s, frames, Goodness::classification));
  }
  REQUIRE(best == doctest::Approx(1.0));

  TreeConfig cfg;
  cfg.max_depth = 1;
  cfg.min_leaf = 1;
  cfg.candidates = 200;
  cfg.window_radius = 1;
  int classification_roots = 0;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    const RegressionTree t = train_tree(s, frames, 1, cfg, seed);
    REQUIRE(t.nodes().size() == 3);
    const auto& root = t.nodes()[0];
    if (root.goodness != Goodness::classification) continue;
    ++classification_roots;
    CHECK(split_goodness(root.split, s, frames, Goodness::classification) == doctest::Approx(best));
    for (int child : {root.left, root.right}) {
      const double p = t.leaves()[t.nodes()[child].leaf_index].actions[0].p_foreground;
      CHECK((p == 0.0 || p == 1.0));
    }
  }
  CHECK(classification_roots > 0);
}

TEST_CASE("routing: below threshold goes left, ties go right") {
  FeatureStack stack(5, 5, 1);
  stack.at(0, 2, 3) = 1.0f;
  const SplitTest t{0, 1, 0, 1.0f};
  CHECK_FALSE(t.goes_left(stack, 2, 2));  // value equals threshold
  stack.at(0, 2, 3) = 0.999f;
  CHECK(t.goes_left(stack, 2, 2));
  // Offsets outside the stack are clamped to the border.
  stack.at(0, 0, 0) = -3.0f;
  const SplitTest corner{0, -4, -4, 0.0f};
  CHECK(corner.goes_left(stack, 1, 1));
}

TEST_CASE("trained forest respects structural invariants") {
  const auto& fx = fixture();
  const std::span<const LabeledFrame> all(fx.frames);
  const auto cfg = small_config(21);
  const ConditionalForest f = train_forest(all.first(8), all.subspan(8), joint::r_elbow, 2, cfg);
  CHECK(f.trees.size() == 2);
  CHECK(f.train_trees == 1);
  for (const auto& t : f.trees) {
    int d = 0;
    walk(t, 0, 0, d);
    CHECK(d <= cfg.tree.max_depth);
    CHECK(t.depth() == d);
    for (const auto& leaf : t.leaves()) {
      std::uint32_t total = 0;
      for (const auto& a : leaf.actions) {
        total += a.samples;
        CHECK(a.p_foreground >= 0.0);
        CHECK(a.p_foreground <= 1.0);
        double mass = 0.0;
        for (const Vote& v : a.votes) mass += v.weight;
        CHECK(mass == doctest::Approx(a.p_foreground).epsilon(1e-9));
        CHECK(static_cast<int>(a.votes.size()) <= cfg.tree.vote_cap);
      }
      if (t.nodes().size() > 1) CHECK(total >= static_cast<std::uint32_t>(cfg.tree.min_leaf));
    }
  }
}

TEST_CASE("forest training is deterministic across thread counts") {
  const auto& fx = fixture();
  const std::span<const LabeledFrame> all(fx.frames);
  auto cfg = small_config(22);
  cfg.trees = 3;
  const ConditionalForest a = train_forest(all.first(8), all.subspan(8), joint::head, 2, cfg);
  cfg.threads = 3;
  const ConditionalForest b = train_forest(all.first(8), all.subspan(8), joint::head, 2, cfg);
  CHECK(a == b);
  CHECK(encode_forest(a) == encode_forest(b));
}

TEST_CASE("pooled leaf is the uniform mixture of the action tables") {
  const auto& fx = fixture();
  const ConditionalForest f = train_forest(fx.frames, {}, joint::l_knee, 2, small_config(23));
  for (const auto& t : f.trees) {
    for (const auto& leaf : t.leaves()) {
      const LeafModel p = leaf.pooled();
      REQUIRE(p.actions.size() == 1);
      double expect = 0.0, mass = 0.0;
      for (const auto& a : leaf.actions) expect += 0.5 * a.p_foreground;
      for (const Vote& v : p.actions[0].votes) mass += v.weight;
      CHECK(p.actions[0].p_foreground == doctest::Approx(expect).epsilon(1e-12));
      CHECK(mass == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("forest file round-trip keeps vote maps identical") {
  const auto& fx = fixture();
  auto cfg = small_config(24);
  cfg.trees = 3;
  const ConditionalForest f = train_forest(fx.frames, {}, joint::r_knee, 2, cfg);
  const auto path = std::filesystem::temp_directory_path() / "acps_forest_roundtrip.acpf";
  save_forest(path, f);
  const ConditionalForest g = load_forest(path);
  std::filesystem::remove(path);
  CHECK(g == f);
  const auto& stack = fx.ds.videos[1].frames[2];
  const auto ma = vote_maps(f, stack), mb = vote_maps(g, stack);
  REQUIRE(ma.size() == mb.size());
  for (std::size_t a = 0; a < ma.size(); ++a) CHECK(ma[a].values == mb[a].values);
}

TEST_CASE("forest decode errors") {
  const auto& fx = fixture();
  const ConditionalForest f = train_forest(fx.frames, {}, joint::head, 2, small_config(25));
  const auto good = encode_forest(f);
  auto reason = [](std::vector<std::uint8_t> b) {
    try {
      decode_forest(b);
    } catch (const FormatError& e) {
      return e.reason();
    }
    FAIL("no error");
    return FormatError::Reason::parse;
  };
  auto version = good;
  version[4] = static_cast<std::uint8_t>(version[4] + 1);
  CHECK(reason(version) == FormatError::Reason::version_mismatch);
  auto magic = good;
  magic[0] = 'X';
  CHECK(reason(magic) == FormatError::Reason::bad_magic);
  for (std::size_t cut : {good.size() - 1, good.size() / 2, std::size_t{7}}) {
    auto truncated = good;
    truncated.resize(cut);
    CHECK(reason(truncated) == FormatError::Reason::corrupt);
  }
  auto trailing = good;
  trailing.push_back(0);
  CHECK(reason(trailing) == FormatError::Reason::corrupt);
}

TEST_CASE("subset keeps tree order and train/validation bookkeeping") {
  const auto& fx = fixture();
  const std::span<const LabeledFrame> all(fx.frames);
  auto cfg = small_config(26);
  cfg.trees = 4;
  const ConditionalForest f = train_forest(all.first(8), all.subspan(8), joint::head, 2, cfg);
  REQUIRE(f.train_trees == 2);
  const auto train = f.subset(0, 2), val = f.subset(2, 2);
  CHECK(train.train_trees == 2);
  CHECK(val.train_trees == 0);
  CHECK(val.trees[0] == f.trees[2]);
  CHECK_THROWS_AS(f.subset(3, 2), std::out_of_range);
}
