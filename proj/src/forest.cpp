#include "acps/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "acps/binary_io.hpp"
#include "acps/errors.hpp"
#include "acps/kmeans.hpp"
#include "acps/parallel.hpp"

namespace acps {

// ---------------------------------------------------------------------------
// Patch sampling
// ---------------------------------------------------------------------------

std::vector<PatchSample> sample_patches(std::span<const LabeledFrame> frames, int joint,
                                        const PatchConfig& config) {
  if (frames.empty()) throw std::invalid_argument("sample_patches: no frames");
  if (config.positives < 0 || config.negatives < 0 || config.images < 1) {
    throw std::invalid_argument("sample_patches: counts must be nonnegative");
  }
  std::mt19937_64 rng(config.seed);

  std::vector<int> images(frames.size());
  std::iota(images.begin(), images.end(), 0);
  std::shuffle(images.begin(), images.end(), rng);
  images.resize(std::min<std::size_t>(images.size(), config.images));
  std::sort(images.begin(), images.end());

  const double r_pos = config.positive_radius;
  const double r_neg = config.negative_exclusion;

  // Positive candidates: every in-bounds pixel within r_pos of the joint.
  std::vector<PatchSample> pos_pool;
  for (int img : images) {
    const LabeledFrame& f = frames[img];
    const Point2 gt = f.pose.joints.at(joint);
    const int x0 = static_cast<int>(std::floor(gt.x - r_pos));
    const int y0 = static_cast<int>(std::floor(gt.y - r_pos));
    for (int y = y0; y <= static_cast<int>(std::ceil(gt.y + r_pos)); ++y) {
      for (int x = x0; x <= static_cast<int>(std::ceil(gt.x + r_pos)); ++x) {
        if (x < 0 || y < 0 || x >= f.stack->width() || y >= f.stack->height()) continue;
        if (std::hypot(x - gt.x, y - gt.y) > r_pos) continue;
        pos_pool.push_back({img, x, y, 1, {gt.x - x, gt.y - y}, f.action});
      }
    }
  }
  if (static_cast<std::size_t>(config.positives) > pos_pool.size()) {
    throw std::invalid_argument("sample_patches: requested " + std::to_string(config.positives) +
                                " positives but only " + std::to_string(pos_pool.size()) +
                                " pixels are available");
  }
  // Partial Fisher-Yates.
  for (int i = 0; i < config.positives; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pos_pool.size() - 1);
    std::swap(pos_pool[i], pos_pool[pick(rng)]);
  }
  std::vector<PatchSample> out(pos_pool.begin(), pos_pool.begin() + config.positives);

  auto is_negative = [&](int img, int x, int y) {
    const Point2 gt = frames[img].pose.joints[joint];
    return std::hypot(x - gt.x, y - gt.y) > r_neg;
  };
  std::uint64_t neg_available = 0;
  for (int img : images) {
    const auto& s = *frames[img].stack;
    for (int y = 0; y < s.height(); ++y)
      for (int x = 0; x < s.width(); ++x) neg_available += is_negative(img, x, y);
  }
  if (static_cast<std::uint64_t>(config.negatives) > neg_available) {
    throw std::invalid_argument("sample_patches: requested " + std::to_string(config.negatives) +
                                " negatives but only " + std::to_string(neg_available) +
                                " pixels are available");
  }

  if (static_cast<std::uint64_t>(config.negatives) * 2 > neg_available) {
    std::vector<PatchSample> pool;
    for (int img : images) {
      const auto& s = *frames[img].stack;
      for (int y = 0; y < s.height(); ++y)
        for (int x = 0; x < s.width(); ++x)
          if (is_negative(img, x, y)) pool.push_back({img, x, y, 0, {}, frames[img].action});
    }
    for (int i = 0; i < config.negatives; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.insert(out.end(), pool.begin(), pool.begin() + config.negatives);
    return out;
  }

  std::unordered_set<std::uint64_t> taken;
  std::uniform_int_distribution<std::size_t> pick_image(0, images.size() - 1);
  while (static_cast<int>(taken.size()) < config.negatives) {
    const int img = images[pick_image(rng)];
    const auto& s = *frames[img].stack;
    const int x = std::uniform_int_distribution<int>(0, s.width() - 1)(rng);
    const int y = std::uniform_int_distribution<int>(0, s.height() - 1)(rng);
    if (!is_negative(img, x, y)) continue;
    const std::uint64_t key = (static_cast<std::uint64_t>(img) << 40) |
                              (static_cast<std::uint64_t>(y) << 20) | static_cast<std::uint64_t>(x);
    if (!taken.insert(key).second) continue;
    out.push_back({img, x, y, 0, {}, frames[img].action});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split scoring
// ---------------------------------------------------------------------------

namespace {

struct SideStats {
  double n = 0, fg = 0;
  double sx = 0, sy = 0, sxx = 0, syy = 0;

  void add(const PatchSample& s) {
    n += 1;
    if (s.label != 0) {
      fg += 1;
      sx += s.offset.x;
      sy += s.offset.y;
      sxx += s.offset.x * s.offset.x;
      syy += s.offset.y * s.offset.y;
    }
  }
  SideStats operator-(const SideStats& o) const {
    return {n - o.n, fg - o.fg, sx - o.sx, sy - o.sy, sxx - o.sxx, syy - o.syy};
  }
  double entropy() const {
    if (n <= 0) return 0.0;
    const double p = fg / n;
    double h = 0.0;
    if (p > 0) h -= p * std::log2(p);
    if (p < 1) h -= (1 - p) * std::log2(1 - p);
    return h;
  }
  double offset_trace() const {
    if (fg <= 0) return 0.0;
    const double mx = sx / fg, my = sy / fg;
    return (sxx / fg - mx * mx) + (syy / fg - my * my);
  }
};

double score(const SideStats& parent, const SideStats& left, Goodness mode) {
  const SideStats right = parent - left;
  if (left.n <= 0 || right.n <= 0) return -std::numeric_limits<double>::infinity();
  if (mode == Goodness::classification) {
    return parent.entropy() - (left.n / parent.n) * left.entropy() -
           (right.n / parent.n) * right.entropy();
  }
  if (parent.fg <= 0) return 0.0;
  return parent.offset_trace() - (left.fg / parent.fg) * left.offset_trace() -
         (right.fg / parent.fg) * right.offset_trace();
}

}  // namespace

double split_goodness(std::span<const PatchSample> samples, std::span<const std::uint8_t> goes_left,
                      Goodness mode) {
  if (samples.size() != goes_left.size()) throw std::invalid_argument("split_goodness: size mismatch");
  SideStats parent, left;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    parent.add(samples[i]);
    if (goes_left[i]) left.add(samples[i]);
  }
  return score(parent, left, mode);
}

double split_goodness(const SplitTest& test, std::span<const PatchSample> samples,
                      std::span<const LabeledFrame> frames, Goodness mode) {
  std::vector<std::uint8_t> left(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    left[i] = test.goes_left(*frames[s.image].stack, s.x, s.y);
  }
  return split_goodness(samples, left, mode);
}

// ---------------------------------------------------------------------------
// Leaves
// ---------------------------------------------------------------------------

LeafModel make_leaf(std::span<const PatchSample> samples, int action_count, int vote_cap,
                    std::uint64_t seed) {
  LeafModel leaf;
  leaf.actions.resize(action_count);
  std::vector<std::map<std::pair<double, double>, double>> offsets(action_count);
  for (const auto& s : samples) {
    if (s.action < 0 || s.action >= action_count) throw std::invalid_argument("make_leaf: action out of range");
    auto& a = leaf.actions[s.action];
    ++a.samples;
    if (s.label != 0) {
      ++a.foreground;
      offsets[s.action][{s.offset.x, s.offset.y}] += 1.0;
    }
  }
  for (int a = 0; a < action_count; ++a) {
    ActionLeaf& al = leaf.actions[a];
    if (al.samples == 0) continue;
    al.p_foreground = static_cast<double>(al.foreground) / al.samples;
    if (al.foreground == 0) continue;
    const double unit = 1.0 / al.samples;  // p(c=j|a) / foreground
    const auto& m = offsets[a];
    if (static_cast<int>(m.size()) <= vote_cap) {
      for (const auto& [d, count] : m) al.votes.push_back({d.first, d.second, count * unit});
      continue;
    }
    std::vector<double> pts, w;
    for (const auto& [d, count] : m) {
      pts.push_back(d.first);
      pts.push_back(d.second);
      w.push_back(count);
    }
    KMeansOptions opt;
    opt.restarts = 1;
    opt.max_iterations = 50;
    opt.seed = mix_seed(seed, a);
    auto km = weighted_kmeans(pts, 2, w, vote_cap, opt);
    std::vector<double> mass(vote_cap, 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) mass[km.assignment[i]] += w[i];
    for (int c = 0; c < vote_cap; ++c) {
      if (mass[c] <= 0) continue;
      auto ctr = km.center(c);
      al.votes.push_back({ctr[0], ctr[1], mass[c] * unit});
    }
  }
  return leaf;
}

LeafModel LeafModel::pooled() const {
  LeafModel out;
  out.actions.resize(1);
  ActionLeaf& p = out.actions[0];
  const double inv = actions.empty() ? 0.0 : 1.0 / static_cast<double>(actions.size());
  for (const auto& a : actions) {
    p.samples += a.samples;
    p.foreground += a.foreground;
    p.p_foreground += inv * a.p_foreground;
    for (const Vote& v : a.votes) p.votes.push_back({v.dx, v.dy, inv * v.weight});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

int RegressionTree::leaf_index(const FeatureStack& stack, int x, int y) const {
  int n = 0;
  while (!nodes_[n].leaf) {
    const Node& node = nodes_[n];
    n = node.split.goes_left(stack, x, y) ? node.left : node.right;
  }
  return nodes_[n].leaf_index;
}

int RegressionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

namespace {

class TreeBuilder {
 public:
  TreeBuilder(std::span<const PatchSample> samples, std::span<const LabeledFrame> frames,
              int action_count, const TreeConfig& config, std::uint64_t seed)
      : samples_(samples), frames_(frames), actions_(action_count), cfg_(config), rng_(seed),
        seed_(seed) {
    channels_ = frames.empty() ? 1 : frames[samples.empty() ? 0 : samples[0].image].stack->channels();
  }

  RegressionTree build() {
    std::vector<int> idx(samples_.size());
    std::iota(idx.begin(), idx.end(), 0);
    grow(idx, 0);
    return RegressionTree(std::move(nodes_), std::move(leaves_));
  }

 private:
  float value(const SplitTest& t, const PatchSample& s) const {
    return frames_[s.image].stack->clamped(t.channel, s.y + t.dy, s.x + t.dx);
  }

  int make_leaf_node(const std::vector<int>& idx, int depth) {
    std::vector<PatchSample> sub;
    sub.reserve(idx.size());
    for (int i : idx) sub.push_back(samples_[i]);
    RegressionTree::Node node;
    node.leaf = true;
    node.depth = depth;
    node.leaf_index = static_cast<int>(leaves_.size());
    leaves_.push_back(make_leaf(sub, actions_, cfg_.vote_cap, mix_seed(seed_, 1000003u + nodes_.size())));
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }

  int grow(const std::vector<int>& idx, int depth) {
    std::size_t fg = 0;
    for (int i : idx) fg += samples_[i].label != 0;
    const bool pure = fg == 0 || fg == idx.size();
    if (depth >= cfg_.max_depth || static_cast<int>(idx.size()) < 2 * cfg_.min_leaf || pure) {
      return make_leaf_node(idx, depth);
    }

    const Goodness mode = std::bernoulli_distribution(0.5)(rng_) ? Goodness::regression
                                                                   : Goodness::classification;
    SideStats parent;
    for (int i : idx) parent.add(samples_[i]);

    const int sub_n = std::min<int>(cfg_.threshold_subsample, static_cast<int>(idx.size()));
    std::vector<int> sub(sub_n);
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    for (int& s : sub) s = idx[pick(rng_)];

    const int r = cfg_.window_radius;
    std::uniform_int_distribution<int> pick_ch(0, channels_ - 1), pick_off(-r, r);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SplitTest best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cfg_.candidates; ++c) {
      SplitTest t;
      t.channel = pick_ch(rng_);
      t.dx = pick_off(rng_);
      t.dy = pick_off(rng_);
      float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
      for (int s : sub) {
        const float v = value(t, samples_[s]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      t.threshold = static_cast<float>(lo + unit(rng_) * (static_cast<double>(hi) - lo));

      SideStats left;
      for (int i : idx) {
        if (value(t, samples_[i]) < t.threshold) left.add(samples_[i]);
      }
      if (left.n < cfg_.min_leaf || parent.n - left.n < cfg_.min_leaf) continue;
      const double sc = score(parent, left, mode);
      if (sc > best_score) {
        best_score = sc;
        best = t;
      }
    }
    if (!std::isfinite(best_score)) return make_leaf_node(idx, depth);

    std::vector<int> li, ri;
    for (int i : idx) (value(best, samples_[i]) < best.threshold ? li : ri).push_back(i);

    const int self = static_cast<int>(nodes_.size());
    RegressionTree::Node node;
    node.leaf = false;
    node.goodness = mode;
    node.split = best;
    node.depth = depth;
    nodes_.push_back(node);
    const int l = grow(li, depth + 1);
    const int rr = grow(ri, depth + 1);
    nodes_[self].left = l;
    nodes_[self].right = rr;
    return self;
  }

  std::span<const PatchSample> samples_;
  std::span<const LabeledFrame> frames_;
  int actions_;
  int channels_ = 1;
  TreeConfig cfg_;
  std::mt19937_64 rng_;
  std::uint64_t seed_;
  std::vector<RegressionTree::Node> nodes_;
  std::vector<LeafModel> leaves_;
};

}  // namespace

RegressionTree train_tree(std::span<const PatchSample> samples, std::span<const LabeledFrame> frames,
                          int action_count, const TreeConfig& config, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("train_tree: no samples");
  if (action_count < 1) throw std::invalid_argument("train_tree: action_count must be positive");
  return TreeBuilder(samples, frames, action_count, config, seed).build();
}

ConditionalForest ConditionalForest::subset(int first, int count) const {
  if (first < 0 || count < 0 || first + count > static_cast<int>(trees.size())) {
    throw std::out_of_range("forest subset out of range");
  }
  ConditionalForest f = *this;
  f.trees.assign(trees.begin() + first, trees.begin() + first + count);
  f.train_trees = std::clamp(train_trees - first, 0, count);
  return f;
}

ConditionalForest train_forest(std::span<const LabeledFrame> train,
                               std::span<const LabeledFrame> validation, int joint,
                               int action_count, const ForestTrainingConfig& config) {
  if (config.trees < 1) throw std::invalid_argument("train_forest: need at least one tree");
  ConditionalForest forest;
  forest.joint = joint;
  forest.action_count = action_count;
  forest.seed = config.seed;
  forest.config = config.tree;
  forest.train_trees = validation.empty() ? config.trees : (config.trees + 1) / 2;
  forest.trees.resize(config.trees);

  parallel_for(config.trees, config.threads, [&](int t) {
    const auto frames = t < forest.train_trees ? train : validation;
    PatchConfig pc = config.patches;
    pc.seed = mix_seed(config.seed, 2 * static_cast<std::uint64_t>(t));
    const auto samples = sample_patches(frames, joint, pc);
    forest.trees[t] = train_tree(samples, frames, action_count, config.tree,
                                 mix_seed(config.seed, 2 * static_cast<std::uint64_t>(t) + 1));
  });
  return forest;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kForestMagic = "ACPF";
constexpr char kForestVersion = '1';

void write_node(io::ByteWriter& w, const RegressionTree& tree, int n, int actions) {
  const auto& node = tree.nodes()[n];
  w.put(static_cast<std::uint8_t>(node.leaf ? 1 : 0));
  if (!node.leaf) {
    w.put(static_cast<std::uint8_t>(node.goodness));
    w.put(static_cast<std::int32_t>(node.split.channel));
    w.put(static_cast<std::int32_t>(node.split.dx));
    w.put(static_cast<std::int32_t>(node.split.dy));
    w.put(node.split.threshold);
    write_node(w, tree, node.left, actions);
    write_node(w, tree, node.right, actions);
    return;
  }
  const LeafModel& leaf = tree.leaves()[node.leaf_index];
  for (int a = 0; a < actions; ++a) {
    const ActionLeaf& al = leaf.actions[a];
    w.put(al.samples);
    w.put(al.foreground);
    w.put(al.p_foreground);
    w.put(static_cast<std::uint32_t>(al.votes.size()));
    for (const Vote& v : al.votes) {
      w.put(v.dx);
      w.put(v.dy);
      w.put(v.weight);
    }
  }
}

struct NodeReader {
  io::ByteReader& r;
  int actions;
  std::uint32_t declared;
  std::vector<RegressionTree::Node> nodes;
  std::vector<LeafModel> leaves;

  int read(int depth) {
    if (nodes.size() >= declared || depth > 4096) {
      throw FormatError(FormatError::Reason::corrupt, "forest: node count exceeded");
    }
    const auto tag = r.get<std::uint8_t>();
    RegressionTree::Node node;
    node.depth = depth;
    const int self = static_cast<int>(nodes.size());
    if (tag == 0) {
      node.leaf = false;
      const auto g = r.get<std::uint8_t>();
      if (g > 1) throw FormatError(FormatError::Reason::corrupt, "forest: bad goodness tag");
      node.goodness = static_cast<Goodness>(g);
      node.split.channel = r.get<std::int32_t>();
      node.split.dx = r.get<std::int32_t>();
      node.split.dy = r.get<std::int32_t>();
      node.split.threshold = r.get<float>();
      if (node.split.channel < 0) throw FormatError(FormatError::Reason::corrupt, "forest: bad channel");
      nodes.push_back(node);
      const int l = read(depth + 1);
      const int rr = read(depth + 1);
      nodes[self].left = l;
      nodes[self].right = rr;
      return self;
    }
    if (tag != 1) throw FormatError(FormatError::Reason::corrupt, "forest: bad node tag");
    LeafModel leaf;
    leaf.actions.resize(actions);
    for (auto& al : leaf.actions) {
      al.samples = r.get<std::uint32_t>();
      al.foreground = r.get<std::uint32_t>();
      al.p_foreground = r.get<double>();
      const auto nv = r.get<std::uint32_t>();
      r.require(static_cast<std::size_t>(nv) * 3 * sizeof(double));
      al.votes.resize(nv);
      for (auto& v : al.votes) {
        v.dx = r.get<double>();
        v.dy = r.get<double>();
        v.weight = r.get<double>();
      }
    }
    node.leaf = true;
    node.leaf_index = static_cast<int>(leaves.size());
    leaves.push_back(std::move(leaf));
    nodes.push_back(node);
    return self;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_forest(const ConditionalForest& f) {
  io::ByteWriter w;
  w.put_bytes(kForestMagic);
  w.put(kForestVersion);
  w.put(static_cast<std::uint32_t>(f.joint));
  w.put(static_cast<std::uint32_t>(f.action_count));
  w.put(static_cast<std::uint32_t>(f.train_trees));
  w.put(f.seed);
  for (int v : {f.config.max_depth, f.config.min_leaf, f.config.candidates, f.config.window_radius,
                f.config.vote_cap, f.config.threshold_subsample}) {
    w.put(static_cast<std::int32_t>(v));
  }
  w.put(static_cast<std::uint32_t>(f.trees.size()));
  for (const auto& t : f.trees) {
    w.put(static_cast<std::uint32_t>(t.nodes().size()));
    write_node(w, t, 0, f.action_count);
  }
  return std::move(w.bytes());
}

ConditionalForest decode_forest(std::span<const std::uint8_t> bytes) {
  using R = FormatError::Reason;
  io::ByteReader r(bytes, R::corrupt);
  if (r.remaining() < 5) throw FormatError(R::corrupt, "forest: file too short");
  if (r.get_bytes(4) != kForestMagic) throw FormatError(R::bad_magic, "forest: bad magic");
  const char version = r.get<char>();
  if (version != kForestVersion) {
    throw FormatError(R::version_mismatch, std::string("forest: unsupported version '") + version + "'");
  }
  ConditionalForest f;
  f.joint = static_cast<int>(r.get<std::uint32_t>());
  f.action_count = static_cast<int>(r.get<std::uint32_t>());
  f.train_trees = static_cast<int>(r.get<std::uint32_t>());
  f.seed = r.get<std::uint64_t>();
  f.config.max_depth = r.get<std::int32_t>();
  f.config.min_leaf = r.get<std::int32_t>();
  f.config.candidates = r.get<std::int32_t>();
  f.config.window_radius = r.get<std::int32_t>();
  f.config.vote_cap = r.get<std::int32_t>();
  f.config.threshold_subsample = r.get<std::int32_t>();
  if (f.action_count < 1 || f.action_count > 4096) throw FormatError(R::corrupt, "forest: bad action count");
  const auto n_trees = r.get<std::uint32_t>();
  if (n_trees > r.remaining()) throw FormatError(R::corrupt, "forest: bad tree count");
  for (std::uint32_t t = 0; t < n_trees; ++t) {
    NodeReader nr{r, f.action_count, r.get<std::uint32_t>(), {}, {}};
    nr.read(0);
    if (nr.nodes.size() != nr.declared) throw FormatError(R::corrupt, "forest: node count mismatch");
    f.trees.emplace_back(std::move(nr.nodes), std::move(nr.leaves));
  }
  if (r.remaining() != 0) throw FormatError(R::corrupt, "forest: trailing bytes");
  return f;
}

void save_forest(const std::filesystem::path& path, const ConditionalForest& forest) {
  io::write_file(path.string(), encode_forest(forest));
}

ConditionalForest load_forest(const std::filesystem::path& path) {
  return decode_forest(io::read_file(path.string()));
}

}  // namespace acps
