#include "acps/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "acps/parallel.hpp"

namespace acps {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Upper envelope of q -> g(q) - k (q - t)^2 over the finite entries of g.
class Envelope {
 public:
  Envelope(std::span<const double> g, double k) : g_(g), k_(k) {
    for (int q = 0; q < static_cast<int>(g.size()); ++q) {
      if (!std::isfinite(g[q])) continue;
      double s = -kInf;
      while (!v_.empty()) {
        const int r = v_.back();
        s = ((k_ * q * q - g[q]) - (k_ * r * r - g[r])) / (2.0 * k_ * (q - r));
        if (s > z_.back()) break;
        v_.pop_back();
        z_.pop_back();
        s = -kInf;
      }
      v_.push_back(q);
      z_.push_back(s);
    }
  }

  bool empty() const { return v_.empty(); }

  // Returns the value and writes the maximiser.
  double query(double t, int* arg) const {
    if (v_.empty()) {
      *arg = 0;
      return -kInf;
    }
    const auto it = std::lower_bound(z_.begin() + 1, z_.end(), t);
    const std::size_t j = static_cast<std::size_t>(it - z_.begin()) - 1;
    const int q = v_[j];
    *arg = q;
    return g_[q] - k_ * (q - t) * (q - t);
  }

  // Sweep variant for nondecreasing t; `j` carries the position between calls.
  double sweep(double t, std::size_t& j, int* arg) const {
    if (v_.empty()) {
      *arg = 0;
      return -kInf;
    }
    while (j + 1 < z_.size() && z_[j + 1] < t) ++j;
    const int q = v_[j];
    *arg = q;
    return g_[q] - k_ * (q - t) * (q - t);
  }

 private:
  std::span<const double> g_;
  double k_;
  std::vector<int> v_;
  std::vector<double> z_;  // z_[i]: left end of the segment where v_[i] wins
};

struct Precision {
  double a, b, c;  // inverse covariance [[a, b], [b, c]]
};

Precision precision_of(const Cov2& cov) {
  const double det = cov.det();
  if (!(det > 0.0)) throw std::invalid_argument("distance_transform: covariance not positive definite");
  return {cov.yy / det, -cov.xy / det, cov.xx / det};
}

Message make_message(int w, int h) {
  Message m;
  m.width = w;
  m.height = h;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  m.score.assign(n, -kInf);
  m.child.assign(n, 0);
  m.cluster.assign(n, 0);
  return m;
}

Message separable_dt(const ScoreMap& s, const DeformationCluster& cl, const Precision& P) {
  const int w = s.width, h = s.height;
  const double log_w = std::log(cl.weight);
  std::vector<double> rows(static_cast<std::size_t>(w) * h);
  std::vector<int> row_arg(rows.size());
  for (int qy = 0; qy < h; ++qy) {
    const std::span<const double> g(s.values.data() + static_cast<std::size_t>(qy) * w, w);
    const Envelope env(g, 0.5 * P.a);
    std::size_t j = 0;
    for (int px = 0; px < w; ++px) {
      const std::size_t i = static_cast<std::size_t>(qy) * w + px;
      rows[i] = env.sweep(px + cl.mean.x, j, &row_arg[i]);
    }
  }
  Message m = make_message(w, h);
  std::vector<double> col(h);
  for (int px = 0; px < w; ++px) {
    for (int qy = 0; qy < h; ++qy) col[qy] = rows[static_cast<std::size_t>(qy) * w + px];
    const Envelope env(col, 0.5 * P.c);
    std::size_t j = 0;
    for (int py = 0; py < h; ++py) {
      int qy;
      const double v = env.sweep(py + cl.mean.y, j, &qy);
      const std::size_t i = m.index(px, py);
      m.score[i] = v + log_w;
      m.child[i] = qy * w + row_arg[static_cast<std::size_t>(qy) * w + px];
    }
  }
  return m;
}

Message sheared_dt(const ScoreMap& s, const DeformationCluster& cl, const Precision& P) {
  const int w = s.width, h = s.height;
  const double log_w = std::log(cl.weight);
  const double shear = P.b / P.a;
  const double ky = 0.5 * (P.c - P.b * P.b / P.a);

  std::vector<Envelope> envs;
  envs.reserve(h);
  std::vector<double> row_max(h, -kInf);
  double global_max = -kInf;
  for (int qy = 0; qy < h; ++qy) {
    const std::span<const double> g(s.values.data() + static_cast<std::size_t>(qy) * w, w);
    envs.emplace_back(g, 0.5 * P.a);
    for (double v : g) row_max[qy] = std::max(row_max[qy], v);
    global_max = std::max(global_max, row_max[qy]);
  }

  Message m = make_message(w, h);
  if (!std::isfinite(global_max)) return m;
  std::vector<double> best(w);
  std::vector<int> best_idx(w);
  for (int py = 0; py < h; ++py) {
    const double zy = py + cl.mean.y;
    std::fill(best.begin(), best.end(), -kInf);
    std::fill(best_idx.begin(), best_idx.end(), 0);
    double worst = -kInf;  // min over px of best[px]
    // Queries along a row are px + mean.x - shear * dy, so each row is one
    // monotone sweep. Rows go in order of increasing |qy - zy| and are
    // skipped once they cannot beat any pixel.
    auto visit = [&](int qy) {
      const double dy = qy - zy;
      const double pen = ky * dy * dy;
      if (row_max[qy] - pen < worst) return;
      const double offset = cl.mean.x - shear * dy;
      std::size_t j = 0;
      for (int px = 0; px < w; ++px) {
        int qx;
        const double v = envs[qy].sweep(px + offset, j, &qx) - pen;
        const int idx = qy * w + qx;
        if (v > best[px] || (v == best[px] && idx < best_idx[px])) {
          best[px] = v;
          best_idx[px] = idx;
        }
      }
      worst = *std::min_element(best.begin(), best.end());
    };
    const int start = std::clamp(static_cast<int>(std::lround(zy)), 0, h - 1);
    int lo = start - 1, hi = start + 1;
    visit(start);
    while (lo >= 0 || hi < h) {
      const double dlo = lo >= 0 ? zy - lo : kInf;
      const double dhi = hi < h ? hi - zy : kInf;
      const bool take_lo = dlo <= dhi;
      const double d = take_lo ? dlo : dhi;
      if (global_max - ky * d * d < worst) break;
      visit(take_lo ? lo-- : hi++);
    }
    for (int px = 0; px < w; ++px) {
      const std::size_t i = m.index(px, py);
      m.score[i] = best[px] + log_w;
      m.child[i] = best_idx[px];
    }
  }
  return m;
}

}  // namespace

Message distance_transform(const ScoreMap& log_score, const DeformationCluster& cluster) {
  if (!(cluster.weight > 0.0)) throw std::invalid_argument("distance_transform: cluster weight must be positive");
  const Precision P = precision_of(cluster.cov);
  if (P.b == 0.0) return separable_dt(log_score, cluster, P);
  return sheared_dt(log_score, cluster, P);
}

Message distance_transform_brute(const ScoreMap& s, const DeformationCluster& cl) {
  Message m = make_message(s.width, s.height);
  for (int py = 0; py < s.height; ++py) {
    for (int px = 0; px < s.width; ++px) {
      double best = -kInf;
      int arg = 0;
      for (int qy = 0; qy < s.height; ++qy) {
        for (int qx = 0; qx < s.width; ++qx) {
          const double v = s.at(qx, qy) + log_eval_cluster(cl, Point2{double(qx - px), double(qy - py)});
          if (v > best) {
            best = v;
            arg = qy * s.width + qx;
          }
        }
      }
      const std::size_t i = m.index(px, py);
      m.score[i] = best;
      m.child[i] = arg;
    }
  }
  return m;
}

ScoreMap log_unary(const ScoreMap& map) {
  ScoreMap out = map;
  for (double& v : out.values) v = std::log(std::max(v, kUnaryFloor));
  return out;
}

namespace {

void check_inputs(const TreeTopology& topo, std::span<const ScoreMap> unaries,
                  const PairwiseModel& pairwise) {
  if (static_cast<int>(unaries.size()) != topo.size()) {
    throw std::invalid_argument("max_product: expected " + std::to_string(topo.size()) +
                                " unary maps, got " + std::to_string(unaries.size()));
  }
  for (const auto& u : unaries) {
    if (u.width != unaries[0].width || u.height != unaries[0].height || u.width <= 0 || u.height <= 0) {
      throw std::invalid_argument("max_product: unary maps differ in dimensions");
    }
  }
  for (int j = 0; j < topo.size(); ++j) {
    if (j == topo.root()) continue;
    const EdgeModel& e = pairwise.edge_for_child(j);
    if (e.parent != topo.parent(j)) {
      throw std::invalid_argument("max_product: pairwise edge of joint " + std::to_string(j) +
                                  " has a different parent than the tree");
    }
    if (e.clusters.empty()) throw std::invalid_argument("max_product: edge without clusters");
  }
}

}  // namespace

PoseEstimate max_product(const KinematicTree& tree, std::span<const ScoreMap> unaries,
                         const PairwiseModel& pairwise) {
  const TreeTopology topo(tree);
  check_inputs(topo, unaries, pairwise);
  const int J = topo.size();
  const int w = unaries[0].width, h = unaries[0].height;
  const std::size_t n = static_cast<std::size_t>(w) * h;

  std::vector<ScoreMap> logs;
  logs.reserve(J);
  for (const auto& u : unaries) logs.push_back(log_unary(u));

  std::vector<Message> messages(J);
  std::vector<ScoreMap> belief(J);
  const auto& order = topo.top_down();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int j = *it;
    belief[j] = logs[j];
    for (int c : topo.children(j)) {
      for (std::size_t i = 0; i < n; ++i) belief[j].values[i] += messages[c].score[i];
    }
    if (j == topo.root()) continue;
    const EdgeModel& e = pairwise.edge_for_child(j);
    Message best;
    for (std::size_t k = 0; k < e.clusters.size(); ++k) {
      Message mk = distance_transform(belief[j], e.clusters[k]);
      if (k == 0) {
        best = std::move(mk);
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (mk.score[i] > best.score[i]) {
          best.score[i] = mk.score[i];
          best.child[i] = mk.child[i];
          best.cluster[i] = static_cast<int>(k);
        }
      }
    }
    messages[j] = std::move(best);
  }

  const ScoreMap& root = belief[topo.root()];
  std::size_t arg = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (root.values[i] > root.values[arg]) arg = i;
  }

  PoseEstimate est;
  est.pose.joints.assign(J, Point2{});
  est.unary_log.assign(J, 0.0);
  est.clusters.assign(J, -1);
  est.log_posterior = root.values[arg];
  std::vector<std::size_t> loc(J);
  loc[topo.root()] = arg;
  for (int j : order) {
    if (j != topo.root()) {
      const Message& m = messages[j];
      const std::size_t p = loc[topo.parent(j)];
      loc[j] = static_cast<std::size_t>(m.child[p]);
      est.clusters[j] = pairwise.edge_for_child(j).clusters[m.cluster[p]].id;
    }
    est.pose.joints[j] = {static_cast<double>(loc[j] % w), static_cast<double>(loc[j] / w)};
    est.unary_log[j] = logs[j].values[loc[j]];
  }
  return est;
}

double score_configuration(const KinematicTree& tree, std::span<const ScoreMap> unaries,
                           const PairwiseModel& pairwise, const Pose& pose) {
  const TreeTopology topo(tree);
  check_inputs(topo, unaries, pairwise);
  const int w = unaries[0].width, h = unaries[0].height;
  auto pixel = [&](int j) {
    const int x = std::clamp(static_cast<int>(std::lround(pose.joints[j].x)), 0, w - 1);
    const int y = std::clamp(static_cast<int>(std::lround(pose.joints[j].y)), 0, h - 1);
    return Point2{double(x), double(y)};
  };
  double total = 0.0;
  for (int j = 0; j < topo.size(); ++j) {
    const Point2 p = pixel(j);
    total += std::log(std::max(unaries[j].at(int(p.x), int(p.y)), kUnaryFloor));
    if (j == topo.root()) continue;
    const Point2 d = p - pixel(topo.parent(j));
    double best = -kInf;
    for (const auto& cl : pairwise.edge_for_child(j).clusters) best = std::max(best, log_eval_cluster(cl, d));
    total += best;
  }
  return total;
}

PoseEstimate infer_multiscale(const KinematicTree& tree, std::span<const std::vector<ScoreMap>> levels,
                              const PairwiseModel& pairwise, double factor, int threads) {
  if (levels.empty()) throw std::invalid_argument("infer_multiscale: no pyramid levels");
  std::vector<PoseEstimate> per_level(levels.size());
  parallel_for(static_cast<int>(levels.size()), threads,
               [&](int i) { per_level[i] = max_product(tree, levels[i], pairwise); });
  std::size_t best = 0;
  for (std::size_t i = 1; i < per_level.size(); ++i) {
    if (per_level[i].log_posterior > per_level[best].log_posterior) best = i;
  }
  PoseEstimate out = std::move(per_level[best]);
  out.scale_index = static_cast<int>(best);
  const double s = std::pow(factor, static_cast<double>(best));
  for (auto& p : out.pose.joints) p = (1.0 / s) * p;
  out.pose.scale = s;
  return out;
}

}  // namespace acps
