#include "acps/pairwise.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "acps/errors.hpp"
#include "acps/kmeans.hpp"
#include "acps/parallel.hpp"

namespace acps {

Cov2 floor_eigenvalues(const Cov2& c, double floor) {
  const double half_tr = 0.5 * (c.xx + c.yy);
  const double rad = std::sqrt(0.25 * (c.xx - c.yy) * (c.xx - c.yy) + c.xy * c.xy);
  const double l1 = half_tr + rad, l2 = half_tr - rad;
  if (l2 >= floor) return c;
  double vx, vy;  // unit eigenvector of l1
  if (c.xy != 0.0) {
    vx = l1 - c.yy;
    vy = c.xy;
  } else if (c.xx >= c.yy) {
    vx = 1.0;
    vy = 0.0;
  } else {
    vx = 0.0;
    vy = 1.0;
  }
  const double norm = std::hypot(vx, vy);
  vx /= norm;
  vy /= norm;
  const double a = std::max(l1, floor), b = std::max(l2, floor);
  // V diag(a, b) V^T with second eigenvector (-vy, vx).
  return {a * vx * vx + b * vy * vy, (a - b) * vx * vy, a * vy * vy + b * vx * vx};
}

namespace {
double mahalanobis_sq(const Cov2& c, Point2 d) {
  return (c.yy * d.x * d.x - 2.0 * c.xy * d.x * d.y + c.xx * d.y * d.y) / c.det();
}
}  // namespace

double eval_cluster(const DeformationCluster& cl, Point2 d) {
  return cl.weight * std::exp(-0.5 * mahalanobis_sq(cl.cov, d - cl.mean));
}

double log_eval_cluster(const DeformationCluster& cl, Point2 d) {
  return std::log(cl.weight) - 0.5 * mahalanobis_sq(cl.cov, d - cl.mean);
}

const EdgeModel& PairwiseModel::edge_for_child(int joint) const {
  for (const auto& e : edges) {
    if (e.child == joint) return e;
  }
  throw std::out_of_range("pairwise model has no edge for joint " + std::to_string(joint));
}

namespace {

struct EdgeData {
  std::vector<double> offsets;  // x, y pairs
  std::vector<double> weights;
  std::vector<int> actions;
};

EdgeData gather(std::span<const TrainingPose> poses, const Edge& e, const ActionPrior* prior) {
  EdgeData d;
  for (const auto& tp : poses) {
    const Point2 off = tp.pose.joints.at(e.child) - tp.pose.joints.at(e.parent);
    d.offsets.push_back(off.x);
    d.offsets.push_back(off.y);
    double w = 1.0;
    if (prior) {
      if (tp.action < 0 || tp.action >= prior->size()) throw std::invalid_argument("pose action outside the prior");
      w = prior->probs[tp.action];
    }
    d.weights.push_back(w);
    d.actions.push_back(tp.action);
  }
  return d;
}

KMeansResult cluster_edge(const EdgeData& d, const Edge& e, const PairwiseFitOptions& opt) {
  const int distinct = count_distinct_rows(d.offsets, 2, d.weights);
  if (distinct < opt.clusters) {
    throw std::invalid_argument("fit_pairwise: edge (" + std::to_string(e.child) + "," +
                                std::to_string(e.parent) + ") has " + std::to_string(distinct) +
                                " distinct offsets, fewer than K=" + std::to_string(opt.clusters) +
                                "; use a smaller K");
  }
  KMeansOptions ko;
  ko.restarts = opt.restarts;
  ko.max_iterations = opt.max_iterations;
  ko.seed = mix_seed(opt.seed, static_cast<std::uint64_t>(e.child));
  return weighted_kmeans(d.offsets, 2, d.weights, opt.clusters, ko);
}

}  // namespace

PairwiseModel fit_pairwise(std::span<const TrainingPose> poses, const KinematicTree& tree,
                           const PairwiseFitOptions& options, const ActionPrior* prior) {
  if (options.clusters < 1) throw std::invalid_argument("fit_pairwise: K must be positive");
  PairwiseModel model;
  model.alpha = options.alpha;
  model.fitted_under = prior ? "prior" : "none";
  for (const Edge& e : tree.edges) {
    const EdgeData d = gather(poses, e, prior);
    const KMeansResult km = cluster_edge(d, e, options);
    const int K = options.clusters;
    std::vector<double> mass(K, 0.0), mx(K, 0.0), my(K, 0.0);
    double total = 0.0;
    const std::size_t n = d.weights.size();
    for (std::size_t i = 0; i < n; ++i) {
      const int k = km.assignment[i];
      const double w = d.weights[i];
      mass[k] += w;
      mx[k] += w * d.offsets[2 * i];
      my[k] += w * d.offsets[2 * i + 1];
      total += w;
    }
    std::vector<Cov2> cov(K, Cov2{0, 0, 0});
    for (int k = 0; k < K; ++k) {
      if (mass[k] > 0) {
        mx[k] /= mass[k];
        my[k] /= mass[k];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int k = km.assignment[i];
      const double w = d.weights[i];
      const double ex = d.offsets[2 * i] - mx[k], ey = d.offsets[2 * i + 1] - my[k];
      cov[k].xx += w * ex * ex;
      cov[k].xy += w * ex * ey;
      cov[k].yy += w * ey * ey;
    }
    EdgeModel em{e.child, e.parent, {}};
    for (int k = 0; k < K; ++k) {
      if (!(mass[k] > 0)) continue;
      Cov2 c{cov[k].xx / mass[k], cov[k].xy / mass[k], cov[k].yy / mass[k]};
      em.clusters.push_back({{mx[k], my[k]}, floor_eigenvalues(c, kCovarianceFloor),
                             std::pow(mass[k] / total, options.alpha), k});
    }
    model.edges.push_back(std::move(em));
  }
  return model;
}

PairwiseStatistics fit_pairwise_statistics(std::span<const TrainingPose> poses,
                                           const KinematicTree& tree, int action_count,
                                           const PairwiseFitOptions& options) {
  PairwiseStatistics st;
  st.alpha = options.alpha;
  st.action_count = action_count;
  for (const Edge& e : tree.edges) {
    const EdgeData d = gather(poses, e, nullptr);
    const KMeansResult km = cluster_edge(d, e, options);
    EdgeStatistics es{e.child, e.parent, {}};
    es.clusters.assign(options.clusters, std::vector<ClusterMoments>(action_count));
    for (std::size_t i = 0; i < d.weights.size(); ++i) {
      const int a = d.actions[i];
      if (a < 0 || a >= action_count) throw std::invalid_argument("pose action out of range");
      ClusterMoments& m = es.clusters[km.assignment[i]][a];
      const double x = d.offsets[2 * i], y = d.offsets[2 * i + 1];
      m.n += 1;
      m.sx += x;
      m.sy += y;
      m.sxx += x * x;
      m.sxy += x * y;
      m.syy += y * y;
    }
    st.edges.push_back(std::move(es));
  }
  return st;
}

PairwiseModel PairwiseStatistics::condition(const ActionPrior& prior) const {
  if (prior.size() != action_count) throw std::invalid_argument("pairwise: prior size mismatch");
  PairwiseModel model;
  model.alpha = alpha;
  model.fitted_under = prior.mode == PriorMode::uniform ? "uniform"
                       : prior.mode == PriorMode::hard  ? "hard"
                                                        : "soft";
  for (const auto& es : edges) {
    EdgeModel em{es.child, es.parent, {}};
    std::vector<ClusterMoments> agg(es.clusters.size());
    double total = 0.0;
    for (std::size_t k = 0; k < es.clusters.size(); ++k) {
      ClusterMoments& g = agg[k];
      for (int a = 0; a < action_count; ++a) {
        const double p = prior.probs[a];
        const ClusterMoments& m = es.clusters[k][a];
        g.n += p * m.n;
        g.sx += p * m.sx;
        g.sy += p * m.sy;
        g.sxx += p * m.sxx;
        g.sxy += p * m.sxy;
        g.syy += p * m.syy;
      }
      total += g.n;
    }
    for (std::size_t k = 0; k < agg.size(); ++k) {
      const ClusterMoments& g = agg[k];
      if (!(g.n > 0)) continue;
      const double mx = g.sx / g.n, my = g.sy / g.n;
      Cov2 c{g.sxx / g.n - mx * mx, g.sxy / g.n - mx * my, g.syy / g.n - my * my};
      em.clusters.push_back({{mx, my}, floor_eigenvalues(c, kCovarianceFloor),
                             std::pow(g.n / total, alpha), static_cast<int>(k)});
    }
    model.edges.push_back(std::move(em));
  }
  return model;
}

namespace {
std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string describe_pairwise(const PairwiseModel& model) {
  std::ostringstream out;
  for (const auto& e : model.edges) {
    out << "edge " << e.child << " " << e.parent << " clusters " << e.clusters.size() << "\n";
    for (const auto& c : e.clusters) {
      out << "cluster " << c.id << " mu " << fmt17(c.mean.x) << " " << fmt17(c.mean.y) << " sigma "
          << fmt17(c.cov.xx) << " " << fmt17(c.cov.xy) << " " << fmt17(c.cov.yy) << " w "
          << fmt17(c.weight) << "\n";
    }
  }
  return out.str();
}

std::string pairwise_to_text(const PairwiseStatistics& st) {
  const PairwiseModel uniform = st.condition(ActionPrior::uniform(st.action_count));
  std::ostringstream out;
  out << "# pairwise deformation model\n";
  out << "# cluster rows: mean, covariance and weight under a uniform action prior\n";
  out << "# moments rows: per-action sufficient statistics n sx sy sxx sxy syy\n";
  out << "alpha " << fmt17(st.alpha) << "\n";
  out << "actions " << st.action_count << "\n";
  out << "edges " << st.edges.size() << "\n";
  for (std::size_t i = 0; i < st.edges.size(); ++i) {
    const auto& es = st.edges[i];
    out << "edge " << es.child << " " << es.parent << " clusters " << es.clusters.size() << "\n";
    for (const auto& c : uniform.edges[i].clusters) {
      out << "cluster " << c.id << " mu " << fmt17(c.mean.x) << " " << fmt17(c.mean.y) << " sigma "
          << fmt17(c.cov.xx) << " " << fmt17(c.cov.xy) << " " << fmt17(c.cov.yy) << " w "
          << fmt17(c.weight) << "\n";
    }
    for (std::size_t k = 0; k < es.clusters.size(); ++k) {
      for (int a = 0; a < st.action_count; ++a) {
        const auto& m = es.clusters[k][a];
        out << "moments " << k << " " << a << " " << fmt17(m.n) << " " << fmt17(m.sx) << " "
            << fmt17(m.sy) << " " << fmt17(m.sxx) << " " << fmt17(m.sxy) << " " << fmt17(m.syy)
            << "\n";
      }
    }
  }
  return out.str();
}

PairwiseStatistics pairwise_from_text(const std::string& text) {
  using R = FormatError::Reason;
  auto fail = [](const std::string& why) { return FormatError(R::parse, "pairwise: " + why); };
  std::istringstream in(text);
  std::string line;
  auto next = [&]() -> std::istringstream {
    while (std::getline(in, line)) {
      if (!line.empty() && line[0] != '#') return std::istringstream(line);
    }
    throw fail("unexpected end of file");
  };
  auto expect = [&](std::istringstream& ls, const char* key) {
    std::string k;
    if (!(ls >> k) || k != key) throw fail(std::string("expected '") + key + "'");
  };

  PairwiseStatistics st;
  std::size_t n_edges = 0;
  {
    auto ls = next();
    expect(ls, "alpha");
    if (!(ls >> st.alpha)) throw fail("bad alpha");
  }
  {
    auto ls = next();
    expect(ls, "actions");
    if (!(ls >> st.action_count) || st.action_count < 1) throw fail("bad action count");
  }
  {
    auto ls = next();
    expect(ls, "edges");
    if (!(ls >> n_edges)) throw fail("bad edge count");
  }
  for (std::size_t e = 0; e < n_edges; ++e) {
    auto ls = next();
    EdgeStatistics es;
    std::size_t K = 0;
    expect(ls, "edge");
    if (!(ls >> es.child >> es.parent)) throw fail("bad edge line");
    expect(ls, "clusters");
    if (!(ls >> K) || K > 100000) throw fail("bad cluster count");
    es.clusters.assign(K, std::vector<ClusterMoments>(st.action_count));
    std::size_t moments_seen = 0;
    while (moments_seen < K * st.action_count) {
      auto row = next();
      std::string kind;
      row >> kind;
      if (kind == "cluster") continue;
      if (kind != "moments") throw fail("unexpected row '" + kind + "'");
      std::size_t k;
      int a;
      ClusterMoments m;
      if (!(row >> k >> a >> m.n >> m.sx >> m.sy >> m.sxx >> m.sxy >> m.syy) || k >= K || a < 0 ||
          a >= st.action_count) {
        throw fail("bad moments row");
      }
      es.clusters[k][a] = m;
      ++moments_seen;
    }
    st.edges.push_back(std::move(es));
  }
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') throw fail("trailing content");
  }
  return st;
}

void save_pairwise(const std::filesystem::path& path, const PairwiseStatistics& stats) {
  write_text_file(path, pairwise_to_text(stats));
}

PairwiseStatistics load_pairwise(const std::filesystem::path& path) {
  return pairwise_from_text(read_text_file(path));
}

}  // namespace acps
