#include "acps/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "acps/parallel.hpp"

namespace acps {

namespace {

double sq_dist(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

struct Run {
  std::vector<double> centers;
  std::vector<int> assignment;
  double objective = 0.0;
  std::vector<double> history;
};

// Picks an index with probability proportional to mass[i]; falls back to the
// first positive-weight index not yet used when all mass is zero.
int draw(std::span<const double> mass, double u, std::span<const double> weights,
         const std::vector<bool>& used) {
  double total = 0.0;
  for (double m : mass) total += m;
  if (total > 0.0) {
    double target = u * total;
    double acc = 0.0;
    int last = -1;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      if (mass[i] <= 0.0) continue;
      acc += mass[i];
      last = static_cast<int>(i);
      if (acc > target) return last;
    }
    return last;
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0 && !used[i]) return static_cast<int>(i);
  }
  return 0;
}

Run run_once(std::span<const double> pts, int dim, std::span<const double> w, int k,
             int max_iter, std::uint64_t seed) {
  const int n = static_cast<int>(w.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Run r;
  r.centers.resize(static_cast<std::size_t>(k) * dim);
  std::vector<bool> used(n, false);
  std::vector<double> best_d(n, std::numeric_limits<double>::infinity());
  std::vector<double> mass(n);

  for (int c = 0; c < k; ++c) {
    if (c == 0) {
      for (int i = 0; i < n; ++i) mass[i] = w[i];
    } else {
      const double* prev = &r.centers[static_cast<std::size_t>(c - 1) * dim];
      for (int i = 0; i < n; ++i) {
        best_d[i] = std::min(best_d[i], sq_dist(&pts[static_cast<std::size_t>(i) * dim], prev, dim));
        mass[i] = w[i] * best_d[i];
      }
    }
    int pick = draw(mass, unif(rng), w, used);
    used[pick] = true;
    std::copy_n(&pts[static_cast<std::size_t>(pick) * dim], dim, &r.centers[static_cast<std::size_t>(c) * dim]);
  }

  std::vector<double> dist(n);
  auto assign = [&](std::vector<int>& a) {
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* p = &pts[static_cast<std::size_t>(i) * dim];
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d = sq_dist(p, &r.centers[static_cast<std::size_t>(c) * dim], dim);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      a[i] = best;
      dist[i] = bd;
      obj += w[i] * bd;
    }
    return obj;
  };

  r.assignment.assign(n, -1);
  r.objective = assign(r.assignment);
  r.history.push_back(r.objective);

  std::vector<double> sums(static_cast<std::size_t>(k) * dim);
  std::vector<double> mass_per(k);
  std::vector<int> next(n);
  for (int it = 0; it < max_iter; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(mass_per.begin(), mass_per.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      if (w[i] <= 0.0) continue;
      const int c = r.assignment[i];
      mass_per[c] += w[i];
      for (int d = 0; d < dim; ++d) sums[static_cast<std::size_t>(c) * dim + d] += w[i] * pts[static_cast<std::size_t>(i) * dim + d];
    }
    for (int c = 0; c < k; ++c) {
      if (mass_per[c] > 0.0) {
        for (int d = 0; d < dim; ++d) {
          r.centers[static_cast<std::size_t>(c) * dim + d] = sums[static_cast<std::size_t>(c) * dim + d] / mass_per[c];
        }
        continue;
      }
      // Empty cluster: move it onto the positive-weight point farthest from
      // its current center.
      int far = -1;
      double fd = -1.0;
      for (int i = 0; i < n; ++i) {
        if (w[i] > 0.0 && dist[i] > fd) {
          fd = dist[i];
          far = i;
        }
      }
      if (far >= 0) {
        std::copy_n(&pts[static_cast<std::size_t>(far) * dim], dim, &r.centers[static_cast<std::size_t>(c) * dim]);
        dist[far] = 0.0;
      }
    }
    const double obj = assign(next);
    r.history.push_back(obj);
    r.objective = obj;
    const bool stable = next == r.assignment;
    r.assignment.swap(next);
    if (stable) break;
  }
  return r;
}

}  // namespace

KMeansResult weighted_kmeans(std::span<const double> points, int dim,
                             std::span<const double> weights, int k,
                             const KMeansOptions& options) {
  if (dim <= 0 || points.size() % dim != 0) throw std::invalid_argument("k-means: bad point layout");
  const int n = static_cast<int>(points.size() / dim);
  if (k < 1 || k > n) throw std::invalid_argument("k-means: k must lie in [1, n]");
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(n, 1.0);
  if (static_cast<int>(w.size()) != n) throw std::invalid_argument("k-means: weight count mismatch");

  Run best;
  bool have = false;
  for (int rs = 0; rs < std::max(1, options.restarts); ++rs) {
    Run r = run_once(points, dim, w, k, options.max_iterations, mix_seed(options.seed, rs));
    if (!have || r.objective < best.objective) {
      best = std::move(r);
      have = true;
    }
  }
  KMeansResult out;
  out.dim = dim;
  out.centers = std::move(best.centers);
  out.assignment = std::move(best.assignment);
  out.objective = best.objective;
  out.history = std::move(best.history);
  return out;
}

int count_distinct_rows(std::span<const double> points, int dim, std::span<const double> weights) {
  std::set<std::vector<double>> rows;
  const std::size_t n = points.size() / dim;
  for (std::size_t i = 0; i < n; ++i) {
    if (!weights.empty() && !(weights[i] > 0.0)) continue;
    rows.emplace(points.begin() + i * dim, points.begin() + (i + 1) * dim);
  }
  return static_cast<int>(rows.size());
}

}  // namespace acps
