#include "acps/sharing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "acps/errors.hpp"
#include "acps/parallel.hpp"

namespace acps {

std::vector<PixelPeak> mine_negatives(const ScoreMap& map, Point2 gt, int count, double exclusion,
                                      double nms_radius) {
  std::vector<PixelPeak> modes;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double v = map.at(x, y);
      bool strict = true;
      for (int dy = -1; dy <= 1 && strict; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= map.width || ny >= map.height) continue;
          if (!(v > map.at(nx, ny))) {
            strict = false;
            break;
          }
        }
      }
      if (!strict) continue;
      if (std::hypot(x - gt.x, y - gt.y) <= exclusion) continue;
      modes.push_back({x, y, v});
    }
  }
  std::stable_sort(modes.begin(), modes.end(),
                   [](const PixelPeak& a, const PixelPeak& b) { return a.value > b.value; });
  std::vector<PixelPeak> out;
  for (const auto& m : modes) {
    if (static_cast<int>(out.size()) >= count) break;
    bool suppressed = false;
    for (const auto& o : out) {
      if (std::hypot(m.x - o.x, m.y - o.y) <= nms_radius) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) out.push_back(m);
  }
  return out;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Soft maximum tau * log(sum exp(s_k / tau)); writes softmax weights.
double soft_max(std::span<const double> s, double tau, std::vector<double>* weights) {
  const double m = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double v : s) z += std::exp((v - m) / tau);
  if (weights) {
    weights->resize(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) (*weights)[k] = std::exp((s[k] - m) / tau) / z;
  }
  return m + tau * std::log(z);
}

}  // namespace

double sharing_objective(std::span<const double> gamma, const SharingProblem& problem,
                         const SharingConfig& config) {
  double total = 0.0;
  std::vector<double> neg;
  for (const auto& img : problem.images) {
    for (const auto& jr : img.joints) {
      total += dot(gamma, jr.positive);
      if (jr.negatives.empty()) continue;
      neg.clear();
      for (const auto& n : jr.negatives) neg.push_back(dot(gamma, n));
      total -= soft_max(neg, config.temperature, nullptr);
    }
  }
  return total - config.lambda * dot(gamma, gamma);
}

std::vector<double> sharing_gradient(std::span<const double> gamma, const SharingProblem& problem,
                                     const SharingConfig& config) {
  std::vector<double> g(gamma.size(), 0.0);
  std::vector<double> neg, soft;
  for (const auto& img : problem.images) {
    for (const auto& jr : img.joints) {
      for (std::size_t a = 0; a < g.size(); ++a) g[a] += jr.positive[a];
      if (jr.negatives.empty()) continue;
      neg.clear();
      for (const auto& n : jr.negatives) neg.push_back(dot(gamma, n));
      soft_max(neg, config.temperature, &soft);
      for (std::size_t k = 0; k < jr.negatives.size(); ++k) {
        for (std::size_t a = 0; a < g.size(); ++a) g[a] -= soft[k] * jr.negatives[k][a];
      }
    }
  }
  for (std::size_t a = 0; a < g.size(); ++a) g[a] -= 2.0 * config.lambda * gamma[a];
  return g;
}

std::vector<double> project_to_simplex(std::span<const double> v) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sum += out[i] = std::max(v[i] - theta, 0.0);
  // Exact renormalisation of the rounding residue.
  for (double& x : out) x /= sum;
  return out;
}

SharingFit fit_sharing(const SharingProblem& problem, int action_count, const SharingConfig& config) {
  SharingFit fit;
  fit.gamma.assign(action_count, 1.0 / action_count);
  double f = sharing_objective(fit.gamma, problem, config);
  fit.objective_trace.push_back(f);
  if (action_count == 1) return fit;

  double step = config.initial_step;
  for (int it = 0; it < config.max_iterations; ++it) {
    const auto g = sharing_gradient(fit.gamma, problem, config);
    std::vector<double> cand(action_count), trial(action_count);
    double fc = f;
    bool accepted = false;
    for (double t = step; t > 1e-18; t *= 0.5) {
      for (int a = 0; a < action_count; ++a) trial[a] = fit.gamma[a] + t * g[a];
      cand = project_to_simplex(trial);
      double ascent = 0.0;
      for (int a = 0; a < action_count; ++a) ascent += g[a] * (cand[a] - fit.gamma[a]);
      fc = sharing_objective(cand, problem, config);
      if (fc >= f + 1e-4 * ascent) {
        accepted = true;
        step = 2.0 * t;
        break;
      }
    }
    fit.iterations = it + 1;
    if (!accepted || cand == fit.gamma) break;
    const double rel = std::abs(fc - f) / std::max(1.0, std::abs(f));
    fit.gamma = std::move(cand);
    f = fc;
    fit.objective_trace.push_back(f);
    if (rel < config.relative_tolerance) break;
  }
  return fit;
}

SharingWeights SharingWeights::identity(int actions) {
  SharingWeights w;
  w.gamma.assign(actions, std::vector<double>(actions, 0.0));
  for (int a = 0; a < actions; ++a) w.gamma[a][a] = 1.0;
  return w;
}

SharingWeights learn_sharing(std::span<const SharingProblem> problems, int action_count,
                             const SharingConfig& config, int threads) {
  std::vector<const SharingProblem*> by_action(action_count, nullptr);
  for (const auto& p : problems) {
    if (p.action < 0 || p.action >= action_count) throw std::invalid_argument("learn_sharing: action out of range");
    if (!p.images.empty()) by_action[p.action] = &p;
  }
  std::string missing;
  for (int a = 0; a < action_count; ++a) {
    if (!by_action[a]) missing += (missing.empty() ? "" : ", ") + std::to_string(a);
  }
  if (!missing.empty()) throw std::invalid_argument("learn_sharing: no validation data for actions " + missing);

  SharingWeights w;
  w.gamma.resize(action_count);
  parallel_for(action_count, threads, [&](int a) {
    w.gamma[a] = fit_sharing(*by_action[a], action_count, config).gamma;
  });
  return w;
}

JointResponses collect_responses(std::span<const ScoreMap> smoothed, Point2 gt, int negatives,
                                 double exclusion, double nms_radius) {
  const int actions = static_cast<int>(smoothed.size());
  const ScoreMap mean = mix_prior(smoothed, ActionPrior::uniform(actions));
  const int gx = std::clamp(static_cast<int>(std::lround(gt.x)), 0, mean.width - 1);
  const int gy = std::clamp(static_cast<int>(std::lround(gt.y)), 0, mean.height - 1);
  JointResponses jr;
  for (const auto& m : smoothed) jr.positive.push_back(m.at(gx, gy));
  for (const auto& peak : mine_negatives(mean, gt, negatives, exclusion, nms_radius)) {
    std::vector<double> v;
    for (const auto& m : smoothed) v.push_back(m.at(peak.x, peak.y));
    jr.negatives.push_back(std::move(v));
  }
  return jr;
}

std::string sharing_to_text(const SharingWeights& w) {
  std::ostringstream out;
  out << "# sharing weights: row = action, column = shared action\n";
  out << "actions " << w.action_count() << "\n";
  char buf[64];
  for (const auto& row : w.gamma) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", row[i]);
      out << (i ? " " : "") << buf;
    }
    out << "\n";
  }
  return out.str();
}

SharingWeights sharing_from_text(const std::string& text) {
  using R = FormatError::Reason;
  std::istringstream in(text);
  std::string line, key;
  int n = -1;
  SharingWeights w;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (n < 0) {
      if (!(ls >> key >> n) || key != "actions" || n < 1) throw FormatError(R::parse, "sharing: bad header");
      continue;
    }
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!ls.eof() || static_cast<int>(row.size()) != n) throw FormatError(R::parse, "sharing: bad row");
    w.gamma.push_back(std::move(row));
  }
  if (n < 0 || static_cast<int>(w.gamma.size()) != n) throw FormatError(R::parse, "sharing: row count mismatch");
  return w;
}

void save_sharing(const std::filesystem::path& path, const SharingWeights& w) {
  write_text_file(path, sharing_to_text(w));
}

SharingWeights load_sharing(const std::filesystem::path& path) {
  return sharing_from_text(read_text_file(path));
}

}  // namespace acps
