#include "acps/action.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "acps/errors.hpp"
#include "acps/kmeans.hpp"
#include "acps/parallel.hpp"

namespace acps {

Pose complete_joints(const Pose& pose) {
  if (static_cast<int>(pose.joints.size()) != kBodyJoints) {
    throw std::invalid_argument("complete_joints: expected 13 joints");
  }
  using namespace joint;
  const auto& p = pose.joints;
  Pose out = pose;
  const Point2 shoulders = 0.5 * (p[l_shoulder] + p[r_shoulder]);
  out.joints.push_back(0.5 * (p[head] + shoulders));
  out.joints.push_back(0.25 * (p[l_shoulder] + p[r_shoulder] + p[l_hip] + p[r_hip]));
  return out;
}

Pose normalize_pose(const Pose& c) {
  const Point2 origin = 0.5 * (c.joints[joint::l_hip] + c.joints[joint::r_hip]);
  const double torso = std::max(distance(c.joints[kNeck], c.joints[kBelly]), 1e-6);
  Pose out = c;
  for (auto& p : out.joints) p = (1.0 / torso) * (p - origin);
  return out;
}

const std::vector<Edge>& skeleton_edges() {
  using namespace joint;
  static const std::vector<Edge> edges = {
      {head, kNeck},       {l_shoulder, kNeck}, {r_shoulder, kNeck}, {l_elbow, l_shoulder},
      {l_wrist, l_elbow},  {r_elbow, r_shoulder}, {r_wrist, r_elbow}, {kBelly, kNeck},
      {l_hip, kBelly},     {r_hip, kBelly},     {l_knee, l_hip},     {l_ankle, l_knee},
      {r_knee, r_hip},     {r_ankle, r_knee}};
  return edges;
}

namespace {

std::string completed_name(int j) {
  if (j == kNeck) return "neck";
  if (j == kBelly) return "belly";
  return std::string(kJointNames[j]);
}

std::string edge_name(const Edge& e) { return completed_name(e.parent) + ">" + completed_name(e.child); }

}  // namespace

const std::vector<DescriptorType>& descriptor_registry() {
  static const std::vector<DescriptorType> reg = [] {
    std::vector<DescriptorType> r;
    for (int j = 0; j < kCompletedJoints; ++j) r.push_back({"coord:" + completed_name(j), DescriptorKind::coordinate, 2});
    for (int i = 0; i < kCompletedJoints; ++i) {
      for (int j = i + 1; j < kCompletedJoints; ++j) {
        r.push_back({"dist:" + completed_name(i) + "|" + completed_name(j), DescriptorKind::distance, 1});
      }
    }
    for (const Edge& e : skeleton_edges()) r.push_back({"orient:" + edge_name(e), DescriptorKind::orientation, 2});
    for (int j = 0; j < kCompletedJoints; ++j) {
      r.push_back({"dcoord:" + completed_name(j), DescriptorKind::coordinate_delta, 2});
    }
    for (const Edge& e : skeleton_edges()) {
      r.push_back({"dorient:" + edge_name(e), DescriptorKind::orientation_delta, 2});
    }
    return r;
  }();
  return reg;
}

namespace {

std::vector<double> orientation(const Pose& p, const Edge& e) {
  const Point2 d = p.joints[e.child] - p.joints[e.parent];
  const double n = std::hypot(d.x, d.y);
  if (n == 0.0) return {0.0, 0.0};
  return {d.y / n, d.x / n};
}

}  // namespace

DescriptorSet compute_descriptors(std::span<const Pose> sequence) {
  if (sequence.size() < 2) throw std::invalid_argument("compute_descriptors: need at least two frames");
  std::vector<Pose> norm;
  for (const Pose& p : sequence) norm.push_back(normalize_pose(complete_joints(p)));

  const auto& reg = descriptor_registry();
  const auto& edges = skeleton_edges();
  DescriptorSet set;
  set.streams.resize(reg.size());
  for (std::size_t f = 0; f < norm.size(); ++f) {
    const Pose& p = norm[f];
    std::size_t t = 0;
    for (int j = 0; j < kCompletedJoints; ++j) set.streams[t++].push_back({p.joints[j].x, p.joints[j].y});
    for (int i = 0; i < kCompletedJoints; ++i) {
      for (int j = i + 1; j < kCompletedJoints; ++j) set.streams[t++].push_back({distance(p.joints[i], p.joints[j])});
    }
    for (const Edge& e : edges) set.streams[t++].push_back(orientation(p, e));
    if (f == 0) continue;
    const Pose& q = norm[f - 1];
    for (int j = 0; j < kCompletedJoints; ++j) {
      set.streams[t++].push_back({p.joints[j].x - q.joints[j].x, p.joints[j].y - q.joints[j].y});
    }
    for (const Edge& e : edges) {
      const auto a = orientation(p, e), b = orientation(q, e);
      set.streams[t++].push_back({a[0] - b[0], a[1] - b[1]});
    }
  }
  return set;
}

namespace {

std::vector<double> flatten(std::span<const std::vector<double>> samples, int dim) {
  std::vector<double> flat;
  flat.reserve(samples.size() * dim);
  for (const auto& s : samples) {
    if (static_cast<int>(s.size()) != dim) throw std::invalid_argument("codebook samples differ in dimension");
    flat.insert(flat.end(), s.begin(), s.end());
  }
  return flat;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

Codebook build_codebook(std::span<const std::vector<double>> samples, int k, int restarts,
                        std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("build_codebook: no samples");
  const int dim = static_cast<int>(samples[0].size());
  const auto flat = flatten(samples, dim);
  const int distinct = count_distinct_rows(flat, dim);
  if (distinct < k) {
    throw std::invalid_argument("build_codebook: " + std::to_string(distinct) +
                                " distinct samples for k=" + std::to_string(k));
  }
  KMeansOptions opt;
  opt.restarts = restarts;
  opt.seed = seed;
  const KMeansResult km = weighted_kmeans(flat, dim, {}, k, opt);
  Codebook cb;
  cb.dim = dim;
  cb.compactness = km.objective;
  for (int c = 0; c < k; ++c) {
    const auto row = km.center(c);
    cb.centers.emplace_back(row.begin(), row.end());
  }
  return cb;
}

std::vector<double> video_histogram(std::span<const std::vector<double>> stream, const Codebook& cb) {
  const std::size_t k = cb.centers.size();
  if (k == 0) return {};
  std::vector<double> h(k, 0.0);
  if (stream.empty()) {
    std::fill(h.begin(), h.end(), 1.0 / static_cast<double>(k));
    return h;
  }
  for (const auto& s : stream) {
    std::size_t best = 0;
    double bd = sq_dist(s, cb.centers[0]);
    for (std::size_t c = 1; c < k; ++c) {
      const double d = sq_dist(s, cb.centers[c]);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    h[best] += 1.0;
  }
  for (double& v : h) v /= static_cast<double>(stream.size());
  return h;
}

double chi2_distance(std::span<const double> h, std::span<const double> g) {
  if (h.size() != g.size()) throw std::invalid_argument("chi2_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double den = h[i] + g[i];
    if (den > 0.0) s += (h[i] - g[i]) * (h[i] - g[i]) / den;
  }
  return 0.5 * s;
}

KernelMatrix build_kernel(const HistogramTable& hist) {
  const std::size_t n = hist.size();
  if (n < 2) throw std::invalid_argument("build_kernel: need at least two videos");
  const std::size_t T = hist[0].size();
  std::vector<std::vector<std::vector<double>>> D(T, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)));
  KernelMatrix K;
  K.channel_means.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        D[t][i][j] = D[t][j][i] = chi2_distance(hist[i][t], hist[j][t]);
        sum += 2.0 * D[t][i][j];
      }
    }
    K.channel_means[t] = sum / static_cast<double>(n * (n - 1));
    if (K.channel_means[t] > 0.0) ++K.channels_used;
  }
  K.values.assign(n, std::vector<double>(n, 1.0));
  if (K.channels_used == 0) return K;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        if (K.channel_means[t] > 0.0) s += D[t][i][j] / K.channel_means[t];
      }
      K.values[i][j] = K.values[j][i] = std::exp(-s / K.channels_used);
    }
  }
  return K;
}

std::vector<double> kernel_row(const std::vector<std::vector<double>>& h, const HistogramTable& ref,
                               std::span<const double> means) {
  int used = 0;
  for (double m : means) used += m > 0.0;
  std::vector<double> row(ref.size(), 1.0);
  if (used == 0) return row;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < means.size(); ++t) {
      if (means[t] > 0.0) s += chi2_distance(h[t], ref[i][t]) / means[t];
    }
    row[i] = std::exp(-s / used);
  }
  return row;
}

double BinarySvm::decision(std::span<const double> k) const {
  double f = bias;
  for (std::size_t i = 0; i < alpha.size(); ++i) f += alpha[i] * labels[i] * k[i];
  return f;
}

namespace {

struct Violation {
  int up = -1, low = -1;
  double gap = 0.0;
};

// Maximal violating pair over I_up / I_low of the dual with gradient G.
Violation max_violation(std::span<const double> alpha, std::span<const int> y,
                        std::span<const double> G, double C) {
  double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
  Violation v;
  for (std::size_t t = 0; t < alpha.size(); ++t) {
    const double s = -y[t] * G[t];
    const bool up = (y[t] == 1 && alpha[t] < C) || (y[t] == -1 && alpha[t] > 0);
    const bool low = (y[t] == -1 && alpha[t] < C) || (y[t] == 1 && alpha[t] > 0);
    if (up && s > gmax) {
      gmax = s;
      v.up = static_cast<int>(t);
    }
    if (low && s < gmin) {
      gmin = s;
      v.low = static_cast<int>(t);
    }
  }
  v.gap = (v.up < 0 || v.low < 0) ? 0.0 : gmax - gmin;
  return v;
}

std::vector<double> dual_gradient(const std::vector<std::vector<double>>& K, std::span<const int> y,
                                  std::span<const double> alpha) {
  const std::size_t n = alpha.size();
  std::vector<double> G(n, -1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) G[i] += y[i] * y[j] * K[i][j] * alpha[j];
  }
  return G;
}

}  // namespace

BinarySvm train_binary_svm(const std::vector<std::vector<double>>& K, std::span<const int> labels,
                           double C, double tolerance, int max_iterations) {
  const std::size_t n = labels.size();
  if (K.size() != n) throw std::invalid_argument("train_svm: kernel and label count differ");
  bool pos = false, neg = false;
  for (int l : labels) {
    if (l != 1 && l != -1) throw std::invalid_argument("train_svm: labels must be +1 or -1");
    pos |= l == 1;
    neg |= l == -1;
  }
  if (!pos || !neg) throw std::invalid_argument("train_svm: both classes must be present");

  BinarySvm svm;
  svm.labels.assign(labels.begin(), labels.end());
  svm.alpha.assign(n, 0.0);
  auto& a = svm.alpha;
  const auto& y = svm.labels;
  std::vector<double> G(n, -1.0);
  auto Q = [&](std::size_t i, std::size_t j) { return y[i] * y[j] * K[i][j]; };
  constexpr double kTau = 1e-12;

  for (int it = 0; it < max_iterations; ++it) {
    const Violation v = max_violation(a, y, G, C);
    if (v.gap < tolerance) break;
    svm.iterations = it + 1;
    const std::size_t i = v.up, j = v.low;
    const double ai = a[i], aj = a[j];
    if (y[i] != y[j]) {
      double quad = Q(i, i) + Q(j, j) + 2.0 * Q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0) {
        if (a[j] < 0) {
          a[j] = 0;
          a[i] = diff;
        }
      } else if (a[i] < 0) {
        a[i] = 0;
        a[j] = -diff;
      }
      if (diff > 0) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = C - diff;
        }
      } else if (a[j] > C) {
        a[j] = C;
        a[i] = C + diff;
      }
    } else {
      double quad = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = sum - C;
        }
      } else if (a[j] < 0) {
        a[j] = 0;
        a[i] = sum;
      }
      if (sum > C) {
        if (a[j] > C) {
          a[j] = C;
          a[i] = sum - C;
        }
      } else if (a[i] < 0) {
        a[i] = 0;
        a[j] = sum;
      }
    }
    const double di = a[i] - ai, dj = a[j] - aj;
    for (std::size_t t = 0; t < n; ++t) G[t] += Q(t, i) * di + Q(t, j) * dj;
  }

  // Bias from free vectors, or the middle of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum = 0.0;
  int free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (a[t] >= C) {
      if (y[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (a[t] <= 0) {
      if (y[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++free;
      sum += yg;
    }
  }
  const double rho = free > 0 ? sum / free : 0.5 * (ub + lb);
  svm.bias = -rho;
  return svm;
}

double kkt_violation(const BinarySvm& svm, const std::vector<std::vector<double>>& K, double C) {
  const auto G = dual_gradient(K, svm.labels, svm.alpha);
  return max_violation(svm.alpha, svm.labels, G, C).gap;
}

std::vector<std::vector<double>> ActionModel::histograms(std::span<const Pose> sequence) const {
  const DescriptorSet d = compute_descriptors(sequence);
  std::vector<std::vector<double>> h(codebooks.size());
  for (std::size_t t = 0; t < codebooks.size(); ++t) h[t] = video_histogram(d.streams[t], codebooks[t]);
  return h;
}

std::vector<double> ActionModel::decision_values(std::span<const Pose> sequence) const {
  const auto row = kernel_row(histograms(sequence), train_histograms, channel_means);
  std::vector<double> f;
  for (const auto& s : svms) f.push_back(s.decision(row));
  return f;
}

ActionModel train_svm(std::span<const std::vector<Pose>> videos, std::span<const int> labels,
                      int action_count, const ActionClassifierConfig& cfg) {
  if (videos.size() != labels.size()) throw std::invalid_argument("train_svm: video and label count differ");
  std::vector<int> per_action(action_count, 0);
  for (int l : labels) {
    if (l < 0 || l >= action_count) throw std::invalid_argument("train_svm: label out of range");
    ++per_action[l];
  }
  std::string missing;
  for (int a = 0; a < action_count; ++a) {
    if (per_action[a] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(a);
  }
  if (!missing.empty()) throw std::invalid_argument("train_svm: no training videos for actions " + missing);
  if (action_count < 2) throw std::invalid_argument("train_svm: need at least two actions");

  std::vector<DescriptorSet> desc(videos.size());
  parallel_for(static_cast<int>(videos.size()), cfg.threads,
               [&](int v) { desc[v] = compute_descriptors(videos[v]); });

  const auto& reg = descriptor_registry();
  ActionModel model;
  model.action_count = action_count;
  model.C = cfg.C;
  model.temperature = cfg.temperature;
  model.codebooks.resize(reg.size());
  parallel_for(static_cast<int>(reg.size()), cfg.threads, [&](int t) {
    std::vector<std::vector<double>> samples;
    for (const auto& d : desc) samples.insert(samples.end(), d.streams[t].begin(), d.streams[t].end());
    Codebook cb;
    cb.type = t;
    cb.dim = reg[t].dim;
    const auto flat = flatten(samples, reg[t].dim);
    const int k = std::min(cfg.codebook_size, count_distinct_rows(flat, reg[t].dim));
    if (k >= 2) {
      cb = build_codebook(samples, k, cfg.restarts, mix_seed(cfg.seed, static_cast<std::uint64_t>(t)));
      cb.type = t;
    }
    model.codebooks[t] = std::move(cb);
  });

  model.train_histograms.resize(videos.size());
  for (std::size_t v = 0; v < videos.size(); ++v) {
    auto& row = model.train_histograms[v];
    for (std::size_t t = 0; t < reg.size(); ++t) row.push_back(video_histogram(desc[v].streams[t], model.codebooks[t]));
  }
  const KernelMatrix K = build_kernel(model.train_histograms);
  model.channel_means = K.channel_means;
  model.train_labels.assign(labels.begin(), labels.end());
  model.svms.resize(action_count);
  parallel_for(action_count, cfg.threads, [&](int a) {
    std::vector<int> y;
    for (int l : labels) y.push_back(l == a ? 1 : -1);
    model.svms[a] = train_binary_svm(K.values, y, cfg.C);
  });
  return model;
}

ActionPrior prior_from_decisions(std::span<const double> f, double temperature, PriorMode mode) {
  if (f.empty()) throw std::invalid_argument("prior_from_decisions: no decision values");
  const int n = static_cast<int>(f.size());
  std::size_t best = 0;
  for (std::size_t a = 1; a < f.size(); ++a) {
    if (f[a] > f[best]) best = a;
  }
  if (mode == PriorMode::hard) return ActionPrior::hard(n, static_cast<int>(best));
  if (mode == PriorMode::uniform) return ActionPrior::uniform(n);
  std::vector<double> p(f.size());
  double z = 0.0;
  for (std::size_t a = 0; a < f.size(); ++a) z += p[a] = std::exp((f[a] - f[best]) / temperature);
  for (double& v : p) v /= z;
  // Push the rounding residue onto the largest entry so the sum is 1 to 1e-15.
  double s = 0.0;
  for (double v : p) s += v;
  p[best] += 1.0 - s;
  return ActionPrior::soft(std::move(p));
}

ActionPrior predict_prior(std::span<const Pose> sequence, const ActionModel& model, PriorMode mode) {
  return prior_from_decisions(model.decision_values(sequence), model.temperature, mode);
}

// ---------------------------------------------------------------------------
// Model directory
// ---------------------------------------------------------------------------

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void put_row(std::ostringstream& out, std::span<const double> row) {
  for (std::size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << g17(row[i]);
  out << "\n";
}

class Tokens {
 public:
  Tokens(const std::string& text, std::string file) : file_(std::move(file)) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) toks_.push_back(tok);
    }
  }
  std::string word() {
    if (pos_ >= toks_.size()) fail("unexpected end of file");
    return toks_[pos_++];
  }
  void expect(const std::string& w) {
    if (word() != w) fail("expected '" + w + "'");
  }
  long integer() {
    const std::string w = word();
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(w, &used);
    } catch (...) {
      used = 0;
    }
    if (used != w.size() || w.empty()) fail("bad integer '" + w + "'");
    return v;
  }
  double real() {
    const std::string w = word();
    std::istringstream s(w);
    double v;
    if (!(s >> v) || !s.eof()) fail("bad number '" + w + "'");
    return v;
  }
  void finish() {
    if (pos_ != toks_.size()) fail("trailing content");
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError(FormatError::Reason::parse, file_ + ": " + why);
  }

 private:
  std::string file_;
  std::vector<std::string> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_action_model(const std::filesystem::path& dir, const ActionModel& m) {
  std::filesystem::create_directories(dir);
  const auto& reg = descriptor_registry();
  {
    std::ostringstream out;
    out << "# codebook per descriptor type: centers one per row\n";
    out << "codebooks " << m.codebooks.size() << "\n";
    for (const auto& cb : m.codebooks) {
      out << "type " << cb.type << " " << reg.at(cb.type).name << " dim " << cb.dim << " k "
          << cb.centers.size() << " compactness " << g17(cb.compactness) << "\n";
      for (const auto& c : cb.centers) put_row(out, c);
    }
    write_text_file(dir / "codebooks.txt", out.str());
  }
  {
    std::ostringstream out;
    out << "# kernel channels: type, name, mean chi-square distance (0 = unused)\n";
    out << "channels " << m.channel_means.size() << "\n";
    for (std::size_t t = 0; t < m.channel_means.size(); ++t) {
      out << t << " " << reg.at(t).name << " " << g17(m.channel_means[t]) << "\n";
    }
    write_text_file(dir / "channels.txt", out.str());
  }
  {
    std::ostringstream out;
    out << "# one-vs-all dual coefficients over the training videos\n";
    out << "actions " << m.action_count << " C " << g17(m.C) << " temperature " << g17(m.temperature)
        << " videos " << m.train_labels.size() << "\n";
    out << "labels";
    for (int l : m.train_labels) out << " " << l;
    out << "\n";
    for (std::size_t a = 0; a < m.svms.size(); ++a) {
      out << "action " << a << " bias " << g17(m.svms[a].bias) << " iterations " << m.svms[a].iterations << "\n";
      put_row(out, m.svms[a].alpha);
    }
    write_text_file(dir / "svm.txt", out.str());
  }
  {
    std::ostringstream out;
    out << "# training histograms: video, channel, bins\n";
    out << "videos " << m.train_histograms.size() << " channels " << m.codebooks.size() << "\n";
    for (std::size_t v = 0; v < m.train_histograms.size(); ++v) {
      for (std::size_t t = 0; t < m.train_histograms[v].size(); ++t) {
        const auto& h = m.train_histograms[v][t];
        out << v << " " << t << " " << h.size();
        for (double x : h) out << " " << g17(x);
        out << "\n";
      }
    }
    write_text_file(dir / "histograms.txt", out.str());
  }
}

ActionModel load_action_model(const std::filesystem::path& dir) {
  const auto& reg = descriptor_registry();
  ActionModel m;
  {
    Tokens tk(read_text_file(dir / "codebooks.txt"), "codebooks.txt");
    tk.expect("codebooks");
    const long n = tk.integer();
    if (n != static_cast<long>(reg.size())) tk.fail("codebook count does not match the descriptor registry");
    for (long t = 0; t < n; ++t) {
      Codebook cb;
      tk.expect("type");
      cb.type = static_cast<int>(tk.integer());
      if (cb.type != t) tk.fail("codebooks out of order");
      if (tk.word() != reg[t].name) tk.fail("descriptor name mismatch");
      tk.expect("dim");
      cb.dim = static_cast<int>(tk.integer());
      if (cb.dim != reg[t].dim) tk.fail("descriptor dimension mismatch");
      tk.expect("k");
      const long k = tk.integer();
      if (k < 0 || k > 100000) tk.fail("bad codebook size");
      tk.expect("compactness");
      cb.compactness = tk.real();
      for (long c = 0; c < k; ++c) {
        std::vector<double> row(cb.dim);
        for (double& x : row) x = tk.real();
        cb.centers.push_back(std::move(row));
      }
      m.codebooks.push_back(std::move(cb));
    }
    tk.finish();
  }
  {
    Tokens tk(read_text_file(dir / "channels.txt"), "channels.txt");
    tk.expect("channels");
    const long n = tk.integer();
    if (n != static_cast<long>(reg.size())) tk.fail("channel count mismatch");
    for (long t = 0; t < n; ++t) {
      if (tk.integer() != t || tk.word() != reg[t].name) tk.fail("channel registry mismatch");
      m.channel_means.push_back(tk.real());
    }
    tk.finish();
  }
  {
    Tokens tk(read_text_file(dir / "svm.txt"), "svm.txt");
    tk.expect("actions");
    m.action_count = static_cast<int>(tk.integer());
    tk.expect("C");
    m.C = tk.real();
    tk.expect("temperature");
    m.temperature = tk.real();
    tk.expect("videos");
    const long n = tk.integer();
    if (m.action_count < 1 || n < 2 || n > 10000000) tk.fail("bad header");
    tk.expect("labels");
    for (long v = 0; v < n; ++v) m.train_labels.push_back(static_cast<int>(tk.integer()));
    for (int a = 0; a < m.action_count; ++a) {
      BinarySvm s;
      tk.expect("action");
      if (tk.integer() != a) tk.fail("actions out of order");
      tk.expect("bias");
      s.bias = tk.real();
      tk.expect("iterations");
      s.iterations = static_cast<int>(tk.integer());
      for (long v = 0; v < n; ++v) {
        s.alpha.push_back(tk.real());
        s.labels.push_back(m.train_labels[v] == a ? 1 : -1);
      }
      m.svms.push_back(std::move(s));
    }
    tk.finish();
  }
  {
    Tokens tk(read_text_file(dir / "histograms.txt"), "histograms.txt");
    tk.expect("videos");
    const long n = tk.integer();
    tk.expect("channels");
    const long T = tk.integer();
    if (n != static_cast<long>(m.train_labels.size()) || T != static_cast<long>(m.codebooks.size())) {
      tk.fail("histogram table does not match the model");
    }
    m.train_histograms.assign(n, std::vector<std::vector<double>>(T));
    for (long v = 0; v < n; ++v) {
      for (long t = 0; t < T; ++t) {
        if (tk.integer() != v || tk.integer() != t) tk.fail("histograms out of order");
        const long k = tk.integer();
        if (k != static_cast<long>(m.codebooks[t].centers.size())) tk.fail("histogram length mismatch");
        for (long i = 0; i < k; ++i) m.train_histograms[v][t].push_back(tk.real());
      }
    }
    tk.finish();
  }
  return m;
}

}  // namespace acps
