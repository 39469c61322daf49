#include "acps/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "acps/errors.hpp"
#include "acps/parallel.hpp"

namespace acps {

namespace {

// Seed streams derived from TrainingConfig::seed.
constexpr std::uint64_t kForestStream = 100;
constexpr std::uint64_t kPairwiseStream = 200;
constexpr std::uint64_t kActionStream = 300;

}  // namespace

std::string to_string(ConditionMode m) {
  switch (m) {
    case ConditionMode::independent: return "indep";
    case ConditionMode::cond_hard: return "hard";
    case ConditionMode::cond_soft: return "soft";
  }
  return "?";
}

ConditionMode condition_mode_from_string(const std::string& s) {
  if (s == "indep" || s == "independent") return ConditionMode::independent;
  if (s == "hard") return ConditionMode::cond_hard;
  if (s == "soft") return ConditionMode::cond_soft;
  throw std::invalid_argument("unknown conditioning mode '" + s + "' (expected indep, hard or soft)");
}

namespace {
std::string mode_label(ConditionMode m) {
  switch (m) {
    case ConditionMode::independent: return "Indep.";
    case ConditionMode::cond_hard: return "Cond.hard";
    case ConditionMode::cond_soft: return "Cond.soft";
  }
  return "?";
}
}  // namespace

std::string AcpsConfig::unary_label() const { return mode_label(unary) + (sharing ? "+AS" : ""); }
std::string AcpsConfig::binary_label() const { return mode_label(binary); }

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

Split split_training_videos(const Dataset& ds) {
  Split s;
  for (int a = 0; a < ds.action_count(); ++a) {
    std::vector<int> mine;
    for (int v = 0; v < static_cast<int>(ds.videos.size()); ++v) {
      if (ds.videos[v].annotation.action == a) mine.push_back(v);
    }
    const std::size_t half = (mine.size() + 1) / 2;
    for (std::size_t i = 0; i < mine.size(); ++i) (i < half ? s.train : s.validation).push_back(mine[i]);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

namespace {

std::vector<LabeledFrame> labeled_frames(const Dataset& ds, std::span<const int> videos) {
  std::vector<LabeledFrame> out;
  for (int v : videos) {
    const Video& vid = ds.videos[v];
    for (std::size_t f = 0; f < vid.frames.size(); ++f) {
      out.push_back({&vid.frames[f], vid.annotation.frames[f], vid.annotation.action});
    }
  }
  return out;
}

}  // namespace

std::vector<ConditionalForest> train_forests(const Dataset& ds, const Split& split, const TrainingConfig& cfg) {
  const auto train = labeled_frames(ds, split.train);
  const auto validation = labeled_frames(ds, split.validation);
  std::vector<ConditionalForest> forests;
  for (int j = 0; j < kBodyJoints; ++j) {
    ForestTrainingConfig fc = cfg.forest;
    fc.seed = mix_seed(cfg.seed, kForestStream + j);
    fc.threads = cfg.threads;
    forests.push_back(train_forest(train, validation, j, ds.action_count(), fc));
  }
  return forests;
}

PairwiseStatistics fit_pairwise_model(const Dataset& ds, const TrainingConfig& cfg) {
  std::vector<TrainingPose> poses;
  for (const Video& v : ds.videos) {
    for (const Pose& p : v.annotation.frames) poses.push_back({p, v.annotation.action});
  }
  PairwiseFitOptions opt = cfg.pairwise;
  opt.seed = mix_seed(cfg.seed, kPairwiseStream);
  return fit_pairwise_statistics(poses, KinematicTree::body(), ds.action_count(), opt);
}

SharingWeights learn_sharing_weights(const Dataset& ds, const Split& split,
                                     std::span<const ConditionalForest> forests, const TrainingConfig& cfg) {
  const int A = ds.action_count();
  std::vector<ConditionalForest> train_only;
  for (const auto& f : forests) train_only.push_back(f.subset(0, f.train_trees > 0 ? f.train_trees : static_cast<int>(f.trees.size())));

  struct Item {
    int video, frame;
  };
  std::vector<Item> items;
  for (int v : split.validation) {
    for (int f = 0; f < static_cast<int>(ds.videos[v].frames.size()); ++f) items.push_back({v, f});
  }
  std::vector<SharingImage> images(items.size());
  parallel_for(static_cast<int>(items.size()), cfg.threads, [&](int i) {
    const Video& vid = ds.videos[items[i].video];
    const FeatureStack& stack = vid.frames[items[i].frame];
    const Pose& gt = vid.annotation.frames[items[i].frame];
    for (int j = 0; j < kBodyJoints; ++j) {
      std::vector<ScoreMap> smoothed;
      for (const ScoreMap& m : vote_maps(train_only[j], stack)) smoothed.push_back(smooth(m, cfg.smoothing_sigma));
      images[i].joints.push_back(
          collect_responses(smoothed, gt.joints[j], cfg.negatives, cfg.negative_exclusion, cfg.nms_radius));
    }
  });
  std::vector<SharingProblem> problems(A);
  for (int a = 0; a < A; ++a) problems[a].action = a;
  for (std::size_t i = 0; i < items.size(); ++i) {
    problems[ds.videos[items[i].video].annotation.action].images.push_back(std::move(images[i]));
  }
  return learn_sharing(problems, A, cfg.sharing, cfg.threads);
}

std::vector<std::vector<Pose>> held_out_poses(const Dataset& ds, const Split& split, const Models& models, int scales,
                                              double factor, int threads) {
  if (models.forests.empty() || !models.pairwise) throw ModelError("held-out poses need forests and a pairwise model");
  auto half = [&](bool validation_trees) {
    Models m = models;
    for (auto& f : m.forests) {
      const int total = static_cast<int>(f.trees.size());
      const int first = validation_trees ? f.train_trees : 0;
      const int count = validation_trees ? total - f.train_trees : f.train_trees;
      // A forest grown without a validation split has only training trees.
      if (count > 0) f = f.subset(first, count);
    }
    return m;
  };
  const Models for_train = half(true), for_validation = half(false);
  std::vector<const Models*> which(ds.videos.size(), &models);
  for (int v : split.train) which[v] = &for_train;
  for (int v : split.validation) which[v] = &for_validation;

  AcpsConfig pass1;
  pass1.iterations = 1;
  pass1.scales = scales;
  pass1.factor = factor;
  std::vector<std::vector<Pose>> out(ds.videos.size());
  parallel_for(static_cast<int>(ds.videos.size()), threads, [&](int v) {
    for (const auto& e : run_acps(ds.videos[v], *which[v], pass1).poses) out[v].push_back(e.pose);
  });
  return out;
}

ActionModel train_action_model(const Dataset& ds, const Split& split, const Models& models, const TrainingConfig& cfg) {
  std::vector<std::vector<Pose>> sequences;
  if (cfg.action_source == ActionTrainingSource::estimated) {
    sequences = held_out_poses(ds, split, models, cfg.scales, cfg.factor, cfg.threads);
  } else {
    for (const Video& v : ds.videos) sequences.push_back(v.annotation.frames);
  }
  std::vector<int> labels;
  for (const Video& v : ds.videos) labels.push_back(v.annotation.action);
  ActionClassifierConfig ac = cfg.action;
  ac.seed = mix_seed(cfg.seed, kActionStream);
  ac.threads = cfg.threads;
  return train_svm(sequences, labels, ds.action_count(), ac);
}

Models train_models(const Dataset& ds, const TrainingConfig& cfg) {
  Models m;
  m.action_names = ds.action_names;
  const Split split = split_training_videos(ds);
  m.forests = train_forests(ds, split, cfg);
  m.pairwise = fit_pairwise_model(ds, cfg);
  m.sharing = learn_sharing_weights(ds, split, m.forests, cfg);
  m.action = train_action_model(ds, split, m, cfg);
  return m;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

FrameEvidence compute_evidence(const FeatureStack& stack, const Models& models, int scales, double factor) {
  if (static_cast<int>(models.forests.size()) != kBodyJoints) {
    throw ModelError("models: expected 13 joint forests, found " + std::to_string(models.forests.size()));
  }
  const ScalePyramid pyr = build_pyramid(stack, scales, factor);
  FrameEvidence ev;
  for (const FeatureStack& level : pyr.levels) {
    std::vector<std::vector<ScoreMap>> joints;
    for (const auto& forest : models.forests) joints.push_back(vote_maps(forest, level));
    ev.maps.push_back(std::move(joints));
  }
  return ev;
}

namespace {

ActionPrior prior_for(ConditionMode mode, const ActionPrior& estimate) {
  switch (mode) {
    case ConditionMode::independent: return ActionPrior::uniform(estimate.size());
    case ConditionMode::cond_hard: return ActionPrior::hard(estimate.size(), estimate.argmax());
    case ConditionMode::cond_soft: return estimate;
  }
  return estimate;
}

}  // namespace

std::vector<ScoreMap> unaries_for(const FrameEvidence& ev, int level, ConditionMode mode, bool sharing,
                                  const ActionPrior& estimate, const Models& models) {
  const ActionPrior prior = prior_for(mode, estimate);
  std::vector<double> gamma;
  if (sharing) {
    if (!models.sharing) throw ModelError("config requests appearance sharing but no sharing weights are loaded");
    const auto& g = models.sharing->gamma;
    gamma.assign(prior.size(), 0.0);
    for (int a = 0; a < prior.size(); ++a) {
      for (int b = 0; b < prior.size(); ++b) gamma[b] += prior.probs[a] * g.at(a).at(b);
    }
  }
  std::vector<ScoreMap> out;
  for (int j = 0; j < kBodyJoints; ++j) {
    const auto& per_action = ev.maps.at(level).at(j);
    ScoreMap m = sharing ? apply_sharing(per_action, gamma) : mix_prior(per_action, prior);
    m.joint = j;
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

PoseEstimate infer_frame(const FrameEvidence& ev, const Models& models, ConditionMode unary, bool sharing,
                         const PairwiseModel& pairwise, const ActionPrior& estimate, double factor) {
  std::vector<std::vector<ScoreMap>> levels;
  for (int l = 0; l < static_cast<int>(ev.maps.size()); ++l) {
    levels.push_back(unaries_for(ev, l, unary, sharing, estimate, models));
  }
  return infer_multiscale(models.tree, levels, pairwise, factor);
}

std::vector<Pose> poses_of(std::span<const PoseEstimate> est) {
  std::vector<Pose> out;
  for (const auto& e : est) out.push_back(e.pose);
  return out;
}

bool needs_prior(const AcpsConfig& c) {
  return c.unary != ConditionMode::independent || c.binary != ConditionMode::independent;
}

}  // namespace

std::vector<VideoResult> run_acps_grid(const Video& video, const Models& models,
                                       std::span<const AcpsConfig> configs, int threads) {
  if (configs.empty()) return {};
  const int scales = configs[0].scales;
  const double factor = configs[0].factor;
  for (const auto& c : configs) {
    if (c.scales != scales || c.factor != factor) throw std::invalid_argument("run_acps_grid: configs differ in pyramid settings");
    if (c.iterations < 1) throw std::invalid_argument("run_acps: iterations must be at least 1");
    if (c.sharing && !models.sharing) throw ModelError("config requests appearance sharing but no sharing weights are loaded");
    if (c.iterations > 1 && needs_prior(c) && c.prior_source == PriorSource::predicted && !models.action) {
      throw ModelError("config needs an action prior but no action model is loaded");
    }
  }
  if (!models.pairwise) throw ModelError("no pairwise model loaded");
  const int A = models.action_count();
  const int n = static_cast<int>(video.frames.size());
  std::vector<FrameEvidence> evidence(n);
  parallel_for(n, threads, [&](int f) { evidence[f] = compute_evidence(video.frames[f], models, scales, factor); });

  const ActionPrior uniform = ActionPrior::uniform(A);
  const PairwiseModel pw_uniform = models.pairwise->condition(uniform);
  std::vector<PoseEstimate> first(n);
  parallel_for(n, threads, [&](int f) {
    first[f] = infer_frame(evidence[f], models, ConditionMode::independent, false, pw_uniform, uniform, factor);
  });

  std::vector<VideoResult> results;
  for (const AcpsConfig& cfg : configs) {
    VideoResult r;
    r.first_pass = first;
    r.poses = first;
    r.prior = uniform;
    for (int it = 1; it < cfg.iterations; ++it) {
      ActionPrior estimate = uniform;
      if (cfg.prior_source == PriorSource::ground_truth) {
        estimate = ActionPrior::hard(A, video.annotation.action);
      } else if (needs_prior(cfg) && n >= 2) {  // the classifier needs two frames
        estimate = predict_prior(poses_of(r.poses), *models.action, PriorMode::soft);
      }
      const PairwiseModel pw = models.pairwise->condition(prior_for(cfg.binary, estimate));
      std::vector<PoseEstimate> next(n);
      parallel_for(n, threads, [&](int f) {
        next[f] = infer_frame(evidence[f], models, cfg.unary, cfg.sharing, pw, estimate, factor);
      });
      r.poses = std::move(next);
      r.prior = estimate;
    }
    results.push_back(std::move(r));
  }
  return results;
}

VideoResult run_acps(const Video& video, const Models& models, const AcpsConfig& config, int threads) {
  const AcpsConfig one[] = {config};
  return std::move(run_acps_grid(video, models, one, threads)[0]);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

ApkResult apk(std::span<const std::vector<Pose>> predictions, std::span<const VideoAnnotation> annotations,
              double threshold) {
  if (predictions.size() != annotations.size()) throw std::invalid_argument("apk: video count mismatch");
  ApkResult r;
  r.per_joint.assign(kBodyJoints, 0.0);
  for (std::size_t v = 0; v < predictions.size(); ++v) {
    const auto& ann = annotations[v];
    if (predictions[v].size() != ann.frames.size()) {
      throw std::invalid_argument("apk: video " + std::to_string(v) + " has " + std::to_string(predictions[v].size()) +
                                  " predicted frames for " + std::to_string(ann.frames.size()) + " annotated");
    }
    for (std::size_t f = 0; f < ann.frames.size(); ++f) {
      const double size = ann.person_size.at(f);
      for (int j = 0; j < kBodyJoints; ++j) {
        if (distance(predictions[v][f].joints.at(j), ann.frames[f].joints.at(j)) <= threshold * size) r.per_joint[j] += 1.0;
      }
      ++r.frames;
    }
  }
  if (r.frames == 0) throw std::invalid_argument("apk: no frames");
  double sum = 0.0;
  for (double& v : r.per_joint) sum += v /= r.frames;
  r.mean = sum / kBodyJoints;
  return r;
}

std::vector<AcpsConfig> ablation_grid(const AcpsConfig& base) {
  struct Row {
    ConditionMode mode;
    bool sharing;
  };
  const Row rows[] = {{ConditionMode::independent, false},
                      {ConditionMode::cond_hard, false},
                      {ConditionMode::cond_hard, true},
                      {ConditionMode::cond_soft, false},
                      {ConditionMode::cond_soft, true}};
  const ConditionMode cols[] = {ConditionMode::independent, ConditionMode::cond_hard, ConditionMode::cond_soft};
  std::vector<AcpsConfig> grid;
  for (const Row& r : rows) {
    for (ConditionMode c : cols) {
      AcpsConfig cfg = base;
      cfg.unary = r.mode;
      cfg.sharing = r.sharing;
      cfg.binary = c;
      grid.push_back(cfg);
    }
  }
  return grid;
}

AblationTable run_ablation(const Dataset& test, const Models& models, std::span<const AcpsConfig> grid,
                           std::span<const double> thresholds, int threads) {
  const int V = static_cast<int>(test.videos.size());
  std::vector<std::vector<VideoResult>> per_video(V);
  parallel_for(V, threads, [&](int v) { per_video[v] = run_acps_grid(test.videos[v], models, grid, 1); });

  std::vector<VideoAnnotation> annotations;
  for (const Video& v : test.videos) annotations.push_back(v.annotation);
  AblationTable table;
  table.thresholds.assign(thresholds.begin(), thresholds.end());
  for (std::size_t c = 0; c < grid.size(); ++c) {
    std::vector<std::vector<Pose>> preds;
    for (int v = 0; v < V; ++v) preds.push_back(poses_of(per_video[v][c].poses));
    AblationCell cell{grid[c], {}};
    for (double t : thresholds) cell.apk.push_back(apk(preds, annotations, t).mean);
    table.cells.push_back(std::move(cell));
  }
  return table;
}

namespace {
std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace

std::string AblationTable::to_text() const {
  std::vector<std::string> rows, cols;
  for (const auto& c : cells) {
    if (std::find(rows.begin(), rows.end(), c.config.unary_label()) == rows.end()) rows.push_back(c.config.unary_label());
    if (std::find(cols.begin(), cols.end(), c.config.binary_label()) == cols.end()) cols.push_back(c.config.binary_label());
  }
  std::ostringstream out;
  const int first = 16, width = 12;
  auto pad = [](std::string s, int w) {
    if (static_cast<int>(s.size()) < w) s.append(w - s.size(), ' ');
    return s;
  };
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    if (t) out << "\n";
    out << "APK@" << fixed(thresholds[t], 2) << " (unary rows, binary columns)\n";
    out << pad("", first);
    for (const auto& c : cols) out << pad(c, width);
    out << "\n";
    for (const auto& r : rows) {
      out << pad(r, first);
      for (const auto& c : cols) {
        std::string v = "-";
        for (const auto& cell : cells) {
          if (cell.config.unary_label() == r && cell.config.binary_label() == c) v = fixed(cell.apk[t], 4);
        }
        out << pad(v, width);
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << "unary,sharing,binary,threshold,apk\n";
  for (const auto& c : cells) {
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      out << to_string(c.config.unary) << "," << (c.config.sharing ? 1 : 0) << "," << to_string(c.config.binary) << ","
          << fixed(thresholds[t], 2) << "," << fixed(c.apk[t], 6) << "\n";
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Overlay
// ---------------------------------------------------------------------------

void write_overlay(const std::filesystem::path& path, const FeatureStack& stack, int channel, const Pose& pose,
                   const KinematicTree& tree) {
  if (channel < 0 || channel >= stack.channels()) throw std::invalid_argument("overlay: channel out of range");
  const int w = stack.width(), h = stack.height();
  const auto ch = stack.channel(channel);
  const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
  const double range = *hi > *lo ? *hi - *lo : 1.0;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (int i = 0; i < w * h; ++i) {
    const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (ch[i] - *lo) / range));
    rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = g;
  }
  auto put = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * w + x);
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  };
  for (const Edge& e : tree.edges) {
    const Point2 a = pose.joints.at(e.child), b = pose.joints.at(e.parent);
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y)))));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      put(static_cast<int>(std::lround(a.x + t * (b.x - a.x))), static_cast<int>(std::lround(a.y + t * (b.y - a.y))), 255, 0, 0);
    }
  }
  for (const Point2& p : pose.joints) put(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)), 0, 255, 0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace acps
