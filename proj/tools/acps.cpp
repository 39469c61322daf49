// acps: train, run and evaluate action-conditioned pictorial structures.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acps/errors.hpp"
#include "acps/model_store.hpp"
#include "acps/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace acps;

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  usage error: unknown flag, invalid value, unreadable input\n"
    "  2  format error: malformed stack, annotation, manifest or model file\n"
    "  3  model error: missing model component or manifest hash mismatch\n"
    "  4  numeric failure: an optimizer or fitter produced no usable result\n"
    "Failures print one line to stderr: error: code=N kind=K msg=...";

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker threads; never changes results")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

struct InferFlags {
  std::string mode, unary = "indep", binary = "indep";
  bool sharing = false;
  bool gt_prior = false;
  int iterations = 2;
  int scales = 4;
  double factor = 0.8;
};

void add_infer_flags(CLI::App* cmd, InferFlags& f) {
  const auto modes = CLI::IsMember({"indep", "hard", "soft"});
  cmd->add_option("--mode", f.mode, "Sets both --unary and --binary")->check(modes);
  cmd->add_option("--unary", f.unary, "Unary conditioning")->capture_default_str()->check(modes);
  cmd->add_option("--binary", f.binary, "Binary conditioning")->capture_default_str()->check(modes);
  cmd->add_flag("--sharing", f.sharing, "Mix unaries with the learned sharing weights");
  cmd->add_flag("--gt-prior", f.gt_prior, "Condition on the annotated action instead of the classifier");
  cmd->add_option("--iterations", f.iterations, "Passes, including the uniform-prior pass")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--scales", f.scales, "Pyramid levels")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--factor", f.factor, "Pyramid downscale factor")->capture_default_str()->check(CLI::Range(0.05, 1.0));
}

AcpsConfig to_config(const InferFlags& f) {
  AcpsConfig c;
  c.unary = condition_mode_from_string(f.mode.empty() ? f.unary : f.mode);
  c.binary = condition_mode_from_string(f.mode.empty() ? f.binary : f.mode);
  c.sharing = f.sharing;
  c.iterations = f.iterations;
  c.scales = f.scales;
  c.factor = f.factor;
  c.prior_source = f.gt_prior ? PriorSource::ground_truth : PriorSource::predicted;
  return c;
}

nlohmann::ordered_json config_json(const AcpsConfig& c) {
  return {{"unary", to_string(c.unary)},
          {"sharing", c.sharing},
          {"binary", to_string(c.binary)},
          {"iterations", c.iterations},
          {"scales", c.scales},
          {"factor", c.factor},
          {"prior", c.prior_source == PriorSource::ground_truth ? "ground_truth" : "predicted"}};
}

AcpsConfig config_from_json(const nlohmann::json& j) {
  AcpsConfig c;
  c.unary = condition_mode_from_string(j.at("unary").get<std::string>());
  c.sharing = j.at("sharing").get<bool>();
  c.binary = condition_mode_from_string(j.at("binary").get<std::string>());
  c.iterations = j.at("iterations").get<int>();
  c.scales = j.at("scales").get<int>();
  c.factor = j.at("factor").get<double>();
  c.prior_source = j.at("prior").get<std::string>() == "ground_truth" ? PriorSource::ground_truth : PriorSource::predicted;
  return c;
}

std::vector<double> default_thresholds(std::vector<double> t) {
  if (t.empty()) t = {0.1, 0.2};
  return t;
}

void emit_table(const AblationTable& table, const std::string& text_path, const std::string& csv_path) {
  const std::string text = table.to_text();
  std::cout << text;
  if (!text_path.empty()) write_text_file(text_path, text);
  if (!csv_path.empty()) write_text_file(csv_path, table.to_csv());
}

[[noreturn]] void fail(int code, const char* kind, std::string msg) {
  for (char& ch : msg) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::fprintf(stderr, "error: code=%d kind=%s msg=%s\n", code, kind, msg.c_str());
  std::fflush(stderr);
  std::exit(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-conditioned pictorial structures: training, inference and evaluation"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  // synth
  Common synth_c;
  std::string synth_out;
  int synth_actions = 2, synth_videos = 8, synth_frames = 10, synth_distractors = 2;
  std::uint64_t spec_seed = 7;
  double synth_noise = 0.05;
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset of stick-figure videos");
  add_common(synth, synth_c);
  synth->add_option("--out", synth_out, "Dataset directory")->required();
  synth->add_option("--actions", synth_actions)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--videos", synth_videos)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_frames)->capture_default_str()->check(CLI::Range(2, 100000));
  synth->add_option("--noise", synth_noise, "Gaussian noise sigma")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--distractors", synth_distractors, "Distractor blobs per frame")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--spec-seed", spec_seed, "Seed of the per-action styles")->capture_default_str();

  // train-forests
  Common tf_c;
  std::string tf_data, tf_models;
  ForestTrainingConfig tf;
  auto* train_f = app.add_subcommand("train-forests", "Train one conditional regression forest per joint");
  add_common(train_f, tf_c);
  train_f->add_option("--data", tf_data, "Training dataset directory")->required();
  train_f->add_option("--models", tf_models, "Model directory")->required();
  train_f->add_option("--trees", tf.trees, "Trees per forest, split evenly over train/validation")->capture_default_str()->check(CLI::PositiveNumber);
  train_f->add_option("--depth", tf.tree.max_depth)->capture_default_str()->check(CLI::PositiveNumber);
  train_f->add_option("--min-leaf", tf.tree.min_leaf)->capture_default_str()->check(CLI::PositiveNumber);
  train_f->add_option("--candidates", tf.tree.candidates, "Split candidates per node")->capture_default_str()->check(CLI::PositiveNumber);
  train_f->add_option("--window", tf.tree.window_radius, "Patch test radius")->capture_default_str()->check(CLI::PositiveNumber);
  train_f->add_option("--vote-cap", tf.tree.vote_cap, "Votes kept per leaf and action")->capture_default_str()->check(CLI::PositiveNumber);
  train_f->add_option("--positives", tf.patches.positives, "Positive patches per tree")->capture_default_str()->check(CLI::PositiveNumber);
  train_f->add_option("--negatives", tf.patches.negatives, "Negative patches per tree")->capture_default_str()->check(CLI::NonNegativeNumber);
  train_f->add_option("--patch-images", tf.patches.images, "Images sampled per tree")->capture_default_str()->check(CLI::PositiveNumber);

  // fit-pairwise
  Common fp_c;
  std::string fp_data, fp_models;
  PairwiseFitOptions fp;
  auto* fit_p = app.add_subcommand("fit-pairwise", "Fit Gaussian-mixture deformation statistics");
  add_common(fit_p, fp_c);
  fit_p->add_option("--data", fp_data, "Training dataset directory")->required();
  fit_p->add_option("--models", fp_models, "Model directory")->required();
  fit_p->add_option("-K,--clusters", fp.clusters)->capture_default_str()->check(CLI::PositiveNumber);
  fit_p->add_option("--alpha", fp.alpha, "Cluster weight exponent")->capture_default_str()->check(CLI::NonNegativeNumber);
  fit_p->add_option("--restarts", fp.restarts)->capture_default_str()->check(CLI::PositiveNumber);

  // learn-sharing
  Common ls_c;
  std::string ls_data, ls_models;
  SharingConfig ls;
  double ls_sigma = 3.0;
  int ls_negatives = 10;
  auto* learn_s = app.add_subcommand("learn-sharing", "Learn appearance-sharing weights on the validation split");
  add_common(learn_s, ls_c);
  learn_s->add_option("--data", ls_data, "Training dataset directory")->required();
  learn_s->add_option("--models", ls_models, "Model directory holding the forests")->required();
  learn_s->add_option("--lambda", ls.lambda, "Regularisation weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  learn_s->add_option("--sigma", ls_sigma, "Smoothing of the responses")->capture_default_str()->check(CLI::PositiveNumber);
  learn_s->add_option("--mined", ls_negatives, "Negatives mined per image and joint")->capture_default_str()->check(CLI::NonNegativeNumber);

  // train-action
  Common ta_c;
  std::string ta_data, ta_models;
  ActionClassifierConfig ta;
  auto* train_a = app.add_subcommand("train-action", "Train the pose-based action classifier");
  add_common(train_a, ta_c);
  train_a->add_option("--data", ta_data, "Training dataset directory")->required();
  train_a->add_option("--models", ta_models, "Model directory")->required();
  train_a->add_option("--codebook", ta.codebook_size, "Codewords per descriptor type")->capture_default_str()->check(CLI::Range(2, 100000));
  train_a->add_option("--restarts", ta.restarts)->capture_default_str()->check(CLI::PositiveNumber);
  train_a->add_option("-C,--C", ta.C, "SVM soft-margin constant")->capture_default_str()->check(CLI::PositiveNumber);
  train_a->add_option("--temperature", ta.temperature, "Softmax temperature of the prior")->capture_default_str()->check(CLI::PositiveNumber);
  std::string ta_from = "estimated";
  int ta_scales = 4;
  double ta_factor = 0.8;
  train_a->add_option("--from", ta_from, "Train on held-out pose estimates (needs forests and pairwise) or on annotations")
      ->capture_default_str()
      ->check(CLI::IsMember({"estimated", "gt"}));
  train_a->add_option("--scales", ta_scales, "Pyramid levels for the estimates")->capture_default_str()->check(CLI::PositiveNumber);
  train_a->add_option("--factor", ta_factor)->capture_default_str()->check(CLI::Range(0.05, 1.0));

  // infer
  Common inf_c;
  InferFlags inf;
  std::string inf_data, inf_models, inf_out, inf_overlays;
  int overlay_channel = 0;
  auto* infer = app.add_subcommand("infer", "Estimate poses for every video of a dataset");
  add_common(infer, inf_c);
  add_infer_flags(infer, inf);
  infer->add_option("--data", inf_data, "Dataset directory")->required();
  infer->add_option("--models", inf_models, "Model directory")->required();
  infer->add_option("--out", inf_out, "Predictions file (JSON)")->required();
  infer->add_option("--overlays", inf_overlays, "Directory for per-frame PPM overlays");
  infer->add_option("--overlay-channel", overlay_channel, "Feature channel drawn under the skeleton")->capture_default_str();

  // eval
  Common ev_c;
  std::string ev_data, ev_pred, ev_text, ev_csv;
  std::vector<double> ev_thr;
  auto* eval = app.add_subcommand("eval", "Score a predictions file with APK");
  add_common(eval, ev_c);
  eval->add_option("--data", ev_data, "Annotated dataset directory")->required();
  eval->add_option("--pred", ev_pred, "Predictions file written by infer")->required();
  eval->add_option("--thr", ev_thr, "APK threshold; repeatable (default 0.1 and 0.2)")->check(CLI::PositiveNumber);
  eval->add_option("--table", ev_text, "Also write the text table here");
  eval->add_option("--csv", ev_csv, "Write the table as CSV");

  // ablate
  Common ab_c;
  InferFlags ab;
  std::string ab_data, ab_models, ab_text, ab_csv;
  std::vector<double> ab_thr;
  auto* ablate = app.add_subcommand("ablate", "Run the unary x binary x sharing grid and score it");
  add_common(ablate, ab_c);
  ablate->add_option("--data", ab_data, "Annotated test dataset")->required();
  ablate->add_option("--models", ab_models, "Model directory")->required();
  ablate->add_option("--thr", ab_thr, "APK threshold; repeatable (default 0.1 and 0.2)")->check(CLI::PositiveNumber);
  ablate->add_flag("--gt-prior", ab.gt_prior, "Condition on the annotated action instead of the classifier");
  ablate->add_option("--iterations", ab.iterations)->capture_default_str()->check(CLI::PositiveNumber);
  ablate->add_option("--scales", ab.scales)->capture_default_str()->check(CLI::PositiveNumber);
  ablate->add_option("--factor", ab.factor)->capture_default_str()->check(CLI::Range(0.05, 1.0));
  ablate->add_option("--table", ab_text, "Also write the text table here");
  ablate->add_option("--csv", ab_csv, "Write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail(1, "usage", e.what());
  }

  try {
    if (*synth) {
      SyntheticSpec spec = SyntheticSpec::make(synth_actions, spec_seed);
      spec.frames = synth_frames;
      spec.noise = synth_noise;
      spec.distractors = synth_distractors;
      save_dataset(synth_out, generate_synthetic(spec, synth_videos, synth_c.seed));
    } else if (*train_f) {
      const Dataset ds = load_dataset(tf_data);
      TrainingConfig cfg;
      cfg.forest = tf;
      cfg.seed = tf_c.seed;
      cfg.threads = tf_c.threads;
      const auto forests = train_forests(ds, split_training_videos(ds), cfg);
      nlohmann::ordered_json params = {{"trees", tf.trees},
                                       {"depth", tf.tree.max_depth},
                                       {"min_leaf", tf.tree.min_leaf},
                                       {"candidates", tf.tree.candidates},
                                       {"window", tf.tree.window_radius},
                                       {"vote_cap", tf.tree.vote_cap},
                                       {"positives", tf.patches.positives},
                                       {"negatives", tf.patches.negatives},
                                       {"patch_images", tf.patches.images}};
      store_forests(tf_models, ds.action_names, forests, {tf_c.seed, params});
    } else if (*fit_p) {
      const Dataset ds = load_dataset(fp_data);
      TrainingConfig cfg;
      cfg.pairwise = fp;
      cfg.seed = fp_c.seed;
      const auto stats = fit_pairwise_model(ds, cfg);
      store_pairwise(fp_models, ds.action_names, stats,
                     {fp_c.seed, {{"clusters", fp.clusters}, {"alpha", fp.alpha}, {"restarts", fp.restarts}}});
    } else if (*learn_s) {
      const Dataset ds = load_dataset(ls_data);
      const Models models = load_models(ls_models);
      if (models.forests.empty()) throw ModelError("learn-sharing needs trained forests in " + ls_models);
      TrainingConfig cfg;
      cfg.sharing = ls;
      cfg.smoothing_sigma = ls_sigma;
      cfg.negatives = ls_negatives;
      cfg.seed = ls_c.seed;
      cfg.threads = ls_c.threads;
      const auto w = learn_sharing_weights(ds, split_training_videos(ds), models.forests, cfg);
      store_sharing(ls_models, ds.action_names, w,
                    {ls_c.seed, {{"lambda", ls.lambda}, {"sigma", ls_sigma}, {"mined", ls_negatives}}});
    } else if (*train_a) {
      const Dataset ds = load_dataset(ta_data);
      TrainingConfig cfg;
      cfg.action = ta;
      cfg.action_source = ta_from == "gt" ? ActionTrainingSource::ground_truth : ActionTrainingSource::estimated;
      cfg.scales = ta_scales;
      cfg.factor = ta_factor;
      cfg.seed = ta_c.seed;
      cfg.threads = ta_c.threads;
      Models models;
      if (cfg.action_source == ActionTrainingSource::estimated) {
        models = load_models(ta_models);
        if (models.action_names != ds.action_names) throw ModelError("dataset and models disagree on the action list");
      }
      const auto model = train_action_model(ds, split_training_videos(ds), models, cfg);
      store_action(ta_models, ds.action_names, model,
                   {ta_c.seed,
                    {{"codebook", ta.codebook_size},
                     {"restarts", ta.restarts},
                     {"C", ta.C},
                     {"temperature", ta.temperature},
                     {"from", ta_from},
                     {"scales", ta_scales},
                     {"factor", ta_factor}}});
    } else if (*infer) {
      const Dataset ds = load_dataset(inf_data);
      const Models models = load_models(inf_models);
      if (ds.action_names != models.action_names) throw ModelError("dataset and models disagree on the action list");
      const AcpsConfig config = to_config(inf);
      std::vector<VideoResult> results(ds.videos.size());
      // Videos run one after another so frames can use every worker.
      for (std::size_t v = 0; v < ds.videos.size(); ++v) results[v] = run_acps(ds.videos[v], models, config, inf_c.threads);
      nlohmann::ordered_json out;
      out["format"] = "acps-predictions";
      out["version"] = 1;
      out["config"] = config_json(config);
      nlohmann::ordered_json videos = nlohmann::ordered_json::array();
      for (const auto& r : results) {
        nlohmann::ordered_json frames = nlohmann::ordered_json::array();
        for (const auto& e : r.poses) {
          nlohmann::ordered_json joints = nlohmann::ordered_json::array();
          for (const Point2& p : e.pose.joints) joints.push_back({p.x, p.y});
          frames.push_back({{"joints", joints}, {"scale_index", e.scale_index}, {"log_posterior", e.log_posterior}});
        }
        videos.push_back({{"prior", r.prior.probs}, {"frames", frames}});
      }
      out["videos"] = videos;
      write_text_file(inf_out, out.dump(1) + "\n");
      if (!inf_overlays.empty()) {
        fs::create_directories(inf_overlays);
        for (std::size_t v = 0; v < ds.videos.size(); ++v) {
          for (std::size_t f = 0; f < ds.videos[v].frames.size(); ++f) {
            char name[64];
            std::snprintf(name, sizeof name, "vid_%03zu_frame_%03zu.ppm", v, f);
            write_overlay(fs::path(inf_overlays) / name, ds.videos[v].frames[f], overlay_channel,
                          results[v].poses[f].pose, models.tree);
          }
        }
      }
    } else if (*eval) {
      const Dataset ds = load_dataset(ev_data);
      nlohmann::json pred;
      try {
        pred = nlohmann::json::parse(read_text_file(ev_pred));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Reason::parse, "predictions: " + std::string(e.what()));
      }
      std::vector<std::vector<Pose>> poses;
      AcpsConfig config;
      try {
        config = config_from_json(pred.at("config"));
        for (const auto& vid : pred.at("videos")) {
          std::vector<Pose> seq;
          for (const auto& fr : vid.at("frames")) {
            Pose p;
            p.frame_index = static_cast<int>(seq.size());
            for (const auto& j : fr.at("joints")) p.joints.push_back({j.at(0).get<double>(), j.at(1).get<double>()});
            if (p.joints.size() != static_cast<std::size_t>(kBodyJoints)) {
              throw FormatError(FormatError::Reason::corrupt, "predictions: pose without 13 joints");
            }
            seq.push_back(std::move(p));
          }
          poses.push_back(std::move(seq));
        }
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Reason::parse, "predictions: " + std::string(e.what()));
      }
      std::vector<VideoAnnotation> ann;
      for (const auto& v : ds.videos) ann.push_back(v.annotation);
      AblationTable table;
      table.thresholds = default_thresholds(ev_thr);
      AblationCell cell{config, {}};
      for (double t : table.thresholds) cell.apk.push_back(apk(poses, ann, t).mean);
      table.cells.push_back(cell);
      emit_table(table, ev_text, ev_csv);
    } else if (*ablate) {
      const Dataset ds = load_dataset(ab_data);
      const Models models = load_models(ab_models);
      if (ds.action_names != models.action_names) throw ModelError("dataset and models disagree on the action list");
      const auto grid = ablation_grid(to_config(ab));
      const auto thr = default_thresholds(ab_thr);
      emit_table(run_ablation(ds, models, grid, thr, ab_c.threads), ab_text, ab_csv);
    }
  } catch (const FormatError& e) {
    fail(2, "format", e.what());
  } catch (const ModelError& e) {
    fail(3, "model", e.what());
  } catch (const NumericError& e) {
    fail(4, "numeric", e.what());
  } catch (const std::invalid_argument& e) {
    fail(1, "invalid", e.what());
  } catch (const std::exception& e) {
    fail(1, "io", e.what());
  }
  return 0;
}
