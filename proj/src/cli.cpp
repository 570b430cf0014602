#include "capslstm/cli.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <vector>

#include "CLI11.hpp"
#include "capslstm/config.hpp"
#include "capslstm/data.hpp"
#include "capslstm/error.hpp"
#include "capslstm/explain.hpp"
#include "capslstm/training.hpp"
#include "capslstm/weights.hpp"
#include "json.hpp"

namespace capslstm {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct WeightsFailure : Error {
  using Error::Error;
};

struct Options {
  std::string config_path;
  std::string weights;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> check_params;
  std::optional<std::size_t> epochs;
  std::string split;
  std::string eval_split = "test";
  std::string predict_split = "all";
  std::string explain_split = "test";
  std::vector<std::string> clips;
  std::string layer = std::string(kConv1Name);
  std::optional<std::size_t> target_class;
  double alpha = 0.4;
};

// Commands that only read weights keep the config's weights location when
// --out redirects their output.
RunConfig resolve_config(const Options& o, bool required, bool reads_weights = false) {
  RunConfig rc;
  if (!o.config_path.empty()) {
    rc = load_run_config(o.config_path);
  } else if (required) {
    throw ConfigError("--config is required for this command");
  }
  if (o.seed) {
    rc.seed = *o.seed;
    rc.architecture.seed = *o.seed;
  }
  if (o.epochs) {
    if (*o.epochs == 0) throw ConfigError("--epochs must be positive");
    rc.epochs = *o.epochs;
  }
  if (reads_weights) rc.weights_path = rc.resolved_weights_path();
  if (!o.out.empty()) rc.output_dir = o.out;
  if (!o.weights.empty()) rc.weights_path = o.weights;
  return rc;
}

Model<float> open_model(const RunConfig& rc) {
  const fs::path path = rc.resolved_weights_path();
  try {
    return load_weights(path, rc.architecture);
  } catch (const IoError& e) {
    throw WeightsFailure(e.what());
  } catch (const FormatError& e) {
    throw WeightsFailure(path.string() + ": " + e.what());
  }
}

struct Dataset {
  std::vector<ClipRecord> clips;
  SplitPlan plan;
};

Dataset open_dataset(const RunConfig& rc, std::ostream& err) {
  if (rc.dataset_root.empty()) throw ConfigError("'dataset_root' is required for this command");
  MetadataScan scan = load_metadata(rc.dataset_root);
  for (const auto& w : scan.warnings) err << "warning: " << w << "\n";
  Dataset d;
  d.clips = build_clips(rc.dataset_root, scan.labels, rc.architecture.frames);
  d.plan = split_dataset(d.clips, rc.seed, rc.split);
  return d;
}

std::vector<ClipRecord> split_clips(const Dataset& d, const std::string& split) {
  if (split == "all") return d.clips;
  if (split == "train") return select_clips(d.clips, d.plan.train);
  if (split == "validation") return select_clips(d.clips, d.plan.validation);
  if (split == "test") return select_clips(d.clips, d.plan.test);
  throw ArgumentError("--split must be train, validation, test or all; got '" + split + "'");
}

// Explicit --clip directories, else the requested split of the dataset.
std::vector<ClipRecord> target_clips(const Options& o, const RunConfig& rc, std::ostream& err) {
  if (o.clips.empty()) return split_clips(open_dataset(rc, err), o.split);
  std::vector<ClipRecord> clips;
  for (const auto& dir : o.clips) clips.push_back(clip_from_directory(dir, Label::Real, rc.architecture.frames));
  return clips;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

int cmd_summary(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve_config(o, false);
  const Model<float> model(rc.architecture);
  const auto rows = model.summary();
  out << render_summary(rows);
  if (o.check_params) {
    const std::size_t total = total_parameters(rows);
    if (total != *o.check_params) {
      err << "parameter count mismatch: expected " << *o.check_params << ", model has " << total << "\n";
      return kExitFailure;
    }
  }
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve_config(o, true);
  const Dataset d = open_dataset(rc, err);
  const auto train = select_clips(d.clips, d.plan.train);
  const auto validation = select_clips(d.clips, d.plan.validation);
  fs::create_directories(rc.output_dir);
  const fs::path weights = rc.resolved_weights_path();
  if (weights.has_parent_path()) fs::create_directories(weights.parent_path());

  Model<float> model(rc.architecture);
  model.initialize(rc.seed);
  TrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.optimizer = rc.optimizer;
  tc.seed = rc.seed;
  tc.workers = rc.workers;
  tc.checkpoint = weights;
  const TrainHistory history = train_loop(model, train, validation, tc);

  write_text(rc.output_dir / "history.csv", history_csv(history));
  write_text(rc.output_dir / "summary.json", history_summary_json(history));
  json split = {{"seed", rc.seed}, {"train", d.plan.train}, {"validation", d.plan.validation}, {"test", d.plan.test}};
  write_text(rc.output_dir / "split.json", split.dump(2) + "\n");

  out << "clips train " << train.size() << " validation " << validation.size() << " test " << d.plan.test.size()
      << "\n";
  for (const auto& e : history.epochs) {
    out << "epoch " << e.epoch << " loss " << fixed(e.train.loss) << " accuracy " << fixed(e.train.metrics.accuracy);
    if (e.validation) {
      out << " val_loss " << fixed(e.validation->loss) << " val_accuracy " << fixed(e.validation->metrics.accuracy);
    }
    out << "\n";
  }
  out << "best epoch " << history.best_epoch << ", weights " << weights.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve_config(o, true, true);
  const Model<float> model = open_model(rc);
  const auto clips = split_clips(open_dataset(rc, err), o.split);
  const Evaluation ev = evaluate(model, clips, rc.batch_size, rc.workers);
  const Metrics& m = ev.result.metrics;
  out << "split " << o.split << " clips " << clips.size() << "\n";
  out << "loss " << fixed(ev.result.loss) << "\n";
  out << "accuracy " << fixed(m.accuracy) << "\n";
  out << "recall " << (m.recall ? fixed(*m.recall) : "n/a") << "\n";
  out << "auc " << (m.auc ? fixed(*m.auc) : "n/a") << "\n";
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve_config(o, false, true);
  const Model<float> model = open_model(rc);
  const auto clips = target_clips(o, rc, err);
  const auto& cfg = model.config();
  for (const auto& clip : clips) {
    const Tensor<float> x = load_clip(clip, cfg.height, cfg.width);
    const Tensor<float> probs = model.forward(x.reshaped({1, cfg.frames, cfg.height, cfg.width, cfg.channels}));
    const double p_fake = probs[1];
    const Label label = probs[1] > probs[0] ? Label::Fake : Label::Real;
    const json line = {{"clip_id", clip.clip_id}, {"label", label_name(label)}, {"p_fake", p_fake}};
    out << line.dump() << "\n";
  }
  return kExitOk;
}

int cmd_explain(const Options& o, std::ostream& out, std::ostream& err) {
  if (!Model<float>::is_spatial_layer(o.layer)) {
    throw ArgumentError("unknown Grad-CAM layer '" + o.layer + "'; valid layers: " + std::string(kConvLstmName) +
                        ", " + std::string(kConv1Name) + ", " + std::string(kPrimaryConvName));
  }
  if (o.alpha < 0.0 || o.alpha > 1.0) throw ArgumentError("--alpha must lie in [0,1]");
  const RunConfig rc = resolve_config(o, false, true);
  const Model<float> model = open_model(rc);
  if (o.target_class && *o.target_class >= model.config().classes) {
    throw ArgumentError("--class must be 0 (REAL) or 1 (FAKE)");
  }
  const auto clips = target_clips(o, rc, err);
  const auto& cfg = model.config();
  fs::create_directories(rc.output_dir);
  for (const auto& clip : clips) {
    const Tensor<float> x = load_clip(clip, cfg.height, cfg.width);
    std::size_t cls = 0;
    if (o.target_class) {
      cls = *o.target_class;
    } else {
      const Tensor<float> logits = model.logits(x);
      cls = logits[1] > logits[0] ? 1 : 0;
    }
    const Heatmap map = gradcam(model, x, cls, o.layer);
    // Frames side by side, each with the same clip-level heatmap.
    Tensor<float> strip({cfg.height, cfg.width * cfg.frames, 3});
    for (std::size_t f = 0; f < cfg.frames; ++f) {
      const Tensor<float> overlay = render_overlay(map.upsampled, x.slice(f), o.alpha);
      for (std::size_t i = 0; i < cfg.height; ++i) {
        for (std::size_t j = 0; j < cfg.width; ++j) {
          for (std::size_t c = 0; c < 3; ++c) {
            strip.at({i, f * cfg.width + j, c}) = overlay.at({i, j, c});
          }
        }
      }
    }
    const fs::path path = rc.output_dir / (clip.clip_id + "_cls" + std::to_string(cls) + "_gradcam.ppm");
    write_image(strip, path);
    out << path.string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CapsuleNet + LSTM deepfake detector", "capslstm"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub, bool weights) {
    sub->add_option("--config", o.config_path, "run config (JSON)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "override the config seed");
    if (weights) sub->add_option("--weights", o.weights, "weights file");
  };
  auto* summary = app.add_subcommand("summary", "print the layer table");
  common(summary, false);
  summary->add_option("--check-params", o.check_params, "exit 1 unless the total parameter count equals N");

  auto* train = app.add_subcommand("train", "train on the dataset and keep the best-validation weights");
  common(train, true);
  train->add_option("--epochs", o.epochs, "override the config epoch count");

  auto* eval = app.add_subcommand("evaluate", "loss, accuracy, recall and AUC over a split");
  common(eval, true);
  eval->add_option("--split", o.eval_split, "train | validation | test | all")->capture_default_str();

  auto* predict = app.add_subcommand("predict", "per-clip label and FAKE probability as JSON lines");
  common(predict, true);
  predict->add_option("--clip", o.clips, "clip directory (repeatable); default: the dataset split");
  predict->add_option("--split", o.predict_split, "train | validation | test | all")->capture_default_str();

  auto* explain = app.add_subcommand("explain", "write Grad-CAM overlays as PPM");
  common(explain, true);
  explain->add_option("--clip", o.clips, "clip directory (repeatable); default: the dataset split");
  explain->add_option("--split", o.explain_split, "train | validation | test | all")->capture_default_str();
  explain->add_option("--layer", o.layer, "conv_lst_m2d | conv1 | primarycap_conv2d")->default_val("conv1");
  explain->add_option("--class", o.target_class, "0 (REAL) or 1 (FAKE); default: the predicted class");
  explain->add_option("--alpha", o.alpha, "overlay opacity")->default_val(0.4);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (summary->parsed()) return cmd_summary(o, out, err);
    if (train->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) {
      o.split = o.eval_split;
      return cmd_evaluate(o, out, err);
    }
    if (predict->parsed()) {
      o.split = o.predict_split;
      return cmd_predict(o, out, err);
    }
    if (explain->parsed()) {
      o.split = o.explain_split;
      return cmd_explain(o, out, err);
    }
  } catch (const WeightsFailure& e) {
    err << "weights error: " << e.what() << "\n";
    return kExitWeights;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    err << "argument error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kExitData;
  } catch (const ValidationError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace capslstm
