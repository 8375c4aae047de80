#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "musicnet/audio_io.hpp"
#include "musicnet/data_synth.hpp"
#include "musicnet/errors.hpp"
#include "musicnet/eval_bench.hpp"
#include "musicnet/featurize.hpp"
#include "musicnet/model.hpp"
#include "musicnet/train.hpp"
#include "musicnet/weights_io.hpp"

namespace musicnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  bool json = false;
  unsigned jobs = 1;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

MusicNetModel load_model(const fs::path& path) { return load_weights(path, std::nullopt); }

AudioClip load_clip(const fs::path& path) { return condition(read_wav(path)); }

// --- featurize -------------------------------------------------------------------

struct FeaturizeArgs {
  std::string in, out, dump_plan, model;
};

int do_featurize(const FeaturizeArgs& a, const Globals& g, std::ostream& out) {
  const FeaturePlan plan = a.model.empty() ? FeaturePlan::make_default() : load_model(a.model).plan;
  const LogMelFeature feature = featurize_clip(load_clip(a.in), plan);
  write_feature_bin(a.out, feature);
  if (!a.dump_plan.empty()) {
    json p;
    p["n_fft"] = plan.n_fft;
    p["hop"] = plan.n_fft / 2;
    p["n_bins"] = plan.n_bins;
    p["n_mels"] = plan.n_mels;
    p["sample_rate_hz"] = plan.sample_rate_hz;
    p["log_floor"] = plan.log_floor;
    p["window"] = std::vector<double>(plan.window.data(), plan.window.data() + plan.window.size());
    json mel = json::array();
    for (Eigen::Index b = 0; b < plan.mel_weights.rows(); ++b) {
      mel.push_back(std::vector<double>(plan.mel_weights.row(b).data(),
                                        plan.mel_weights.row(b).data() + plan.mel_weights.cols()));
    }
    p["mel_weights"] = std::move(mel);
    std::ofstream f(a.dump_plan);
    if (!f) throw Error("cannot write " + a.dump_plan);
    f << p.dump() << '\n';
  }
  if (g.json) {
    out << json{{"out", a.out}, {"frames", feature.n_frames}, {"mels", feature.n_mels}}.dump() << '\n';
  } else {
    out << "wrote " << feature.n_frames << "x" << feature.n_mels << " log-mel features to " << a.out << '\n';
  }
  return kExitOk;
}

// --- infer -----------------------------------------------------------------------

struct InferArgs {
  std::string model, in, threshold_from;
  std::optional<double> threshold;
};

int do_infer(InferArgs a, const Globals& g, std::ostream& out) {
  if (!a.threshold_from.empty()) {
    std::ifstream f(a.threshold_from);
    if (!f) throw Error("cannot open report " + a.threshold_from);
    const json report = json::parse(f);
    if (!report.contains("threshold") || !report["threshold"].is_number()) {
      throw Error(a.threshold_from + " has no numeric threshold");
    }
    a.threshold = report["threshold"].get<double>();
  }
  const MusicNetModel model = load_model(a.model);
  const double p = forward(model, load_clip(a.in));
  if (g.json) {
    json j{{"probability", p}};
    if (a.threshold) {
      j["threshold"] = *a.threshold;
      j["decision"] = p >= *a.threshold ? "MUSIC" : "NO_MUSIC";
    }
    out << j.dump() << '\n';
  } else {
    out << fmt("%.6f", p);
    if (a.threshold) out << ' ' << (p >= *a.threshold ? "MUSIC" : "NO_MUSIC");
    out << '\n';
  }
  return kExitOk;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, out_dir, init;
  int epochs = 30;
  std::uint64_t seed = 0;
  bool train_featurizer = false;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  int patience = 3;
  bool no_calibrate = false;
};

int do_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  MusicNetModel model = a.init.empty() ? MusicNetModel::glorot(a.seed) : load_model(a.init);
  TrainConfig cfg;
  cfg.max_epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.train_featurizer = a.train_featurizer;
  cfg.batch_size = a.batch_size;
  cfg.lr = a.lr;
  cfg.early_stop_patience = a.patience;
  cfg.calibrate_bias = !a.no_calibrate;
  cfg.jobs = g.jobs;
  cfg.validate();

  const Dataset data = load_dataset(a.manifest, model.plan);
  const fs::path dir(a.out_dir);
  const FitResult result = fit(model, data, cfg, dir, [&](const EpochMetrics& m) {
    if (g.json) {
      out << json{{"epoch", m.epoch}, {"mean_loss", m.mean_loss}, {"accuracy", m.accuracy}}.dump() << '\n';
    } else {
      out << "epoch " << m.epoch << " loss " << fmt("%.6f", m.mean_loss) << " accuracy "
          << fmt("%.4f", m.accuracy) << '\n';
    }
    out.flush();
    return true;
  });
  save_weights(model, dir / "model.mnw");
  if (!g.json) {
    out << "trained " << result.history.size() << " epoch(s)" << (result.early_stopped ? " (early stop)" : "")
        << "; output bias shifted by " << fmt("%.4f", result.bias_shift) << "; final weights in "
        << (dir / "model.mnw").string() << '\n';
  } else {
    out << json{{"epochs", result.history.size()},
                {"early_stopped", result.early_stopped},
                {"bias_shift", result.bias_shift},
                {"model", (dir / "model.mnw").string()}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

// --- synth -----------------------------------------------------------------------

struct SynthArgs {
  std::string recipe, out_dir;
  std::optional<std::uint64_t> seed;
};

int do_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  std::ifstream f(a.recipe);
  if (!f) throw Error("cannot open recipe " + a.recipe);
  const json recipe = json::parse(f);
  const TestManifest m = run_recipe(recipe, a.out_dir, a.seed, fs::path(a.recipe).parent_path(), g.jobs);
  const auto manifest_path = (fs::path(a.out_dir) / "manifest.jsonl").string();
  if (g.json) {
    out << json{{"manifest", manifest_path},
                {"entries", m.size()},
                {"music", m.count(Label::music)},
                {"no_music", m.count(Label::no_music)},
                {"categories", m.category_counts()}}
               .dump()
        << '\n';
  } else {
    out << "wrote " << m.size() << " clips (" << m.count(Label::music) << " music, " << m.count(Label::no_music)
        << " no_music) and " << manifest_path << '\n';
  }
  return kExitOk;
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string model, manifest, report, roc_csv;
  double target_fpr = 0.001;
  std::size_t bench_runs = 0;
};

int do_eval(const EvalArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const MusicNetModel model = load_model(a.model);
  const TestManifest manifest = read_manifest(a.manifest);
  EvalReport r = evaluate_manifest(model, manifest, a.manifest, a.target_fpr, g.jobs, &err);
  r.model_size_bytes = static_cast<std::size_t>(fs::file_size(a.model));
  if (a.bench_runs > 0) {
    r.latency = benchmark_latency(model, gen_synthetic_stems(StemKind::tonal_music), 10, a.bench_runs);
  }
  const json j = to_json(r);
  if (!a.report.empty()) {
    std::ofstream f(a.report);
    if (!f) throw Error("cannot write " + a.report);
    f << j.dump(2) << '\n';
  }
  if (!a.roc_csv.empty()) write_roc_csv(a.roc_csv, r.roc_points);
  if (g.json) {
    out << j.dump() << '\n';
  } else {
    out << "clips scored " << r.scored << " (skipped " << r.skipped << ")\n"
        << "AUC " << fmt("%.4f", r.auc) << '\n'
        << "TPR " << fmt("%.4f", r.tpr_at_target) << " at FPR <= " << a.target_fpr << " (threshold "
        << fmt("%.6g", r.threshold) << ")" << (r.insufficient_negatives ? " [insufficient negatives]" : "") << '\n';
    for (const auto& [name, c] : r.per_category) {
      out << "  " << name << ": " << c.count << " clips, predicted music " << c.predicted_music << '\n';
    }
  }
  return kExitOk;
}

// --- bench -----------------------------------------------------------------------

struct BenchArgs {
  std::string model, in;
  std::size_t runs = 100;
  std::size_t warmup = 10;
};

int do_bench(const BenchArgs& a, const Globals& g, std::ostream& out) {
  const MusicNetModel model = load_model(a.model);
  const AudioClip clip = a.in.empty() ? gen_synthetic_stems(StemKind::tonal_music) : load_clip(a.in);
  const LatencyStats s = benchmark_latency(model, clip, a.warmup, a.runs);
  if (g.json) {
    out << to_json(s).dump() << '\n';
  } else {
    out << "runs " << s.runs << " (warmup " << s.warmup << ") on " << s.hardware << '\n'
        << "mean " << fmt("%.3f", s.mean_ms) << " ms, p50 " << fmt("%.3f", s.p50_ms) << " ms, p95 "
        << fmt("%.3f", s.p95_ms) << " ms (reference " << s.reference_ms << " ms on i7-1065G7)\n";
  }
  return kExitOk;
}

// --- inspect ---------------------------------------------------------------------

int do_inspect(const std::string& path, const Globals& g, std::ostream& out) {
  const auto bytes = read_file_bytes(path);
  const WeightFile file = parse_weight_file(bytes);
  json j;
  j["file"] = path;
  j["file_size_bytes"] = bytes.size();
  j["format_version"] = file.format_version;
  j["tensors"] = file.tensors.size();
  j["crc"] = file.crc_ok() ? "ok" : "mismatch";
  if (file.crc_ok()) {
    const MusicNetModel model = load_weights(std::span<const std::uint8_t>(bytes), std::nullopt);
    const ParameterCounts c = count_parameters(model);
    j["topology"] = model.topology.to_string();
    j["trainable_parameters"] = c.trainable;
    j["frozen_parameters"] = c.frozen;
  }
  if (g.json) {
    out << j.dump() << '\n';
  } else {
    out << "file: " << path << " (" << bytes.size() << " bytes, format v" << file.format_version << ", "
        << file.tensors.size() << " tensors)\n"
        << "crc: " << j["crc"].get<std::string>() << '\n';
    if (file.crc_ok()) {
      out << "topology: " << j["topology"].get<std::string>() << '\n'
          << "trainable parameters: " << j["trainable_parameters"].get<std::size_t>() << '\n'
          << "frozen parameters: " << j["frozen_parameters"].get<std::size_t>() << '\n';
    }
  }
  return file.crc_ok() ? kExitOk : kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Background-music detection for 9-second audio clips", "musicnet"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  Globals g;
  app.add_flag("--json", g.json, "Print one JSON object per result on stdout");
  app.add_option("--jobs", g.jobs, "Worker threads for data-parallel stages")->check(CLI::Range(1u, 256u));

  FeaturizeArgs fa;
  auto* featurize = app.add_subcommand("featurize", "Write the log-mel features of a clip");
  featurize->add_option("--in", fa.in, "Input WAV")->required();
  featurize->add_option("--out", fa.out, "Output feature file (u32 rows, u32 cols, f32 LE)")->required();
  featurize->add_option("--dump-plan", fa.dump_plan, "Also write the featurization plan as JSON to this path");
  featurize->add_option("--model", fa.model, "Take the plan from a weight file instead of the default");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Print the music probability of a clip");
  infer->add_option("--model", ia.model, "Weight file")->required();
  infer->add_option("--in", ia.in, "Input WAV")->required();
  auto* thr = infer->add_option("--threshold", ia.threshold, "Also print MUSIC/NO_MUSIC at this threshold");
  infer->add_option("--threshold-from", ia.threshold_from, "Take the threshold from an eval report")
      ->excludes(thr);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train from a JSON-lines manifest");
  train->add_option("--manifest", ta.manifest, "Training manifest")->required();
  train->add_option("--out-dir", ta.out_dir, "Checkpoint directory")->required();
  train->add_option("--epochs", ta.epochs, "Maximum epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--seed", ta.seed, "Seed for initialization, shuffling and dropout")->capture_default_str();
  train->add_flag("--train-featurizer", ta.train_featurizer, "Also update the DFT bases");
  train->add_option("--batch-size", ta.batch_size, "Minibatch size")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--patience", ta.patience, "Early-stopping patience in epochs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_flag("--no-calibrate", ta.no_calibrate, "Skip the final output-bias calibration");
  train->add_option("--init", ta.init, "Start from this weight file instead of a seeded initialization");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate clips and a manifest from a recipe");
  synth->add_option("--recipe", sa.recipe, "Recipe JSON (kind: instrument_grid or desk)")->required();
  synth->add_option("--out-dir", sa.out_dir, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Override the recipe seed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a labeled manifest");
  eval->add_option("--model", ea.model, "Weight file")->required();
  eval->add_option("--manifest", ea.manifest, "Test manifest")->required();
  eval->add_option("--target-fpr", ea.target_fpr, "Operating-point false positive rate")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  eval->add_option("--report", ea.report, "Write the JSON report here");
  eval->add_option("--roc-csv", ea.roc_csv, "Write ROC points (fpr,tpr,threshold) here");
  eval->add_option("--bench-runs", ea.bench_runs, "Include a latency benchmark with this many runs");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time full inference on one clip, single-threaded");
  bench->add_option("--model", ba.model, "Weight file")->required();
  bench->add_option("--runs", ba.runs, "Timed runs")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--warmup", ba.warmup, "Discarded warmup runs")->capture_default_str();
  bench->add_option("--in", ba.in, "Clip to time (default: a synthetic tonal clip)");

  std::string inspect_model;
  auto* inspect = app.add_subcommand("inspect", "Describe a weight file");
  inspect->add_option("--model", inspect_model, "Weight file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();  // program name
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*featurize) return do_featurize(fa, g, out);
    if (*infer) return do_infer(ia, g, out);
    if (*train) return do_train(ta, g, out);
    if (*synth) return do_synth(sa, g, out);
    if (*eval) return do_eval(ea, g, out, err);
    if (*bench) return do_bench(ba, g, out);
    if (*inspect) return do_inspect(inspect_model, g, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

}  // namespace musicnet::cli
