#include <fmt/format.h>

#include <CLI11.hpp>
#include <filesystem>
#include <optional>
#include <string>

#include "fstd/config.hpp"
#include "fstd/error.hpp"
#include "fstd/grad_suite.hpp"
#include "fstd/infer_eval.hpp"
#include "fstd/kernels.hpp"
#include "fstd/trainer.hpp"

namespace fs = std::filesystem;
using namespace fstd;

namespace {

struct Options {
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string split;
  std::string checkpoint;
  std::string init;
  std::optional<double> proposal_thresh;
  std::optional<double> similarity_thresh;
  std::optional<int> shot;
  std::optional<int> way;
  std::optional<int> iterations;
  std::optional<int> episodes;
};

Config resolve(const Options& o) {
  Config c = o.config.empty() ? default_config() : load_config(o.config);
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
    c.eval.seed = *o.seed;
  }
  if (o.proposal_thresh) c.eval.detect.proposal_thresh = *o.proposal_thresh;
  if (o.similarity_thresh) c.eval.detect.similarity_thresh = *o.similarity_thresh;
  if (o.shot) {
    c.train.shot = *o.shot;
    c.eval.shot = *o.shot;
  }
  if (o.way) {
    c.train.way = *o.way;
    c.eval.way = *o.way;
  }
  if (o.iterations) c.eval.iterations = *o.iterations;
  if (o.episodes) c.train.episodes = *o.episodes;
  c.validate();
  fs::create_directories(o.out);
  save_config(c, fs::path(o.out) / "config.json");
  return c;
}

fs::path input_or(const std::string& given, const Options& o, const char* name) {
  return given.empty() ? fs::path(o.out) / name : fs::path(given);
}

Dataset read_data(const Options& o) { return load_dataset(input_or(o.data, o, "dataset.jsonl")); }
Split read_split(const Options& o) { return load_split(input_or(o.split, o, "split.json")); }
ad::ParamStore read_model(const Options& o, const Config& c) {
  return load_checkpoint_for(input_or(o.checkpoint, o, "model.ckpt"), c.model);
}

void run_training(const Options& o, TrainMode mode) {
  Config c = resolve(o);
  const Dataset ds = read_data(o);
  const Split split = read_split(o);
  TrainConfig tc = c.train;
  if (mode == TrainMode::kProposalPretrain) {
    if (!o.episodes) tc.episodes = c.pretrain_episodes;
    tc.learning_rate = c.pretrain_learning_rate;
  }
  ad::ParamStore init =
      o.init.empty() ? init_params(c.model, c.seed) : load_checkpoint_for(o.init, c.model);
  const auto result = train(ds, split, c.model, tc, mode, std::move(init));
  const bool pre = mode == TrainMode::kProposalPretrain;
  save_checkpoint(result.params, c.model, fs::path(o.out) / (pre ? "pretrain.ckpt" : "model.ckpt"));
  write_training_log(result.log, fs::path(o.out) / (pre ? "pretrain_log.csv" : "train_log.csv"));
  fmt::print("trained {} episodes\n", result.log.size());
}

int grad_check_command() {
  const auto rows = run_grad_suite(10);
  bool ok = true;
  fmt::print("{:<24}{:>16}{:>10}{:>10}\n", "op", "max_rel_error", "checked", "skipped");
  for (const auto& r : rows) {
    fmt::print("{:<24}{:>16.3e}{:>10}{:>10}\n", r.name, r.max_rel_error, r.checked, r.skipped);
    ok = ok && r.max_rel_error < 1e-4;
  }
  const auto e2e = end_to_end_grad_check(0);
  fmt::print("{:<24}{:>16.3e}{:>10}{:>10}\n", "end_to_end_l_total", e2e.max_rel_error, e2e.checked,
             e2e.skipped);
  ok = ok && e2e.max_rel_error < 1e-3;
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"Few-shot temporal activity detection on synthetic data"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_out = true) {
    auto* out = sub->add_option("--out", o.out, "Output directory");
    if (needs_out) out->required();
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed overriding the config");
  };
  auto data_opts = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "Dataset JSONL (default <out>/dataset.jsonl)");
    sub->add_option("--split", o.split, "Split JSON (default <out>/split.json)");
  };
  auto eval_opts = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default <out>/model.ckpt)");
    sub->add_option("--proposal-thresh", o.proposal_thresh, "Proposal score threshold");
    sub->add_option("--similarity-thresh", o.similarity_thresh, "Similarity score threshold");
    sub->add_option("--shot", o.shot, "Exemplars per class")->check(CLI::IsMember({1, 5}));
    sub->add_option("--way", o.way, "Classes per episode")->check(CLI::PositiveNumber);
    sub->add_option("--iterations", o.iterations, "Meta-test iterations")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  common(gen);
  auto* split = app.add_subcommand("split", "Split classes into train and test sides");
  common(split);
  split->add_option("--data", o.data, "Dataset JSONL (default <out>/dataset.jsonl)");
  auto* pretrain = app.add_subcommand("pretrain", "Train the proposal subnet only");
  common(pretrain);
  data_opts(pretrain);
  pretrain->add_option("--episodes", o.episodes, "Training episodes");
  auto* trn = app.add_subcommand("train", "Episodic training of the full model");
  common(trn);
  data_opts(trn);
  trn->add_option("--init", o.init, "Initial checkpoint (e.g. a pretrain.ckpt)");
  trn->add_option("--episodes", o.episodes, "Training episodes");
  trn->add_option("--shot", o.shot, "Exemplars per class")->check(CLI::IsMember({1, 5}));
  trn->add_option("--way", o.way, "Classes per episode")->check(CLI::PositiveNumber);
  auto* ev = app.add_subcommand("eval", "Meta-test on the test classes");
  common(ev);
  data_opts(ev);
  eval_opts(ev);
  auto* det = app.add_subcommand("detect", "Detect activities in one sampled test episode");
  common(det);
  data_opts(det);
  eval_opts(det);
  auto* sweep = app.add_subcommand("sweep", "Proposal threshold sweep");
  common(sweep);
  data_opts(sweep);
  eval_opts(sweep);
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  common(gc, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gc) {
      if (!o.out.empty()) resolve(o);
      return grad_check_command();
    }
    if (*gen) {
      const Config c = resolve(o);
      save_dataset(generate_dataset(c.generator, c.seed), fs::path(o.out) / "dataset.jsonl");
    } else if (*split) {
      const Config c = resolve(o);
      save_split(split_classes(read_data(o), c.test_fraction, c.seed),
                 fs::path(o.out) / "split.json");
    } else if (*pretrain) {
      run_training(o, TrainMode::kProposalPretrain);
    } else if (*trn) {
      run_training(o, TrainMode::kFull);
    } else if (*ev) {
      const Config c = resolve(o);
      const auto report = meta_test(read_data(o), read_split(o), read_model(o, c), c.model, c.eval);
      write_report_json(report, fs::path(o.out) / "report.json");
      write_report_csv(report, fs::path(o.out) / "report.csv");
      fmt::print("mAP@0.5 {:.4f}  average mAP {:.4f}  ({} iterations, {} skipped)\n",
                 report.map_at_05, report.average_map, report.iterations, report.skipped);
    } else if (*det) {
      const Config c = resolve(o);
      const Dataset ds = read_data(o);
      const Episode ep = sample_episode(ds, read_split(o), SplitSide::kTest, c.eval.way,
                                        c.eval.shot, c.seed);
      const auto dets = detect(ep.features, ep.support, read_model(o, c), c.model, c.eval.detect);
      write_detections_csv(dets, fs::path(o.out) / "detections.csv");
      fmt::print("video {}: {} detections, {} ground-truth instances\n", ep.video_index,
                 dets.size(), ep.ground_truth.size());
    } else if (*sweep) {
      const Config c = resolve(o);
      const auto rows = threshold_sweep(read_data(o), read_split(o), read_model(o, c), c.model,
                                        c.sweep_thresholds, c.eval);
      write_sweep_csv(rows, fs::path(o.out) / "sweep.csv");
      for (const auto& r : rows) {
        fmt::print("{:.2f}  {:.4f}  {:.4f}\n", r.threshold, r.map_at_05, r.average_map);
      }
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const DataError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
