// mtlfer: data generation, training, ensembling and evaluation front end.
//
// Exit codes: 0 success, 1 runtime failure (I/O, bad data, divergence),
// 2 invalid configuration or arguments.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtlfer/checkpoint.hpp"
#include "mtlfer/config.hpp"
#include "mtlfer/dataset.hpp"
#include "mtlfer/errors.hpp"
#include "mtlfer/metrics.hpp"
#include "mtlfer/train.hpp"

namespace fs = std::filesystem;
using namespace mtlfer;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigFailure = 2;

struct Options {
  std::size_t n = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  f.close();
  if (!f) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read back " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// Writes and reads back, so a zero exit means the artifact is on disk intact.
void write_verified(const fs::path& path, const std::string& text) {
  write_text(path, text);
  if (read_text(path) != text) throw IoError("verification failed for " + path.string());
}

void save_verified_checkpoint(const fs::path& path, const MTLNetwork<float>& model) {
  std::ostringstream bytes;
  write_checkpoint(bytes, model);
  write_verified(path, bytes.str());
  load_checkpoint(path);
}

RunConfig load_config(const Options& opt) {
  RunConfig cfg = load_run_config(opt.config);
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.resolve_seeds();
  }
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  return cfg;
}

// Path checks that must pass before any training starts.
void check_paths(const RunConfig& cfg) {
  const fs::path root = cfg.data.root;
  if (!fs::is_directory(root)) throw ConfigError("data.root: " + root.string() + " is not a directory");
  for (const char* f : {"labels.csv", "landmarks.csv"}) {
    if (!fs::is_regular_file(root / f)) throw ConfigError("data.root: " + (root / f).string() + " is missing");
  }
  std::error_code ec;
  if (fs::exists(cfg.output_dir) &&
      fs::equivalent(fs::weakly_canonical(cfg.output_dir), fs::weakly_canonical(root), ec)) {
    throw ConfigError("output_dir: must differ from data.root");
  }
  fs::create_directories(cfg.output_dir, ec);
  if (ec || !fs::is_directory(cfg.output_dir)) {
    throw IoError("cannot create output directory " + cfg.output_dir.string());
  }
}

struct SplitData {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

SplitData load_split(const RunConfig& cfg) {
  const DatasetManifest manifest = load_manifest(cfg.data.root);
  const Split split = split_train_val(manifest, cfg.data.val_fraction, cfg.data_seed());
  const std::vector<Sample> all = load_dataset(manifest);
  return {subset(all, split.train), subset(all, split.val)};
}

std::string class_summary(const std::array<std::size_t, kNumClasses>& counts) {
  bool uniform = true;
  for (std::size_t c : counts) uniform = uniform && c == counts[0];
  if (uniform) return std::to_string(counts[0]) + " per class";
  std::string s;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    s += (c ? ", " : "") + std::string(kClassNames[c]) + "=" + std::to_string(counts[c]);
  }
  return s;
}

int cmd_gen_data(const Options& opt) {
  if (opt.n == 0 || opt.n % kNumClasses != 0) {
    std::cerr << "error: --n must be a positive multiple of " << kNumClasses << " (got " << opt.n << ")\n";
    return kConfigFailure;
  }
  const DatasetManifest m = generate_synthetic_dataset(opt.n, opt.seed.value_or(0), opt.out);
  std::cout << "wrote " << m.records.size() << " samples to " << opt.out << ": " << class_summary(m.class_counts())
            << "\n";
  return 0;
}

int cmd_train(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  check_paths(cfg);
  const SplitData data = load_split(cfg);
  std::cout << "train " << data.train.size() << " / val " << data.val.size() << " samples\n";

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train_single(data.train, data.val, cfg.train, [&](const EpochRecord& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %zu/%zu joint=%.4f expr=%.4f land=%.5f val_macro_f1=%.4f (%.1fs)\n", r.epoch,
                cfg.train.epochs, r.joint_loss, r.expr_loss, r.land_loss, r.val_macro_f1, secs);
    std::fflush(stdout);
  });

  const fs::path ckpt = cfg.output_dir / "model.ckpt";
  save_verified_checkpoint(ckpt, result.member.model);
  // Evaluate the reloaded checkpoint, not the in-memory model.
  const MTLNetwork<float> reloaded = load_checkpoint(ckpt);
  const MTLNetwork<float>* one[] = {&reloaded};
  const Evaluation ev = evaluate_models(one, data.val);
  if (!(ev.report == result.member.final_metrics)) {
    throw IoError("reloaded checkpoint " + ckpt.string() + " does not reproduce the trained model");
  }
  write_verified(cfg.output_dir / "training_log.csv", result.log.to_csv());
  const std::string report = format_report(ev.report);
  write_verified(cfg.output_dir / "report.txt", report);
  std::cout << report;
  return 0;
}

int cmd_eval(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  check_paths(cfg);
  const fs::path ckpt = cfg.output_dir / "model.ckpt";
  if (!fs::is_regular_file(ckpt)) throw IoError("missing checkpoint " + ckpt.string());
  const SplitData data = load_split(cfg);
  const MTLNetwork<float> model = load_checkpoint(ckpt);
  const MTLNetwork<float>* one[] = {&model};
  const Evaluation ev = evaluate_models(one, data.val);
  const std::string report = format_report(ev.report);
  write_verified(cfg.output_dir / "eval_report.txt", report);
  write_verified(cfg.output_dir / "eval_predictions.csv", predictions_csv(ev.predictions));
  std::cout << report;
  return 0;
}

std::string member_checkpoint(std::size_t i) { return "member_" + std::to_string(i) + ".ckpt"; }

int cmd_ensemble_train(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  check_paths(cfg);
  const SplitData data = load_split(cfg);
  const std::size_t K = cfg.ensemble.members.size();
  std::cout << "training " << K << " members on bags of "
            << bag_subsample(data.train.size(), cfg.ensemble.subsample_fraction, 0).size() << " / "
            << data.train.size() << " samples" << (cfg.ensemble.parallel ? " (parallel)" : "") << "\n";

  const EnsembleResult result = train_ensemble(data.train, data.val, cfg.ensemble);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  EnsembleDescriptor desc;
  desc.seed = cfg.seed;
  desc.bag_seed = cfg.ensemble.bag_seed;
  desc.subsample_fraction = cfg.ensemble.subsample_fraction;
  std::size_t survivor = 0;
  for (std::size_t i = 0; i < K; ++i) {
    if (std::find(result.excluded.begin(), result.excluded.end(), i) != result.excluded.end()) continue;
    const TrainedMember& m = result.members[survivor];
    const TrainingLog& log = result.logs[survivor];
    ++survivor;
    const fs::path ckpt = cfg.output_dir / member_checkpoint(i);
    save_verified_checkpoint(ckpt, m.model);
    write_verified(cfg.output_dir / ("member_" + std::to_string(i) + "_log.csv"), log.to_csv());
    desc.members.push_back({member_checkpoint(i), m.bag_seed, m.bag.size(), m.config});
    std::printf("member %zu (%s) val_macro_f1=%.4f\n", i, std::string(to_string(m.config.model.appearance.variant)).c_str(),
                m.final_metrics.macro_f1);
  }
  const fs::path desc_path = cfg.output_dir / "ensemble.json";
  write_descriptor(desc_path, desc);
  read_descriptor(desc_path);
  std::cout << "wrote " << desc_path.string() << "\n";
  return 0;
}

int cmd_ensemble_eval(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  check_paths(cfg);
  const fs::path desc_path = cfg.output_dir / "ensemble.json";
  if (!fs::is_regular_file(desc_path)) throw IoError("missing ensemble descriptor " + desc_path.string());
  const EnsembleDescriptor desc = read_descriptor(desc_path);
  std::vector<std::string> missing;
  for (const auto& m : desc.members) {
    const fs::path p = cfg.output_dir / m.checkpoint;
    if (!fs::is_regular_file(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) {
    std::cerr << "error: missing member checkpoints:\n";
    for (const auto& p : missing) std::cerr << "  " << p << "\n";
    return kRuntimeFailure;
  }
  const SplitData data = load_split(cfg);
  std::vector<MTLNetwork<float>> models;
  for (const auto& m : desc.members) models.push_back(load_checkpoint(cfg.output_dir / m.checkpoint));
  std::vector<const MTLNetwork<float>*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  const Evaluation ev = evaluate_models(ptrs, data.val);
  const std::string report = format_report(ev.report);
  write_verified(cfg.output_dir / "ensemble_report.txt", report);
  write_verified(cfg.output_dir / "predictions.csv", predictions_csv(ev.predictions));
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task facial expression recognition with attention heads and bagged ensembles"};
  app.require_subcommand(1);
  Options opt;

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic labelled face dataset");
  gen->add_option("--n", opt.n, "Number of samples (multiple of 6)")->required();
  gen->add_option("--seed", opt.seed, "Generator seed");
  gen->add_option("--out", opt.out, "Output directory")->required();

  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", opt.seed, "Override the global seed");
    cmd->add_option("--out", opt.out, "Override the output directory");
  };
  auto* train = app.add_subcommand("train", "Train one model and report on the validation split");
  add_run_flags(train);
  auto* eval = app.add_subcommand("eval", "Evaluate the trained model on the validation split");
  add_run_flags(eval);
  auto* ensemble = app.add_subcommand("ensemble", "Bagged ensemble with soft voting");
  ensemble->require_subcommand(1);
  auto* ens_train = ensemble->add_subcommand("train", "Train every member on its own bag");
  add_run_flags(ens_train);
  auto* ens_eval = ensemble->add_subcommand("eval", "Soft-vote the members on the validation split");
  add_run_flags(ens_eval);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(opt);
    if (*train) return cmd_train(opt);
    if (*eval) return cmd_eval(opt);
    if (*ens_train) return cmd_ensemble_train(opt);
    if (*ens_eval) return cmd_ensemble_eval(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kRuntimeFailure;
}
