// igcn: dataset preparation, poisoning attacks, training runs, experiment
// matrices and report tables for GCN / I-GCN robustness experiments.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "igcn/igcn.hpp"

namespace {

namespace fs = std::filesystem;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRun = 3 };

struct TrainFlags {
  std::size_t hidden = 40;
  std::size_t epochs = 200;
  std::size_t patience = 20;
  double lr = 0.01;
  double dropout = 0.5;
  double weight_decay = 5e-4;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "Hidden units")->capture_default_str();
    cmd->add_option("--epochs", epochs, "Maximum training epochs")->capture_default_str();
    cmd->add_option("--patience", patience, "Early stopping patience")->capture_default_str();
    cmd->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--dropout", dropout, "Dropout rate")->capture_default_str();
    cmd->add_option("--weight-decay", weight_decay, "L2 weight decay on W1, W2")->capture_default_str();
  }

  igcn::TrainConfig config(std::uint64_t seed) const {
    igcn::TrainConfig c;
    c.hidden = hidden;
    c.epochs = epochs;
    c.patience = patience;
    c.learning_rate = lr;
    c.dropout = dropout;
    c.weight_decay = weight_decay;
    c.seed = seed;
    c.validate();
    return c;
  }
};

int cmd_prepare(const fs::path& raw, const fs::path& out, std::uint64_t seed, std::size_t repeats, bool force) {
  if (repeats < 1) throw std::invalid_argument("--repeats must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < repeats; ++r) seeds.push_back(seed + r);
  const auto g = igcn::prepare_dataset(raw, out, seeds, force);
  std::cout << "prepared " << g.name << ": " << g.num_nodes << " nodes, " << g.num_edges() << " edges, "
            << g.num_classes << " classes, feature dim " << g.feature_dim() << " -> " << out.string() << "\n";
  return kOk;
}

int cmd_attack(const fs::path& prepared, const std::string& attack, double rate, std::uint64_t seed,
               const std::optional<fs::path>& out, bool force) {
  const auto variant = igcn::parse_attack_variant(attack);
  const auto g = igcn::load_bundle(prepared);
  const fs::path dir = out.value_or(igcn::cache_dir(prepared));
  const fs::path path = dir / igcn::cache_file_name(attack, rate, seed);
  if (!force && fs::exists(path)) {
    const auto p = igcn::load_perturbation(path, g.name);
    std::cout << "cached " << path.string() << " (" << p.flips.size() << " flips)\n";
    return kOk;
  }
  igcn::AttackConfig cfg;
  cfg.ptb_rate = rate;
  cfg.variant = variant;
  cfg.seed = seed;
  igcn::AttackTrace trace;
  const auto p = igcn::run_attack(g, igcn::splits_for(prepared, g, seed), cfg, &trace);
  fs::create_directories(dir);
  igcn::cache_perturbation(p, path);
  std::cout << "wrote " << path.string() << ": " << p.flips.size() << " of " << p.budget << " flips";
  if (p.shortfall > 0) {
    std::cout << ", shortfall " << p.shortfall << " (no admissible flip left; " << trace.ll_rejections
              << " candidates failed the degree test, " << trace.isolation_rejections << " would isolate a node)";
  }
  std::cout << "\n";
  return kOk;
}

int cmd_train(const fs::path& prepared, const std::string& model, const std::optional<std::string>& attack,
              double rate, const std::optional<fs::path>& cache, std::uint64_t seed, const TrainFlags& flags,
              const std::optional<fs::path>& out, const std::optional<fs::path>& checkpoint) {
  const auto kind = igcn::parse_model_kind(model);
  const auto cfg = flags.config(seed);
  const auto g = igcn::load_bundle(prepared);
  std::optional<igcn::Perturbation> ptb;
  if (cache) {
    ptb = igcn::load_perturbation(*cache, g.name);
  } else if (attack && rate > 0.0) {
    igcn::parse_attack_variant(*attack);
    const auto path = igcn::cache_dir(prepared) / igcn::cache_file_name(*attack, rate, seed);
    if (!fs::exists(path)) {
      throw igcn::DataError("no perturbation cache " + path.string() + " (run the attack subcommand first)");
    }
    ptb = igcn::load_perturbation(path, g.name);
  } else if (rate > 0.0) {
    throw std::invalid_argument("--ptb-rate needs --attack or --ptb-cache");
  }
  const auto splits = igcn::splits_for(prepared, g, seed);
  igcn::Model trained;
  const auto record = igcn::run_single(g, splits, ptb ? &*ptb : nullptr, kind, cfg, &trained);
  if (checkpoint) igcn::save_checkpoint(trained, *checkpoint);
  const std::string text = igcn::record_to_json(record).dump(2) + "\n";
  if (out) {
    igcn::write_text_atomic(*out, text);
  } else {
    std::cout << text;
  }
  std::cerr << record.dataset << " " << record.model << " " << record.attack << " rate " << igcn::format_rate(record.ptb_rate)
            << " seed " << record.seed << ": test accuracy " << record.test_accuracy << " (best epoch "
            << record.best_epoch << " of " << record.epochs_run << ")\n";
  return kOk;
}

int cmd_matrix(const fs::path& plan_path, std::optional<std::size_t> workers, std::optional<fs::path> out,
               std::optional<std::size_t> repeats, std::optional<std::uint64_t> seed, bool force) {
  auto plan = igcn::load_plan(plan_path);
  if (workers) plan.workers = *workers;
  if (out) plan.out = *out;
  if (repeats) plan.repeats = *repeats;
  if (seed) plan.base_seed = *seed;
  const auto summary = igcn::run_matrix(plan, force, &std::cerr);
  std::cout << "cells " << summary.cells << ", skipped " << summary.skipped << ", completed " << summary.completed
            << ", failed " << summary.failures.size() << "\n";
  for (const auto& f : summary.failures) std::cerr << "failed: " << f << "\n";
  return summary.failures.empty() ? kOk : kRun;
}

int cmd_report(const fs::path& run_dir, const std::optional<fs::path>& out) {
  const auto files = igcn::report_run_dir(run_dir, out.value_or(run_dir / "report"));
  for (const auto& f : files) std::cout << f.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Influence GCN robustness toolkit"};
  app.require_subcommand(1);

  std::string dataset;
  std::string model;
  std::string attack;
  double ptb_rate = 0.0;
  std::uint64_t seed = 0;
  std::size_t repeats = 1;
  bool force = false;
  std::optional<fs::path> out;
  std::optional<fs::path> ptb_cache;
  std::optional<fs::path> checkpoint;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> matrix_repeats;
  std::optional<std::uint64_t> matrix_seed;
  fs::path plan_path;
  fs::path run_dir;
  TrainFlags flags;

  auto* prepare = app.add_subcommand("prepare", "Extract the largest connected component and write split files");
  prepare->add_option("--dataset", dataset, "Raw bundle directory")->required();
  prepare->add_option("--out", out, "Prepared bundle directory")->required();
  prepare->add_option("--seed", seed, "First split seed")->capture_default_str();
  prepare->add_option("--repeats", repeats, "Number of consecutive split seeds")->capture_default_str();
  prepare->add_flag("--force", force, "Rewrite existing outputs");

  auto* attack_cmd = app.add_subcommand("attack", "Generate and cache a perturbation");
  attack_cmd->add_option("--dataset", dataset, "Prepared bundle directory")->required();
  attack_cmd->add_option("--attack", attack, "random | meta-ll | meta-f")->required();
  attack_cmd->add_option("--ptb-rate", ptb_rate, "Flips as a fraction of the edge count")->required();
  attack_cmd->add_option("--seed", seed, "Attack and split seed")->capture_default_str();
  attack_cmd->add_option("--out", out, "Cache directory (default <dataset>/ptb)");
  attack_cmd->add_flag("--force", force, "Regenerate an existing cache");

  auto* train = app.add_subcommand("train", "Train one model, optionally on a poisoned graph");
  train->add_option("--dataset", dataset, "Prepared bundle directory")->required();
  train->add_option("--model", model, "gcn | igcn-n | igcn-a")->required();
  train->add_option("--attack", attack, "Use the cached perturbation of this attack");
  train->add_option("--ptb-rate", ptb_rate, "Perturbation rate of the cached attack")->capture_default_str();
  train->add_option("--ptb-cache", ptb_cache, "Explicit perturbation cache file");
  train->add_option("--seed", seed, "Run seed (weights, dropout, split)")->capture_default_str();
  train->add_option("--out", out, "Run record file (default stdout)");
  train->add_option("--checkpoint", checkpoint, "Also save the trained parameters here");
  flags.add_to(train);

  auto* matrix = app.add_subcommand("matrix", "Run every cell of an experiment plan");
  matrix->add_option("plan", plan_path, "Plan file (JSON)")->required();
  matrix->add_option("--workers", workers, "Concurrent cells");
  matrix->add_option("--out", out, "Output directory (overrides the plan)");
  matrix->add_option("--repeats", matrix_repeats, "Repeats per cell (overrides the plan)");
  matrix->add_option("--seed", matrix_seed, "Base seed (overrides the plan)");
  matrix->add_flag("--force", force, "Recompute existing records and caches");

  auto* report = app.add_subcommand("report", "Aggregate run records into tables and series");
  report->add_option("runs", run_dir, "Matrix output directory")->required();
  report->add_option("--out", out, "Report directory (default <runs>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(dataset, *out, seed, repeats, force);
    if (attack_cmd->parsed()) return cmd_attack(dataset, attack, ptb_rate, seed, out, force);
    if (train->parsed()) {
      const std::optional<std::string> a = attack.empty() ? std::nullopt : std::optional<std::string>(attack);
      return cmd_train(dataset, model, a, ptb_rate, ptb_cache, seed, flags, out, checkpoint);
    }
    if (matrix->parsed()) return cmd_matrix(plan_path, workers, out, matrix_repeats, matrix_seed, force);
    if (report->parsed()) return cmd_report(run_dir, out);
  } catch (const igcn::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRun;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const igcn::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return kRun;
  }
  return kUsage;
}
