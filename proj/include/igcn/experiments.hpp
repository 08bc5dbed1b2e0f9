#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "igcn/attacks.hpp"
#include "igcn/graph.hpp"
#include "igcn/models.hpp"
#include "igcn/training.hpp"

namespace igcn {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kCleanAttack = "clean";

// ---------------------------------------------------------------------------
// Plan

struct ExperimentPlan {
  std::vector<fs::path> datasets;  // raw bundle directories
  std::vector<ModelKind> models{ModelKind::Gcn, ModelKind::IgcnL1, ModelKind::IgcnAuto};
  std::vector<AttackVariant> attacks{AttackVariant::MetaLL};
  std::vector<double> ptb_rates{0.0, 0.05, 0.10, 0.15, 0.20, 0.25};
  std::vector<std::size_t> hidden{40};
  std::size_t repeats = 10;
  std::uint64_t base_seed = 0;
  std::optional<std::uint64_t> pin_attack_seed;  // reuse one perturbation for every repeat
  fs::path out = "runs";
  std::size_t workers = 1;
  TrainConfig train;  // hidden and seed are overridden per cell

  std::uint64_t seed_for(std::size_t repeat) const { return base_seed + repeat; }

  void validate() const {
    if (datasets.empty()) throw std::invalid_argument("plan: no datasets");
    if (models.empty()) throw std::invalid_argument("plan: no models");
    if (ptb_rates.empty()) throw std::invalid_argument("plan: no ptb_rates");
    if (hidden.empty()) throw std::invalid_argument("plan: no hidden sizes");
    if (repeats < 1) throw std::invalid_argument("plan: repeats must be >= 1");
    if (workers < 1) throw std::invalid_argument("plan: workers must be >= 1");
    for (double r : ptb_rates) {
      if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("plan: ptb rate " + std::to_string(r) + " outside [0, 1]");
    }
    const bool attacked = std::any_of(ptb_rates.begin(), ptb_rates.end(), [](double r) { return r > 0.0; });
    if (attacked && attacks.empty()) throw std::invalid_argument("plan: nonzero ptb rates need at least one attack");
    TrainConfig probe = train;
    for (auto h : hidden) {
      probe.hidden = h;
      probe.validate();
    }
  }
};

inline json plan_to_json(const ExperimentPlan& p) {
  json j;
  j["datasets"] = json::array();
  for (const auto& d : p.datasets) j["datasets"].push_back(d.string());
  j["models"] = json::array();
  for (auto m : p.models) j["models"].push_back(std::string(to_string(m)));
  j["attacks"] = json::array();
  for (auto a : p.attacks) j["attacks"].push_back(std::string(to_string(a)));
  j["ptb_rates"] = p.ptb_rates;
  j["hidden"] = p.hidden;
  j["repeats"] = p.repeats;
  j["base_seed"] = p.base_seed;
  j["pin_attack_seed"] = p.pin_attack_seed ? json(*p.pin_attack_seed) : json(nullptr);
  j["out"] = p.out.string();
  j["workers"] = p.workers;
  j["epochs"] = p.train.epochs;
  j["patience"] = p.train.patience;
  j["lr"] = p.train.learning_rate;
  j["dropout"] = p.train.dropout;
  j["weight_decay"] = p.train.weight_decay;
  return j;
}

// Relative dataset and output paths are resolved against `base`.
inline ExperimentPlan plan_from_json(const json& j, const fs::path& base = {}) {
  static const std::set<std::string> known{"datasets", "models",  "attacks", "ptb_rates", "hidden",
                                           "repeats",  "base_seed", "pin_attack_seed", "out", "workers",
                                           "epochs",   "patience", "lr",      "dropout",   "weight_decay"};
  if (!j.is_object()) throw std::invalid_argument("plan: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("plan: unknown key '" + key + "'");
  }
  auto resolve = [&](const std::string& s) {
    fs::path p(s);
    return p.is_absolute() || base.empty() ? p : base / p;
  };
  ExperimentPlan p;
  try {
    if (j.contains("datasets")) {
      p.datasets.clear();
      for (const auto& d : j.at("datasets")) p.datasets.push_back(resolve(d.get<std::string>()));
    }
    if (j.contains("models")) {
      p.models.clear();
      for (const auto& m : j.at("models")) p.models.push_back(parse_model_kind(m.get<std::string>()));
    }
    if (j.contains("attacks")) {
      p.attacks.clear();
      for (const auto& a : j.at("attacks")) p.attacks.push_back(parse_attack_variant(a.get<std::string>()));
    }
    if (j.contains("ptb_rates")) p.ptb_rates = j.at("ptb_rates").get<std::vector<double>>();
    if (j.contains("hidden")) {
      const auto& h = j.at("hidden");
      p.hidden = h.is_array() ? h.get<std::vector<std::size_t>>() : std::vector<std::size_t>{h.get<std::size_t>()};
    }
    if (j.contains("repeats")) p.repeats = j.at("repeats").get<std::size_t>();
    if (j.contains("base_seed")) p.base_seed = j.at("base_seed").get<std::uint64_t>();
    if (j.contains("pin_attack_seed") && !j.at("pin_attack_seed").is_null()) {
      p.pin_attack_seed = j.at("pin_attack_seed").get<std::uint64_t>();
    }
    if (j.contains("out")) p.out = resolve(j.at("out").get<std::string>());
    if (j.contains("workers")) p.workers = j.at("workers").get<std::size_t>();
    if (j.contains("epochs")) p.train.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("patience")) p.train.patience = j.at("patience").get<std::size_t>();
    if (j.contains("lr")) p.train.learning_rate = j.at("lr").get<double>();
    if (j.contains("dropout")) p.train.dropout = j.at("dropout").get<double>();
    if (j.contains("weight_decay")) p.train.weight_decay = j.at("weight_decay").get<double>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("plan: ") + e.what());
  }
  // Sorted rates give the report its row order.
  std::sort(p.ptb_rates.begin(), p.ptb_rates.end());
  p.ptb_rates.erase(std::unique(p.ptb_rates.begin(), p.ptb_rates.end()), p.ptb_rates.end());
  return p;
}

inline ExperimentPlan load_plan(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open plan " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("plan " + path.string() + ": " + e.what());
  }
  return plan_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Files

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline fs::path split_file(const fs::path& prepared, std::uint64_t seed) {
  return prepared / "splits" / ("split_" + std::to_string(seed) + ".tsv");
}

inline fs::path cache_dir(const fs::path& prepared) { return prepared / "ptb"; }

// LCC extraction plus one split file per seed. Existing outputs are kept unless `force`.
inline GraphBundle prepare_dataset(const fs::path& raw, const fs::path& prepared, std::span<const std::uint64_t> seeds,
                                   bool force = false) {
  GraphBundle g;
  if (!force && fs::exists(prepared / "meta.json")) {
    g = load_bundle(prepared);
  } else {
    g = largest_connected_component(load_bundle(raw));
    save_bundle(g, prepared, true);
  }
  for (auto seed : seeds) {
    const auto path = split_file(prepared, seed);
    if (!force && fs::exists(path)) continue;
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    save_splits(random_split(g, seed), g.num_nodes, tmp);
    fs::rename(tmp, path);
  }
  return g;
}

inline SplitSets splits_for(const fs::path& prepared, const GraphBundle& g, std::uint64_t seed) {
  const auto path = split_file(prepared, seed);
  if (!fs::exists(path)) return random_split(g, seed);
  auto s = load_splits(path);
  if (s.train.size() + s.val.size() + s.test.size() != g.num_nodes) {
    throw DataError(path.string() + ": split covers " + std::to_string(s.train.size() + s.val.size() + s.test.size()) +
                    " nodes, graph has " + std::to_string(g.num_nodes));
  }
  return s;
}

// Loads the cached perturbation or generates and caches it.
inline Perturbation ensure_perturbation(const fs::path& prepared, const GraphBundle& g, AttackVariant variant,
                                        double rate, std::uint64_t seed, bool force = false) {
  const auto path = cache_dir(prepared) / cache_file_name(to_string(variant), rate, seed);
  if (!force && fs::exists(path)) return load_perturbation(path, g.name);
  AttackConfig cfg;
  cfg.ptb_rate = rate;
  cfg.variant = variant;
  cfg.seed = seed;
  const auto p = run_attack(g, splits_for(prepared, g, seed), cfg);
  fs::create_directories(path.parent_path());
  cache_perturbation(p, path);
  return p;
}

// ---------------------------------------------------------------------------
// Runs

struct RunRecord {
  std::string dataset;
  std::string model;
  std::string attack;  // "clean" when ptb_rate is 0
  double ptb_rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t attack_seed = 0;
  TrainConfig config;
  std::size_t flips = 0;
  std::size_t shortfall = 0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
};

inline json record_to_json(const RunRecord& r) {
  return json{{"dataset", r.dataset},
              {"model", r.model},
              {"attack", r.attack},
              {"ptb_rate", r.ptb_rate},
              {"seed", r.seed},
              {"attack_seed", r.attack_seed},
              {"config",
               {{"epochs", r.config.epochs},
                {"patience", r.config.patience},
                {"lr", r.config.learning_rate},
                {"weight_decay", r.config.weight_decay},
                {"dropout", r.config.dropout},
                {"hidden", r.config.hidden}}},
              {"flips", r.flips},
              {"shortfall", r.shortfall},
              {"epochs_run", r.epochs_run},
              {"best_epoch", r.best_epoch},
              {"best_val_loss", r.best_val_loss},
              {"test_accuracy", r.test_accuracy},
              {"wall_seconds", r.wall_seconds}};
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.dataset = j.at("dataset").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.attack = j.at("attack").get<std::string>();
  r.ptb_rate = j.at("ptb_rate").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.attack_seed = j.value("attack_seed", r.seed);
  const auto& c = j.at("config");
  r.config.epochs = c.at("epochs").get<std::size_t>();
  r.config.patience = c.at("patience").get<std::size_t>();
  r.config.learning_rate = c.at("lr").get<double>();
  r.config.weight_decay = c.at("weight_decay").get<double>();
  r.config.dropout = c.at("dropout").get<double>();
  r.config.hidden = c.at("hidden").get<std::size_t>();
  r.config.seed = r.seed;
  r.flips = j.value("flips", std::size_t{0});
  r.shortfall = j.value("shortfall", std::size_t{0});
  r.epochs_run = j.at("epochs_run").get<std::size_t>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.best_val_loss = j.at("best_val_loss").get<double>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.wall_seconds = j.value("wall_seconds", 0.0);
  return r;
}

inline void write_record(const RunRecord& r, const fs::path& path) {
  write_text_atomic(path, record_to_json(r).dump(2) + "\n");
}

inline RunRecord read_record(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open record " + path.string());
  try {
    json j;
    in >> j;
    return record_from_json(j);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// Poisoning: the perturbation (if any) is applied before training.
inline RunRecord run_single(const GraphBundle& clean, const SplitSets& splits, const Perturbation* ptb, ModelKind model,
                            const TrainConfig& cfg, Model* trained = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  const GraphBundle g = ptb ? apply_perturbation(clean, *ptb) : clean;
  const auto adj = normalize(g);
  const auto x = model_features(g);
  const TrainingData data{adj, x, g.labels, g.num_classes, splits};
  const auto result = fit(model, data, cfg);
  RunRecord r;
  r.dataset = clean.name;
  r.model = std::string(to_string(model));
  r.attack = ptb && ptb->rate > 0.0 ? ptb->attack : std::string(kCleanAttack);
  r.ptb_rate = ptb ? ptb->rate : 0.0;
  r.seed = cfg.seed;
  r.attack_seed = ptb ? ptb->seed : cfg.seed;
  r.config = cfg;
  r.flips = ptb ? ptb->flips.size() : 0;
  r.shortfall = ptb ? ptb->shortfall : 0;
  r.epochs_run = result.stopped_epoch;
  r.best_epoch = result.best_epoch;
  r.best_val_loss = result.best_val_loss;
  r.test_accuracy = result.test_accuracy;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trained) *trained = result.model;
  return r;
}

// Runs fn(i) for i in [0, count) on up to `workers` threads. Exceptions are
// caught per index and returned in index order.
template <class Fn>
std::vector<std::pair<std::size_t, std::string>> parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::vector<std::pair<std::size_t, std::string>> failures;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        failures.emplace_back(i, e.what());
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, count));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  std::sort(failures.begin(), failures.end());
  return failures;
}

struct MatrixCell {
  std::size_t dataset = 0;
  ModelKind model = ModelKind::Gcn;
  std::optional<AttackVariant> attack;  // empty for clean cells
  double rate = 0.0;
  std::size_t hidden = 40;
  std::size_t repeat = 0;
};

inline std::string rate_tag(double rate) { return format_rate(rate); }

inline fs::path record_path(const fs::path& out, const std::string& dataset, const MatrixCell& c, std::uint64_t seed) {
  const std::string attack = c.attack ? std::string(to_string(*c.attack)) : std::string(kCleanAttack);
  return out / "records" / dataset / attack / std::string(to_string(c.model)) /
         ("h" + std::to_string(c.hidden) + "_rate" + rate_tag(c.rate) + "_seed" + std::to_string(seed) + ".json");
}

struct MatrixSummary {
  std::size_t cells = 0;
  std::size_t skipped = 0;  // records already present
  std::size_t completed = 0;
  std::vector<std::string> failures;
};

// Rate-0 cells do not depend on the attack and are run once as "clean".
inline std::vector<MatrixCell> matrix_cells(const ExperimentPlan& plan) {
  std::vector<MatrixCell> cells;
  for (std::size_t d = 0; d < plan.datasets.size(); ++d) {
    for (double rate : plan.ptb_rates) {
      std::vector<std::optional<AttackVariant>> attacks;
      if (rate == 0.0) {
        attacks.push_back(std::nullopt);
      } else {
        for (auto a : plan.attacks) attacks.push_back(a);
      }
      for (const auto& a : attacks) {
        for (auto h : plan.hidden) {
          for (auto m : plan.models) {
            for (std::size_t r = 0; r < plan.repeats; ++r) cells.push_back({d, m, a, rate, h, r});
          }
        }
      }
    }
  }
  return cells;
}

inline fs::path prepared_dir(const ExperimentPlan& plan, const std::string& dataset) {
  return plan.out / "prepared" / dataset;
}

// Prepare, then generate every needed perturbation, then train every missing cell.
// Each phase is parallel across its independent units; outputs never depend on the worker count.
inline MatrixSummary run_matrix(const ExperimentPlan& plan, bool force = false, std::ostream* log = nullptr) {
  plan.validate();
  fs::create_directories(plan.out);
  write_text_atomic(plan.out / "plan.json", plan_to_json(plan).dump(2) + "\n");

  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < plan.repeats; ++r) seeds.push_back(plan.seed_for(r));
  if (plan.pin_attack_seed) seeds.push_back(*plan.pin_attack_seed);
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  std::vector<GraphBundle> graphs;
  std::vector<std::string> names;
  for (const auto& raw : plan.datasets) {
    const auto probe = load_bundle(raw);
    if (std::find(names.begin(), names.end(), probe.name) != names.end()) {
      throw std::invalid_argument("plan: dataset name '" + probe.name + "' appears twice");
    }
    names.push_back(probe.name);
    graphs.push_back(prepare_dataset(raw, prepared_dir(plan, probe.name), seeds, force));
  }

  const auto cells = matrix_cells(plan);
  MatrixSummary summary;
  summary.cells = cells.size();
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    if (!force && fs::exists(record_path(plan.out, names[c.dataset], c, plan.seed_for(c.repeat)))) {
      ++summary.skipped;
    } else {
      todo.push_back(i);
    }
  }

  auto attack_seed = [&](std::size_t repeat) { return plan.pin_attack_seed.value_or(plan.seed_for(repeat)); };

  struct AttackJob {
    std::size_t dataset;
    AttackVariant variant;
    double rate;
    std::uint64_t seed;
    auto operator<=>(const AttackJob&) const = default;
  };
  std::vector<AttackJob> jobs;
  for (auto i : todo) {
    const auto& c = cells[i];
    if (c.attack) jobs.push_back({c.dataset, *c.attack, c.rate, attack_seed(c.repeat)});
  }
  std::sort(jobs.begin(), jobs.end());
  jobs.erase(std::unique(jobs.begin(), jobs.end()), jobs.end());

  std::map<AttackJob, Perturbation> perturbations;
  std::mutex mu;
  const auto attack_failures = parallel_for(jobs.size(), plan.workers, [&](std::size_t k) {
    const auto& job = jobs[k];
    auto p = ensure_perturbation(prepared_dir(plan, names[job.dataset]), graphs[job.dataset], job.variant, job.rate,
                                 job.seed, force);
    std::lock_guard lock(mu);
    perturbations.emplace(job, std::move(p));
  });
  for (const auto& [k, what] : attack_failures) {
    const auto& job = jobs[k];
    summary.failures.push_back("attack " + names[job.dataset] + " " + std::string(to_string(job.variant)) + " rate " +
                               rate_tag(job.rate) + " seed " + std::to_string(job.seed) + ": " + what);
  }

  std::atomic<std::size_t> completed{0};
  const auto run_failures = parallel_for(todo.size(), plan.workers, [&](std::size_t k) {
    const auto& c = cells[todo[k]];
    const auto seed = plan.seed_for(c.repeat);
    const Perturbation* ptb = nullptr;
    if (c.attack) {
      const auto it = perturbations.find(AttackJob{c.dataset, *c.attack, c.rate, attack_seed(c.repeat)});
      if (it == perturbations.end()) throw AttackError("perturbation unavailable");
      ptb = &it->second;
    }
    TrainConfig cfg = plan.train;
    cfg.hidden = c.hidden;
    cfg.seed = seed;
    const auto& prepared = prepared_dir(plan, names[c.dataset]);
    const auto record = run_single(graphs[c.dataset], splits_for(prepared, graphs[c.dataset], seed), ptb, c.model, cfg);
    write_record(record, record_path(plan.out, names[c.dataset], c, seed));
    ++completed;
    if (log) {
      std::lock_guard lock(mu);
      *log << "done " << record_path(plan.out, names[c.dataset], c, seed).filename().string() << " "
           << names[c.dataset] << " " << record.model << " " << record.attack << " acc "
           << detail::format_double(record.test_accuracy) << "\n";
    }
  });
  for (const auto& [k, what] : run_failures) {
    const auto& c = cells[todo[k]];
    summary.failures.push_back(record_path(plan.out, names[c.dataset], c, plan.seed_for(c.repeat)).string() + ": " +
                               what);
  }
  summary.completed = completed;
  return summary;
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string dataset;
  std::string attack;
  std::size_t hidden = 0;
  double ptb_rate = 0.0;
  std::string model;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t n_runs = 0;
};

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Shifted by the first value so identical inputs give exactly 0.
inline double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double shift_sum = 0.0;
  for (double x : v) shift_sum += x - v[0];
  const double m = shift_sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - v[0] - m) * (x - v[0] - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline std::vector<RunRecord> read_records(const fs::path& run_dir) {
  const fs::path root = run_dir / "records";
  if (!fs::is_directory(root)) throw DataError("no records directory under " + run_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) out.push_back(read_record(f));
  if (out.empty()) throw DataError("no run records under " + root.string());
  return out;
}

inline int model_rank(const std::string& model, const std::vector<std::string>& order) {
  const auto it = std::find(order.begin(), order.end(), model);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

// Groups by (dataset, attack, hidden, rate, model). Clean records appear under every attack present.
inline std::vector<ReportRow> aggregate(const std::vector<RunRecord>& records, std::vector<std::string> model_order = {}) {
  if (model_order.empty()) {
    for (auto k : {ModelKind::Gcn, ModelKind::IgcnL1, ModelKind::IgcnAuto}) model_order.emplace_back(to_string(k));
  }
  std::map<std::string, std::set<std::string>> attacks_by_dataset;
  for (const auto& r : records) {
    if (r.attack != kCleanAttack) attacks_by_dataset[r.dataset].insert(r.attack);
  }
  using Key = std::tuple<std::string, std::string, std::size_t, double, int, std::string>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : records) {
    const int rank = model_rank(r.model, model_order);
    std::vector<std::string> attacks;
    if (r.attack != kCleanAttack) {
      attacks.push_back(r.attack);
    } else if (attacks_by_dataset[r.dataset].empty()) {
      attacks.emplace_back(kCleanAttack);
    } else {
      attacks.assign(attacks_by_dataset[r.dataset].begin(), attacks_by_dataset[r.dataset].end());
    }
    for (const auto& a : attacks) groups[{r.dataset, a, r.config.hidden, r.ptb_rate, rank, r.model}].push_back(r.test_accuracy);
  }
  std::vector<ReportRow> rows;
  for (auto& [key, acc] : groups) {
    std::sort(acc.begin(), acc.end());  // summation order independent of file layout
    const auto& [dataset, attack, hidden, rate, rank, model] = key;
    rows.push_back({dataset, attack, hidden, rate, model, mean_of(acc), sample_stddev(acc), acc.size()});
  }
  return rows;
}

inline std::string format_cell(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", 100.0 * mean, 100.0 * stddev);
  return buf;
}

// Writes table_<dataset>_<attack>[_h<hidden>].{txt,tsv} and
// series_<dataset>_<attack>_<model>[_h<hidden>].tsv into out_dir. Returns the files written.
inline std::vector<fs::path> write_report(const std::vector<ReportRow>& rows, const fs::path& out_dir) {
  if (rows.empty()) throw DataError("report: nothing to aggregate");
  std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<const ReportRow*>> tables;
  std::map<std::pair<std::string, std::string>, std::set<std::size_t>> hidden_sizes;
  for (const auto& r : rows) {
    tables[{r.dataset, r.attack, r.hidden}].push_back(&r);
    hidden_sizes[{r.dataset, r.attack}].insert(r.hidden);
  }
  std::vector<fs::path> written;
  for (const auto& [key, group] : tables) {
    const auto& [dataset, attack, hidden] = key;
    const std::string suffix = hidden_sizes[{dataset, attack}].size() > 1 ? "_h" + std::to_string(hidden) : "";
    const std::string stem = dataset + "_" + attack + suffix;

    std::vector<std::string> models;
    std::vector<double> rates;
    for (const auto* r : group) {
      if (std::find(models.begin(), models.end(), r->model) == models.end()) models.push_back(r->model);
      if (std::find(rates.begin(), rates.end(), r->ptb_rate) == rates.end()) rates.push_back(r->ptb_rate);
    }
    std::sort(rates.begin(), rates.end());
    auto find = [&](double rate, const std::string& model) -> const ReportRow* {
      for (const auto* r : group) {
        if (r->ptb_rate == rate && r->model == model) return r;
      }
      return nullptr;
    };

    std::ostringstream txt;
    txt << "dataset " << dataset << ", attack " << attack << ", hidden " << hidden
        << ": test accuracy (%) mean±std over runs\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-8s", "ptb");
    txt << buf;
    for (const auto& m : models) {
      std::snprintf(buf, sizeof(buf), "  %-14s", m.c_str());
      txt << buf;
    }
    txt << "  n\n";
    for (double rate : rates) {
      std::snprintf(buf, sizeof(buf), "%-8s", rate_tag(rate).c_str());
      txt << buf;
      std::size_t n = 0;
      for (const auto& m : models) {
        const auto* r = find(rate, m);
        const std::string cell = r ? format_cell(r->mean, r->stddev) : "-";
        if (r) n = std::max(n, r->n_runs);
        // The plus-minus sign is two bytes wide in UTF-8 but one column on screen.
        std::snprintf(buf, sizeof(buf), "  %-*s", r ? 15 : 14, cell.c_str());
        txt << buf;
      }
      txt << "  " << n << "\n";
    }
    const auto txt_path = out_dir / ("table_" + stem + ".txt");
    write_text_atomic(txt_path, txt.str());
    written.push_back(txt_path);

    std::ostringstream tsv;
    tsv << "dataset\tattack\thidden\tptb_rate\tmodel\tmean\tstd\tn_runs\n";
    for (double rate : rates) {
      for (const auto& m : models) {
        if (const auto* r = find(rate, m)) {
          tsv << dataset << '\t' << attack << '\t' << hidden << '\t' << rate_tag(rate) << '\t' << m << '\t'
              << detail::format_double(r->mean) << '\t' << detail::format_double(r->stddev) << '\t' << r->n_runs << '\n';
        }
      }
    }
    const auto tsv_path = out_dir / ("table_" + stem + ".tsv");
    write_text_atomic(tsv_path, tsv.str());
    written.push_back(tsv_path);

    for (const auto& m : models) {
      std::ostringstream series;
      series << "ptb_rate\tmean\tstd\tn_runs\n";
      for (double rate : rates) {
        if (const auto* r = find(rate, m)) {
          std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.4f\t", rate_tag(rate).c_str(), 100.0 * r->mean, 100.0 * r->stddev);
          series << buf << r->n_runs << '\n';
        }
      }
      const auto path = out_dir / ("series_" + dataset + "_" + attack + "_" + m + suffix + ".tsv");
      write_text_atomic(path, series.str());
      written.push_back(path);
    }
  }
  return written;
}

// Model column order comes from the run directory's plan.json when present.
inline std::vector<fs::path> report_run_dir(const fs::path& run_dir, const fs::path& out_dir) {
  std::vector<std::string> order;
  if (fs::exists(run_dir / "plan.json")) {
    std::ifstream in(run_dir / "plan.json");
    json j;
    try {
      in >> j;
      for (const auto& m : j.at("models")) order.push_back(m.get<std::string>());
    } catch (const json::exception& e) {
      throw DataError((run_dir / "plan.json").string() + ": " + e.what());
    }
  }
  return write_report(aggregate(read_records(run_dir), order), out_dir);
}

}  // namespace igcn
