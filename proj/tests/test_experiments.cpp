#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "igcn/experiments.hpp"
#include "support.hpp"

using namespace igcn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<fs::path> records_under(const fs::path& out) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(out / "records"))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

ExperimentPlan small_plan(const fs::path& root) {
  auto g = oracle::two_clusters(30, 4);
  g.name = "clusters";
  save_bundle(g, root / "raw", true);
  ExperimentPlan p;
  p.datasets = {root / "raw"};
  p.models = {ModelKind::Gcn, ModelKind::IgcnL1};
  p.attacks = {AttackVariant::Random};
  p.ptb_rates = {0.0, 0.1};
  p.hidden = {8};
  p.repeats = 3;
  p.out = root / "runs";
  p.train.epochs = 30;
  p.train.patience = 10;
  return p;
}

RunRecord record(const std::string& model, const std::string& attack, double rate, double acc, std::uint64_t seed) {
  RunRecord r;
  r.dataset = "d";
  r.model = model;
  r.attack = attack;
  r.ptb_rate = rate;
  r.seed = seed;
  r.config.hidden = 40;
  r.test_accuracy = acc;
  return r;
}

}  // namespace

TEST(Plan, ParsesAndResolvesRelativePaths) {
  const auto j = json::parse(R"({"datasets": ["data/cora", "/abs/blogs"], "models": ["gcn", "igcn-a"],
                                 "attacks": ["meta-ll", "random"], "ptb_rates": [0.2, 0.0, 0.05, 0.2],
                                 "hidden": 16, "repeats": 4, "base_seed": 7, "pin_attack_seed": 3,
                                 "out": "runs", "workers": 2, "epochs": 50, "patience": 5})");
  const auto p = plan_from_json(j, "/plans");
  EXPECT_EQ(p.datasets, (std::vector<fs::path>{"/plans/data/cora", "/abs/blogs"}));
  EXPECT_EQ(p.models, (std::vector<ModelKind>{ModelKind::Gcn, ModelKind::IgcnAuto}));
  EXPECT_EQ(p.attacks, (std::vector<AttackVariant>{AttackVariant::MetaLL, AttackVariant::Random}));
  EXPECT_EQ(p.ptb_rates, (std::vector<double>{0.0, 0.05, 0.2}));
  EXPECT_EQ(p.hidden, (std::vector<std::size_t>{16}));
  EXPECT_EQ(p.repeats, 4u);
  EXPECT_EQ(p.seed_for(2), 9u);
  EXPECT_EQ(p.pin_attack_seed, std::optional<std::uint64_t>(3));
  EXPECT_EQ(p.out, fs::path("/plans/runs"));
  EXPECT_EQ(p.workers, 2u);
  EXPECT_EQ(p.train.epochs, 50u);
  EXPECT_NO_THROW(p.validate());

  const auto back = plan_from_json(plan_to_json(p));
  EXPECT_EQ(plan_to_json(back), plan_to_json(p));
}

TEST(Plan, RejectsBadInput) {
  EXPECT_THROW(plan_from_json(json::parse(R"({"dataset": ["x"]})")), std::invalid_argument);
  EXPECT_THROW(plan_from_json(json::parse(R"({"models": ["gat"]})")), std::invalid_argument);
  EXPECT_THROW(plan_from_json(json::parse(R"({"repeats": "ten"})")), std::invalid_argument);
  EXPECT_THROW(plan_from_json(json::parse(R"([1, 2])")), std::invalid_argument);
  auto p = plan_from_json(json::parse(R"({"datasets": ["x"], "ptb_rates": [1.5]})"));
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = plan_from_json(json::parse(R"({"datasets": ["x"], "attacks": []})"));
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = plan_from_json(json::parse(R"({"datasets": ["x"], "attacks": [], "ptb_rates": [0]})"));
  EXPECT_NO_THROW(p.validate());
}

TEST(Records, JsonRoundTrip) {
  RunRecord r = record("igcn-n", "meta-ll", 0.15, 0.8125, 4);
  r.attack_seed = 2;
  r.flips = 12;
  r.shortfall = 1;
  r.epochs_run = 33;
  r.best_epoch = 13;
  r.best_val_loss = 0.123456789012345;
  r.wall_seconds = 1.5;
  oracle::TempDir tmp("rec");
  write_record(r, tmp.path / "r.json");
  const auto back = read_record(tmp.path / "r.json");
  EXPECT_EQ(record_to_json(back), record_to_json(r));
  EXPECT_EQ(back.best_val_loss, r.best_val_loss);
}

TEST(Report, SampleStandardDeviation) {
  const std::vector<double> two{0.8, 0.9};
  EXPECT_NEAR(sample_stddev(two), 0.0707106781, 1e-9);
  const std::vector<double> same{0.7, 0.7, 0.7};
  EXPECT_EQ(sample_stddev(same), 0.0);
  EXPECT_EQ(format_cell(0.7, sample_stddev(same)), "70.00±0.00");
  EXPECT_EQ(format_cell(0.85, sample_stddev(two)), "85.00±7.07");
}

TEST(Report, AggregateMatchesGroupedOracle) {
  std::vector<RunRecord> rs;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> acc(0.5, 0.9);
  std::map<std::tuple<std::string, std::string, double>, std::vector<double>> want;
  for (const std::string model : {"gcn", "igcn-a"}) {
    for (std::uint64_t s = 0; s < 4; ++s) {
      const double clean = acc(rng);
      rs.push_back(record(model, "clean", 0.0, clean, s));
      for (const std::string attack : {"meta-ll", "random"}) {
        want[{model, attack, 0.0}].push_back(clean);
        const double a = acc(rng);
        rs.push_back(record(model, attack, 0.1, a, s));
        want[{model, attack, 0.1}].push_back(a);
      }
    }
  }
  std::reverse(rs.begin(), rs.end());
  const auto rows = aggregate(rs);
  ASSERT_EQ(rows.size(), want.size());
  for (const auto& row : rows) {
    const auto& v = want.at({row.model, row.attack, row.ptb_rate});
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(row.mean, mean, 1e-15);
    EXPECT_NEAR(row.stddev, std::sqrt(ss / static_cast<double>(v.size() - 1)), 1e-15);
    EXPECT_EQ(row.n_runs, 4u);
  }
  // gcn before igcn-a within each (attack, rate) group
  EXPECT_EQ(rows[0].attack, "meta-ll");
  EXPECT_EQ(rows[0].model, "gcn");
  EXPECT_EQ(rows[1].model, "igcn-a");
}

TEST(Matrix, CellsShareCleanRuns) {
  ExperimentPlan p;
  p.datasets = {"a"};
  p.attacks = {AttackVariant::MetaLL, AttackVariant::MetaF};
  p.ptb_rates = {0.0, 0.1};
  p.repeats = 2;
  const auto cells = matrix_cells(p);
  EXPECT_EQ(cells.size(), 3u * 2u * (1u + 2u));
  const auto clean = std::count_if(cells.begin(), cells.end(), [](const MatrixCell& c) { return !c.attack; });
  EXPECT_EQ(clean, 6);
}

TEST(Matrix, RunsResumesAndReportsDeterministically) {
  oracle::TempDir tmp("matrix");
  const auto plan = small_plan(tmp.path);
  auto s = run_matrix(plan);
  EXPECT_TRUE(s.failures.empty());
  EXPECT_EQ(s.cells, 12u);
  EXPECT_EQ(s.completed, 12u);
  auto files = records_under(plan.out);
  ASSERT_EQ(files.size(), 12u);
  EXPECT_TRUE(fs::exists(plan.out / "plan.json"));
  EXPECT_TRUE(fs::exists(plan.out / "prepared" / "clusters" / "ptb" / cache_file_name("random", 0.1, 0)));

  std::map<fs::path, std::string> first;
  for (const auto& f : files) first[f] = slurp(f);

  s = run_matrix(plan);
  EXPECT_EQ(s.completed, 0u);
  EXPECT_EQ(s.skipped, 12u);

  for (std::size_t k : {0u, 5u, 9u}) fs::remove(files[k]);
  s = run_matrix(plan);
  EXPECT_EQ(s.completed, 3u);
  EXPECT_EQ(s.skipped, 9u);
  for (std::size_t k : {0u, 5u, 9u}) {
    auto a = read_record(files[k]), b = record_from_json(json::parse(first[files[k]]));
    a.wall_seconds = b.wall_seconds = 0.0;
    EXPECT_EQ(record_to_json(a), record_to_json(b)) << files[k];
  }

  const auto written = report_run_dir(plan.out, tmp.path / "report1");
  report_run_dir(plan.out, tmp.path / "report2");
  ASSERT_FALSE(written.empty());
  for (const auto& f : written) EXPECT_EQ(slurp(f), slurp(tmp.path / "report2" / f.filename())) << f;
  const auto table = slurp(tmp.path / "report1" / "table_clusters_random.txt");
  EXPECT_NE(table.find("gcn"), std::string::npos);
  EXPECT_NE(table.find("igcn-n"), std::string::npos);
  EXPECT_TRUE(fs::exists(tmp.path / "report1" / "series_clusters_random_gcn.tsv"));
}

TEST(Matrix, WorkerCountDoesNotChangeResults) {
  oracle::TempDir tmp("workers");
  auto plan = small_plan(tmp.path);
  plan.repeats = 2;
  plan.out = tmp.path / "one";
  run_matrix(plan);
  plan.out = tmp.path / "three";
  plan.workers = 3;
  run_matrix(plan);
  const auto a = records_under(tmp.path / "one");
  const auto b = records_under(tmp.path / "three");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    auto ra = read_record(a[k]), rb = read_record(b[k]);
    ra.wall_seconds = rb.wall_seconds = 0.0;
    EXPECT_EQ(record_to_json(ra), record_to_json(rb));
  }
}

TEST(ParallelFor, CollectsFailuresInIndexOrder) {
  std::atomic<int> ran = 0;
  const auto failures = parallel_for(10, 4, [&](std::size_t i) {
    ++ran;
    if (i % 4 == 1) throw std::runtime_error("boom " + std::to_string(i));
  });
  EXPECT_EQ(ran.load(), 10);
  ASSERT_EQ(failures.size(), 3u);
  EXPECT_EQ(failures[0].first, 1u);
  EXPECT_EQ(failures[2].first, 9u);
  EXPECT_EQ(failures[1].second, "boom 5");
}
