#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "igcn/graph.hpp"
#include "support.hpp"

using namespace igcn;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

void write_bundle(const fs::path& dir, std::size_t n, std::size_t c, const std::string& edges, const std::string& labels,
                  std::size_t f = 0, const std::string& features = "") {
  fs::create_directories(dir);
  write_file(dir / "meta.json", "{\"name\": \"toy\", \"num_nodes\": " + std::to_string(n) + ", \"num_classes\": " +
                                    std::to_string(c) + ", \"feature_dim\": " + std::to_string(f) + "}\n");
  write_file(dir / "edges.tsv", edges);
  write_file(dir / "labels.tsv", labels);
  if (f > 0) write_file(dir / "features.tsv", features);
}

std::size_t error_line(const fs::path& dir) {
  try {
    load_bundle(dir);
  } catch (const ParseError& e) {
    return e.line_number;
  }
  return 0;
}

GraphBundle path_graph(std::size_t n) {
  GraphBundle g;
  g.name = "path";
  g.num_nodes = n;
  g.num_classes = 2;
  for (std::size_t i = 0; i + 1 < n; ++i) g.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1)});
  for (std::size_t i = 0; i < n; ++i) g.labels.push_back(static_cast<int>(i % 2));
  return g;
}

}  // namespace

TEST(Bundle, LoadsMinimalBundle) {
  oracle::TempDir tmp("bundle");
  write_bundle(tmp.path, 3, 2, "0\t1\n1\t2\n", "0\t0\n1\t1\n2\t0\n");
  const auto g = load_bundle(tmp.path);
  EXPECT_EQ(g.num_nodes, 3u);
  EXPECT_EQ(g.num_edges(), 2u);
  EXPECT_FALSE(g.features.has_value());
  EXPECT_EQ(g.feature_dim(), 0u);
  EXPECT_TRUE(g.has_edge(2, 1));
  EXPECT_FALSE(g.has_edge(0, 2));
}

TEST(Bundle, RejectsMalformedInputWithLineNumbers) {
  oracle::TempDir tmp("bad");
  const std::string labels = "0\t0\n1\t1\n2\t0\n";
  write_bundle(tmp.path / "range", 3, 2, "0\t1\n1\t3\n", labels);
  EXPECT_EQ(error_line(tmp.path / "range"), 2u);
  write_bundle(tmp.path / "dup", 3, 2, "0\t1\n\n1\t2\n0\t1\n", labels);
  EXPECT_EQ(error_line(tmp.path / "dup"), 4u);
  write_bundle(tmp.path / "loop", 3, 2, "1\t1\n", labels);
  EXPECT_EQ(error_line(tmp.path / "loop"), 1u);
  write_bundle(tmp.path / "order", 3, 2, "0\t1\n2\t1\n", labels);
  EXPECT_EQ(error_line(tmp.path / "order"), 2u);
  write_bundle(tmp.path / "junk", 3, 2, "0\t1\n1\tx\n", labels);
  EXPECT_EQ(error_line(tmp.path / "junk"), 2u);
  write_bundle(tmp.path / "fields", 3, 2, "0\t1\t5\n", labels);
  EXPECT_EQ(error_line(tmp.path / "fields"), 1u);
  write_bundle(tmp.path / "label", 3, 2, "0\t1\n", "0\t0\n1\t2\n2\t0\n");
  EXPECT_EQ(error_line(tmp.path / "label"), 2u);
  write_bundle(tmp.path / "missing", 3, 2, "0\t1\n", "0\t0\n1\t1\n");
  EXPECT_THROW(load_bundle(tmp.path / "missing"), DataError);
  write_bundle(tmp.path / "empty_class", 3, 3, "0\t1\n", labels);
  EXPECT_THROW(load_bundle(tmp.path / "empty_class"), DataError);
  write_bundle(tmp.path / "feat", 3, 2, "0\t1\n", labels, 2, "0\t0\t1\n1\t2\t1\n");
  EXPECT_EQ(error_line(tmp.path / "feat"), 2u);
  EXPECT_THROW(load_bundle(tmp.path / "nowhere"), DataError);
}

TEST(Bundle, SaveLoadRoundTrip) {
  std::mt19937_64 rng(5);
  auto g = oracle::random_graph(12, 4, 3, 0.3, rng);
  oracle::TempDir tmp("rt");
  save_bundle(g, tmp.path / "b");
  const auto back = load_bundle(tmp.path / "b");
  EXPECT_EQ(back.edges, g.edges);
  EXPECT_EQ(back.labels, g.labels);
  ASSERT_TRUE(back.features.has_value());
  EXPECT_EQ(back.features->values(), g.features->values());
  EXPECT_EQ(back.features->indices(), g.features->indices());
  EXPECT_THROW(save_bundle(g, tmp.path / "b"), DataError);
  save_bundle(g, tmp.path / "b", true);
}

TEST(Bundle, ShippedDatasets) {
  const fs::path data = IGCN_DATA_DIR;
  const auto cora = load_bundle(data / "cora");
  EXPECT_EQ(cora.num_classes, 7u);
  EXPECT_EQ(cora.feature_dim(), 1433u);
  const auto lcc = largest_connected_component(cora);
  EXPECT_EQ(lcc.num_nodes, 2485u);
  EXPECT_EQ(lcc.num_edges(), 5069u);
  const auto blogs = load_bundle(data / "polblogs");
  EXPECT_FALSE(blogs.features.has_value());
  EXPECT_EQ(blogs.num_classes, 2u);
  EXPECT_EQ(largest_connected_component(blogs).num_nodes, 1222u);
}

TEST(Components, KeepsLargestComponent) {
  GraphBundle g;
  g.name = "two";
  g.num_nodes = 8;
  g.num_classes = 2;
  g.edges = {{0, 5}, {1, 2}, {2, 3}, {3, 4}, {4, 6}, {5, 7}};  // {1,2,3,4,6} and {0,5,7}
  g.labels = {0, 1, 0, 1, 0, 1, 0, 1};
  const auto lcc = largest_connected_component(g);
  EXPECT_EQ(lcc.num_nodes, 5u);
  EXPECT_EQ(lcc.labels, (std::vector<int>{1, 0, 1, 0, 0}));  // original nodes 1,2,3,4,6 in order
  EXPECT_EQ(lcc.edges, (std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {3, 4}}));
}

TEST(Components, ConnectedGraphIsUnchanged) {
  const auto g = path_graph(6);
  const auto lcc = largest_connected_component(g);
  EXPECT_EQ(lcc.edges, g.edges);
  EXPECT_EQ(lcc.labels, g.labels);
}

TEST(Components, TieGoesToSmallestNodeIdExhaustively) {
  // Two 4-node paths; every assignment of the 8 ids to the two components.
  for (unsigned mask = 0; mask < 256; ++mask) {
    if (__builtin_popcount(mask) != 4) continue;
    std::vector<std::uint32_t> a, b;
    for (std::uint32_t i = 0; i < 8; ++i) ((mask >> i) & 1u ? a : b).push_back(i);
    GraphBundle g;
    g.name = "tie";
    g.num_nodes = 8;
    g.num_classes = 2;
    for (const auto* side : {&a, &b})
      for (std::size_t k = 0; k + 1 < side->size(); ++k) g.edges.push_back(make_edge((*side)[k], (*side)[k + 1]));
    std::sort(g.edges.begin(), g.edges.end());
    for (std::uint32_t i = 0; i < 8; ++i) g.labels.push_back(static_cast<int>(i));
    const auto lcc = largest_connected_component(g);
    const auto& winner = a.front() == 0 ? a : b;
    ASSERT_EQ(lcc.num_nodes, 4u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(lcc.labels[k], static_cast<int>(winner[k]));
  }
}

TEST(Features, IdentityFeatures) {
  const auto x = identity_features(3);
  EXPECT_EQ(max_abs_diff(x, DenseMatrix::identity(3)), 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x(i, 0) + x(i, 1) + x(i, 2), 1.0);
  const auto g = path_graph(5);
  const auto sparse = model_features(g);
  EXPECT_EQ(max_abs_diff(sparse.to_dense(), DenseMatrix::identity(5)), 0.0);
}

TEST(Splits, SizesDisjointAndCovering) {
  const auto s = random_split(100, 3);
  EXPECT_EQ(s.train.size(), 10u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 80u);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(random_split(2485, 1).train.size(), 249u);  // round(248.5) away from zero
  EXPECT_THROW(random_split(9, 0), std::invalid_argument);
}

TEST(Splits, SeedsControlThePermutation) {
  EXPECT_EQ(random_split(2485, 7), random_split(2485, 7));
  std::set<std::vector<std::size_t>> trains;
  for (std::uint64_t seed = 0; seed < 10; ++seed) trains.insert(random_split(2485, seed).train);
  EXPECT_EQ(trains.size(), 10u);
}

TEST(Splits, FileRoundTrip) {
  oracle::TempDir tmp("split");
  const auto s = random_split(50, 4);
  save_splits(s, 50, tmp.path / "s.tsv");
  EXPECT_EQ(load_splits(tmp.path / "s.tsv"), s);
}

TEST(Normalize, HandExamples) {
  {
    const auto a = normalize(2, {{0, 1}}).ahat;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(a.at(i, j), 0.5);
  }
  {
    const auto a = normalize(3, {{0, 1}, {0, 2}, {1, 2}}).ahat;
    EXPECT_EQ(a.nnz(), 9u);
    for (double v : a.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  }
  {
    const auto adj = normalize(4, {{0, 1}, {0, 2}, {0, 3}});
    EXPECT_DOUBLE_EQ(adj.ahat.at(0, 0), 0.25);
    for (std::size_t leaf = 1; leaf < 4; ++leaf) {
      EXPECT_NEAR(adj.ahat.at(0, leaf), 0.353553, 1e-6);
      EXPECT_DOUBLE_EQ(adj.ahat.at(0, leaf), 1.0 / (2.0 * std::sqrt(2.0)));
      EXPECT_DOUBLE_EQ(adj.ahat.at(leaf, leaf), 0.5);
    }
    EXPECT_EQ(adj.degree_tilde, (std::vector<double>{4, 2, 2, 2}));
  }
}

TEST(Normalize, RegularGraphHasUniformEntries) {
  std::vector<Edge> cycle;
  for (std::uint32_t i = 0; i < 7; ++i) cycle.push_back(make_edge(i, (i + 1) % 7));
  std::sort(cycle.begin(), cycle.end());
  for (double v : normalize(7, cycle).ahat.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Normalize, SymmetricPositiveAndMatchesDenseOracle) {
  std::mt19937_64 rng(17);
  const auto g = oracle::random_graph(15, 0, 2, 0.25, rng);
  const auto a = normalize(g).ahat;
  a.validate();
  const auto want = oracle::normalize_dense(oracle::adjacency(15, g.edges));
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_GT(a.at(i, i), 0.0);
    for (std::size_t j = 0; j < 15; ++j) {
      EXPECT_EQ(a.at(i, j), a.at(j, i));
      EXPECT_NEAR(a.at(i, j), want[i][j], 1e-15);
      if (a.find(i, j) != a.nnz()) {
        EXPECT_GT(a.at(i, j), 0.0);
        EXPECT_LE(a.at(i, j), 1.0);
      }
    }
  }
}

TEST(Perturbation, ApplyAndInvert) {
  const auto g = path_graph(5);  // 0-1-2-3-4
  Perturbation p;
  p.flips = {{0, 4, FlipAction::Add}, {1, 2, FlipAction::Remove}};
  const auto h = apply_perturbation(g, p);
  EXPECT_TRUE(h.has_edge(0, 4));
  EXPECT_FALSE(h.has_edge(1, 2));
  EXPECT_EQ(h.labels, g.labels);
  EXPECT_EQ(apply_perturbation(h, inverse(p)).edges, g.edges);
}

TEST(Perturbation, RejectsInvalidFlipsByName) {
  const auto g = path_graph(5);
  auto expect_reject = [&](std::vector<Flip> flips, const std::string& pair) {
    Perturbation p;
    p.flips = std::move(flips);
    try {
      apply_perturbation(g, p);
      ADD_FAILURE() << "accepted " << pair;
    } catch (const PerturbationError& e) {
      EXPECT_NE(std::string(e.what()).find(pair), std::string::npos) << e.what();
    }
  };
  expect_reject({{0, 1, FlipAction::Add}}, "(0, 1)");
  expect_reject({{0, 3, FlipAction::Remove}}, "(0, 3)");
  expect_reject({{0, 3, FlipAction::Add}, {3, 0, FlipAction::Add}}, "(3, 0)");
  expect_reject({{2, 2, FlipAction::Add}}, "(2, 2)");
  expect_reject({{2, 9, FlipAction::Add}}, "(2, 9)");
}

TEST(Perturbation, Budget) {
  EXPECT_EQ(perturbation_budget(0.05, 5069), 253u);
  EXPECT_EQ(perturbation_budget(0.20, 5069), 1013u);
  EXPECT_EQ(perturbation_budget(0.25, 5069), 1267u);
  EXPECT_EQ(perturbation_budget(0.10, 100), 10u);
  EXPECT_EQ(perturbation_budget(0.0, 5069), 0u);
  EXPECT_THROW(perturbation_budget(-0.1, 10), std::invalid_argument);
}
