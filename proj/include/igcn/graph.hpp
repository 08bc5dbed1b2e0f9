#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "igcn/tensor.hpp"

namespace igcn {

// Malformed or inconsistent input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : DataError {
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

struct Edge {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  auto operator<=>(const Edge&) const = default;
};

inline Edge make_edge(std::size_t a, std::size_t b) {
  return a < b ? Edge{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)}
               : Edge{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(a)};
}

// Undirected graph with labels and optional sparse node features.
// Edges are stored once with u < v, sorted and unique.
struct GraphBundle {
  std::string name;
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  std::optional<SparseMatrix> features;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t feature_dim() const { return features ? features->cols() : 0; }
  std::size_t num_edges() const { return edges.size(); }

  bool has_edge(std::size_t a, std::size_t b) const {
    return std::binary_search(edges.begin(), edges.end(), make_edge(a, b));
  }

  std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> d(num_nodes, 0);
    for (const auto& e : edges) {
      ++d[e.u];
      ++d[e.v];
    }
    return d;
  }

  std::vector<std::vector<std::uint32_t>> adjacency_lists() const {
    std::vector<std::vector<std::uint32_t>> adj(num_nodes);
    for (const auto& e : edges) {
      adj[e.u].push_back(e.v);
      adj[e.v].push_back(e.u);
    }
    for (auto& a : adj) std::sort(a.begin(), a.end());
    return adj;
  }

  void validate() const {
    if (labels.size() != num_nodes) throw DataError(name + ": label count does not match node count");
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto& e = edges[k];
      if (e.u >= e.v || e.v >= num_nodes) {
        throw DataError(name + ": invalid edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) + ")");
      }
      if (k > 0 && !(edges[k - 1] < e)) throw DataError(name + ": edges not sorted and unique");
    }
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw DataError(name + ": label out of range");
    if (features && features->rows() != num_nodes) throw DataError(name + ": feature rows do not match node count");
  }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, const std::string& file, std::size_t line) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(file, line, "cannot parse '" + std::string(s) + "' as a number");
  }
  return value;
}

inline double parse_double(std::string_view s, const std::string& file, std::size_t line) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
    throw ParseError(file, line, "cannot parse '" + tmp + "' as a finite value");
  }
  return v;
}

// Calls fn(fields, line_number) for each non-empty line.
template <class Fn>
void for_each_tsv_line(const std::filesystem::path& path, std::size_t expected_fields, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string file = path.filename().string();
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') throw ParseError(file, number, "CRLF line ending");
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != expected_fields) {
      throw ParseError(file, number, "expected " + std::to_string(expected_fields) + " tab-separated fields, got " +
                                         std::to_string(fields.size()));
    }
    fn(fields, number);
  }
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline GraphBundle load_bundle(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  GraphBundle g;
  std::size_t feature_dim = 0;
  {
    std::ifstream in(dir / "meta.json");
    if (!in) throw DataError("cannot open " + (dir / "meta.json").string());
    try {
      const auto meta = nlohmann::json::parse(in);
      g.name = meta.at("name").get<std::string>();
      g.num_nodes = meta.at("num_nodes").get<std::size_t>();
      g.num_classes = meta.at("num_classes").get<std::size_t>();
      feature_dim = meta.value("feature_dim", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("meta.json: " + std::string(e.what()));
    }
  }
  const std::size_t n = g.num_nodes;

  std::vector<std::size_t> edge_lines;
  detail::for_each_tsv_line(dir / "edges.tsv", 2, [&](const auto& f, std::size_t line) {
    const auto u = detail::parse_number<std::uint64_t>(f[0], "edges.tsv", line);
    const auto v = detail::parse_number<std::uint64_t>(f[1], "edges.tsv", line);
    if (u >= n || v >= n) throw ParseError("edges.tsv", line, "endpoint outside [0," + std::to_string(n) + ")");
    if (u == v) throw ParseError("edges.tsv", line, "self-loop on node " + std::to_string(u));
    if (u > v) throw ParseError("edges.tsv", line, "edge must be written with u < v");
    g.edges.push_back(make_edge(u, v));
    edge_lines.push_back(line);
  });
  std::vector<Edge> sorted = g.edges;
  std::sort(sorted.begin(), sorted.end());
  if (const auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end()) {
    const auto where = std::find(g.edges.begin(), g.edges.end(), *dup);
    const auto again = std::find(where + 1, g.edges.end(), *dup);
    throw ParseError("edges.tsv", edge_lines[static_cast<std::size_t>(again - g.edges.begin())],
                     "duplicate edge (" + std::to_string(dup->u) + ", " + std::to_string(dup->v) + ")");
  }
  g.edges = std::move(sorted);

  g.labels.assign(n, -1);
  detail::for_each_tsv_line(dir / "labels.tsv", 2, [&](const auto& f, std::size_t line) {
    const auto node = detail::parse_number<std::uint64_t>(f[0], "labels.tsv", line);
    const auto cls = detail::parse_number<std::int64_t>(f[1], "labels.tsv", line);
    if (node >= n) throw ParseError("labels.tsv", line, "node outside [0," + std::to_string(n) + ")");
    if (cls < 0 || static_cast<std::size_t>(cls) >= g.num_classes) {
      throw ParseError("labels.tsv", line, "class outside [0," + std::to_string(g.num_classes) + ")");
    }
    if (g.labels[node] != -1) throw ParseError("labels.tsv", line, "duplicate label for node " + std::to_string(node));
    g.labels[node] = static_cast<int>(cls);
  });
  for (std::size_t i = 0; i < n; ++i)
    if (g.labels[i] < 0) throw DataError("labels.tsv: node " + std::to_string(i) + " has no label");
  std::vector<std::size_t> class_count(g.num_classes, 0);
  for (int y : g.labels) ++class_count[static_cast<std::size_t>(y)];
  for (std::size_t c = 0; c < g.num_classes; ++c)
    if (class_count[c] == 0) throw DataError("labels.tsv: class " + std::to_string(c) + " has no nodes");

  if (fs::exists(dir / "features.tsv")) {
    if (feature_dim == 0) throw DataError("features.tsv present but meta.json declares feature_dim 0");
    std::vector<Triplet> triplets;
    std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
    detail::for_each_tsv_line(dir / "features.tsv", 3, [&](const auto& f, std::size_t line) {
      const auto node = detail::parse_number<std::uint64_t>(f[0], "features.tsv", line);
      const auto dim = detail::parse_number<std::uint64_t>(f[1], "features.tsv", line);
      const double value = detail::parse_double(f[2], "features.tsv", line);
      if (node >= n) throw ParseError("features.tsv", line, "node outside [0," + std::to_string(n) + ")");
      if (dim >= feature_dim) throw ParseError("features.tsv", line, "dimension outside [0," + std::to_string(feature_dim) + ")");
      if (!seen.emplace(node, dim).second) throw ParseError("features.tsv", line, "duplicate feature entry");
      if (value != 0.0) triplets.push_back({node, dim, value});
    });
    g.features = SparseMatrix::from_triplets(n, feature_dim, std::move(triplets));
  }
  return g;
}

// Writes into a sibling temporary directory, then renames it into place.
// An existing bundle at `dir` is replaced only when `overwrite` is set.
inline void save_bundle(const GraphBundle& g, const std::filesystem::path& dir, bool overwrite = false) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !overwrite) throw DataError(dir.string() + " already exists");
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    nlohmann::ordered_json meta;
    meta["name"] = g.name;
    meta["num_nodes"] = g.num_nodes;
    meta["num_classes"] = g.num_classes;
    meta["feature_dim"] = g.feature_dim();
    std::ofstream(tmp / "meta.json") << meta.dump(2) << "\n";
  }
  {
    std::ofstream out(tmp / "edges.tsv");
    for (const auto& e : g.edges) out << e.u << '\t' << e.v << '\n';
  }
  {
    std::ofstream out(tmp / "labels.tsv");
    for (std::size_t i = 0; i < g.num_nodes; ++i) out << i << '\t' << g.labels[i] << '\n';
  }
  if (g.features) {
    std::ofstream out(tmp / "features.tsv");
    const auto& x = *g.features;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto idx = x.row_indices(i);
      const auto val = x.row_values(i);
      for (std::size_t k = 0; k < idx.size(); ++k) out << i << '\t' << idx[k] << '\t' << detail::format_double(val[k]) << '\n';
    }
  }
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::rename(tmp, dir);
}

// Induced subgraph on the largest connected component. Ties go to the component
// holding the smallest node id; surviving nodes keep their relative order.
inline GraphBundle largest_connected_component(const GraphBundle& g) {
  const std::size_t n = g.num_nodes;
  const auto adj = g.adjacency_lists();
  std::vector<std::int64_t> component(n, -1);
  std::size_t best = 0, best_size = 0, count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (component[s] >= 0) continue;
    std::size_t size = 0;
    component[s] = static_cast<std::int64_t>(count);
    stack.push_back(s);
    while (!stack.empty()) {
      const auto x = stack.back();
      stack.pop_back();
      ++size;
      for (auto y : adj[x]) {
        if (component[y] < 0) {
          component[y] = static_cast<std::int64_t>(count);
          stack.push_back(y);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = count;
    }
    ++count;
  }
  if (count <= 1) return g;

  std::vector<std::int64_t> relabel(n, -1);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (component[i] == static_cast<std::int64_t>(best)) {
      relabel[i] = static_cast<std::int64_t>(kept.size());
      kept.push_back(i);
    }
  }
  GraphBundle out;
  out.name = g.name;
  out.num_nodes = kept.size();
  out.num_classes = g.num_classes;
  for (const auto& e : g.edges)
    if (relabel[e.u] >= 0) out.edges.push_back(make_edge(relabel[e.u], relabel[e.v]));
  std::sort(out.edges.begin(), out.edges.end());
  out.labels.reserve(kept.size());
  for (auto i : kept) out.labels.push_back(g.labels[i]);
  if (g.features) {
    std::vector<Triplet> t;
    for (std::size_t r = 0; r < kept.size(); ++r) {
      const auto idx = g.features->row_indices(kept[r]);
      const auto val = g.features->row_values(kept[r]);
      for (std::size_t k = 0; k < idx.size(); ++k) t.push_back({r, idx[k], val[k]});
    }
    out.features = SparseMatrix::from_triplets(kept.size(), g.features->cols(), std::move(t));
  }
  return out;
}

// One-hot node ids, used as X for featureless graphs.
inline DenseMatrix identity_features(std::size_t n) { return DenseMatrix::identity(n); }

// Features as consumed by the models: the stored matrix, or sparse identity when absent.
inline SparseMatrix model_features(const GraphBundle& g) {
  return g.features ? *g.features : SparseMatrix::identity(g.num_nodes);
}

struct SplitSets {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  friend bool operator==(const SplitSets&, const SplitSets&) = default;
};

// Seeded 10/10/80 split; each list is sorted ascending.
inline SplitSets random_split(std::size_t num_nodes, std::uint64_t seed) {
  if (num_nodes < 10) throw std::invalid_argument("random_split: need at least 10 nodes");
  std::vector<std::size_t> perm(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = num_nodes - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(num_nodes)));
  const auto n_val = n_train;
  SplitSets s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
               perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline SplitSets random_split(const GraphBundle& g, std::uint64_t seed) { return random_split(g.num_nodes, seed); }

inline void save_splits(const SplitSets& s, std::size_t num_nodes, const std::filesystem::path& path) {
  std::vector<const char*> tag(num_nodes, nullptr);
  for (auto i : s.train) tag[i] = "train";
  for (auto i : s.val) tag[i] = "val";
  for (auto i : s.test) tag[i] = "test";
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    for (std::size_t i = 0; i < num_nodes; ++i) out << i << '\t' << (tag[i] ? tag[i] : "none") << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline SplitSets load_splits(const std::filesystem::path& path) {
  SplitSets s;
  detail::for_each_tsv_line(path, 2, [&](const auto& f, std::size_t line) {
    const auto node = detail::parse_number<std::size_t>(f[0], path.filename().string(), line);
    if (f[1] == "train") s.train.push_back(node);
    else if (f[1] == "val") s.val.push_back(node);
    else if (f[1] == "test") s.test.push_back(node);
    else throw ParseError(path.filename().string(), line, "unknown split '" + std::string(f[1]) + "'");
  });
  return s;
}

// Renormalized adjacency D^-1/2 (A + I) D^-1/2 and the self-loop degrees.
struct NormalizedAdjacency {
  SparseMatrix ahat;
  std::vector<double> degree_tilde;
};

inline NormalizedAdjacency normalize(std::size_t num_nodes, const std::vector<Edge>& edges) {
  NormalizedAdjacency out;
  out.degree_tilde.assign(num_nodes, 1.0);
  for (const auto& e : edges) {
    out.degree_tilde[e.u] += 1.0;
    out.degree_tilde[e.v] += 1.0;
  }
  std::vector<Triplet> t;
  t.reserve(num_nodes + 2 * edges.size());
  for (std::size_t i = 0; i < num_nodes; ++i) t.push_back({i, i, 1.0 / out.degree_tilde[i]});
  for (const auto& e : edges) {
    const double w = 1.0 / std::sqrt(out.degree_tilde[e.u] * out.degree_tilde[e.v]);
    t.push_back({e.u, e.v, w});
    t.push_back({e.v, e.u, w});
  }
  out.ahat = SparseMatrix::from_triplets(num_nodes, num_nodes, std::move(t));
  return out;
}

inline NormalizedAdjacency normalize(const GraphBundle& g) { return normalize(g.num_nodes, g.edges); }

enum class FlipAction { Add, Remove };

struct Flip {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  FlipAction action = FlipAction::Add;
  friend bool operator==(const Flip&, const Flip&) = default;
};

// Ordered edge flips produced by an attack. `shortfall` counts budgeted flips
// the attack could not place.
struct Perturbation {
  std::vector<Flip> flips;
  std::string attack;
  std::string dataset;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::size_t budget = 0;
  std::size_t shortfall = 0;
  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

struct PerturbationError : DataError {
  using DataError::DataError;
};

inline std::size_t perturbation_budget(double rate, std::size_t num_edges) {
  if (rate < 0.0) throw std::invalid_argument("perturbation rate must be non-negative");
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(num_edges) + 1e-9));
}

inline GraphBundle apply_perturbation(const GraphBundle& g, const Perturbation& p) {
  std::set<Edge> edges(g.edges.begin(), g.edges.end());
  std::set<Edge> touched;
  for (const auto& f : p.flips) {
    const std::string pair = "(" + std::to_string(f.u) + ", " + std::to_string(f.v) + ")";
    if (f.u == f.v || f.u >= g.num_nodes || f.v >= g.num_nodes) throw PerturbationError("invalid flip " + pair);
    const Edge e = make_edge(f.u, f.v);
    if (!touched.insert(e).second) throw PerturbationError("pair " + pair + " flipped more than once");
    const bool present = g.has_edge(e.u, e.v);
    if (f.action == FlipAction::Add) {
      if (present) throw PerturbationError("cannot add existing edge " + pair);
      edges.insert(e);
    } else {
      if (!present) throw PerturbationError("cannot remove absent edge " + pair);
      edges.erase(e);
    }
  }
  GraphBundle out = g;
  out.edges.assign(edges.begin(), edges.end());
  return out;
}

// Undoes `p` when applied to apply_perturbation(g, p).
inline Perturbation inverse(const Perturbation& p) {
  Perturbation inv = p;
  inv.flips.assign(p.flips.rbegin(), p.flips.rend());
  for (auto& f : inv.flips) f.action = f.action == FlipAction::Add ? FlipAction::Remove : FlipAction::Add;
  return inv;
}

}  // namespace igcn
