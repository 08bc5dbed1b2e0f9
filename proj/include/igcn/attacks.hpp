#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "igcn/degree_test.hpp"
#include "igcn/graph.hpp"
#include "igcn/models.hpp"
#include "igcn/tape.hpp"
#include "igcn/training.hpp"

namespace igcn {

enum class AttackVariant { Random, MetaLL, MetaF };

inline std::string_view to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::Random: return "random";
    case AttackVariant::MetaLL: return "meta-ll";
    case AttackVariant::MetaF: return "meta-f";
  }
  return "?";
}

inline AttackVariant parse_attack_variant(std::string_view s) {
  if (s == "random") return AttackVariant::Random;
  if (s == "meta-ll") return AttackVariant::MetaLL;
  if (s == "meta-f") return AttackVariant::MetaF;
  throw std::invalid_argument("unknown attack '" + std::string(s) + "' (expected random, meta-ll or meta-f)");
}

struct AttackError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AttackConfig {
  double ptb_rate = 0.05;
  AttackVariant variant = AttackVariant::MetaF;
  std::size_t retrain_interval = 0;  // flips per surrogate refresh; 0 = max(1, budget / 20)
  std::size_t surrogate_epochs = 100;
  std::size_t surrogate_hidden = 16;
  double surrogate_lr = 0.01;
  double surrogate_weight_decay = 5e-4;
  std::uint64_t seed = 0;
  double ll_threshold = kLikelihoodThreshold;
};

// Diagnostics of one meta-attack run, in flip order.
struct AttackTrace {
  std::vector<double> scores;
  std::vector<std::size_t> window;  // surrogate refresh index per flip
  std::size_t ll_rejections = 0;
  std::size_t isolation_rejections = 0;
  std::size_t windows = 0;
};

namespace detail {

inline Perturbation empty_perturbation(const GraphBundle& g, const AttackConfig& cfg, std::size_t budget) {
  Perturbation p;
  p.attack = std::string(to_string(cfg.variant));
  p.dataset = g.name;
  p.rate = cfg.ptb_rate;
  p.seed = cfg.seed;
  p.budget = budget;
  return p;
}

}  // namespace detail

// Uniformly random pair flips; removals that would leave a node without edges are skipped.
inline Perturbation random_attack(const GraphBundle& g, const AttackConfig& cfg) {
  const std::size_t budget = perturbation_budget(cfg.ptb_rate, g.num_edges());
  const std::size_t n = g.num_nodes;
  const std::size_t pairs = n < 2 ? 0 : n * (n - 1) / 2;
  if (budget > pairs) {
    throw AttackError("random_attack: budget " + std::to_string(budget) + " exceeds " + std::to_string(pairs) +
                      " flippable pairs");
  }
  Perturbation p = detail::empty_perturbation(g, cfg, budget);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> node(0, n == 0 ? 0 : n - 1);
  auto degree = g.degrees();
  std::set<Edge> touched;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * (budget + 1) + pairs;
  while (p.flips.size() < budget) {
    if (++attempts > max_attempts) {
      p.shortfall = budget - p.flips.size();
      break;
    }
    const auto a = node(rng), b = node(rng);
    if (a == b) continue;
    const Edge e = make_edge(a, b);
    if (touched.contains(e)) continue;
    const bool present = g.has_edge(e.u, e.v);
    if (present && (degree[e.u] <= 1 || degree[e.v] <= 1)) continue;
    touched.insert(e);
    const int delta = present ? -1 : 1;
    degree[e.u] = static_cast<std::size_t>(static_cast<long long>(degree[e.u]) + delta);
    degree[e.v] = static_cast<std::size_t>(static_cast<long long>(degree[e.v]) + delta);
    p.flips.push_back({e.u, e.v, present ? FlipAction::Remove : FlipAction::Add});
  }
  return p;
}

// ---------------------------------------------------------------------------
// Linearized surrogate Z = A A X W1 W2, its self-training labels, and the
// gradient of its loss with respect to the symmetric adjacency entries.

struct Surrogate {
  Parameter w1;
  Parameter w2;

  // X W1 W2, the propagation-free part of the logits.
  DenseMatrix project(const SparseMatrix& x) const { return matmul(spmm(x, w1.value), w2.value); }

  DenseMatrix logits(const SparseMatrix& ahat, const SparseMatrix& x) const {
    return spmm(ahat, spmm(ahat, project(x)));
  }
};

template <class Rng>
Surrogate train_surrogate(const NormalizedAdjacency& adj, const SparseMatrix& x, std::span<const int> labels,
                          std::size_t num_classes, std::span<const std::size_t> train, const AttackConfig& cfg,
                          Rng& rng) {
  Surrogate s{Parameter(glorot_uniform(x.cols(), cfg.surrogate_hidden, rng)),
              Parameter(glorot_uniform(cfg.surrogate_hidden, num_classes, rng))};
  std::vector<AdamSlot> slots{{&s.w1, true}, {&s.w2, true}};
  AdamState adam;
  for (std::size_t epoch = 0; epoch < cfg.surrogate_epochs; ++epoch) {
    s.w1.zero_grad();
    s.w2.zero_grad();
    Tape tape;
    const Var h = tape.spmm(adj.ahat, tape.spmm(adj.ahat, tape.spmm(x, tape.parameter(s.w1))));
    const Var z = tape.matmul(h, tape.parameter(s.w2));
    const Var loss = tape.softmax_cross_entropy(z, labels, train);
    if (!std::isfinite(tape.scalar(loss))) throw AttackError("surrogate training diverged");
    tape.backward(loss);
    adam_step(slots, adam, cfg.surrogate_lr, cfg.surrogate_weight_decay);
  }
  return s;
}

// Mean cross-entropy of the surrogate over all nodes against `targets`.
inline double surrogate_attack_loss(const Surrogate& s, const NormalizedAdjacency& adj, const SparseMatrix& x,
                                    std::span<const int> targets) {
  const DenseMatrix z = s.logits(adj.ahat, x);
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double denom = 0.0;
    for (double v : r) denom += std::exp(v - mx);
    total += std::log(denom) - (r[static_cast<std::size_t>(targets[i])] - mx);
  }
  return total / static_cast<double>(z.rows());
}

// d loss / d a_uv for every unordered pair u < v, where a_uv = a_vu is one
// symmetric adjacency entry and the loss is surrogate_attack_loss. Calls
// visit(u, v, grad) in row-major pair order.
template <class Visit>
void for_each_pair_gradient(const Surrogate& s, const NormalizedAdjacency& adj, const SparseMatrix& x,
                            std::span<const int> targets, Visit&& visit) {
  const std::size_t n = adj.ahat.rows();
  const DenseMatrix p = s.project(x);
  const DenseMatrix q = spmm(adj.ahat, p);
  const DenseMatrix z = spmm(adj.ahat, q);
  const std::size_t c = z.cols();
  DenseMatrix g(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double denom = 0.0;
    for (double v : r) denom += std::exp(v - mx);
    for (std::size_t k = 0; k < c; ++k) g(i, k) = std::exp(r[k] - mx) / denom / static_cast<double>(n);
    g(i, static_cast<std::size_t>(targets[i])) -= 1.0 / static_cast<double>(n);
  }
  const DenseMatrix r = spmm(adj.ahat, g);

  // d loss / d ahat_ij = m_i . k_j with m = [G | R], k = [Q | P].
  DenseMatrix m(n, 2 * c), k(n, 2 * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < c; ++t) {
      m(i, t) = g(i, t);
      m(i, c + t) = r(i, t);
      k(i, t) = q(i, t);
      k(i, c + t) = p(i, t);
    }
  }
  auto dot = [&](std::size_t i, std::size_t j) {
    const auto a = m.row(i);
    const auto b = k.row(j);
    double acc = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) acc += a[t] * b[t];
    return acc;
  };

  // Degree path: d loss / d dtilde_k = -1/(2 d_k) sum_j (dA_kj + dA_jk) ahat_kj over stored entries.
  std::vector<double> inv_sqrt(n), degree_grad(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(adj.degree_tilde[i]);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t e = adj.ahat.offsets()[i]; e < adj.ahat.offsets()[i + 1]; ++e) {
      const std::size_t j = adj.ahat.indices()[e];
      acc += (dot(i, j) + dot(j, i)) * adj.ahat.values()[e];
    }
    degree_grad[i] = -acc / (2.0 * adj.degree_tilde[i]);
  }

  for (std::size_t u = 0; u < n; ++u) {
    const auto mu = m.row(u);
    const auto ku = k.row(u);
    for (std::size_t v = u + 1; v < n; ++v) {
      const auto mv = m.row(v);
      const auto kv = k.row(v);
      double sym = 0.0;
      for (std::size_t t = 0; t < mu.size(); ++t) sym += mu[t] * kv[t] + mv[t] * ku[t];
      visit(u, v, sym * inv_sqrt[u] * inv_sqrt[v] + degree_grad[u] + degree_grad[v]);
    }
  }
}

namespace detail {

struct Candidate {
  double score;
  std::uint32_t u;
  std::uint32_t v;
};

inline bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.u != b.u) return a.u < b.u;
  return a.v < b.v;
}

// Sorted prefix of the `count` best candidates.
inline void select_top(std::vector<Candidate>& all, std::size_t count) {
  count = std::min(count, all.size());
  const auto mid = all.begin() + static_cast<std::ptrdiff_t>(count);
  std::nth_element(all.begin(), mid, all.end(), candidate_before);
  std::sort(all.begin(), mid, candidate_before);
}

}  // namespace detail

// Greedy first-order meta-gradient poisoning. Each window retrains the linear
// surrogate on the current poisoned graph, scores every pair once from the
// adjacency gradient of the self-training loss, and applies the best
// admissible flips from that fixed score field.
inline Perturbation meta_attack(const GraphBundle& g, const SplitSets& splits, const AttackConfig& cfg,
                                AttackTrace* trace = nullptr) {
  if (cfg.variant == AttackVariant::Random) throw std::invalid_argument("meta_attack: variant must be meta-ll or meta-f");
  const std::size_t budget = perturbation_budget(cfg.ptb_rate, g.num_edges());
  Perturbation p = detail::empty_perturbation(g, cfg, budget);
  if (budget == 0) return p;
  if (splits.train.empty()) throw AttackError("meta_attack: empty training split");

  const std::size_t n = g.num_nodes;
  const SparseMatrix x = model_features(g);
  const std::size_t window_size = cfg.retrain_interval > 0 ? cfg.retrain_interval : std::max<std::size_t>(1, budget / 20);
  const bool constrained = cfg.variant == AttackVariant::MetaLL;
  std::mt19937_64 rng(cfg.seed);

  // Self-training targets: true labels on the training split, clean-graph surrogate predictions elsewhere.
  std::vector<int> targets;
  {
    const auto clean = normalize(g);
    const auto s = train_surrogate(clean, x, g.labels, g.num_classes, splits.train, cfg, rng);
    targets = predict(s.logits(clean.ahat, x));
    for (auto i : splits.train) targets[i] = g.labels[i];
  }

  std::vector<std::vector<char>> adjacent(n, std::vector<char>(n, 0));
  for (const auto& e : g.edges) adjacent[e.u][e.v] = adjacent[e.v][e.u] = 1;
  std::vector<std::vector<char>> flipped(n, std::vector<char>(n, 0));
  DegreeConstraint ll(g.degrees(), cfg.ll_threshold);
  std::vector<std::size_t> degree = g.degrees();
  std::vector<Edge> edges = g.edges;
  std::vector<detail::Candidate> field;
  field.reserve(n * (n - 1) / 2);

  AttackTrace local;
  AttackTrace& tr = trace ? *trace : local;
  tr = AttackTrace{};

  while (p.flips.size() < budget) {
    std::sort(edges.begin(), edges.end());
    const auto adj = normalize(n, edges);
    const auto surrogate = train_surrogate(adj, x, g.labels, g.num_classes, splits.train, cfg, rng);
    field.clear();
    for_each_pair_gradient(surrogate, adj, x, targets, [&](std::size_t u, std::size_t v, double grad) {
      if (flipped[u][v]) return;
      field.push_back({adjacent[u][v] ? -grad : grad, static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v)});
    });

    const std::size_t quota = std::min(window_size, budget - p.flips.size());
    std::size_t placed = 0;
    std::size_t scanned = 0;
    std::size_t selected = 0;
    while (placed < quota && scanned < field.size()) {
      if (scanned == selected) {
        selected = std::min(field.size(), std::max<std::size_t>(selected * 2, 4 * quota + 64));
        detail::select_top(field, selected);
      }
      const auto c = field[scanned++];
      const bool present = adjacent[c.u][c.v] != 0;
      const int delta = present ? -1 : 1;
      if (present && (degree[c.u] <= 1 || degree[c.v] <= 1)) {
        ++tr.isolation_rejections;
        continue;
      }
      if (constrained) {
        if (!ll.admits(c.u, c.v, delta)) {
          ++tr.ll_rejections;
          continue;
        }
        ll.apply(c.u, c.v, delta);
        if (!(ll.statistic() < cfg.ll_threshold)) {
          ll.apply(c.u, c.v, -delta);
          ++tr.ll_rejections;
          continue;
        }
      } else {
        ll.apply(c.u, c.v, delta);
      }
      adjacent[c.u][c.v] = adjacent[c.v][c.u] = present ? 0 : 1;
      flipped[c.u][c.v] = 1;
      degree[c.u] = static_cast<std::size_t>(static_cast<long long>(degree[c.u]) + delta);
      degree[c.v] = static_cast<std::size_t>(static_cast<long long>(degree[c.v]) + delta);
      const Edge e{c.u, c.v};
      if (present) {
        edges.erase(std::find(edges.begin(), edges.end(), e));
      } else {
        edges.push_back(e);
      }
      p.flips.push_back({c.u, c.v, present ? FlipAction::Remove : FlipAction::Add});
      tr.scores.push_back(c.score);
      tr.window.push_back(tr.windows);
      ++placed;
    }
    ++tr.windows;
    if (placed == 0) break;  // nothing admissible anywhere in the field
  }
  p.shortfall = budget - p.flips.size();
  return p;
}

inline Perturbation run_attack(const GraphBundle& g, const SplitSets& splits, const AttackConfig& cfg,
                               AttackTrace* trace = nullptr) {
  return cfg.variant == AttackVariant::Random ? random_attack(g, cfg) : meta_attack(g, splits, cfg, trace);
}

// ---------------------------------------------------------------------------
// Perturbation cache files: `#` header lines with metadata, then one
// `u<TAB>v<TAB>add|remove` line per flip in application order.

inline std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", rate);
  return buf;
}

inline std::string cache_file_name(std::string_view attack, double rate, std::uint64_t seed) {
  return "ptb_" + std::string(attack) + "_" + format_rate(rate) + "_" + std::to_string(seed) + ".tsv";
}

inline void cache_perturbation(const Perturbation& p, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << "# igcn-perturbation 1\n"
        << "# dataset=" << p.dataset << '\n'
        << "# attack=" << p.attack << '\n'
        << "# rate=" << detail::format_double(p.rate) << '\n'
        << "# seed=" << p.seed << '\n'
        << "# budget=" << p.budget << '\n'
        << "# shortfall=" << p.shortfall << '\n';
    for (const auto& f : p.flips) out << f.u << '\t' << f.v << '\t' << (f.action == FlipAction::Add ? "add" : "remove") << '\n';
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Refuses a cache whose header names a different dataset than `expected_dataset` (when given).
inline Perturbation load_perturbation(const std::filesystem::path& path,
                                      std::optional<std::string_view> expected_dataset = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string file = path.filename().string();
  Perturbation p;
  std::set<std::string> keys;
  std::string line;
  std::size_t number = 0;
  bool magic = false;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line == "# igcn-perturbation 1") {
        magic = true;
        continue;
      }
      const auto eq = line.find('=');
      if (line.rfind("# ", 0) != 0 || eq == std::string::npos) throw ParseError(file, number, "malformed header line");
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      keys.insert(key);
      if (key == "dataset") p.dataset = value;
      else if (key == "attack") p.attack = value;
      else if (key == "rate") p.rate = detail::parse_double(value, file, number);
      else if (key == "seed") p.seed = detail::parse_number<std::uint64_t>(value, file, number);
      else if (key == "budget") p.budget = detail::parse_number<std::size_t>(value, file, number);
      else if (key == "shortfall") p.shortfall = detail::parse_number<std::size_t>(value, file, number);
      else throw ParseError(file, number, "unknown header key '" + key + "'");
      continue;
    }
    const auto f = detail::split_tabs(line);
    if (f.size() != 3) throw ParseError(file, number, "expected u<TAB>v<TAB>add|remove");
    Flip flip;
    flip.u = detail::parse_number<std::uint32_t>(f[0], file, number);
    flip.v = detail::parse_number<std::uint32_t>(f[1], file, number);
    if (f[2] == "add") flip.action = FlipAction::Add;
    else if (f[2] == "remove") flip.action = FlipAction::Remove;
    else throw ParseError(file, number, "unknown action '" + std::string(f[2]) + "'");
    p.flips.push_back(flip);
  }
  for (const char* k : {"dataset", "attack", "rate", "seed", "budget", "shortfall"}) {
    if (!magic || !keys.contains(k)) throw DataError(file + ": missing perturbation header field '" + k + "'");
  }
  if (p.flips.size() + p.shortfall != p.budget) {
    throw DataError(file + ": " + std::to_string(p.flips.size()) + " flips plus shortfall " +
                    std::to_string(p.shortfall) + " do not match budget " + std::to_string(p.budget));
  }
  if (expected_dataset && p.dataset != *expected_dataset) {
    throw DataError(file + ": perturbation was generated for dataset '" + p.dataset + "', not '" +
                    std::string(*expected_dataset) + "'");
  }
  return p;
}

}  // namespace igcn
