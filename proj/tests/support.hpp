#pragma once

// Independent reference implementations for the tests. Everything here uses
// plain nested vectors and loops, never the library's matrix kernels.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "igcn/igcn.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat from(const igcn::DenseMatrix& m) {
  Mat out = zeros(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline Mat from(const igcn::SparseMatrix& s) {
  Mat out = zeros(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t k = s.offsets()[i]; k < s.offsets()[i + 1]; ++k) out[i][s.indices()[k]] += s.values()[k];
  return out;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat out = zeros(a.size(), b.empty() ? 0 : b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < out[i].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

inline Mat relu(Mat a) {
  for (auto& r : a)
    for (auto& v : r) v = std::max(v, 0.0);
  return a;
}

// D^-1/2 (A + I) D^-1/2 from a dense symmetric (possibly real-valued) adjacency.
inline Mat normalize_dense(const Mat& a) {
  const std::size_t n = a.size();
  std::vector<double> d(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += a[i][j];
  Mat out = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i][j] = ((i == j ? 1.0 : 0.0) + a[i][j]) / std::sqrt(d[i] * d[j]);
  return out;
}

inline Mat adjacency(std::size_t n, const std::vector<igcn::Edge>& edges) {
  Mat a = zeros(n, n);
  for (const auto& e : edges) a[e.u][e.v] = a[e.v][e.u] = 1.0;
  return a;
}

inline std::vector<double> doii_l1(const Mat& ahat, const Mat& h) {
  const Mat agg = mul(ahat, h);
  std::vector<double> alpha(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    double dist = 0.0;
    for (std::size_t c = 0; c < h[i].size(); ++c) dist += std::abs(agg[i][c] - h[i][c]);
    alpha[i] = std::exp(-dist);
  }
  return alpha;
}

// Influenced adjacency built entry by entry from its definition.
inline Mat influenced(const Mat& ahat, const std::vector<double>& alpha) {
  const std::size_t n = ahat.size();
  Mat out = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i][j] = (i == j ? alpha[j] : 1.0 - alpha[j]) * ahat[i][j];
  return out;
}

inline Mat gcn_logits(const Mat& ahat, const Mat& x, const Mat& w1, const Mat& w2) {
  return mul(ahat, mul(relu(mul(ahat, mul(x, w1))), w2));
}

// alpha1 / alpha2 empty: computed with the L1 rule; otherwise used as given.
inline Mat igcn_logits(const Mat& ahat, const Mat& x, const Mat& w1, const Mat& w2, std::vector<double> alpha1 = {},
                       std::vector<double> alpha2 = {}) {
  if (alpha1.empty()) alpha1 = doii_l1(ahat, x);
  const Mat h = relu(mul(influenced(ahat, alpha1), mul(x, w1)));
  if (alpha2.empty()) alpha2 = doii_l1(ahat, h);
  return mul(influenced(ahat, alpha2), mul(h, w2));
}

inline double cross_entropy(const Mat& z, const std::vector<int>& labels, const std::vector<std::size_t>& mask) {
  double total = 0.0;
  for (auto i : mask) {
    double denom = 0.0;
    for (double v : z[i]) denom += std::exp(v);
    total += std::log(denom) - z[i][static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(mask.size());
}

// Central differences of f with respect to every entry of m (m is restored).
inline igcn::DenseMatrix finite_difference(igcn::DenseMatrix& m, const std::function<double()>& f, double h = 1e-6) {
  igcn::DenseMatrix g(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.values().size(); ++k) {
    const double keep = m.values()[k];
    m.values()[k] = keep + h;
    const double up = f();
    m.values()[k] = keep - h;
    const double down = f();
    m.values()[k] = keep;
    g.values()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), Frobenius norms.
inline double relative_error(const igcn::DenseMatrix& a, const igcn::DenseMatrix& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.values().size(); ++k) {
    diff += (a.values()[k] - b.values()[k]) * (a.values()[k] - b.values()[k]);
    na += a.values()[k] * a.values()[k];
    nb += b.values()[k] * b.values()[k];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

inline igcn::DenseMatrix random_dense(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  igcn::DenseMatrix m(r, c);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

// Erdos-Renyi graph with a spanning path so every node has an edge, random
// labels covering all classes, and dense random features.
inline igcn::GraphBundle random_graph(std::size_t n, std::size_t f, std::size_t c, double p, std::mt19937_64& rng) {
  igcn::GraphBundle g;
  g.name = "random";
  g.num_nodes = n;
  g.num_classes = c;
  std::bernoulli_distribution coin(p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (j == i + 1 || coin(rng)) g.edges.push_back(igcn::make_edge(i, j));
  std::sort(g.edges.begin(), g.edges.end());
  for (std::size_t i = 0; i < n; ++i) g.labels.push_back(static_cast<int>(i % c));
  if (f > 0) g.features = igcn::SparseMatrix::from_dense(random_dense(n, f, rng, 0.0, 1.0));
  return g;
}

// Two dense clusters joined by a couple of bridge edges; features are noisy class indicators.
inline igcn::GraphBundle two_clusters(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  igcn::GraphBundle g;
  g.name = "clusters";
  g.num_nodes = n;
  g.num_classes = 2;
  const std::size_t half = n / 2;
  std::bernoulli_distribution intra(0.5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool same = (i < half) == (j < half);
      if (same && (j == i + 1 || intra(rng))) g.edges.push_back(igcn::make_edge(i, j));
    }
  g.edges.push_back(igcn::make_edge(0, half));
  g.edges.push_back(igcn::make_edge(half - 1, n - 1));
  std::sort(g.edges.begin(), g.edges.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  igcn::DenseMatrix x(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    g.labels.push_back(i < half ? 0 : 1);
    for (std::size_t k = 0; k < 4; ++k) x(i, k) = (k % 2 == (i < half ? 0u : 1u) ? 0.6 : 0.0) + 0.8 * noise(rng);
  }
  g.features = igcn::SparseMatrix::from_dense(x);
  return g;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("igcn_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace oracle
