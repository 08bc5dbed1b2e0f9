#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "igcn/graph.hpp"
#include "igcn/tape.hpp"
#include "igcn/tensor.hpp"

namespace igcn {

enum class ModelKind { Gcn, IgcnL1, IgcnAuto };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Gcn: return "gcn";
    case ModelKind::IgcnL1: return "igcn-n";
    case ModelKind::IgcnAuto: return "igcn-a";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "gcn") return ModelKind::Gcn;
  if (s == "igcn-n") return ModelKind::IgcnL1;
  if (s == "igcn-a") return ModelKind::IgcnAuto;
  throw std::invalid_argument("unknown model '" + std::string(s) + "' (expected gcn, igcn-n or igcn-a)");
}

// Two-layer GCN: Z = A ReLU(A X W1) W2.
struct GcnModel {
  Parameter w1;
  Parameter w2;
};

enum class DoiiVariant { L1Norm, Automatic };

// Two influence layers: Z = A_I2 ReLU(A_I1 X W1) W2.
// Automatic keeps one trainable DoII vector shared by both layers.
struct IgcnModel {
  DoiiVariant variant = DoiiVariant::L1Norm;
  Parameter w1;
  Parameter w2;
  Parameter alpha;
};

using Model = std::variant<GcnModel, IgcnModel>;

inline ModelKind kind_of(const Model& m) {
  if (std::holds_alternative<GcnModel>(m)) return ModelKind::Gcn;
  return std::get<IgcnModel>(m).variant == DoiiVariant::L1Norm ? ModelKind::IgcnL1 : ModelKind::IgcnAuto;
}

template <class Rng>
DenseMatrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  DenseMatrix w(fan_in, fan_out);
  for (auto& v : w.values()) v = u(rng);
  return w;
}

struct ModelDims {
  std::size_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::size_t hidden = 40;
  std::size_t num_classes = 0;
};

template <class Rng>
Model make_model(ModelKind kind, const ModelDims& dims, Rng& rng) {
  Parameter w1(glorot_uniform(dims.feature_dim, dims.hidden, rng));
  Parameter w2(glorot_uniform(dims.hidden, dims.num_classes, rng));
  if (kind == ModelKind::Gcn) return GcnModel{std::move(w1), std::move(w2)};
  IgcnModel m;
  m.w1 = std::move(w1);
  m.w2 = std::move(w2);
  if (kind == ModelKind::IgcnAuto) {
    m.variant = DoiiVariant::Automatic;
    m.alpha = Parameter(DenseMatrix(dims.num_nodes, 1, 0.0));
  }
  return m;
}

struct ForwardOptions {
  bool training = false;
  double dropout = 0.5;
};

// Tape handles for one forward pass. DoII vectors are empty for the GCN.
struct ForwardTrace {
  Var hidden{};
  Var logits{};
  std::vector<double> alpha1;
  std::vector<double> alpha2;
};

// alpha_i = exp(-|| (A H)_i - H_i ||_1), treated as a constant by the caller.
inline std::vector<double> doii_l1(const DenseMatrix& h, const SparseMatrix& ahat) {
  if (ahat.rows() != h.rows() || ahat.cols() != h.rows()) {
    throw ShapeError("doii_l1: adjacency " + ahat.shape() + " does not match representations " + h.shape());
  }
  const DenseMatrix agg = spmm(ahat, h);
  std::vector<double> alpha(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double dist = 0.0;
    const auto a = agg.row(i);
    const auto x = h.row(i);
    for (std::size_t c = 0; c < x.size(); ++c) dist += std::abs(a[c] - x[c]);
    alpha[i] = std::exp(-dist);
  }
  return alpha;
}

// Sparse-feature overload; each aggregated row is built in a scratch buffer.
inline std::vector<double> doii_l1(const SparseMatrix& h, const SparseMatrix& ahat) {
  if (ahat.rows() != h.rows() || ahat.cols() != h.rows()) {
    throw ShapeError("doii_l1: adjacency " + ahat.shape() + " does not match representations " + h.shape());
  }
  std::vector<double> scratch(h.cols(), 0.0);
  std::vector<char> used(h.cols(), 0);
  std::vector<std::uint32_t> touched;
  std::vector<double> alpha(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    touched.clear();
    auto bump = [&](std::uint32_t c, double v) {
      if (!used[c]) {
        used[c] = 1;
        touched.push_back(c);
      }
      scratch[c] += v;
    };
    const auto nbr = ahat.row_indices(i);
    const auto w = ahat.row_values(i);
    for (std::size_t k = 0; k < nbr.size(); ++k) {
      const auto idx = h.row_indices(nbr[k]);
      const auto val = h.row_values(nbr[k]);
      for (std::size_t t = 0; t < idx.size(); ++t) bump(idx[t], w[k] * val[t]);
    }
    const auto own_idx = h.row_indices(i);
    const auto own_val = h.row_values(i);
    for (std::size_t t = 0; t < own_idx.size(); ++t) bump(own_idx[t], -own_val[t]);
    std::sort(touched.begin(), touched.end());
    double dist = 0.0;
    for (auto c : touched) {
      dist += std::abs(scratch[c]);
      scratch[c] = 0.0;
      used[c] = 0;
    }
    alpha[i] = std::exp(-dist);
  }
  return alpha;
}

namespace detail {

inline void check_forward_shapes(const Parameter& w1, const Parameter& w2, const NormalizedAdjacency& adj,
                                 const SparseMatrix& x) {
  if (x.rows() != adj.ahat.rows()) {
    throw ShapeError("forward: features " + x.shape() + " do not match adjacency " + adj.ahat.shape());
  }
  if (x.cols() != w1.value.rows()) {
    throw ShapeError("forward: features " + x.shape() + " do not match W1 " + w1.value.shape());
  }
  if (w1.value.cols() != w2.value.rows()) {
    throw ShapeError("forward: W1 " + w1.value.shape() + " does not match W2 " + w2.value.shape());
  }
}

}  // namespace detail

template <class Rng>
ForwardTrace gcn_forward(Tape& tape, GcnModel& m, const NormalizedAdjacency& adj, const SparseMatrix& x,
                         const ForwardOptions& opt, Rng& rng) {
  detail::check_forward_shapes(m.w1, m.w2, adj, x);
  const SparseMatrix& xd = opt.training && opt.dropout > 0.0 ? tape.hold(dropout(x, opt.dropout, true, rng)) : x;
  ForwardTrace t;
  const Var xw = tape.spmm(xd, tape.parameter(m.w1));
  t.hidden = tape.relu(tape.spmm(adj.ahat, xw));
  const Var hd = tape.dropout(t.hidden, opt.dropout, opt.training, rng);
  t.logits = tape.spmm(adj.ahat, tape.matmul(hd, tape.parameter(m.w2)));
  return t;
}

template <class Rng>
ForwardTrace igcn_forward(Tape& tape, IgcnModel& m, const NormalizedAdjacency& adj, const SparseMatrix& x,
                          const ForwardOptions& opt, Rng& rng) {
  detail::check_forward_shapes(m.w1, m.w2, adj, x);
  const bool automatic = m.variant == DoiiVariant::Automatic;
  if (automatic && (m.alpha.value.rows() != adj.ahat.rows() || m.alpha.value.cols() != 1)) {
    throw ShapeError("igcn_forward: alpha " + m.alpha.value.shape() + " does not match adjacency " + adj.ahat.shape());
  }
  ForwardTrace t;
  const Var shared_alpha = automatic ? tape.parameter(m.alpha) : Var{};

  const SparseMatrix& xd = opt.training && opt.dropout > 0.0 ? tape.hold(dropout(x, opt.dropout, true, rng)) : x;
  t.alpha1 = automatic ? m.alpha.value.values() : doii_l1(xd, adj.ahat);
  const Var alpha1 = automatic ? shared_alpha : tape.constant(DenseMatrix::column(t.alpha1));
  const SparseVar a1 = tape.influence_scale(alpha1, adj.ahat);
  t.hidden = tape.relu(tape.spmm(a1, tape.spmm(xd, tape.parameter(m.w1))));

  const Var hd = tape.dropout(t.hidden, opt.dropout, opt.training, rng);
  t.alpha2 = automatic ? m.alpha.value.values() : doii_l1(tape.value(hd), adj.ahat);
  const Var alpha2 = automatic ? shared_alpha : tape.constant(DenseMatrix::column(t.alpha2));
  const SparseVar a2 = tape.influence_scale(alpha2, adj.ahat);
  t.logits = tape.spmm(a2, tape.matmul(hd, tape.parameter(m.w2)));
  return t;
}

template <class Rng>
ForwardTrace forward(Tape& tape, Model& m, const NormalizedAdjacency& adj, const SparseMatrix& x,
                     const ForwardOptions& opt, Rng& rng) {
  return std::visit(
      [&](auto& model) {
        if constexpr (std::is_same_v<std::decay_t<decltype(model)>, GcnModel>) {
          return gcn_forward(tape, model, adj, x, opt, rng);
        } else {
          return igcn_forward(tape, model, adj, x, opt, rng);
        }
      },
      m);
}

inline Var classification_loss(Tape& tape, const ForwardTrace& trace, std::span<const int> labels,
                               std::span<const std::size_t> mask) {
  return tape.softmax_cross_entropy(trace.logits, labels, mask);
}

// Ties in the argmax go to the smallest class index.
inline std::vector<int> predict(const DenseMatrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.size(); ++c)
      if (r[c] > r[best]) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline double predict_accuracy(const DenseMatrix& logits, std::span<const int> labels,
                               std::span<const std::size_t> mask) {
  if (mask.empty()) throw std::invalid_argument("predict_accuracy: empty mask");
  const auto pred = predict(logits);
  std::size_t correct = 0;
  for (auto i : mask) correct += pred.at(i) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

// ---------------------------------------------------------------------------
// Checkpoints: a small text container with hexadecimal float values, so a
// save/load cycle reproduces every weight bit for bit.

namespace detail {

inline void write_matrix(std::ostream& out, std::string_view tag, const DenseMatrix& m) {
  out << tag << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[64];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), m(r, c), std::chars_format::hex);
      out << (c ? " " : "") << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

inline DenseMatrix read_matrix(std::istream& in, std::string_view tag) {
  std::string got;
  std::size_t rows = 0, cols = 0;
  if (!(in >> got >> rows >> cols) || got != tag) throw DataError("checkpoint: expected block '" + std::string(tag) + "'");
  DenseMatrix m(rows, cols);
  std::string tok;
  for (auto& v : m.values()) {
    if (!(in >> tok)) throw DataError("checkpoint: truncated block '" + std::string(tag) + "'");
    std::string_view s = tok;
    const bool neg = !s.empty() && s.front() == '-';
    if (neg) s.remove_prefix(1);
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x, std::chars_format::hex);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("checkpoint: bad value '" + tok + "'");
    v = neg ? -x : x;
  }
  return m;
}

}  // namespace detail

inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    out << "igcn-checkpoint 1\nkind " << to_string(kind_of(m)) << '\n';
    std::visit(
        [&](const auto& model) {
          detail::write_matrix(out, "w1", model.w1.value);
          detail::write_matrix(out, "w2", model.w2.value);
          if constexpr (std::is_same_v<std::decay_t<decltype(model)>, IgcnModel>) {
            if (model.variant == DoiiVariant::Automatic) detail::write_matrix(out, "alpha", model.alpha.value);
          }
        },
        m);
    if (!out) throw DataError("checkpoint: write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic, version, key, kind_name;
  if (!(in >> magic >> version >> key >> kind_name) || magic != "igcn-checkpoint" || version != "1" || key != "kind") {
    throw DataError("checkpoint: bad header in " + path.string());
  }
  const ModelKind kind = parse_model_kind(kind_name);
  Parameter w1(detail::read_matrix(in, "w1"));
  Parameter w2(detail::read_matrix(in, "w2"));
  if (kind == ModelKind::Gcn) return GcnModel{std::move(w1), std::move(w2)};
  IgcnModel m;
  m.w1 = std::move(w1);
  m.w2 = std::move(w2);
  if (kind == ModelKind::IgcnAuto) {
    m.variant = DoiiVariant::Automatic;
    m.alpha = Parameter(detail::read_matrix(in, "alpha"));
  }
  return m;
}

}  // namespace igcn
