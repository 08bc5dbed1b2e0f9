#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "igcn/graph.hpp"
#include "igcn/models.hpp"
#include "igcn/tape.hpp"

namespace igcn {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t patience = 20;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  std::size_t hidden = 40;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (patience < 1 || patience > epochs) throw std::invalid_argument("patience must lie in [1, epochs]");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
    if (hidden < 1) throw std::invalid_argument("hidden units must be >= 1");
  }
};

struct AdamSlot {
  Parameter* param = nullptr;
  bool decay = true;  // L2 term g += wd * theta
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<DenseMatrix> m;
  std::vector<DenseMatrix> v;
};

// One bias-corrected Adam update over all slots.
inline void adam_step(std::span<const AdamSlot> slots, AdamState& st, double lr, double weight_decay) {
  if (st.m.empty()) {
    for (const auto& s : slots) {
      st.m.emplace_back(s.param->value.rows(), s.param->value.cols());
      st.v.emplace_back(s.param->value.rows(), s.param->value.cols());
    }
  }
  if (st.m.size() != slots.size()) throw ShapeError("adam_step: parameter count changed between steps");
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const Parameter& p = *slots[k].param;
    if (!p.grad.same_shape(p.value) || !st.m[k].same_shape(p.value)) {
      throw ShapeError("adam_step: parameter " + p.value.shape() + " vs gradient " + p.grad.shape() + " vs moments " +
                       st.m[k].shape());
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    Parameter& p = *slots[k].param;
    if (!p.trainable) continue;
    const double wd = slots[k].decay ? weight_decay : 0.0;
    auto& theta = p.value.values();
    const auto& grad = p.grad.values();
    auto& m = st.m[k].values();
    auto& v = st.v[k].values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + wd * theta[i];
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
    }
  }
}

// Weight matrices are decayed; the trainable DoII vector is not.
inline std::vector<AdamSlot> adam_slots(Model& m) {
  return std::visit(
      [](auto& model) {
        std::vector<AdamSlot> s{{&model.w1, true}, {&model.w2, true}};
        if constexpr (std::is_same_v<std::decay_t<decltype(model)>, IgcnModel>) {
          if (model.variant == DoiiVariant::Automatic) s.push_back({&model.alpha, false});
        }
        return s;
      },
      m);
}

// Dual-criterion patience rule: an epoch counts as progress when validation
// loss or validation accuracy strictly beats its best so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  struct Decision {
    bool new_best_loss = false;
    bool stop = false;
  };

  Decision update(double val_loss, double val_acc) {
    Decision d;
    const bool loss_better = val_loss < best_loss_;
    const bool acc_better = val_acc > best_acc_;
    if (loss_better) {
      best_loss_ = val_loss;
      d.new_best_loss = true;
    }
    if (acc_better) best_acc_ = val_acc;
    if (loss_better || acc_better) {
      waited_ = 0;
    } else if (++waited_ >= patience_) {
      d.stop = true;
    }
    return d;
  }

  double best_loss() const { return best_loss_; }
  double best_accuracy() const { return best_acc_; }

 private:
  std::size_t patience_;
  std::size_t waited_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  double best_acc_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Model model;  // parameters restored from best_epoch
  std::vector<EpochRecord> history;
  std::size_t stopped_epoch = 0;  // 1-based count of epochs run
  std::size_t best_epoch = 0;     // 1-based
  double best_val_loss = 0.0;
  double test_accuracy = 0.0;
};

// Read-only inputs shared by every run on one (possibly poisoned) graph.
struct TrainingData {
  const NormalizedAdjacency& adj;
  const SparseMatrix& features;
  std::span<const int> labels;
  std::size_t num_classes;
  const SplitSets& splits;
};

namespace detail {

inline std::vector<DenseMatrix> snapshot(Model& m) {
  std::vector<DenseMatrix> out;
  for (const auto& s : adam_slots(m)) out.push_back(s.param->value);
  return out;
}

inline void restore(Model& m, const std::vector<DenseMatrix>& values) {
  auto slots = adam_slots(m);
  for (std::size_t k = 0; k < slots.size(); ++k) slots[k].param->value = values[k];
}

}  // namespace detail

inline double evaluate(Model& m, const NormalizedAdjacency& adj, const SparseMatrix& x, std::span<const int> labels,
                       std::span<const std::size_t> mask) {
  std::mt19937_64 unused(0);
  Tape tape;
  const auto trace = forward(tape, m, adj, x, ForwardOptions{false, 0.0}, unused);
  return predict_accuracy(tape.value(trace.logits), labels, mask);
}

template <class Rng>
TrainResult train(Model model, const TrainingData& data, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (data.splits.train.empty() || data.splits.val.empty() || data.splits.test.empty()) {
    throw std::invalid_argument("train: every split must be nonempty");
  }
  TrainResult result;
  auto slots = adam_slots(model);
  AdamState adam;
  EarlyStopping stopper(cfg.patience);
  std::vector<DenseMatrix> best = detail::snapshot(model);
  const ForwardOptions train_mode{true, cfg.dropout};
  const ForwardOptions eval_mode{false, cfg.dropout};

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (auto& s : slots) s.param->zero_grad();
    EpochRecord rec;
    {
      Tape tape;
      const auto trace = forward(tape, model, data.adj, data.features, train_mode, rng);
      const Var loss = classification_loss(tape, trace, data.labels, data.splits.train);
      rec.train_loss = tape.scalar(loss);
      if (!std::isfinite(rec.train_loss)) {
        throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
    }
    adam_step(slots, adam, cfg.learning_rate, cfg.weight_decay);
    {
      Tape tape;
      const auto trace = forward(tape, model, data.adj, data.features, eval_mode, rng);
      rec.val_loss = tape.scalar(classification_loss(tape, trace, data.labels, data.splits.val));
      rec.val_accuracy = predict_accuracy(tape.value(trace.logits), data.labels, data.splits.val);
    }
    result.history.push_back(rec);
    result.stopped_epoch = epoch;
    const auto decision = stopper.update(rec.val_loss, rec.val_accuracy);
    if (decision.new_best_loss) {
      best = detail::snapshot(model);
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
    }
    if (decision.stop) break;
  }
  if (result.best_epoch == 0) throw TrainingError("training produced no finite validation loss");
  detail::restore(model, best);
  result.test_accuracy = evaluate(model, data.adj, data.features, data.labels, data.splits.test);
  result.model = std::move(model);
  return result;
}

// Seeds one generator from cfg.seed and uses it for initialization, then dropout.
inline TrainResult fit(ModelKind kind, const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const ModelDims dims{data.adj.ahat.rows(), data.features.cols(), cfg.hidden, data.num_classes};
  return train(make_model(kind, dims, rng), data, cfg, rng);
}

}  // namespace igcn
