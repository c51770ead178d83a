// Layer parameters, the shared-MLP building block, parameter binding between
// host storage and a tape, Adam, and the step-decay learning-rate schedule.
#pragma once

#include "localnet/tape.hpp"

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace localnet {

// One affine layer with optional batch normalization and ReLU. Weights are
// d_out x d_in; the vector-shaped pieces are stored as 1 x d_out rows.
template <typename S>
struct LayerParams {
  MatX<S> weight;
  MatX<S> bias;
  bool has_bn = true;
  bool relu_after = true;
  MatX<S> bn_gamma, bn_beta;
  RowX<S> bn_running_mean, bn_running_var;
  S bn_momentum = S(0.1);

  Eigen::Index fan_in() const { return weight.cols(); }
  Eigen::Index fan_out() const { return weight.rows(); }
};

template <typename S>
LayerParams<S> make_layer(int d_in, int d_out, bool has_bn, bool relu_after, Rng& rng) {
  LayerParams<S> p;
  const double limit = std::sqrt(6.0 / (d_in + d_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  p.weight.resize(d_out, d_in);
  for (Eigen::Index i = 0; i < p.weight.rows(); ++i)
    for (Eigen::Index j = 0; j < p.weight.cols(); ++j) p.weight(i, j) = static_cast<S>(u(rng));
  p.bias = MatX<S>::Zero(1, d_out);
  p.has_bn = has_bn;
  p.relu_after = relu_after;
  if (has_bn) {
    p.bn_gamma = MatX<S>::Ones(1, d_out);
    p.bn_beta = MatX<S>::Zero(1, d_out);
    p.bn_running_mean = RowX<S>::Zero(d_out);
    p.bn_running_var = RowX<S>::Ones(d_out);
  }
  return p;
}

// Connects named host parameter matrices with tape leaves for one forward
// pass. Binding the same host twice returns the existing leaf so shared
// weights accumulate a single gradient.
template <typename S>
class Binder {
 public:
  using Var = typename Tape<S>::Var;

  explicit Binder(Tape<S>& tape) : tape_(&tape) {}

  Var bind(const std::string& name, MatX<S>& host) {
    auto it = by_host_.find(&host);
    if (it != by_host_.end()) return entries_[it->second].var;
    Var v = tape_->leaf(host);
    by_host_.emplace(&host, entries_.size());
    entries_.push_back({name, &host, v});
    return v;
  }

  struct Entry {
    std::string name;
    MatX<S>* host;
    Var var;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  Tape<S>& tape() { return *tape_; }

 private:
  Tape<S>* tape_;
  std::vector<Entry> entries_;
  std::unordered_map<const MatX<S>*, size_t> by_host_;
};

// Affine map, then batch normalization over the rows, then ReLU, as the
// layer's flags dictate. Train mode normalizes with batch statistics and
// folds them into the running estimates with the configured momentum; eval
// mode uses the running estimates.
template <typename S>
typename Tape<S>::Var shared_mlp_layer(Binder<S>& binder, typename Tape<S>::Var x,
                                       LayerParams<S>& p, const std::string& name, Mode mode) {
  Tape<S>& t = binder.tape();
  auto w = binder.bind(name + ".weight", p.weight);
  auto b = binder.bind(name + ".bias", p.bias);
  auto y = t.linear(x, w, b);
  if (p.has_bn) {
    auto gamma = binder.bind(name + ".bn_gamma", p.bn_gamma);
    auto beta = binder.bind(name + ".bn_beta", p.bn_beta);
    if (mode == Mode::train) {
      auto r = t.batchnorm_train(y, gamma, beta);
      p.bn_running_mean = (S(1) - p.bn_momentum) * p.bn_running_mean + p.bn_momentum * r.batch_mean;
      p.bn_running_var = (S(1) - p.bn_momentum) * p.bn_running_var + p.bn_momentum * r.batch_var;
      y = r.y;
    } else {
      y = t.batchnorm_eval(y, gamma, beta, p.bn_running_mean, p.bn_running_var);
    }
  }
  if (p.relu_after) y = t.relu(y);
  return y;
}

// A stack of shared layers applied in sequence to every row.
template <typename S>
struct MlpStack {
  std::vector<LayerParams<S>> layers;

  typename Tape<S>::Var forward(Binder<S>& binder, typename Tape<S>::Var x,
                                const std::string& name, Mode mode) {
    auto y = x;
    for (size_t i = 0; i < layers.size(); ++i)
      y = shared_mlp_layer(binder, y, layers[i], name + ".l" + std::to_string(i), mode);
    return y;
  }
};

// Builds a stack d_in -> widths[0] -> ... -> widths.back(). All layers get
// batch norm; ReLU everywhere except optionally the final layer.
template <typename S>
MlpStack<S> make_stack(int d_in, const std::vector<int>& widths, bool final_relu, Rng& rng) {
  MlpStack<S> s;
  int d = d_in;
  for (size_t i = 0; i < widths.size(); ++i) {
    const bool last = (i + 1 == widths.size());
    s.layers.push_back(make_layer<S>(d, widths[i], true, last ? final_relu : true, rng));
    d = widths[i];
  }
  return s;
}

// base_lr decayed by `rate` every `interval` epochs.
inline double lr_schedule(long epoch, double base_lr, double rate = 0.7, long interval = 23) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch < 0");
  return base_lr * std::pow(rate, static_cast<double>(epoch / interval));
}

// Adam with the cited defaults and bias correction. Slots are addressed by
// parameter name and sized lazily on first use.
template <typename S>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;

  struct Slot {
    MatX<S> m, v;
  };
  std::unordered_map<std::string, Slot> slots;

  Slot& slot(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto it = slots.find(name);
    if (it == slots.end()) {
      Slot s;
      s.m = MatX<S>::Zero(rows, cols);
      s.v = MatX<S>::Zero(rows, cols);
      it = slots.emplace(name, std::move(s)).first;
    }
    return it->second;
  }
};

template <typename S>
void adam_update_one(MatX<S>& param, const MatX<S>& grad, typename AdamState<S>::Slot& slot,
                     const AdamState<S>& st) {
  const S b1 = S(st.beta1), b2 = S(st.beta2);
  slot.m = b1 * slot.m + (S(1) - b1) * grad;
  slot.v = b2 * slot.v + (S(1) - b2) * grad.cwiseProduct(grad);
  const S c1 = S(1.0 - std::pow(st.beta1, static_cast<double>(st.step_count)));
  const S c2 = S(1.0 - std::pow(st.beta2, static_cast<double>(st.step_count)));
  MatX<S> mhat = slot.m / c1;
  MatX<S> vhat = slot.v / c2;
  param.array() -= S(st.lr) * mhat.array() / (vhat.array().sqrt() + S(st.eps));
}

// Applies one Adam step to every bound parameter using the gradients
// accumulated on the tape. Call after backward().
template <typename S>
void adam_step(Binder<S>& binder, AdamState<S>& st) {
  st.step_count += 1;
  for (const auto& e : binder.entries()) {
    adam_update_one(*e.host, binder.tape().grad(e.var), st.slot(e.name, e.host->rows(), e.host->cols()),
                    st);
  }
}

// Direct form used by tests: parallel lists of parameters and gradients.
template <typename S>
void adam_step(const std::vector<std::pair<std::string, MatX<S>*>>& params,
               const std::vector<const MatX<S>*>& grads, AdamState<S>& st) {
  st.step_count += 1;
  for (size_t i = 0; i < params.size(); ++i) {
    adam_update_one(*params[i].second, *grads[i],
                    st.slot(params[i].first, params[i].second->rows(), params[i].second->cols()), st);
  }
}

}  // namespace localnet
