// Reverse-mode differentiation on dense row-major matrices. A Tape owns the
// nodes of one forward pass; ops append nodes and return lightweight Var
// handles. backward() walks the nodes in reverse creation order (creation
// order is topological by construction) and accumulates gradients.
//
// Scope is deliberately small: exactly the operations the network needs.
// Values are 2-D throughout; vectors are 1xd rows and scalars are 1x1.
#pragma once

#include "localnet/types.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <utility>

namespace localnet {

enum class Mode { train, eval };

constexpr double kBnEps = 1e-5;

// Row range [begin, begin+count) of a stacked matrix; used for per-cloud and
// per-area reductions over batched inputs.
struct SegSpan {
  int begin = 0;
  int count = 0;
};

template <typename S>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(MatX<S> v) { return push(std::move(v), false, nullptr); }

  // A leaf that collects gradient (ignored when the tape has grads disabled).
  Var leaf(MatX<S> v) { return push(std::move(v), grad_enabled_, nullptr); }

  const MatX<S>& value(Var v) const { return nodes_[v.id].value; }
  const MatX<S>& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(out)/d(out) = 1 and runs all recorded backward steps. The output
  // must be scalar-shaped. Call at most once per tape.
  void backward(Var out) {
    Node& o = nodes_[out.id];
    if (o.value.size() != 1) throw std::invalid_argument("backward: output must be 1x1");
    if (!o.requires_grad) throw std::invalid_argument("backward: output has no gradient path");
    o.grad(0, 0) = S(1);
    for (int i = out.id; i >= 0; --i) {
      if (nodes_[i].backprop) nodes_[i].backprop(*this);
    }
  }

  // ---- operations ------------------------------------------------------

  // y = x * W^T + b with W (d_out x d_in) and b (1 x d_out).
  Var linear(Var x, Var w, Var b) {
    const MatX<S>& xv = value(x);
    const MatX<S>& wv = value(w);
    const MatX<S>& bv = value(b);
    if (xv.cols() != wv.cols())
      throw std::invalid_argument("linear: input width " + std::to_string(xv.cols()) +
                                  " != weight fan-in " + std::to_string(wv.cols()));
    if (bv.rows() != 1 || bv.cols() != wv.rows())
      throw std::invalid_argument("linear: bias shape mismatch");
    // Row-at-a-time through fixed-alignment temporaries instead of one GEMM:
    // packed GEMM kernels round differently depending on where a row sits in
    // the matrix (main block vs edge peeling), which would break bit-exact
    // permutation invariance of per-point features.
    MatX<S> y(xv.rows(), wv.rows());
    RowX<S> xr(xv.cols()), yr(wv.rows());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      xr = xv.row(i);
      yr.noalias() = xr * wv.transpose();
      y.row(i) = yr + bv.row(0);
    }
    Var out = push(std::move(y), any_grad({x, w, b}), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x, w, b](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        if (t.requires_grad(x)) t.nodes_[x.id].grad.noalias() += gy * t.value(w);
        if (t.requires_grad(w)) t.nodes_[w.id].grad.noalias() += gy.transpose() * t.value(x);
        if (t.requires_grad(b)) t.nodes_[b.id].grad.row(0) += gy.colwise().sum();
      });
    }
    return out;
  }

  Var relu(Var x) {
    MatX<S> y = value(x).cwiseMax(S(0));
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x](Tape& t) {
        // subgradient at 0 is 0
        const MatX<S>& xv = t.value(x);
        t.nodes_[x.id].grad.array() +=
            t.nodes_[out.id].grad.array() * (xv.array() > S(0)).template cast<S>();
      });
    }
    return out;
  }

  struct BatchNormResult {
    Var y;
    RowX<S> batch_mean;
    RowX<S> batch_var;  // biased (divides by N)
  };

  // Train-mode batch normalization over all rows of x. The caller owns the
  // running-stat update from the returned batch statistics.
  BatchNormResult batchnorm_train(Var x, Var gamma, Var beta) {
    const MatX<S>& xv = value(x);
    const Eigen::Index n = xv.rows();
    RowX<S> mean = xv.colwise().mean();
    RowX<S> var = (xv.rowwise() - mean).array().square().colwise().mean();
    RowX<S> inv = (var.array() + S(kBnEps)).rsqrt();
    MatX<S> xhat = (xv.rowwise() - mean).array().rowwise() * inv.array();
    MatX<S> y = (xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() +
                value(beta).row(0).array();
    Var out = push(std::move(y), any_grad({x, gamma, beta}), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x, gamma, beta, xhat, inv, n](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        if (t.requires_grad(gamma))
          t.nodes_[gamma.id].grad.row(0) += (gy.array() * xhat.array()).colwise().sum().matrix();
        if (t.requires_grad(beta)) t.nodes_[beta.id].grad.row(0) += gy.colwise().sum();
        if (t.requires_grad(x)) {
          MatX<S> dxhat = gy.array().rowwise() * t.value(gamma).row(0).array();
          RowX<S> sum_dxhat = dxhat.colwise().sum();
          RowX<S> sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum();
          MatX<S> gx = dxhat * S(n);
          gx.array() -= xhat.array().rowwise() * sum_dxhat_xhat.array();
          gx.array().rowwise() -= sum_dxhat.array();
          gx.array().rowwise() *= inv.array() / S(n);
          t.nodes_[x.id].grad += gx;
        }
      });
    }
    return {out, std::move(mean), std::move(var)};
  }

  // Eval-mode batch normalization with fixed running statistics (per-row map).
  Var batchnorm_eval(Var x, Var gamma, Var beta, const RowX<S>& running_mean,
                     const RowX<S>& running_var) {
    const MatX<S>& xv = value(x);
    RowX<S> inv = (running_var.array() + S(kBnEps)).rsqrt();
    MatX<S> xhat = (xv.rowwise() - running_mean).array().rowwise() * inv.array();
    MatX<S> y = (xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() +
                value(beta).row(0).array();
    Var out = push(std::move(y), any_grad({x, gamma, beta}), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x, gamma, beta, xhat, inv](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        if (t.requires_grad(gamma))
          t.nodes_[gamma.id].grad.row(0) += (gy.array() * xhat.array()).colwise().sum().matrix();
        if (t.requires_grad(beta)) t.nodes_[beta.id].grad.row(0) += gy.colwise().sum();
        if (t.requires_grad(x)) {
          RowX<S> scale = t.value(gamma).row(0).array() * inv.array();
          t.nodes_[x.id].grad.array() += gy.array().rowwise() * scale.array();
        }
      });
    }
    return out;
  }

  struct SegmentMaxResult {
    Var y;  // one row per segment
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;  // absolute rows
  };

  // Column-wise max within each row segment; ties resolved to the lowest row.
  // The gradient routes 1.0 to each column's argmax entry.
  SegmentMaxResult segment_col_max(Var x, const std::vector<SegSpan>& segments) {
    const MatX<S>& xv = value(x);
    const Eigen::Index d = xv.cols();
    const int s = static_cast<int>(segments.size());
    MatX<S> y(s, d);
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg(s, d);
    for (int si = 0; si < s; ++si) {
      const SegSpan seg = segments[si];
      if (seg.count < 1) throw std::invalid_argument("segment_col_max: empty segment");
      y.row(si) = xv.row(seg.begin);
      arg.row(si).setConstant(seg.begin);
      for (int r = seg.begin + 1; r < seg.begin + seg.count; ++r) {
        for (Eigen::Index j = 0; j < d; ++j) {
          if (xv(r, j) > y(si, j)) {
            y(si, j) = xv(r, j);
            arg(si, j) = r;
          }
        }
      }
    }
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x, arg](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        MatX<S>& gx = t.nodes_[x.id].grad;
        for (Eigen::Index si = 0; si < gy.rows(); ++si)
          for (Eigen::Index j = 0; j < gy.cols(); ++j) gx(arg(si, j), j) += gy(si, j);
      });
    }
    return {out, std::move(arg)};
  }

  // Train-mode inverted dropout; identity in eval mode or at ratio 0 (no
  // draws are consumed in either case).
  Var dropout(Var x, double ratio, Mode mode, Rng& rng) {
    if (ratio < 0.0 || ratio >= 1.0) throw std::invalid_argument("dropout: need 0 <= ratio < 1");
    if (mode == Mode::eval || ratio == 0.0) return x;
    const MatX<S>& xv = value(x);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const S keep_scale = S(1.0 / (1.0 - ratio));
    MatX<S> mask(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i)
      for (Eigen::Index j = 0; j < xv.cols(); ++j)
        mask(i, j) = (u(rng) < ratio) ? S(0) : keep_scale;
    MatX<S> y = xv.cwiseProduct(mask);
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x, mask](Tape& t) {
        t.nodes_[x.id].grad += t.nodes_[out.id].grad.cwiseProduct(mask);
      });
    }
    return out;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    if (parts.size() == 1) return parts[0];
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool grad = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
      cols += value(p).cols();
      grad = grad || requires_grad(p);
    }
    MatX<S> y(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      y.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    Var out = push(std::move(y), grad, nullptr);
    if (requires_grad(out)) {
      std::vector<Var> ps = parts;
      set_backprop(out, [out, ps](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        Eigen::Index at = 0;
        for (Var p : ps) {
          const Eigen::Index w = t.value(p).cols();
          if (t.requires_grad(p)) t.nodes_[p.id].grad += gy.middleCols(at, w);
          at += w;
        }
      });
    }
    return out;
  }

  // Row i of x repeated counts[i] times, in order. Gradient is the per-block
  // column sum.
  Var expand_rows(Var x, const std::vector<int>& counts) {
    const MatX<S>& xv = value(x);
    if (static_cast<Eigen::Index>(counts.size()) != xv.rows())
      throw std::invalid_argument("expand_rows: counts size mismatch");
    Eigen::Index total = 0;
    for (int c : counts) {
      if (c < 0) throw std::invalid_argument("expand_rows: negative count");
      total += c;
    }
    MatX<S> y(total, xv.cols());
    Eigen::Index at = 0;
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      for (int r = 0; r < counts[i]; ++r) y.row(at++) = xv.row(i);
    }
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      std::vector<int> cs = counts;
      set_backprop(out, [out, x, cs](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        MatX<S>& gx = t.nodes_[x.id].grad;
        Eigen::Index at = 0;
        for (Eigen::Index i = 0; i < gx.rows(); ++i) {
          if (cs[i] > 0) gx.row(i) += gy.middleRows(at, cs[i]).colwise().sum();
          at += cs[i];
        }
      });
    }
    return out;
  }

  // One constant mixing matrix applied per row block:
  // y_block_i = W_i * x.middleRows(x_begin_i, W_i.cols()). Output blocks are
  // stacked in order. Used for the inverse-distance feature propagation.
  struct MixBlock {
    MatX<S> weights;  // out_rows x in_rows, constant w.r.t. parameters
    int x_begin = 0;
  };

  Var row_mix(Var x, const std::vector<MixBlock>& blocks) {
    const MatX<S>& xv = value(x);
    Eigen::Index total = 0;
    for (const MixBlock& b : blocks) {
      if (b.x_begin < 0 || b.x_begin + b.weights.cols() > xv.rows())
        throw std::invalid_argument("row_mix: block out of range");
      total += b.weights.rows();
    }
    MatX<S> y(total, xv.cols());
    Eigen::Index at = 0;
    for (const MixBlock& b : blocks) {
      // Per output row, same reasoning as linear(): a row's value must not
      // depend on its position in the block.
      const MatX<S> xs = xv.middleRows(b.x_begin, b.weights.cols());
      RowX<S> wr(b.weights.cols()), yr(xv.cols());
      for (Eigen::Index r = 0; r < b.weights.rows(); ++r) {
        wr = b.weights.row(r);
        yr.noalias() = wr * xs;
        y.row(at + r) = yr;
      }
      at += b.weights.rows();
    }
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      std::vector<MixBlock> bs = blocks;
      set_backprop(out, [out, x, bs](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        MatX<S>& gx = t.nodes_[x.id].grad;
        Eigen::Index at = 0;
        for (const MixBlock& b : bs) {
          gx.middleRows(b.x_begin, b.weights.cols()).noalias() +=
              b.weights.transpose() * gy.middleRows(at, b.weights.rows());
          at += b.weights.rows();
        }
      });
    }
    return out;
  }

  Var gather_rows(Var x, const std::vector<int>& indices) {
    const MatX<S>& xv = value(x);
    MatX<S> y(static_cast<Eigen::Index>(indices.size()), xv.cols());
    for (size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] < 0 || indices[i] >= xv.rows())
        throw std::invalid_argument("gather_rows: index out of range");
      y.row(i) = xv.row(indices[i]);
    }
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      std::vector<int> idx = indices;
      set_backprop(out, [out, x, idx](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        for (size_t i = 0; i < idx.size(); ++i) t.nodes_[x.id].grad.row(idx[i]) += gy.row(i);
      });
    }
    return out;
  }

  // Mean over rows of -log softmax(logits)[label], stabilized with the
  // log-sum-exp trick so no intermediate probability is ever logged.
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
    const MatX<S>& lv = value(logits);
    const Eigen::Index b = lv.rows(), c = lv.cols();
    if (static_cast<Eigen::Index>(labels.size()) != b)
      throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    MatX<S> probs(b, c);
    S total = S(0);
    for (Eigen::Index i = 0; i < b; ++i) {
      if (labels[i] < 0 || labels[i] >= c)
        throw std::invalid_argument("softmax_cross_entropy: label out of range");
      const S mx = lv.row(i).maxCoeff();
      RowX<S> shifted = lv.row(i).array() - mx;
      RowX<S> ex = shifted.array().exp();
      const S denom = ex.sum();
      probs.row(i) = ex / denom;
      total += std::log(denom) - shifted(labels[i]);
    }
    MatX<S> y(1, 1);
    y(0, 0) = total / S(b);
    Var out = push(std::move(y), requires_grad(logits), nullptr);
    if (requires_grad(out)) {
      std::vector<int> ls = labels;
      set_backprop(out, [out, logits, probs, ls](Tape& t) {
        const S gy = t.nodes_[out.id].grad(0, 0);
        MatX<S>& gx = t.nodes_[logits.id].grad;
        const S inv_b = S(1) / S(probs.rows());
        MatX<S> g = probs;
        for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, ls[i]) -= S(1);
        gx += g * (gy * inv_b);
      });
    }
    return out;
  }

  Var softmax_rows(Var x) {
    const MatX<S>& xv = value(x);
    MatX<S> y(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      RowX<S> ex = (xv.row(i).array() - xv.row(i).maxCoeff()).exp();
      y.row(i) = ex / ex.sum();
    }
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        const MatX<S>& p = t.value(out);
        VecX<S> inner = (gy.array() * p.array()).rowwise().sum();
        t.nodes_[x.id].grad.array() +=
            p.array() * (gy.array().colwise() - inner.array());
      });
    }
    return out;
  }

  Var add(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw std::invalid_argument("add: shape mismatch");
    MatX<S> y = value(a) + value(b);
    Var out = push(std::move(y), any_grad({a, b}), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, a, b](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        if (t.requires_grad(a)) t.nodes_[a.id].grad += gy;
        if (t.requires_grad(b)) t.nodes_[b.id].grad += gy;
      });
    }
    return out;
  }

  Var mul(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw std::invalid_argument("mul: shape mismatch");
    MatX<S> y = value(a).cwiseProduct(value(b));
    Var out = push(std::move(y), any_grad({a, b}), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, a, b](Tape& t) {
        const MatX<S>& gy = t.nodes_[out.id].grad;
        if (t.requires_grad(a)) t.nodes_[a.id].grad += gy.cwiseProduct(t.value(b));
        if (t.requires_grad(b)) t.nodes_[b.id].grad += gy.cwiseProduct(t.value(a));
      });
    }
    return out;
  }

  Var scale(Var x, S c) {
    MatX<S> y = value(x) * c;
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x, c](Tape& t) {
        t.nodes_[x.id].grad += t.nodes_[out.id].grad * c;
      });
    }
    return out;
  }

  Var reduce_sum(Var x) {
    MatX<S> y(1, 1);
    y(0, 0) = value(x).sum();
    Var out = push(std::move(y), requires_grad(x), nullptr);
    if (requires_grad(out)) {
      set_backprop(out, [out, x](Tape& t) {
        t.nodes_[x.id].grad.array() += t.nodes_[out.id].grad(0, 0);
      });
    }
    return out;
  }

 private:
  struct Node {
    MatX<S> value;
    MatX<S> grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;
  };

  bool any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (requires_grad(v)) return true;
    return false;
  }

  Var push(MatX<S> v, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node nd;
    nd.value = std::move(v);
    nd.requires_grad = requires_grad;
    if (requires_grad) nd.grad = MatX<S>::Zero(nd.value.rows(), nd.value.cols());
    nd.backprop = std::move(backprop);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void set_backprop(Var v, std::function<void(Tape&)> fn) {
    nodes_[v.id].backprop = std::move(fn);
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

}  // namespace localnet
