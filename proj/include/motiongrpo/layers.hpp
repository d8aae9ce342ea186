#pragma once

#include "motiongrpo/rng.hpp"
#include "motiongrpo/tensor.hpp"

#include <cmath>

namespace mgrpo {

/// y = x W + b
struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight({in, out}), bias({1, out}) {}

  void init(Rng& rng, double gain = 1.0) {
    const double scale = gain / std::sqrt(static_cast<double>(weight.shape()[0]));
    for (double& w : weight.data()) w = scale * rng.normal();
  }

  RowMatrix forward(const RowMatrix& x) const {
    RowMatrix y = x * weight.matrix();
    y.rowwise() += bias.matrix().row(0);
    return y;
  }

  /// Accumulates into (dw, db), returns dx.
  RowMatrix backward(const RowMatrix& x, const RowMatrix& dy, Tensor& dw, Tensor& db) const {
    dw.matrix().noalias() += x.transpose() * dy;
    db.matrix().row(0) += dy.colwise().sum();
    return dy * weight.matrix().transpose();
  }
};

/// Single-head scaled dot-product attention with output projection, no biases.
struct Attention {
  Tensor wq, wk, wv, wo;  // d x d each

  Attention() = default;
  explicit Attention(std::size_t d) : wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d}) {}

  void init(Rng& rng, double output_gain = 1.0) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(wq.shape()[0]));
    for (Tensor* w : {&wq, &wk, &wv}) {
      for (double& v : w->data()) v = scale * rng.normal();
    }
    for (double& v : wo.data()) v = output_gain * scale * rng.normal();
  }

  struct Tape {
    RowMatrix xq, xkv, q, k, v, probs, context;
  };

  RowMatrix forward(const RowMatrix& xq, const RowMatrix& xkv, Tape& tape) const {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(wq.shape()[0]));
    tape.xq = xq;
    tape.xkv = xkv;
    tape.q = xq * wq.matrix();
    tape.k = xkv * wk.matrix();
    tape.v = xkv * wv.matrix();
    RowMatrix logits = (tape.q * tape.k.transpose()) * inv_sqrt_d;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double m = logits.row(r).maxCoeff();
      logits.row(r) = (logits.row(r).array() - m).exp();
      logits.row(r) /= logits.row(r).sum();
    }
    tape.probs = std::move(logits);
    tape.context = tape.probs * tape.v;
    return tape.context * wo.matrix();
  }

  /// Gradient slots are (wq, wk, wv, wo). Writes dxq and dxkv.
  void backward(const Tape& tape, const RowMatrix& dout, Tensor* grads, RowMatrix& dxq, RowMatrix& dxkv) const {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(wq.shape()[0]));
    grads[3].matrix().noalias() += tape.context.transpose() * dout;
    const RowMatrix dcontext = dout * wo.matrix().transpose();
    const RowMatrix dprobs = dcontext * tape.v.transpose();
    const RowMatrix dv = tape.probs.transpose() * dcontext;
    RowMatrix dlogits = tape.probs.cwiseProduct(dprobs);
    const Eigen::VectorXd row_dot = dlogits.rowwise().sum();
    dlogits -= tape.probs.cwiseProduct(row_dot.replicate(1, tape.probs.cols()));
    const RowMatrix dq = dlogits * tape.k * inv_sqrt_d;
    const RowMatrix dk = dlogits.transpose() * tape.q * inv_sqrt_d;
    grads[0].matrix().noalias() += tape.xq.transpose() * dq;
    grads[1].matrix().noalias() += tape.xkv.transpose() * dk;
    grads[2].matrix().noalias() += tape.xkv.transpose() * dv;
    dxq = dq * wq.matrix().transpose();
    dxkv = dk * wk.matrix().transpose() + dv * wv.matrix().transpose();
  }
};

}  // namespace mgrpo
