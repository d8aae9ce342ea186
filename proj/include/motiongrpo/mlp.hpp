#pragma once

#include "motiongrpo/rng.hpp"
#include "motiongrpo/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mgrpo {

/// Affine layer `y = x W + b` with W stored as an (in x out) row-major matrix.
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
};

/// Activations recorded by a forward pass; activations[0] is the input.
struct MlpTape {
  std::vector<RowMatrix> activations;
};

struct MlpGradients {
  Gradients params;  // ordered as Mlp::parameters()
  Tensor input;
};

/// Fully connected network: tanh on hidden layers, identity on the output layer.
class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialised network with the given widths (input first, output last).
  explicit Mlp(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw DimensionError("mlp needs at least an input and an output width");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      layers_.push_back({Tensor({dims_[l], dims_[l + 1]}), Tensor({1, dims_[l + 1]})});
    }
  }

  /// Gaussian init with std sqrt(1/fan_in), scaled by `output_gain` on the last layer.
  static Mlp random(std::vector<std::size_t> dims, Rng& rng, double output_gain = 1.0) {
    Mlp net(std::move(dims));
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
      auto& layer = net.layers_[l];
      double scale = std::sqrt(1.0 / static_cast<double>(layer.in_dim()));
      if (l + 1 == net.layers_.size()) scale *= output_gain;
      for (double& w : layer.weight.data()) w = scale * rng.normal();
    }
    return net;
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  ParamRefs parameters() {
    ParamRefs refs;
    for (auto& layer : layers_) {
      refs.push_back(&layer.weight);
      refs.push_back(&layer.bias);
    }
    return refs;
  }

  MlpTape forward_tape(const RowMatrix& input) const {
    if (static_cast<std::size_t>(input.cols()) != input_dim()) {
      throw DimensionError("mlp layer 0 expects input width " + std::to_string(input_dim()) +
                           ", got " + std::to_string(input.cols()));
    }
    MlpTape tape;
    tape.activations.reserve(layers_.size() + 1);
    tape.activations.push_back(input);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      RowMatrix z = tape.activations.back() * layer.weight.matrix();
      z.rowwise() += layer.bias.matrix().row(0);
      if (l + 1 < layers_.size()) z = z.array().tanh();
      tape.activations.push_back(std::move(z));
    }
    return tape;
  }

  RowMatrix forward(const RowMatrix& input) const { return forward_tape(input).activations.back(); }

  /// Batched forward over the rows of `input` (any rank; last axis is features).
  Tensor forward(const Tensor& input) const {
    if (input.cols() != input_dim()) {
      throw DimensionError("mlp layer 0 expects input width " + std::to_string(input_dim()) +
                           ", got tensor of shape " + shape_string(input.shape()));
    }
    RowMatrix out = forward(RowMatrix(input.matrix()));
    std::vector<std::size_t> shape = input.shape();
    if (shape.empty()) shape.push_back(1);
    shape.back() = output_dim();
    Tensor result(shape);
    result.matrix() = out;
    return result;
  }

  /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
  RowMatrix backward_tape(const MlpTape& tape, const RowMatrix& output_grad, Gradients& grads) const {
    const RowMatrix& out = tape.activations.back();
    if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols()) {
      throw DimensionError("mlp output gradient shape does not match forward output");
    }
    RowMatrix delta = output_grad;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) {
        delta.array() *= 1.0 - tape.activations[l + 1].array().square();
      }
      const RowMatrix& in = tape.activations[l];
      grads[2 * l].matrix().noalias() += in.transpose() * delta;
      grads[2 * l + 1].matrix().row(0) += delta.colwise().sum();
      delta = (delta * layers_[l].weight.matrix().transpose()).eval();
    }
    return delta;
  }

  MlpGradients backward(const Tensor& input, const Tensor& output_grad) const {
    if (output_grad.cols() != output_dim() || output_grad.rows() != input.rows()) {
      throw DimensionError("mlp output gradient of shape " + shape_string(output_grad.shape()) +
                           " does not match forward output");
    }
    MlpTape tape = forward_tape(RowMatrix(input.matrix()));
    MlpGradients g;
    for (const auto& layer : layers_) {
      g.params.push_back(Tensor::zeros_like(layer.weight));
      g.params.push_back(Tensor::zeros_like(layer.bias));
    }
    RowMatrix din = backward_tape(tape, RowMatrix(output_grad.matrix()), g.params);
    g.input = Tensor(input.shape());
    g.input.matrix() = din;
    return g;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<DenseLayer> layers_;
};

}  // namespace mgrpo
