#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "handocc/error.hpp"
#include "handocc/random.hpp"

namespace handocc::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Relu, LeakyRelu };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Fully connected network with one optional skip connection: hidden layer
/// `skip_layer` receives [previous activation; network input]. The output
/// layer is linear.
struct MlpShape {
  int input_dim = 1;
  std::vector<int> hidden;
  int output_dim = 1;
  int skip_layer = -1;  // index into `hidden`; < 1 or >= hidden.size() disables
  Activation activation = Activation::Relu;
  double leaky_slope = 0.2;

  bool has_skip() const { return skip_layer >= 1 && skip_layer < static_cast<int>(hidden.size()); }

  int layer_count() const { return static_cast<int>(hidden.size()) + 1; }

  int fan_in(int layer) const {
    if (layer == 0) return input_dim;
    int d = hidden[static_cast<std::size_t>(layer - 1)];
    if (has_skip() && layer == skip_layer) d += input_dim;
    return d;
  }

  int fan_out(int layer) const {
    return layer < static_cast<int>(hidden.size()) ? hidden[static_cast<std::size_t>(layer)] : output_dim;
  }

  /// sum over layers of fan_in * fan_out + fan_out
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l) {
      n += static_cast<std::size_t>(fan_in(l)) * static_cast<std::size_t>(fan_out(l)) +
           static_cast<std::size_t>(fan_out(l));
    }
    return n;
  }
};

/// Per-batch record of a forward pass; columns are samples.
struct Tape {
  Matrix input;
  std::vector<Matrix> layer_inputs;
  std::vector<Matrix> preactivations;
  Matrix output;
};

using Gradients = std::vector<DenseLayer>;

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpShape shape) : shape_(std::move(shape)) {
    require(shape_.input_dim > 0 && shape_.output_dim > 0, "layer sizes must be positive");
    for (int l = 0; l < shape_.layer_count(); ++l) {
      layers_.push_back({Matrix::Zero(shape_.fan_out(l), shape_.fan_in(l)), Vector::Zero(shape_.fan_out(l))});
    }
  }

  const MlpShape& shape() const { return shape_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const { return shape_.parameter_count(); }

  /// He-normal hidden weights, zero biases; the output layer is scaled by
  /// `output_gain`.
  void initialize(Rng& rng, double output_gain = 1.0) {
    for (int l = 0; l < shape_.layer_count(); ++l) {
      auto& layer = layers_[static_cast<std::size_t>(l)];
      const double stddev = std::sqrt(2.0 / shape_.fan_in(l)) * (l + 1 == shape_.layer_count() ? output_gain : 1.0);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = rng.normal(0.0, stddev);
      layer.bias.setZero();
    }
  }

  Tape forward(const Matrix& input) const {
    require(input.rows() == shape_.input_dim, "network input has the wrong dimension");
    Tape tape;
    tape.input = input;
    Matrix h = input;
    const int last = shape_.layer_count() - 1;
    for (int l = 0; l <= last; ++l) {
      if (shape_.has_skip() && l == shape_.skip_layer) {
        Matrix joined(h.rows() + input.rows(), h.cols());
        joined << h, input;
        h = std::move(joined);
      }
      const auto& layer = layers_[static_cast<std::size_t>(l)];
      Matrix z = layer.weight * h;
      z.colwise() += layer.bias;
      tape.layer_inputs.push_back(std::move(h));
      if (l < last) {
        h = activate(z);
        tape.preactivations.push_back(std::move(z));
      } else {
        tape.output = std::move(z);
      }
    }
    return tape;
  }

  /// Accumulates parameter gradients of sum(grad_output .* output) into
  /// `grads` and returns the gradient with respect to the input.
  Matrix backward(const Tape& tape, const Matrix& grad_output, Gradients& grads) const {
    const int last = shape_.layer_count() - 1;
    Matrix g = grad_output;
    Matrix skip_grad;
    for (int l = last; l >= 0; --l) {
      const auto idx = static_cast<std::size_t>(l);
      if (l < last) g = g.cwiseProduct(activation_derivative(tape.preactivations[idx]));
      grads[idx].weight.noalias() += g * tape.layer_inputs[idx].transpose();
      grads[idx].bias += g.rowwise().sum();
      Matrix gin = layers_[idx].weight.transpose() * g;
      if (shape_.has_skip() && l == shape_.skip_layer) {
        const Eigen::Index prev = gin.rows() - shape_.input_dim;
        skip_grad = gin.bottomRows(shape_.input_dim);
        gin = Matrix(gin.topRows(prev));
      }
      g = std::move(gin);
    }
    if (skip_grad.size() > 0) g += skip_grad;
    return g;
  }

  Gradients zero_gradients() const {
    Gradients out;
    for (const auto& l : layers_) out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return out;
  }

  /// Visits parameters in a fixed order: per layer, weight (column-major)
  /// then bias.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) fn(l.weight.data()[i]);
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) fn(l.bias.data()[i]);
    }
  }

 private:
  Matrix activate(const Matrix& z) const {
    if (shape_.activation == Activation::Relu) return z.cwiseMax(0.0);
    const double s = shape_.leaky_slope;
    return z.unaryExpr([s](double v) { return v > 0 ? v : s * v; });
  }

  Matrix activation_derivative(const Matrix& z) const {
    const double s = shape_.activation == Activation::Relu ? 0.0 : shape_.leaky_slope;
    return z.unaryExpr([s](double v) { return v > 0 ? 1.0 : s; });
  }

  MlpShape shape_;
  std::vector<DenseLayer> layers_;
};

inline void visit_gradients(Gradients& grads, const std::function<void(double&)>& fn) {
  for (auto& l : grads) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) fn(l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) fn(l.bias.data()[i]);
  }
}

inline std::vector<double> flatten(const Gradients& layers) {
  std::vector<double> out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Keeps every stored value exactly representable as a 32-bit float, so a
/// float checkpoint restores training state bit-exactly.
inline void quantize(std::vector<DenseLayer>& layers) {
  for (auto& l : layers) {
    l.weight = l.weight.unaryExpr(&round_to_float);
    l.bias = l.bias.unaryExpr(&round_to_float);
  }
}

}  // namespace handocc::nn
