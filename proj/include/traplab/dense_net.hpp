#pragma once

#include "traplab/core.hpp"

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace traplab {

enum class Activation { Identity, Relu, Tanh };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weights;  // out x in
  Vector<Scalar> bias;     // out

  Index input_dim() const { return weights.cols(); }
  Index output_dim() const { return weights.rows(); }
};

/**
 * Fully connected feed-forward network. Inputs and outputs are column-major
 * batches: each column is one sample. Hidden layers share one activation; the
 * output layer is linear.
 *
 * The same type doubles as a gradient container (one DenseLayer per layer with
 * matching shapes), which keeps optimizers and finite-difference checks
 * shape-agnostic.
 */
template <typename Scalar>
class DenseNet {
 public:
  using MatrixType = Matrix<Scalar>;
  using VectorType = Vector<Scalar>;

  /// Cached intermediate values of a forward pass, consumed by backward().
  struct Tape {
    std::vector<MatrixType> inputs;  // input to layer l
    std::vector<MatrixType> pre;     // pre-activation of layer l
  };

  DenseNet() = default;

  /// Zero-initialized network with the given layer widths (input first).
  DenseNet(const std::vector<Index>& dims, Activation hidden)
      : hidden_(hidden) {
    if (dims.size() < 2) throw DimensionError("DenseNet needs at least two dims");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      if (dims[l] <= 0 || dims[l + 1] <= 0) throw DimensionError("DenseNet dims must be positive");
      layers_.push_back({MatrixType::Zero(dims[l + 1], dims[l]), VectorType::Zero(dims[l + 1])});
    }
  }

  DenseNet(std::vector<DenseLayer<Scalar>> layers, Activation hidden)
      : layers_(std::move(layers)), hidden_(hidden) {
    if (layers_.empty()) throw DimensionError("DenseNet needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].weights.rows())
        throw DimensionError("DenseNet: bias size does not match layer " + std::to_string(l));
      if (l > 0 && layers_[l].weights.cols() != layers_[l - 1].weights.rows())
        throw DimensionError("DenseNet: adjacent layer dims disagree at layer " + std::to_string(l));
    }
  }

  /// Uniform fan-in scaled init: U(-s/sqrt(fan_in), s/sqrt(fan_in)), biases zero.
  static DenseNet random(const std::vector<Index>& dims, Activation hidden, Rng& rng,
                         Scalar scale = Scalar(1)) {
    DenseNet net(dims, hidden);
    for (auto& layer : net.layers_) {
      const double bound = static_cast<double>(scale) / std::sqrt(static_cast<double>(layer.input_dim()));
      for (Index j = 0; j < layer.weights.cols(); ++j)
        for (Index i = 0; i < layer.weights.rows(); ++i)
          layer.weights(i, j) = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
    }
    return net;
  }

  DenseNet zeros_like() const {
    DenseNet out = *this;
    for (auto& layer : out.layers_) {
      layer.weights.setZero();
      layer.bias.setZero();
    }
    return out;
  }

  Index input_dim() const { return layers_.empty() ? 0 : layers_.front().input_dim(); }
  Index output_dim() const { return layers_.empty() ? 0 : layers_.back().output_dim(); }
  std::size_t num_layers() const { return layers_.size(); }
  Activation hidden_activation() const { return hidden_; }

  std::vector<Index> dims() const {
    std::vector<Index> d;
    if (layers_.empty()) return d;
    d.push_back(input_dim());
    for (const auto& layer : layers_) d.push_back(layer.output_dim());
    return d;
  }

  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }

  MatrixType forward(const Eigen::Ref<const MatrixType>& inputs) const {
    check_input(inputs.rows());
    MatrixType x = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      MatrixType z = layers_[l].weights * x;
      z.colwise() += layers_[l].bias;
      x = is_hidden(l) ? activate(z) : std::move(z);
    }
    return x;
  }

  MatrixType forward(const Eigen::Ref<const MatrixType>& inputs, Tape& tape) const {
    check_input(inputs.rows());
    tape.inputs.clear();
    tape.pre.clear();
    MatrixType x = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      tape.inputs.push_back(x);
      MatrixType z = layers_[l].weights * x;
      z.colwise() += layers_[l].bias;
      x = is_hidden(l) ? activate(z) : z;
      tape.pre.push_back(std::move(z));
    }
    return x;
  }

  /// Accumulates parameter gradients of a scalar loss given dLoss/dOutput
  /// (same shape as the forward output) into `grad`. Returns dLoss/dInput.
  MatrixType backward(const Tape& tape, MatrixType output_grad, DenseNet& grad) const {
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (is_hidden(l)) output_grad.array() *= activation_derivative(tape.pre[l]).array();
      grad.layers_[l].weights.noalias() += output_grad * tape.inputs[l].transpose();
      grad.layers_[l].bias += output_grad.rowwise().sum();
      output_grad = layers_[l].weights.transpose() * output_grad;
    }
    return output_grad;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
    return n;
  }

  /// Parameters flattened layer by layer (weights column-major, then bias).
  VectorType flatten() const {
    VectorType out(parameter_count());
    Index k = 0;
    for (const auto& layer : layers_) {
      out.segment(k, layer.weights.size()) = layer.weights.reshaped();
      k += layer.weights.size();
      out.segment(k, layer.bias.size()) = layer.bias;
      k += layer.bias.size();
    }
    return out;
  }

  void unflatten(const Eigen::Ref<const VectorType>& params) {
    if (params.size() != parameter_count()) throw DimensionError("unflatten: parameter count mismatch");
    Index k = 0;
    for (auto& layer : layers_) {
      layer.weights.reshaped() = params.segment(k, layer.weights.size());
      k += layer.weights.size();
      layer.bias = params.segment(k, layer.bias.size());
      k += layer.bias.size();
    }
  }

  bool all_finite() const {
    for (const auto& layer : layers_)
      if (!layer.weights.allFinite() || !layer.bias.allFinite()) return false;
    return true;
  }

  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    if (a.hidden_ != b.hidden_ || a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l) {
      const auto& x = a.layers_[l];
      const auto& y = b.layers_[l];
      if (x.weights.rows() != y.weights.rows() || x.weights.cols() != y.weights.cols()) return false;
      if (x.weights != y.weights || x.bias != y.bias) return false;
    }
    return true;
  }

 private:
  bool is_hidden(std::size_t l) const { return l + 1 < layers_.size(); }

  void check_input(Index rows) const {
    if (layers_.empty()) throw DimensionError("DenseNet is empty");
    if (rows != input_dim())
      throw DimensionError("DenseNet input has " + std::to_string(rows) + " rows, expected " +
                           std::to_string(input_dim()));
  }

  MatrixType activate(const MatrixType& z) const {
    switch (hidden_) {
      case Activation::Relu: return z.cwiseMax(Scalar(0));
      case Activation::Tanh: return z.array().tanh().matrix();
      case Activation::Identity: break;
    }
    return z;
  }

  MatrixType activation_derivative(const MatrixType& z) const {
    switch (hidden_) {
      case Activation::Relu: return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
      case Activation::Tanh: return (Scalar(1) - z.array().tanh().square()).matrix();
      case Activation::Identity: break;
    }
    return MatrixType::Ones(z.rows(), z.cols());
  }

  std::vector<DenseLayer<Scalar>> layers_;
  Activation hidden_ = Activation::Relu;
};

/**
 * Adam over every parameter of a DenseNet. A zero learning rate leaves the
 * parameters bit-identical.
 */
template <typename Scalar>
class Adam {
 public:
  struct Options {
    Scalar learning_rate = Scalar(1e-3);
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar epsilon = Scalar(1e-8);
  };

  Adam(const DenseNet<Scalar>& shape, Options options)
      : options_(options), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

  void step(DenseNet<Scalar>& net, const DenseNet<Scalar>& grad) {
    if (options_.learning_rate == Scalar(0)) return;
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(options_.beta1, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(options_.beta2, static_cast<Scalar>(t_));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      update(net.layers()[l].weights, grad.layers()[l].weights, m_.layers()[l].weights,
             v_.layers()[l].weights, c1, c2);
      update(net.layers()[l].bias, grad.layers()[l].bias, m_.layers()[l].bias, v_.layers()[l].bias,
             c1, c2);
    }
  }

 private:
  template <typename P, typename G, typename M>
  void update(P& param, const G& g, M& m, M& v, Scalar c1, Scalar c2) {
    m = options_.beta1 * m + (Scalar(1) - options_.beta1) * g;
    v = options_.beta2 * v + (Scalar(1) - options_.beta2) * g.cwiseProduct(g);
    param.array() -= options_.learning_rate * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + options_.epsilon);
  }

  Options options_;
  DenseNet<Scalar> m_;
  DenseNet<Scalar> v_;
  long t_ = 0;
};

}  // namespace traplab
