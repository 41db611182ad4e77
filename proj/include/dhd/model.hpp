#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dhd/codes.hpp"
#include "dhd/error.hpp"
#include "dhd/matrix.hpp"
#include "dhd/random.hpp"

namespace dhd {

/// MLP encoder (ReLU hidden layers) followed by a single FC hash head with tanh.
struct EncoderConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t code_length = 16;

  void validate() const {
    if (input_dim == 0) throw InvalidConfig("encoder.input_dim must be >= 1");
    if (code_length == 0) throw InvalidConfig("encoder.code_length must be >= 1");
    for (std::size_t d : hidden_dims)
      if (d == 0) throw InvalidConfig("encoder.hidden_dims entries must be >= 1");
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Activations recorded by forward(): activations[0] is the input,
/// activations[l + 1] the output of layer l. The last entry is h.
struct Tape {
  std::vector<std::vector<double>> activations;

  std::span<const double> code() const { return activations.back(); }
};

/// Gradients laid out exactly like the model's layers.
struct ModelGradients {
  std::vector<DenseLayer> layers;

  void zero() {
    for (auto& l : layers) {
      l.weight.fill(0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
  }
};

class HashModel {
 public:
  HashModel() = default;

  /// All weights and biases zero.
  static HashModel zeros(const EncoderConfig& config) {
    config.validate();
    HashModel m;
    m.config_ = config;
    std::size_t in = config.input_dim;
    auto add = [&](std::size_t out) {
      m.layers_.push_back({Matrix(out, in), std::vector<double>(out, 0.0)});
      in = out;
    };
    for (std::size_t d : config.hidden_dims) add(d);
    add(config.code_length);
    return m;
  }

  /// Hidden layers: U(-sqrt(6/fan_in), sqrt(6/fan_in)). Head: U(-1/sqrt(fan_in),
  /// 1/sqrt(fan_in)), so pre-tanh activations start in the linear regime.
  /// Biases start at zero.
  static HashModel initialized(const EncoderConfig& config, Rng& rng) {
    HashModel m = zeros(config);
    for (std::size_t l = 0; l < m.layers_.size(); ++l) {
      auto& layer = m.layers_[l];
      const double fan_in = static_cast<double>(layer.weight.cols());
      const bool head = l + 1 == m.layers_.size();
      const double limit = head ? 1.0 / std::sqrt(fan_in) : std::sqrt(6.0 / fan_in);
      for (double& w : layer.weight.flat()) w = rng.uniform(-limit, limit);
    }
    return m;
  }

  const EncoderConfig& config() const { return config_; }
  std::size_t input_dim() const { return config_.input_dim; }
  std::size_t code_length() const { return config_.code_length; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  ModelGradients make_gradients() const {
    ModelGradients g;
    for (const auto& l : layers_)
      g.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
    return g;
  }

  HashCode forward(std::span<const double> x, Tape& tape) const {
    if (x.size() != config_.input_dim)
      throw ShapeError("forward: input has " + std::to_string(x.size()) + " features, model expects " +
                       std::to_string(config_.input_dim));
    if (!all_finite(x)) throw InvalidInput("forward: non-finite input feature");
    tape.activations.resize(layers_.size() + 1);
    tape.activations[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      const auto& in = tape.activations[l];
      auto& out = tape.activations[l + 1];
      out.resize(layer.weight.rows());
      const bool head = l + 1 == layers_.size();
      for (std::size_t o = 0; o < out.size(); ++o) {
        const double z = dot(layer.weight.row(o), in) + layer.bias[o];
        out[o] = head ? std::tanh(z) : (z > 0.0 ? z : 0.0);
      }
    }
    return HashCode(tape.activations.back());
  }

  HashCode encode(std::span<const double> x) const {
    Tape tape;
    return forward(x, tape);
  }

  /// Reverse-mode pass; adds the parameter gradients of <grad_h, h> into grads.
  void backward(const Tape& tape, std::span<const double> grad_h, ModelGradients& grads) const {
    if (tape.activations.size() != layers_.size() + 1) throw ShapeError("backward: tape does not match model depth");
    if (grad_h.size() != config_.code_length)
      throw ShapeError("backward: gradient length " + std::to_string(grad_h.size()) + " does not match K");
    if (grads.layers.size() != layers_.size()) throw ShapeError("backward: gradient buffer does not match model");

    const auto h = tape.code();
    std::vector<double> delta(grad_h.size());
    for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = grad_h[k] * (1.0 - h[k] * h[k]);

    std::vector<double> upstream;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      auto& g = grads.layers[l];
      const auto& in = tape.activations[l];
      for (std::size_t o = 0; o < delta.size(); ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        auto grow = g.weight.row(o);
        for (std::size_t i = 0; i < in.size(); ++i) grow[i] += d * in[i];
        g.bias[o] += d;
      }
      if (l == 0) break;
      upstream.assign(in.size(), 0.0);
      for (std::size_t o = 0; o < delta.size(); ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const auto wrow = layer.weight.row(o);
        for (std::size_t i = 0; i < in.size(); ++i) upstream[i] += d * wrow[i];
      }
      for (std::size_t i = 0; i < in.size(); ++i)
        if (!(in[i] > 0.0)) upstream[i] = 0.0;
      delta.swap(upstream);
    }
  }

  /// Flat views over all parameter tensors: W0, b0, W1, b1, ...
  std::vector<std::span<double>> parameter_tensors() {
    std::vector<std::span<double>> out;
    for (auto& l : layers_) {
      out.push_back(l.weight.flat());
      out.push_back(l.bias);
    }
    return out;
  }

  bool operator==(const HashModel&) const = default;

 private:
  EncoderConfig config_;
  std::vector<DenseLayer> layers_;
};

inline std::vector<std::span<const double>> gradient_tensors(const ModelGradients& g) {
  std::vector<std::span<const double>> out;
  for (const auto& l : g.layers) {
    out.push_back(l.weight.flat());
    out.push_back(l.bias);
  }
  return out;
}

/// base_lr * (1 + cos(pi * step / total_steps)) / 2.
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0) throw InvalidConfig("cosine_lr: total_steps must be >= 1");
  if (step >= total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamConfig {
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t total_steps = 1;

  bool operator==(const AdamConfig&) const = default;
};

/// Adam with bias correction; the learning rate follows cosine_lr.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig config, const std::vector<std::size_t>& tensor_sizes) : config_(config) {
    for (std::size_t n : tensor_sizes) {
      first_.emplace_back(n, 0.0);
      second_.emplace_back(n, 0.0);
    }
  }

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_; }
  double current_lr() const { return cosine_lr(step_, config_.total_steps, config_.base_lr); }

  std::vector<std::vector<double>>& first_moments() { return first_; }
  std::vector<std::vector<double>>& second_moments() { return second_; }
  const std::vector<std::vector<double>>& first_moments() const { return first_; }
  const std::vector<std::vector<double>>& second_moments() const { return second_; }
  void set_step_count(std::uint64_t step) { step_ = step; }

  /// Applies one update and returns the learning rate it used.
  double step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
    if (params.size() != first_.size() || grads.size() != first_.size())
      throw ShapeError("adam: tensor count does not match optimizer state");
    const double lr = current_lr();
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto p = params[t];
      auto g = grads[t];
      auto& m = first_[t];
      auto& v = second_[t];
      if (p.size() != m.size() || g.size() != m.size()) throw ShapeError("adam: tensor shape mismatch");
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
    return lr;
  }

  bool operator==(const Adam&) const = default;

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace dhd
