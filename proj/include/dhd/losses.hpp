#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dhd/codes.hpp"
#include "dhd/error.hpp"
#include "dhd/matrix.hpp"
#include "dhd/random.hpp"

namespace dhd {

/// Trainable class proxies, one K-vector per class.
class ProxyBank {
 public:
  ProxyBank() = default;
  explicit ProxyBank(Matrix proxies) : proxies_(std::move(proxies)) {}

  /// Rows drawn i.i.d. from N(0, 1) and scaled by 1/sqrt(K).
  static ProxyBank random(std::size_t num_classes, std::size_t code_length, Rng& rng) {
    if (num_classes == 0 || code_length == 0) throw InvalidConfig("proxy bank: empty shape");
    Matrix m(num_classes, code_length);
    const double scale = 1.0 / std::sqrt(static_cast<double>(code_length));
    for (double& v : m.flat()) v = rng.normal() * scale;
    return ProxyBank(std::move(m));
  }

  std::size_t num_classes() const { return proxies_.rows(); }
  std::size_t code_length() const { return proxies_.cols(); }
  std::span<const double> row(std::size_t i) const { return proxies_.row(i); }
  Matrix& matrix() { return proxies_; }
  const Matrix& matrix() const { return proxies_; }

  /// Bounds every element to [-1, 1]; applied after each optimizer step.
  void clamp_rows() {
    for (double& v : proxies_.flat()) v = std::clamp(v, -1.0, 1.0);
  }

  bool operator==(const ProxyBank&) const = default;

 private:
  Matrix proxies_;
};

/// g(h) = exp(-(h - m)^2 / (2 sigma^2)) with m in {-1, +1}.
class GaussianEstimator {
 public:
  GaussianEstimator(double mean, double stddev) : mean_(mean), stddev_(stddev) {
    if (!(stddev > 0.0)) throw InvalidConfig("gaussian estimator: sigma must be > 0");
  }
  static GaussianEstimator positive(double stddev) { return {1.0, stddev}; }
  static GaussianEstimator negative(double stddev) { return {-1.0, stddev}; }

  double mean() const { return mean_; }
  double stddev() const { return stddev_; }

 private:
  double mean_;
  double stddev_;
};

inline double gaussian_likelihood(const GaussianEstimator& e, double h) {
  const double d = h - e.mean();
  return std::exp(-(d * d) / (2.0 * e.stddev() * e.stddev()));
}

/// Loss weights and shape parameters of the training objective.
struct LossWeights {
  double lambda_sdh = 0.1;
  double lambda_bceq = 0.1;
  double temperature = 0.2;
  double sigma = 0.5;

  void validate() const {
    if (!(lambda_sdh >= 0.0)) throw InvalidConfig("lambda_sdh must be >= 0");
    if (!(lambda_bceq >= 0.0)) throw InvalidConfig("lambda_bceq must be >= 0");
    if (!(temperature > 0.0)) throw InvalidConfig("temperature must be > 0");
    if (!(sigma > 0.0)) throw InvalidConfig("sigma must be > 0");
  }
};

/// Per-term loss values. total == hp + lambda_sdh * sdh + lambda_bceq * bceq.
struct LossBundle {
  double hp = 0.0;
  double sdh = 0.0;
  double bceq = 0.0;
  double total = 0.0;
  double lambda_sdh = 0.0;
  double lambda_bceq = 0.0;
  double temperature = 0.0;
};

struct CosineGradient {
  double value = 0.0;
  std::vector<double> d_u;
  std::vector<double> d_v;
};

/// Cosine similarity with its partial derivatives in both arguments.
inline CosineGradient cosine_with_gradient(std::span<const double> u, std::span<const double> v) {
  CosineGradient out;
  out.value = cosine(u, v);
  const double nu = norm(u);
  const double nv = norm(v);
  const double s = dot(u, v) / (nu * nv);
  out.d_u.resize(u.size());
  out.d_v.resize(v.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    out.d_u[i] = v[i] / (nu * nv) - s * u[i] / (nu * nu);
    out.d_v[i] = u[i] / (nu * nv) - s * v[i] / (nv * nv);
  }
  return out;
}

/// Self-distillation result. Only the student gradient exists: the teacher
/// code is a constant inside this loss.
struct SdhResult {
  double loss = 0.0;
  std::vector<double> grad_student;
};

inline SdhResult sdh_loss(std::span<const double> teacher, std::span<const double> student) {
  if (teacher.size() != student.size()) throw InvalidInput("sdh_loss: code lengths differ");
  auto cg = cosine_with_gradient(teacher, student);
  SdhResult r;
  r.loss = 1.0 - cg.value;
  r.grad_student = std::move(cg.d_v);
  for (double& g : r.grad_student) g = -g;
  return r;
}

/// Cosine similarity of h to every proxy row.
inline std::vector<double> proxy_predictions(const ProxyBank& proxies, std::span<const double> h) {
  if (h.size() != proxies.code_length())
    throw ShapeError("proxy_predictions: code length " + std::to_string(h.size()) + " does not match proxies (" +
                     std::to_string(proxies.code_length()) + ")");
  if (!(norm(h) >= kNormEpsilon)) throw DegenerateInput("proxy_predictions: hash code has near-zero norm");
  std::vector<double> out(proxies.num_classes());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(norm(proxies.row(i)) >= kNormEpsilon))
      throw DegenerateInput("proxy_predictions: proxy row " + std::to_string(i) + " has near-zero norm");
    out[i] = cosine(proxies.row(i), h);
  }
  return out;
}

/// Chain rule through proxy_predictions: accumulates dL/dh and dL/dP given
/// dL/dpred.
inline void backprop_proxy_predictions(const ProxyBank& proxies, std::span<const double> h,
                                       std::span<const double> grad_pred, std::span<double> grad_h,
                                       Matrix* grad_proxies) {
  for (std::size_t i = 0; i < proxies.num_classes(); ++i) {
    const double g = grad_pred[i];
    if (g == 0.0) continue;
    const auto cg = cosine_with_gradient(proxies.row(i), h);
    for (std::size_t k = 0; k < h.size(); ++k) grad_h[k] += g * cg.d_v[k];
    if (grad_proxies != nullptr) {
      auto row = grad_proxies->row(i);
      for (std::size_t k = 0; k < h.size(); ++k) row[k] += g * cg.d_u[k];
    }
  }
}

struct HpResult {
  double loss = 0.0;
  std::vector<double> grad_pred;
  std::vector<double> probabilities;
};

/// Cross entropy of softmax(pred / tau) against a probability vector y.
inline HpResult hp_loss(std::span<const double> y, std::span<const double> pred, double temperature) {
  if (!(temperature > 0.0)) throw InvalidConfig("hp_loss: temperature must be > 0");
  if (y.size() != pred.size()) throw InvalidInput("hp_loss: label and prediction lengths differ");
  if (pred.empty()) throw InvalidInput("hp_loss: empty prediction");
  double max_logit = pred[0] / temperature;
  for (double p : pred) max_logit = std::max(max_logit, p / temperature);
  double sum = 0.0;
  for (double p : pred) sum += std::exp(p / temperature - max_logit);
  const double log_z = max_logit + std::log(sum);

  HpResult r;
  r.probabilities.resize(pred.size());
  r.grad_pred.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double log_p = pred[i] / temperature - log_z;
    r.probabilities[i] = std::exp(log_p);
    if (y[i] > 0.0) r.loss -= y[i] * log_p;
    r.grad_pred[i] = (r.probabilities[i] - y[i]) / temperature;
  }
  return r;
}

inline constexpr double kLikelihoodEpsilon = 1e-7;

struct BceqResult {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Quantization loss: each element is classified as +1 or -1 against the two
/// Gaussian estimators, with labels taken from sign(h) (sign(0) = +1). The
/// labels are constants for differentiation.
inline BceqResult bceq_loss(std::span<const double> h, double sigma) {
  if (!(sigma > 0.0)) throw InvalidConfig("bceq_loss: sigma must be > 0");
  if (h.empty()) throw InvalidInput("bceq_loss: empty code");
  const auto pos = GaussianEstimator::positive(sigma);
  const auto neg = GaussianEstimator::negative(sigma);
  const double inv_k = 1.0 / static_cast<double>(h.size());
  const double inv_var = 1.0 / (sigma * sigma);

  // -log(v) and -log(1 - v) terms with v clamped to [eps, 1 - eps]; returns
  // value and derivative with respect to h.
  auto term = [&](const GaussianEstimator& e, double x, bool label_one) {
    const double g = gaussian_likelihood(e, x);
    const double dg = -(x - e.mean()) * inv_var * g;
    const bool clamped = g < kLikelihoodEpsilon || g > 1.0 - kLikelihoodEpsilon;
    const double gc = std::clamp(g, kLikelihoodEpsilon, 1.0 - kLikelihoodEpsilon);
    if (label_one) return std::pair{-std::log(gc), clamped ? 0.0 : -dg / gc};
    return std::pair{-std::log1p(-gc), clamped ? 0.0 : dg / (1.0 - gc)};
  };

  BceqResult r;
  r.grad.resize(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    const bool positive = h[k] >= 0.0;
    const auto [lp, dp] = term(pos, h[k], positive);
    const auto [ln, dn] = term(neg, h[k], !positive);
    r.loss += (lp + ln) * inv_k;
    r.grad[k] = (dp + dn) * inv_k;
  }
  return r;
}

/// bce-Q applied to every proxy row, averaged over classes.
struct ProxyBceqResult {
  double loss = 0.0;
  Matrix grad;
};

inline ProxyBceqResult proxy_bceq_loss(const ProxyBank& proxies, double sigma) {
  ProxyBceqResult r;
  r.grad = Matrix(proxies.num_classes(), proxies.code_length());
  const double inv_n = 1.0 / static_cast<double>(proxies.num_classes());
  for (std::size_t i = 0; i < proxies.num_classes(); ++i) {
    auto b = bceq_loss(proxies.row(i), sigma);
    r.loss += b.loss * inv_n;
    auto g = r.grad.row(i);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = b.grad[k] * inv_n;
  }
  return r;
}

/// Turns a multi-hot label into a distribution: y / ||y||_1.
inline std::vector<double> normalize_multilabel(std::span<const double> y) {
  double total = 0.0;
  for (double v : y) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("normalize_multilabel: labels must be finite and >= 0");
    total += v;
  }
  if (total <= 0.0) throw InvalidInput("normalize_multilabel: label has no positive class");
  std::vector<double> out(y.begin(), y.end());
  for (double& v : out) v /= total;
  return out;
}

/// One sample's inputs to the total loss.
struct LossSample {
  std::span<const double> label;  // normalized
  std::span<const double> teacher;
  std::span<const double> student;
  std::span<const double> predictions;  // proxy_predictions(P, teacher)
};

inline LossBundle sample_loss(const LossSample& s, const LossWeights& w) {
  LossBundle b;
  b.lambda_sdh = w.lambda_sdh;
  b.lambda_bceq = w.lambda_bceq;
  b.temperature = w.temperature;
  b.hp = hp_loss(s.label, s.predictions, w.temperature).loss;
  b.sdh = sdh_loss(s.teacher, s.student).loss;
  b.bceq = bceq_loss(s.teacher, w.sigma).loss;
  b.total = b.hp + w.lambda_sdh * b.sdh + w.lambda_bceq * b.bceq;
  return b;
}

/// Batch mean of the per-sample objective. HP and bce-Q see teacher codes only.
inline LossBundle total_loss(std::span<const LossSample> batch, const LossWeights& w) {
  w.validate();
  if (batch.empty()) throw InvalidInput("total_loss: empty batch");
  LossBundle mean;
  mean.lambda_sdh = w.lambda_sdh;
  mean.lambda_bceq = w.lambda_bceq;
  mean.temperature = w.temperature;
  for (const auto& s : batch) {
    const auto b = sample_loss(s, w);
    mean.hp += b.hp;
    mean.sdh += b.sdh;
    mean.bceq += b.bceq;
  }
  const double n = static_cast<double>(batch.size());
  mean.hp /= n;
  mean.sdh /= n;
  mean.bceq /= n;
  mean.total = mean.hp + w.lambda_sdh * mean.sdh + w.lambda_bceq * mean.bceq;
  return mean;
}

}  // namespace dhd
