#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dhd/augment.hpp"
#include "dhd/binary_io.hpp"
#include "dhd/codes.hpp"
#include "dhd/dataset.hpp"
#include "dhd/error.hpp"
#include "dhd/losses.hpp"
#include "dhd/model.hpp"
#include "dhd/random.hpp"
#include "json.hpp"

namespace dhd {

struct TrainConfig {
  EncoderConfig encoder;  // encoder.code_length is K
  std::size_t num_classes = 0;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  LossWeights weights;
  /// Transform family T. The student group is T itself; the teacher group is
  /// T with occurrences scaled by teacher_scale.
  TransformGroup family = default_transform_family();
  double teacher_scale = 0.5;
  /// When false, only the teacher view is generated and the SdH term is
  /// absent (single-view baseline).
  bool self_distillation = true;
  double base_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  std::size_t code_length() const { return encoder.code_length; }
  TransformGroup teacher_group() const { return family.scaled(teacher_scale); }
  TransformGroup student_group() const { return family.scaled(1.0); }

  void validate() const {
    encoder.validate();
    weights.validate();
    family.validate();
    if (num_classes == 0) throw InvalidConfig("train.num_classes must be >= 1");
    if (batch_size == 0) throw InvalidConfig("train.batch_size must be >= 1");
    if (epochs == 0) throw InvalidConfig("train.epochs must be >= 1");
    if (!(teacher_scale >= 0.0 && teacher_scale <= 1.0)) throw InvalidConfig("train.teacher_scale must be in [0, 1]");
    if (!(base_lr > 0.0)) throw InvalidConfig("train.base_lr must be > 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["input_dim"] = c.encoder.input_dim;
  j["hidden_dims"] = c.encoder.hidden_dims;
  j["code_length"] = c.encoder.code_length;
  j["num_classes"] = c.num_classes;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lambda_sdh"] = c.weights.lambda_sdh;
  j["lambda_bceq"] = c.weights.lambda_bceq;
  j["temperature"] = c.weights.temperature;
  j["sigma"] = c.weights.sigma;
  j["transforms"] = to_json(c.family)["transforms"];
  j["teacher_scale"] = c.teacher_scale;
  j["self_distillation"] = c.self_distillation;
  j["base_lr"] = c.base_lr;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_epsilon"] = c.adam_epsilon;
  j["seed"] = c.seed;
  return j;
}

/// Reads the fields present in j on top of `base`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    c.encoder.input_dim = j.value("input_dim", c.encoder.input_dim);
    if (j.contains("hidden_dims")) c.encoder.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    c.encoder.code_length = j.value("code_length", c.encoder.code_length);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.weights.lambda_sdh = j.value("lambda_sdh", c.weights.lambda_sdh);
    c.weights.lambda_bceq = j.value("lambda_bceq", c.weights.lambda_bceq);
    c.weights.temperature = j.value("temperature", c.weights.temperature);
    c.weights.sigma = j.value("sigma", c.weights.sigma);
    if (j.contains("transforms"))
      c.family = transform_group_from_json(nlohmann::json{{"scale", 1.0}, {"transforms", j.at("transforms")}});
    c.teacher_scale = j.value("teacher_scale", c.teacher_scale);
    c.self_distillation = j.value("self_distillation", c.self_distillation);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("train config: ") + e.what());
  }
  return c;
}

/// Everything that evolves during training.
struct TrainingState {
  HashModel model;
  ProxyBank proxies;
  Adam optimizer;
  std::uint64_t epochs_completed = 0;

  bool operator==(const TrainingState&) const = default;
};

namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kView = 3;
inline constexpr std::uint64_t kTeacher = 0;
inline constexpr std::uint64_t kStudent = 1;
}  // namespace stream

inline std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch_size) {
  return (train_size + batch_size - 1) / batch_size;
}

inline std::vector<std::size_t> optimizer_tensor_sizes(const HashModel& model, const ProxyBank& proxies) {
  std::vector<std::size_t> sizes;
  for (const auto& l : model.layers()) {
    sizes.push_back(l.weight.size());
    sizes.push_back(l.bias.size());
  }
  sizes.push_back(proxies.matrix().size());
  return sizes;
}

inline TrainingState init_training(const TrainConfig& config, std::size_t train_size) {
  config.validate();
  if (train_size == 0) throw InvalidInput("init_training: empty training set");
  Rng rng(derive_seed(config.seed, {stream::kInit}));
  TrainingState s;
  s.model = HashModel::initialized(config.encoder, rng);
  s.proxies = ProxyBank::random(config.num_classes, config.code_length(), rng);
  AdamConfig adam;
  adam.base_lr = config.base_lr;
  adam.beta1 = config.adam_beta1;
  adam.beta2 = config.adam_beta2;
  adam.epsilon = config.adam_epsilon;
  adam.total_steps = static_cast<std::uint64_t>(config.epochs) * steps_per_epoch(train_size, config.batch_size);
  s.optimizer = Adam(adam, optimizer_tensor_sizes(s.model, s.proxies));
  return s;
}

/// Inputs of one mini-batch after augmentation.
struct BatchViews {
  std::vector<std::vector<double>> teacher;
  std::vector<std::vector<double>> student;  // empty in single-view mode
  std::vector<std::vector<double>> labels;   // L1-normalized
};

struct BatchGradients {
  ModelGradients model;
  Matrix proxies;
};

/// Batch means of every term plus the optimized objective
/// bundle.total + lambda_bceq * proxy_bceq.
struct BatchOutcome {
  LossBundle bundle;
  double proxy_bceq = 0.0;
  double objective = 0.0;
};

/// Which terms enter the objective; tests switch individual terms off.
struct ObjectiveTerms {
  bool hp = true;
  bool sdh = true;
  bool bceq = true;
  bool proxy_bceq = true;
};

/// Teacher codes detached from the graph: used as the fixed target of the
/// SdH term. The returned copy carries no tape, so no gradient can reach the
/// parameters through it.
inline std::vector<double> stop_gradient(const HashCode& teacher) {
  return std::vector<double>(teacher.values().begin(), teacher.values().end());
}

/// Forward pass, losses, and (if grads != nullptr) gradients of the batch
/// objective. HP and bce-Q use teacher codes; SdH pulls the student code
/// toward a detached copy of the teacher code.
inline BatchOutcome evaluate_batch(const HashModel& model, const ProxyBank& proxies, const BatchViews& views,
                                   const LossWeights& w, BatchGradients* grads, ObjectiveTerms terms = {}) {
  const std::size_t n = views.teacher.size();
  if (n == 0) throw InvalidInput("evaluate_batch: empty batch");
  if (views.labels.size() != n) throw ShapeError("evaluate_batch: label count does not match batch");
  const bool two_views = !views.student.empty();
  if (two_views && views.student.size() != n) throw ShapeError("evaluate_batch: student view count does not match");
  if (grads != nullptr) {
    grads->model = model.make_gradients();
    grads->proxies = Matrix(proxies.num_classes(), proxies.code_length());
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t k = model.code_length();

  BatchOutcome out;
  out.bundle.lambda_sdh = w.lambda_sdh;
  out.bundle.lambda_bceq = w.lambda_bceq;
  out.bundle.temperature = w.temperature;
  Tape teacher_tape, student_tape;
  std::vector<double> grad_h(k);
  for (std::size_t i = 0; i < n; ++i) {
    const HashCode h_t = model.forward(views.teacher[i], teacher_tape);
    const auto preds = proxy_predictions(proxies, h_t.values());
    const auto hp = hp_loss(views.labels[i], preds, w.temperature);
    const auto bq = bceq_loss(h_t.values(), w.sigma);
    out.bundle.hp += hp.loss * inv_n;
    out.bundle.bceq += bq.loss * inv_n;

    if (grads != nullptr) {
      std::fill(grad_h.begin(), grad_h.end(), 0.0);
      if (terms.hp) {
        std::vector<double> gp(hp.grad_pred);
        for (double& g : gp) g *= inv_n;
        backprop_proxy_predictions(proxies, h_t.values(), gp, grad_h, &grads->proxies);
      }
      if (terms.bceq)
        for (std::size_t j = 0; j < k; ++j) grad_h[j] += w.lambda_bceq * inv_n * bq.grad[j];
      model.backward(teacher_tape, grad_h, grads->model);
    }

    if (two_views) {
      const HashCode h_s = model.forward(views.student[i], student_tape);
      const auto target = stop_gradient(h_t);
      const auto sd = sdh_loss(target, h_s.values());
      out.bundle.sdh += sd.loss * inv_n;
      if (grads != nullptr && terms.sdh) {
        for (std::size_t j = 0; j < k; ++j) grad_h[j] = w.lambda_sdh * inv_n * sd.grad_student[j];
        model.backward(student_tape, grad_h, grads->model);
      }
    }
  }
  out.bundle.total = out.bundle.hp + w.lambda_sdh * out.bundle.sdh + w.lambda_bceq * out.bundle.bceq;

  const auto pb = proxy_bceq_loss(proxies, w.sigma);
  out.proxy_bceq = pb.loss;
  out.objective = out.bundle.total + w.lambda_bceq * out.proxy_bceq;
  if (grads != nullptr && terms.proxy_bceq) {
    auto dst = grads->proxies.flat();
    const auto src = pb.grad.flat();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w.lambda_bceq * src[j];
  }
  return out;
}

/// Augmented views of one training sample at a given epoch. Each view has
/// its own RNG stream keyed by (seed, epoch, sample, view), so the teacher
/// view is the same whether or not a student view is drawn.
inline std::vector<double> training_view(const TrainConfig& config, const Dataset& data, std::uint64_t epoch,
                                         std::size_t sample, std::uint64_t view) {
  Rng rng(derive_seed(config.seed, {stream::kView, epoch, sample, view}));
  const auto group = view == stream::kTeacher ? config.teacher_group() : config.student_group();
  return sample_transform(group, data.dim(), rng).apply(data.features.row(sample));
}

inline BatchViews make_batch(const TrainConfig& config, const Dataset& data, std::uint64_t epoch,
                             std::span<const std::size_t> indices) {
  BatchViews v;
  for (std::size_t idx : indices) {
    v.teacher.push_back(training_view(config, data, epoch, idx, stream::kTeacher));
    if (config.self_distillation) v.student.push_back(training_view(config, data, epoch, idx, stream::kStudent));
    v.labels.push_back(normalize_multilabel(data.multi_hot(idx)));
  }
  return v;
}

/// One optimizer step over encoder, head, and proxies jointly; proxies are
/// clamped to [-1, 1] afterwards. Returns the learning rate used.
inline double apply_gradients(TrainingState& state, BatchGradients& grads) {
  auto params = state.model.parameter_tensors();
  params.push_back(state.proxies.matrix().flat());
  auto gs = gradient_tensors(grads.model);
  gs.push_back(grads.proxies.flat());
  const double lr = state.optimizer.step(params, gs);
  state.proxies.clamp_rows();
  return lr;
}

struct StepRecord {
  std::uint64_t epoch = 0;
  std::size_t batch = 0;
  std::size_t batch_size = 0;
  BatchOutcome outcome;
  double lr = 0.0;
};

struct EpochStats {
  std::uint64_t epoch = 0;
  double hp = 0.0;
  double sdh = 0.0;
  double bceq = 0.0;
  double proxy_bceq = 0.0;
  double total = 0.0;  // hp + lambda_sdh sdh + lambda_bceq (bceq + proxy_bceq)
  double lr = 0.0;     // learning rate of the epoch's first step
  double wall_seconds = 0.0;
};

using StepObserver = std::function<void(const StepRecord&)>;

/// One shuffled pass over the training set. Reported terms are per-sample
/// means over the epoch.
inline EpochStats train_epoch(TrainingState& state, const Dataset& data, const TrainConfig& config,
                              const StepObserver& observer = {}) {
  const auto start = std::chrono::steady_clock::now();
  if (data.size() == 0) throw InvalidInput("train_epoch: empty training set");
  if (data.dim() != state.model.input_dim()) throw ShapeError("train_epoch: feature dim does not match model input");
  if (data.num_classes != state.proxies.num_classes())
    throw ShapeError("train_epoch: class count does not match proxies");
  const std::uint64_t epoch = state.epochs_completed;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(config.seed, {stream::kShuffle, epoch}));
  shuffle_rng.shuffle(std::span<std::size_t>(order));

  EpochStats stats;
  stats.epoch = epoch;
  const double inv_total = 1.0 / static_cast<double>(data.size());
  BatchGradients grads;
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
    const std::size_t end = std::min(order.size(), begin + config.batch_size);
    const std::span<const std::size_t> indices(order.data() + begin, end - begin);
    BatchOutcome outcome;
    try {
      const auto views = make_batch(config, data, epoch, indices);
      outcome = evaluate_batch(state.model, state.proxies, views, config.weights, &grads);
    } catch (const Error& e) {
      throw Error("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
    }
    const double lr = apply_gradients(state, grads);
    if (batch_index == 0) stats.lr = lr;
    const double w = static_cast<double>(indices.size()) * inv_total;
    stats.hp += w * outcome.bundle.hp;
    stats.sdh += w * outcome.bundle.sdh;
    stats.bceq += w * outcome.bundle.bceq;
    stats.proxy_bceq += w * outcome.proxy_bceq;
    if (observer) observer({epoch, batch_index, indices.size(), outcome, lr});
  }
  stats.total = stats.hp + config.weights.lambda_sdh * stats.sdh +
                config.weights.lambda_bceq * (stats.bceq + stats.proxy_bceq);
  ++state.epochs_completed;
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

/// Continuous codes of every row, optionally after a transform drawn per row
/// from `group` with stream seed derive_seed(seed, {row}).
inline std::vector<HashCode> encode_continuous(const HashModel& model, const Matrix& features,
                                               const TransformGroup* group = nullptr, std::uint64_t seed = 0) {
  std::vector<HashCode> out;
  out.reserve(features.rows());
  Tape tape;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    if (group == nullptr) {
      out.push_back(model.forward(features.row(i), tape));
    } else {
      Rng rng(derive_seed(seed, {i}));
      const auto x = sample_transform(*group, features.cols(), rng).apply(features.row(i));
      out.push_back(model.forward(x, tape));
    }
  }
  return out;
}

inline std::vector<BinaryCode> encode_binary(const HashModel& model, const Matrix& features,
                                             const TransformGroup* group = nullptr, std::uint64_t seed = 0) {
  std::vector<BinaryCode> out;
  for (const auto& h : encode_continuous(model, features, group, seed)) out.push_back(quantize(h));
  return out;
}

// Checkpoint: "DHDK", u16 version, resolved train config as JSON text,
// epochs_completed, model layers, proxies, and Adam state. Doubles are stored
// as raw little-endian IEEE-754 so restore is bit-exact.

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {
inline void write_matrix(std::ostream& out, const Matrix& m) {
  io::write_le<std::uint64_t>(out, m.rows());
  io::write_le<std::uint64_t>(out, m.cols());
  for (double v : m.flat()) io::write_f64(out, v);
}
inline Matrix read_matrix(std::istream& in) {
  const auto r = io::read_le<std::uint64_t>(in);
  const auto c = io::read_le<std::uint64_t>(in);
  if (r > (1ULL << 24) || c > (1ULL << 24)) throw IoError("checkpoint: matrix shape out of range");
  Matrix m(r, c);
  for (double& v : m.flat()) v = io::read_f64(in);
  return m;
}
inline void write_vector(std::ostream& out, std::span<const double> v) {
  io::write_le<std::uint64_t>(out, v.size());
  for (double x : v) io::write_f64(out, x);
}
inline std::vector<double> read_vector(std::istream& in) {
  const auto n = io::read_le<std::uint64_t>(in);
  if (n > (1ULL << 30)) throw IoError("checkpoint: vector length out of range");
  std::vector<double> v(n);
  for (double& x : v) x = io::read_f64(in);
  return v;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const TrainingState& s, const TrainConfig& config) {
  io::write_magic(out, "DHDK");
  io::write_le<std::uint16_t>(out, kCheckpointVersion);
  io::write_string(out, to_json(config).dump());
  io::write_le<std::uint64_t>(out, s.epochs_completed);
  io::write_le<std::uint64_t>(out, s.model.layers().size());
  for (const auto& l : s.model.layers()) {
    detail::write_matrix(out, l.weight);
    detail::write_vector(out, l.bias);
  }
  detail::write_matrix(out, s.proxies.matrix());
  const auto& a = s.optimizer.config();
  io::write_f64(out, a.base_lr);
  io::write_f64(out, a.beta1);
  io::write_f64(out, a.beta2);
  io::write_f64(out, a.epsilon);
  io::write_le<std::uint64_t>(out, a.total_steps);
  io::write_le<std::uint64_t>(out, s.optimizer.step_count());
  io::write_le<std::uint64_t>(out, s.optimizer.first_moments().size());
  for (std::size_t t = 0; t < s.optimizer.first_moments().size(); ++t) {
    detail::write_vector(out, s.optimizer.first_moments()[t]);
    detail::write_vector(out, s.optimizer.second_moments()[t]);
  }
  if (!out) throw IoError("checkpoint: write failed");
}

struct Checkpoint {
  TrainConfig config;
  TrainingState state;
};

inline Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, "DHDK", "checkpoint");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(nlohmann::json::parse(io::read_string(in)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: corrupt config: ") + e.what());
  }
  ck.state.epochs_completed = io::read_le<std::uint64_t>(in);
  ck.state.model = HashModel::zeros(ck.config.encoder);
  const auto layers = io::read_le<std::uint64_t>(in);
  if (layers != ck.state.model.layers().size()) throw ShapeError("checkpoint: layer count does not match encoder");
  for (auto& l : ck.state.model.layers()) {
    auto w = detail::read_matrix(in);
    auto b = detail::read_vector(in);
    if (w.rows() != l.weight.rows() || w.cols() != l.weight.cols() || b.size() != l.bias.size())
      throw ShapeError("checkpoint: layer shape does not match encoder");
    l.weight = std::move(w);
    l.bias = std::move(b);
  }
  ck.state.proxies = ProxyBank(detail::read_matrix(in));
  AdamConfig a;
  a.base_lr = io::read_f64(in);
  a.beta1 = io::read_f64(in);
  a.beta2 = io::read_f64(in);
  a.epsilon = io::read_f64(in);
  a.total_steps = io::read_le<std::uint64_t>(in);
  const auto step = io::read_le<std::uint64_t>(in);
  const auto tensors = io::read_le<std::uint64_t>(in);
  const auto sizes = optimizer_tensor_sizes(ck.state.model, ck.state.proxies);
  if (tensors != sizes.size()) throw ShapeError("checkpoint: optimizer tensor count mismatch");
  ck.state.optimizer = Adam(a, sizes);
  ck.state.optimizer.set_step_count(step);
  for (std::size_t t = 0; t < tensors; ++t) {
    ck.state.optimizer.first_moments()[t] = detail::read_vector(in);
    ck.state.optimizer.second_moments()[t] = detail::read_vector(in);
    if (ck.state.optimizer.first_moments()[t].size() != sizes[t] ||
        ck.state.optimizer.second_moments()[t].size() != sizes[t])
      throw ShapeError("checkpoint: optimizer moment shape mismatch");
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainingState& s, const TrainConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, s, config);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

/// Loads a checkpoint and checks it against the shapes `expected` asks for.
inline TrainingState restore(const std::filesystem::path& path, const TrainConfig& expected) {
  auto ck = load_checkpoint(path);
  auto mismatch = [](const char* field, std::size_t got, std::size_t want) {
    throw ShapeError(std::string("checkpoint: ") + field + " mismatch (checkpoint " + std::to_string(got) +
                     ", expected " + std::to_string(want) + ")");
  };
  if (ck.config.encoder.code_length != expected.encoder.code_length)
    mismatch("code_length", ck.config.encoder.code_length, expected.encoder.code_length);
  if (ck.config.encoder.input_dim != expected.encoder.input_dim)
    mismatch("input_dim", ck.config.encoder.input_dim, expected.encoder.input_dim);
  if (ck.config.num_classes != expected.num_classes)
    mismatch("num_classes", ck.config.num_classes, expected.num_classes);
  if (ck.config.encoder.hidden_dims != expected.encoder.hidden_dims)
    throw ShapeError("checkpoint: hidden_dims mismatch");
  return std::move(ck.state);
}

}  // namespace dhd
