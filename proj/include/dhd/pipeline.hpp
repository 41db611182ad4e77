#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhd/augment.hpp"
#include "dhd/codes.hpp"
#include "dhd/dataset.hpp"
#include "dhd/retrieval.hpp"
#include "dhd/trainer.hpp"

namespace dhd {

/// Trains for config.epochs from a fresh state.
inline TrainingState train_model(const TrainConfig& config, const Dataset& train,
                                 std::vector<EpochStats>* log = nullptr) {
  auto state = init_training(config, train.size());
  while (state.epochs_completed < config.epochs) {
    auto stats = train_epoch(state, train, config);
    if (log != nullptr) log->push_back(stats);
  }
  return state;
}

/// Continues training a restored state until config.epochs.
inline void resume_training(TrainingState& state, const TrainConfig& config, const Dataset& train,
                            std::vector<EpochStats>* log = nullptr) {
  while (state.epochs_completed < config.epochs) {
    auto stats = train_epoch(state, train, config);
    if (log != nullptr) log->push_back(stats);
  }
}

inline RetrievalIndex index_dataset(const HashModel& model, const Dataset& database) {
  return build_index(model.code_length(), encode_binary(model, database.features), database.labels,
                     database.num_classes);
}

/// Encodes clean database items and (optionally deformed) queries, then
/// evaluates retrieval.
inline EvalReport evaluate_model(const HashModel& model, const Dataset& query, const Dataset& database,
                                 const EvalOptions& options, const TransformGroup* query_deformation = nullptr,
                                 std::uint64_t deformation_seed = 0) {
  const auto index = index_dataset(model, database);
  const auto codes = encode_binary(model, query.features, query_deformation, deformation_seed);
  return evaluate(index, codes, query.labels, options);
}

/// Mean Hamming distance between codes of clean inputs and inputs under a
/// transform drawn from `group`.
inline double mean_hamming_shift(const HashModel& model, const Matrix& features, const TransformGroup& group,
                                 std::uint64_t seed) {
  if (features.rows() == 0) throw InvalidInput("mean_hamming_shift: no samples");
  const auto clean = encode_binary(model, features);
  const auto moved = encode_binary(model, features, &group, seed);
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) total += static_cast<double>(hamming(clean[i], moved[i]));
  return total / static_cast<double>(clean.size());
}

struct BitStatistics {
  /// Mean over bit positions of the binary entropy (base 2) of the sign
  /// distribution; 1 means every bit is +1 for exactly half the codes.
  double mean_bit_entropy = 0.0;
  /// Fraction of code elements with |h_k| above the threshold.
  double saturated_fraction = 0.0;
};

inline BitStatistics bit_statistics(std::span<const HashCode> codes, double threshold = 0.9) {
  if (codes.empty()) throw InvalidInput("bit_statistics: no codes");
  const std::size_t k = codes.front().size();
  BitStatistics s;
  std::size_t saturated = 0;
  for (std::size_t b = 0; b < k; ++b) {
    std::size_t positive = 0;
    for (const auto& h : codes) {
      if (h.size() != k) throw ShapeError("bit_statistics: mixed code lengths");
      if (h[b] >= 0.0) ++positive;
      if (std::abs(h[b]) > threshold) ++saturated;
    }
    const double p = static_cast<double>(positive) / static_cast<double>(codes.size());
    if (p > 0.0 && p < 1.0) s.mean_bit_entropy += -(p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p));
  }
  s.mean_bit_entropy /= static_cast<double>(k);
  s.saturated_fraction = static_cast<double>(saturated) / static_cast<double>(k * codes.size());
  return s;
}

}  // namespace dhd
