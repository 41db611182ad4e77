#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dhd/config.hpp"
#include "dhd/dataset.hpp"
#include "dhd/pipeline.hpp"
#include "dhd/random.hpp"

namespace dhd {

namespace stream {
inline constexpr std::uint64_t kData = 99;
}  // namespace stream

struct ExperimentData {
  Dataset train, query, database;
};

inline ExperimentData generate_experiment_data(const ExperimentConfig& c) {
  Rng rng(derive_seed(c.seed, {stream::kData}));
  auto s = generate_synthetic(c.synthetic_spec, rng);
  return {std::move(s.train), std::move(s.query), std::move(s.database)};
}

inline void save_experiment_data(const ExperimentData& d, const DatasetFiles& f) {
  for (const auto& p : f.all())
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  save_dataset_text(d.train, f.train_features, f.train_labels);
  save_dataset_text(d.query, f.query_features, f.query_labels);
  save_dataset_text(d.database, f.database_features, f.database_labels);
}

inline ExperimentData load_experiment_data(const DatasetFiles& f) {
  ExperimentData d{load_dataset_text(f.train_features, f.train_labels),
                   load_dataset_text(f.query_features, f.query_labels),
                   load_dataset_text(f.database_features, f.database_labels)};
  const std::size_t dim = d.train.dim();
  if (d.query.dim() != dim || d.database.dim() != dim)
    throw ShapeError("dataset: train/query/database feature dims differ");
  const std::size_t classes = std::max({d.train.num_classes, d.query.num_classes, d.database.num_classes});
  d.train.num_classes = d.query.num_classes = d.database.num_classes = classes;
  return d;
}

/// Synthetic configs regenerate their data in memory (the text tables
/// round-trip exactly, so this matches what gen-data writes).
inline ExperimentData experiment_data(const ExperimentConfig& c) {
  return c.synthetic ? generate_experiment_data(c) : load_experiment_data(c.files);
}

/// The training config with the data-dependent shapes filled in.
inline TrainConfig resolve_train_config(const ExperimentConfig& c, const ExperimentData& d) {
  TrainConfig t = c.train;
  t.encoder.input_dim = d.train.dim();
  t.num_classes = d.train.num_classes;
  t.seed = c.seed;
  t.validate();
  return t;
}

struct LossVariant {
  std::string name;
  bool sdh = false;
  bool bceq = false;
};

/// Parses names like "HP", "HP+SdH", "HP+SdH+bceQ".
inline LossVariant parse_variant(const std::string& name) {
  LossVariant v{name};
  bool hp = false;
  for (auto part : detail::split(name, '+')) {
    if (part == "HP") hp = true;
    else if (part == "SdH") v.sdh = true;
    else if (part == "bceQ") v.bceq = true;
    else throw InvalidConfig("ablation.variants: unknown term '" + std::string(part) + "' in '" + name + "'");
  }
  if (!hp) throw InvalidConfig("ablation.variants: '" + name + "' must include HP");
  return v;
}

/// Without SdH a single view is trained, drawn at `no_sdh_scale`.
inline TrainConfig variant_config(TrainConfig base, const LossVariant& v, double no_sdh_scale) {
  if (!v.sdh) {
    base.self_distillation = false;
    base.teacher_scale = no_sdh_scale;
  }
  if (!v.bceq) base.weights.lambda_bceq = 0.0;
  return base;
}

/// Mean Hamming shift of `features` under the family scaled by each s.
inline std::vector<double> hamming_shift_sweep(const HashModel& model, const Matrix& features,
                                               const TransformGroup& family, std::span<const double> scales,
                                               std::uint64_t seed) {
  std::vector<double> out;
  for (double s : scales) {
    const auto group = family.scaled(s);
    out.push_back(mean_hamming_shift(model, features, group, seed));
  }
  return out;
}

struct DeformationResult {
  std::string name;
  double map_at_m = 0.0;
};

inline std::vector<DeformationResult> deformation_table(const HashModel& model, const Dataset& query,
                                                        const Dataset& database, const EvalOptions& options,
                                                        std::uint64_t seed) {
  const auto index = index_dataset(model, database);
  std::vector<DeformationResult> out;
  for (const auto& d : unseen_deformations()) {
    const auto codes = encode_binary(model, query.features, &d.group, seed);
    out.push_back({d.name, evaluate(index, codes, query.labels, options).map_at_m});
  }
  return out;
}

struct VariantCell {
  double map_at_m = 0.0;
  std::vector<double> shifts;         // one per sweep scale
  std::vector<double> deformation_map;  // one per unseen deformation
};

struct AblationResult {
  std::vector<std::string> variants;
  std::vector<std::size_t> bit_lengths;
  std::vector<double> scales;
  std::vector<std::string> deformations;
  std::size_t seeds = 0;
  /// cells[v][b], averaged over seeds.
  std::vector<std::vector<VariantCell>> cells;
};

using AblationProgress = std::function<void(const std::string& variant, std::size_t bits, std::uint64_t seed)>;

inline AblationResult run_ablation(const ExperimentConfig& c, const AblationProgress& progress = {}) {
  AblationResult r;
  r.variants = c.ablation.variants;
  r.bit_lengths = c.ablation.bit_lengths;
  r.scales = c.sweep_scales;
  for (const auto& d : unseen_deformations()) r.deformations.push_back(d.name);
  const auto seeds = c.ablation.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.ablation.seeds;
  r.seeds = seeds.size();
  std::vector<LossVariant> variants;
  for (const auto& name : r.variants) variants.push_back(parse_variant(name));

  r.cells.assign(variants.size(), std::vector<VariantCell>(r.bit_lengths.size()));
  for (auto& row : r.cells)
    for (auto& cell : row) {
      cell.shifts.assign(r.scales.size(), 0.0);
      cell.deformation_map.assign(r.deformations.size(), 0.0);
    }
  const double inv = 1.0 / static_cast<double>(seeds.size());
  for (std::uint64_t seed : seeds) {
    ExperimentConfig seeded = c;
    seeded.seed = seed;
    const auto data = experiment_data(seeded);
    const auto base = resolve_train_config(seeded, data);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      for (std::size_t b = 0; b < r.bit_lengths.size(); ++b) {
        if (progress) progress(variants[v].name, r.bit_lengths[b], seed);
        auto tc = variant_config(base, variants[v], c.ablation.no_sdh_scale);
        tc.encoder.code_length = r.bit_lengths[b];
        const auto state = train_model(tc, data.train);
        auto& cell = r.cells[v][b];
        cell.map_at_m += inv * evaluate_model(state.model, data.query, data.database, c.eval).map_at_m;
        const auto shifts =
            hamming_shift_sweep(state.model, data.query.features, c.train.family, r.scales, c.transform_seed);
        for (std::size_t s = 0; s < shifts.size(); ++s) cell.shifts[s] += inv * shifts[s];
        const auto deform = deformation_table(state.model, data.query, data.database, c.eval, c.transform_seed);
        for (std::size_t d = 0; d < deform.size(); ++d) cell.deformation_map[d] += inv * deform[d].map_at_m;
      }
    }
  }
  return r;
}

/// Rows are variants, columns bit lengths.
inline std::string ablation_map_csv(const AblationResult& r) {
  std::string out = "variant";
  for (auto b : r.bit_lengths) out += "," + std::to_string(b);
  out += '\n';
  for (std::size_t v = 0; v < r.variants.size(); ++v) {
    out += r.variants[v];
    for (const auto& cell : r.cells[v]) {
      out += ',';
      detail::append_double(out, cell.map_at_m);
    }
    out += '\n';
  }
  return out;
}

inline std::string ablation_shift_csv(const AblationResult& r) {
  std::string out = "variant,bits,s_t,mean_hamming_shift\n";
  for (std::size_t v = 0; v < r.variants.size(); ++v)
    for (std::size_t b = 0; b < r.bit_lengths.size(); ++b)
      for (std::size_t s = 0; s < r.scales.size(); ++s) {
        out += r.variants[v] + ',' + std::to_string(r.bit_lengths[b]) + ',';
        detail::append_double(out, r.scales[s]);
        out += ',';
        detail::append_double(out, r.cells[v][b].shifts[s]);
        out += '\n';
      }
  return out;
}

inline std::string ablation_deformation_csv(const AblationResult& r) {
  std::string out = "variant,bits,deformation,map\n";
  for (std::size_t v = 0; v < r.variants.size(); ++v)
    for (std::size_t b = 0; b < r.bit_lengths.size(); ++b)
      for (std::size_t d = 0; d < r.deformations.size(); ++d) {
        out += r.variants[v] + ',' + std::to_string(r.bit_lengths[b]) + ',' + r.deformations[d] + ',';
        detail::append_double(out, r.cells[v][b].deformation_map[d]);
        out += '\n';
      }
  return out;
}

/// Expected mAP@M when the database order is a uniformly random permutation,
/// given each query's relevant count. With r relevant items among the top M,
/// the relevant positions form a uniform r-subset of 1..M, which gives
/// E[AP | r] = (H_M + (r-1)(M-H_M)/(M-1)) / M.
inline double chance_map(std::span<const LabelSet> query_labels, std::span<const LabelSet> database_labels,
                         std::size_t m) {
  if (query_labels.empty()) throw InvalidInput("chance_map: no queries");
  const std::size_t n = database_labels.size();
  if (n == 0) throw InvalidInput("chance_map: empty database");
  const std::size_t cut = std::min(m, n);
  double harmonic = 0.0;
  for (std::size_t k = 1; k <= cut; ++k) harmonic += 1.0 / static_cast<double>(k);
  auto ap_given = [&](std::size_t r) {
    if (cut == 1) return 1.0;
    const double rr = static_cast<double>(r), mm = static_cast<double>(cut);
    return (harmonic + (rr - 1.0) * (mm - harmonic) / (mm - 1.0)) / mm;
  };
  auto log_choose = [](double a, double b) { return std::lgamma(a + 1) - std::lgamma(b + 1) - std::lgamma(a - b + 1); };

  double total = 0.0;
  for (const auto& q : query_labels) {
    std::size_t relevant = 0;
    for (const auto& d : database_labels) relevant += shares_label(q, d) ? 1 : 0;
    double expected = 0.0;
    const double big_n = static_cast<double>(n), big_r = static_cast<double>(relevant), mm = static_cast<double>(cut);
    for (std::size_t r = 1; r <= std::min(relevant, cut); ++r) {
      if (cut - r > n - relevant) continue;
      const double rr = static_cast<double>(r);
      const double logp = log_choose(big_r, rr) + log_choose(big_n - big_r, mm - rr) - log_choose(big_n, mm);
      expected += std::exp(logp) * ap_given(r);
    }
    total += expected;
  }
  return total / static_cast<double>(query_labels.size());
}

}  // namespace dhd
