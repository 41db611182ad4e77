#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dhd/dataset.hpp"
#include "dhd/error.hpp"
#include "dhd/retrieval.hpp"
#include "dhd/trainer.hpp"
#include "json.hpp"

namespace dhd {

struct DatasetFiles {
  std::filesystem::path train_features, train_labels;
  std::filesystem::path query_features, query_labels;
  std::filesystem::path database_features, database_labels;

  /// Standard file names inside a data directory.
  static DatasetFiles in_directory(const std::filesystem::path& dir) {
    return {dir / "train_features.csv",    dir / "train_labels.txt",  dir / "query_features.csv",
            dir / "query_labels.txt",      dir / "database_features.csv", dir / "database_labels.txt"};
  }

  std::vector<std::filesystem::path> all() const {
    return {train_features, train_labels, query_features, query_labels, database_features, database_labels};
  }
};

struct AblationSpec {
  std::vector<std::string> variants = {"HP", "HP+bceQ", "HP+SdH", "HP+SdH+bceQ"};
  std::vector<std::size_t> bit_lengths = {16, 32, 64};
  std::vector<std::uint64_t> seeds;  // empty: the experiment seed only
  /// Occurrence scale of the single view used by variants without SdH
  /// (1.0: train on student-strength views only).
  double no_sdh_scale = 1.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  bool synthetic = true;
  SyntheticSpec synthetic_spec;
  DatasetFiles files;
  TrainConfig train;  // input_dim and num_classes are filled from the data
  EvalOptions eval;
  AblationSpec ablation;
  std::vector<double> sweep_scales = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::uint64_t transform_seed = 7;

  std::filesystem::path data_dir() const { return output_dir / "data"; }
  DatasetFiles dataset_files() const { return synthetic ? DatasetFiles::in_directory(data_dir()) : files; }

  void validate(bool check_paths = true) const {
    if (output_dir.empty()) throw InvalidConfig("output_dir must not be empty");
    if (synthetic) {
      synthetic_spec.validate();
    } else if (check_paths) {
      for (const auto& p : files.all())
        if (p.empty() || !std::filesystem::exists(p))
          throw InvalidConfig("dataset.files: path '" + p.string() + "' does not exist");
    }
    train.weights.validate();
    train.family.validate();
    if (train.encoder.code_length == 0) throw InvalidConfig("train.code_length must be >= 1");
    if (train.batch_size == 0) throw InvalidConfig("train.batch_size must be >= 1");
    if (train.epochs == 0) throw InvalidConfig("train.epochs must be >= 1");
    if (!(train.teacher_scale >= 0.0 && train.teacher_scale <= 1.0))
      throw InvalidConfig("train.teacher_scale must be in [0, 1]");
    if (!(train.base_lr > 0.0)) throw InvalidConfig("train.base_lr must be > 0");
    if (eval.top_m == 0) throw InvalidConfig("eval.top_m must be >= 1");
    for (double s : sweep_scales)
      if (!(s >= 0.0 && s <= 1.0)) throw InvalidConfig("sweep.scales entries must be in [0, 1]");
    for (std::size_t b : ablation.bit_lengths)
      if (b == 0) throw InvalidConfig("ablation.bit_lengths entries must be >= 1");
    if (!(ablation.no_sdh_scale >= 0.0 && ablation.no_sdh_scale <= 1.0))
      throw InvalidConfig("ablation.no_sdh_scale must be in [0, 1]");
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  auto& d = j["dataset"];
  d["source"] = c.synthetic ? "synthetic" : "files";
  if (c.synthetic) {
    const auto& s = c.synthetic_spec;
    d["synthetic"] = {{"num_classes", s.num_classes}, {"dim", s.dim},           {"spread", s.spread},
                      {"train_size", s.train_size},   {"query_size", s.query_size}, {"database_size", s.database_size},
                      {"cooccurrence", s.cooccurrence}};
  } else {
    d["files"] = {{"train_features", c.files.train_features.string()},
                  {"train_labels", c.files.train_labels.string()},
                  {"query_features", c.files.query_features.string()},
                  {"query_labels", c.files.query_labels.string()},
                  {"database_features", c.files.database_features.string()},
                  {"database_labels", c.files.database_labels.string()}};
  }
  j["train"] = to_json(c.train);
  j["train"].erase("seed");
  j["eval"] = {{"top_m", c.eval.top_m}, {"precision_ranks", c.eval.precision_ranks}};
  j["ablation"] = {{"variants", c.ablation.variants},
                   {"bit_lengths", c.ablation.bit_lengths},
                   {"seeds", c.ablation.seeds},
                   {"no_sdh_scale", c.ablation.no_sdh_scale}};
  j["sweep"] = {{"scales", c.sweep_scales}, {"transform_seed", c.transform_seed}};
  return j;
}

/// Parses an experiment config. The RNG seed must be given explicitly.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (!j.contains("seed")) throw InvalidConfig("seed: required field is missing");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.value("output_dir", c.output_dir.string());
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      const std::string source = d.value("source", "synthetic");
      if (source == "synthetic") {
        c.synthetic = true;
        if (d.contains("synthetic")) {
          const auto& s = d.at("synthetic");
          auto& spec = c.synthetic_spec;
          spec.num_classes = s.value("num_classes", spec.num_classes);
          spec.dim = s.value("dim", spec.dim);
          spec.spread = s.value("spread", spec.spread);
          spec.train_size = s.value("train_size", spec.train_size);
          spec.query_size = s.value("query_size", spec.query_size);
          spec.database_size = s.value("database_size", spec.database_size);
          if (s.contains("cooccurrence"))
            spec.cooccurrence = s.at("cooccurrence").get<std::vector<std::vector<double>>>();
        }
      } else if (source == "files") {
        c.synthetic = false;
        const auto& f = d.at("files");
        c.files.train_features = f.at("train_features").get<std::string>();
        c.files.train_labels = f.at("train_labels").get<std::string>();
        c.files.query_features = f.at("query_features").get<std::string>();
        c.files.query_labels = f.at("query_labels").get<std::string>();
        c.files.database_features = f.at("database_features").get<std::string>();
        c.files.database_labels = f.at("database_labels").get<std::string>();
      } else {
        throw InvalidConfig("dataset.source must be 'synthetic' or 'files', got '" + source + "'");
      }
    }
    TrainConfig base;
    base.encoder.hidden_dims = {64};
    if (j.contains("train")) base = train_config_from_json(j.at("train"), base);
    base.seed = c.seed;
    c.train = base;
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.top_m = e.value("top_m", c.eval.top_m);
      if (e.contains("precision_ranks"))
        c.eval.precision_ranks = e.at("precision_ranks").get<std::vector<std::size_t>>();
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      if (a.contains("variants")) c.ablation.variants = a.at("variants").get<std::vector<std::string>>();
      if (a.contains("bit_lengths")) c.ablation.bit_lengths = a.at("bit_lengths").get<std::vector<std::size_t>>();
      if (a.contains("seeds")) c.ablation.seeds = a.at("seeds").get<std::vector<std::uint64_t>>();
      c.ablation.no_sdh_scale = a.value("no_sdh_scale", c.ablation.no_sdh_scale);
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      if (s.contains("scales")) c.sweep_scales = s.at("scales").get<std::vector<double>>();
      c.transform_seed = s.value("transform_seed", c.transform_seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("config: ") + e.what());
  }
  return c;
}

/// Applies "a.b.c=value" overrides to a JSON document. The value is parsed
/// as JSON when possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidConfig("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw InvalidConfig("override '" + assignment + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
}

}  // namespace dhd
