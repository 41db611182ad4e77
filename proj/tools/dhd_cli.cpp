// dhd: experiment front-end for deep hashing with self-distillation.
//
//   dhd gen-data    --config exp.json
//   dhd train       --config exp.json [--resume] [--stop-after N]
//   dhd encode      --config exp.json
//   dhd eval        --config exp.json
//   dhd ablate      --config exp.json
//   dhd sweep-st    --config exp.json
//   dhd deform-eval --config exp.json
//
// Every subcommand writes <out>/resolved_config.json; passing that file back
// with --config reproduces the run.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dhd/config.hpp"
#include "dhd/experiments.hpp"
#include "dhd/pipeline.hpp"
#include "dhd/retrieval.hpp"
#include "dhd/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs, code_length, batch_size, top_m;
  std::optional<double> lambda_sdh, lambda_bceq, spread;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "experiment config (JSON)");
  cmd->add_option("--set", o.overrides, "override a config field, e.g. --set train.epochs=20");
  cmd->add_option("--seed", o.seed, "seed");
  cmd->add_option("-o,--out", o.out, "output_dir");
  cmd->add_option("--epochs", o.epochs, "train.epochs");
  cmd->add_option("--code-length", o.code_length, "train.code_length (K)");
  cmd->add_option("--batch-size", o.batch_size, "train.batch_size");
  cmd->add_option("--lambda-sdh", o.lambda_sdh, "train.lambda_sdh");
  cmd->add_option("--lambda-bceq", o.lambda_bceq, "train.lambda_bceq");
  cmd->add_option("--spread", o.spread, "dataset.synthetic.spread");
  cmd->add_option("--top-m", o.top_m, "eval.top_m");
}

template <class T>
void set_if(nlohmann::json& j, const char* key, const std::optional<T>& v) {
  if (v) dhd::apply_override(j, std::string(key) + "=" + nlohmann::json(*v).dump());
}

dhd::ExperimentConfig resolve(const CommonOptions& o, bool check_paths = true) {
  nlohmann::json j = o.config_path.empty() ? nlohmann::json::object() : dhd::read_json_file(o.config_path);
  set_if(j, "seed", o.seed);
  set_if(j, "output_dir", o.out);
  set_if(j, "train.epochs", o.epochs);
  set_if(j, "train.code_length", o.code_length);
  set_if(j, "train.batch_size", o.batch_size);
  set_if(j, "train.lambda_sdh", o.lambda_sdh);
  set_if(j, "train.lambda_bceq", o.lambda_bceq);
  set_if(j, "dataset.synthetic.spread", o.spread);
  set_if(j, "eval.top_m", o.top_m);
  for (const auto& s : o.overrides) dhd::apply_override(j, s);
  auto c = dhd::experiment_config_from_json(j);
  c.validate(check_paths);
  fs::create_directories(c.output_dir);
  dhd::detail::write_file(c.output_dir / "resolved_config.json", dhd::to_json(c).dump(2) + "\n");
  return c;
}

fs::path checkpoint_path(const dhd::ExperimentConfig& c) { return c.output_dir / "checkpoint.bin"; }
fs::path codes_dir(const dhd::ExperimentConfig& c) { return c.output_dir / "codes"; }

std::string log_row(const dhd::EpochStats& s) {
  std::string row = std::to_string(s.epoch);
  for (double v : {s.hp, s.sdh, s.bceq, s.proxy_bceq, s.total, s.lr}) {
    row += ',';
    dhd::detail::append_double(row, v);
  }
  return row + '\n';
}

const char* kLogHeader = "epoch,hp,sdh,bceq,proxy_bceq,total,lr\n";

// Keeps the header plus the first `epochs` rows of an existing log.
std::string truncated_log(const fs::path& path, std::uint64_t epochs, const char* header) {
  std::string out = header;
  if (!fs::exists(path)) return out;
  std::istringstream in(dhd::detail::read_file(path));
  std::string line;
  std::getline(in, line);
  for (std::uint64_t i = 0; i < epochs && std::getline(in, line); ++i) out += line + '\n';
  return out;
}

// Written to a temporary name first so an interrupted save keeps the
// previous checkpoint intact.
void save_checkpoint_atomic(const fs::path& path, const dhd::TrainingState& s, const dhd::TrainConfig& tc) {
  const fs::path tmp = path.string() + ".tmp";
  dhd::save_checkpoint(tmp, s, tc);
  fs::rename(tmp, path);
}

dhd::TrainingState load_trained(const dhd::ExperimentConfig& c, const dhd::TrainConfig& tc) {
  if (!fs::exists(checkpoint_path(c)))
    throw dhd::IoError("no checkpoint at " + checkpoint_path(c).string() + "; run `dhd train` first");
  return dhd::restore(checkpoint_path(c), tc);
}

int cmd_gen_data(const CommonOptions& o, bool binary) {
  const auto c = resolve(o);
  if (!c.synthetic) throw dhd::InvalidConfig("dataset.source: gen-data needs a synthetic dataset");
  const auto data = dhd::generate_experiment_data(c);
  const auto files = c.dataset_files();
  dhd::save_experiment_data(data, files);
  if (binary) {
    dhd::save_dataset_binary(data.train, c.data_dir() / "train.bin");
    dhd::save_dataset_binary(data.query, c.data_dir() / "query.bin");
    dhd::save_dataset_binary(data.database, c.data_dir() / "database.bin");
  }
  std::cout << "wrote " << data.train.size() << " train, " << data.query.size() << " query, "
            << data.database.size() << " database samples to " << c.data_dir().string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o, bool resume, std::optional<std::size_t> stop_after) {
  const auto c = resolve(o);
  const auto data = dhd::experiment_data(c);
  const auto tc = dhd::resolve_train_config(c, data);
  const auto ck = checkpoint_path(c);
  const auto log_path = c.output_dir / "train_log.csv";
  const auto timing_path = c.output_dir / "timing.csv";

  dhd::TrainingState state;
  std::string log = kLogHeader;
  std::string timing = "epoch,wall_seconds\n";
  if (resume && fs::exists(ck)) {
    state = dhd::restore(ck, tc);
    log = truncated_log(log_path, state.epochs_completed, kLogHeader);
    timing = truncated_log(timing_path, state.epochs_completed, "epoch,wall_seconds\n");
    std::cerr << "resuming at epoch " << state.epochs_completed << "\n";
  } else {
    state = dhd::init_training(tc, data.train.size());
  }
  dhd::detail::write_file(log_path, log);
  dhd::detail::write_file(timing_path, timing);

  std::size_t run_here = 0;
  while (state.epochs_completed < tc.epochs && (!stop_after || run_here++ < *stop_after)) {
    const auto stats = dhd::train_epoch(state, data.train, tc);
    save_checkpoint_atomic(ck, state, tc);
    const auto row = log_row(stats);
    log += row;
    timing += std::to_string(stats.epoch) + ',' + std::to_string(stats.wall_seconds) + '\n';
    dhd::detail::write_file(log_path, log);
    dhd::detail::write_file(timing_path, timing);
    std::cout << row << std::flush;
  }
  return 0;
}

int cmd_encode(const CommonOptions& o) {
  const auto c = resolve(o);
  const auto data = dhd::experiment_data(c);
  const auto tc = dhd::resolve_train_config(c, data);
  const auto state = load_trained(c, tc);
  fs::create_directories(codes_dir(c));
  const std::size_t k = tc.code_length();
  auto write = [&](const dhd::Dataset& d, const std::string& name) {
    auto index = dhd::build_index(k, dhd::encode_binary(state.model, d.features), d.labels, d.num_classes);
    dhd::save_index(index, codes_dir(c) / (name + ".codes"), codes_dir(c) / (name + "_labels.txt"));
  };
  write(data.query, "query");
  write(data.database, "database");
  std::cout << "encoded " << data.query.size() << " queries and " << data.database.size() << " database items (K="
            << k << ") into " << codes_dir(c).string() << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o) {
  const auto c = resolve(o);
  const auto dir = codes_dir(c);
  const auto db = dhd::load_index(dir / "database.codes", dir / "database_labels.txt");
  const auto query_file = dhd::load_codes(dir / "query.codes");
  const auto [query_labels, classes] = dhd::parse_labels(dhd::detail::read_file(dir / "query_labels.txt"));
  (void)classes;
  const auto report = dhd::evaluate(db, query_file.codes, query_labels, c.eval);
  dhd::write_report(report, c.output_dir, "eval");
  std::cout << "mAP@" << report.top_m << " = " << report.map_at_m << " over " << report.num_queries << " queries\n";
  return 0;
}

int cmd_ablate(const CommonOptions& o) {
  const auto c = resolve(o);
  const auto r = dhd::run_ablation(c, [](const std::string& v, std::size_t bits, std::uint64_t seed) {
    std::cerr << "training " << v << " K=" << bits << " seed=" << seed << "\n";
  });
  dhd::detail::write_file(c.output_dir / "ablation_map.csv", dhd::ablation_map_csv(r));
  dhd::detail::write_file(c.output_dir / "ablation_shift.csv", dhd::ablation_shift_csv(r));
  dhd::detail::write_file(c.output_dir / "ablation_deform.csv", dhd::ablation_deformation_csv(r));
  std::cout << dhd::ablation_map_csv(r);
  return 0;
}

int cmd_sweep_st(const CommonOptions& o) {
  const auto c = resolve(o);
  const auto data = dhd::experiment_data(c);
  const auto tc = dhd::resolve_train_config(c, data);
  const auto state = load_trained(c, tc);
  const auto shifts =
      dhd::hamming_shift_sweep(state.model, data.query.features, tc.family, c.sweep_scales, c.transform_seed);
  std::string csv = "s_t,mean_hamming_shift\n";
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    dhd::detail::append_double(csv, c.sweep_scales[i]);
    csv += ',';
    dhd::detail::append_double(csv, shifts[i]);
    csv += '\n';
  }
  dhd::detail::write_file(c.output_dir / "sweep_st.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_deform_eval(const CommonOptions& o) {
  const auto c = resolve(o);
  const auto data = dhd::experiment_data(c);
  const auto tc = dhd::resolve_train_config(c, data);
  const auto state = load_trained(c, tc);
  const auto rows = dhd::deformation_table(state.model, data.query, data.database, c.eval, c.transform_seed);
  std::string csv = "deformation,map\n";
  for (const auto& r : rows) {
    csv += r.name + ',';
    dhd::detail::append_double(csv, r.map_at_m);
    csv += '\n';
  }
  dhd::detail::write_file(c.output_dir / "deform_eval.csv", csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep hashing with self-distillation: data, training, encoding and retrieval evaluation"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, encode_o, eval_o, ablate_o, sweep_o, deform_o;
  bool binary = false, resume = false;
  std::optional<std::size_t> stop_after;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic train/query/database tables");
  add_common(gen, gen_o);
  gen->add_flag("--binary", binary, "also write the packed binary variant");
  auto* train = app.add_subcommand("train", "train a model and write checkpoints and train_log.csv");
  add_common(train, train_o);
  train->add_flag("--resume", resume, "continue from <out>/checkpoint.bin if present");
  train->add_option("--stop-after", stop_after, "train at most this many epochs in this invocation");
  auto* encode = app.add_subcommand("encode", "encode query and database into code files");
  add_common(encode, encode_o);
  auto* eval = app.add_subcommand("eval", "evaluate retrieval from the encoded code files");
  add_common(eval, eval_o);
  auto* ablate = app.add_subcommand("ablate", "train the loss-term grid and write comparison tables");
  add_common(ablate, ablate_o);
  auto* sweep = app.add_subcommand("sweep-st", "mean Hamming shift of the trained model versus s_T");
  add_common(sweep, sweep_o);
  auto* deform = app.add_subcommand("deform-eval", "mAP of the trained model under held-out deformations");
  add_common(deform, deform_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_o, binary);
    if (*train) return cmd_train(train_o, resume, stop_after);
    if (*encode) return cmd_encode(encode_o);
    if (*eval) return cmd_eval(eval_o);
    if (*ablate) return cmd_ablate(ablate_o);
    if (*sweep) return cmd_sweep_st(sweep_o);
    if (*deform) return cmd_deform_eval(deform_o);
  } catch (const dhd::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
