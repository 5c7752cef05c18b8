// cardiofuse: command-line front end for data generation, the staged training
// pipeline, baselines, evaluation, explanations and the gradient suite.
//
// Results go to stdout as JSON, logs to stderr. Failures print
// {"error": {"type": ..., "message": ...}} on stdout and exit nonzero.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cardiofuse/config.hpp"
#include "cardiofuse/errors.hpp"
#include "cardiofuse/eval.hpp"
#include "cardiofuse/experiment.hpp"
#include "cardiofuse/gradcheck.hpp"
#include "cardiofuse/json_util.hpp"
#include "cardiofuse/log.hpp"
#include "cardiofuse/pipeline.hpp"
#include "cardiofuse/synthdata.hpp"

#ifndef CARDIOFUSE_VERSION
#define CARDIOFUSE_VERSION "0.1.0-unknown"
#endif

namespace fs = std::filesystem;
using namespace cardiofuse;
using Json = nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kBadInput = 3, kCheckFailed = 4 };

struct Args {
  std::string config;
  std::string data;
  std::string init;
  std::string ckpt;
  std::string out;
  std::string manifest;
  std::string stage;
  std::string kind;
  std::string split = "test";
  std::size_t index = 0;
  std::size_t top_k = 3;
  std::size_t seeds = 0;
  bool allow_untrained = false;
  std::string log_level = "info";
};

/// Echo of one invocation, written next to its output.
struct Manifest {
  std::string command;
  std::optional<RunConfig> config;
  Json inputs = Json::object();
  Json outputs = Json::object();
  std::optional<std::string> stage;
  std::optional<std::uint64_t> seed;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("error writing '" + path.string() + "'");
}

void emit(const Json& j) { std::cout << dump_json(j) << "\n"; }

RunConfig load_config(const Args& a) { return a.config.empty() ? RunConfig{} : RunConfig::load(a.config); }

/// Architecture dims come from the dataset; the resolved config reflects them.
RunConfig bind_dataset(RunConfig cfg, const Dataset& ds) {
  cfg.data = ds.config;
  cfg.validate();
  return cfg;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("CARDIOFUSE_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0' || n == 0) throw ConfigError(std::string("CARDIOFUSE_THREADS must be a positive integer, got '") + v + "'");
  return n;
}

Json stage_output(const StageResult& r, const std::string& out) {
  Json j = to_json(r);
  j["checkpoint"] = out;
  return j;
}

Json cmd_gen_data(const Args& a, Manifest& m) {
  RunConfig cfg = load_config(a);
  m.config = cfg;
  m.seed = cfg.data.seed;
  const Dataset ds = generate_dataset(cfg.data);
  save_dataset(a.out, ds);
  m.outputs["dataset"] = a.out;
  Json j;
  j["dataset"] = a.out;
  j["splits"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}};
  j["bytes"] = fs::file_size(a.out);
  return j;
}

Json cmd_pretrain(const Args& a, Manifest& m) {
  const Dataset ds = load_dataset(a.data);
  const RunConfig cfg = bind_dataset(load_config(a), ds);
  m.config = cfg;
  m.seed = cfg.train_seed;
  m.stage = stage_name(Stage::kPretrainJe);
  m.inputs["data"] = a.data;
  const StageResult r = run_stage1_pretrain(ds, init_bundle(cfg.architecture(), cfg.train_seed),
                                            cfg.train_config(Stage::kPretrainJe));
  save_checkpoint(a.out, r.checkpoint);
  m.outputs["checkpoint"] = a.out;
  return stage_output(r, a.out);
}

Json cmd_finetune(const Args& a, Manifest& m) {
  const Stage stage = a.stage == "cls" ? Stage::kFinetuneCls : Stage::kFinetuneRecon;
  const Dataset ds = load_dataset(a.data);
  const RunConfig cfg = bind_dataset(load_config(a), ds);
  const Checkpoint init = load_checkpoint(a.init);
  if (!(init.model.arch.signal == cfg.architecture().signal) || init.model.arch.tabular_dim != cfg.architecture().tabular_dim ||
      init.model.arch.n_diagnoses != ds.config.n_diagnoses || init.model.arch.n_labs != ds.config.n_labs) {
    throw ConfigError("checkpoint '" + a.init + "' architecture does not match the config and dataset");
  }
  m.config = cfg;
  m.seed = cfg.train_seed;
  m.stage = stage_name(stage);
  m.inputs["data"] = a.data;
  m.inputs["init"] = a.init;
  TrainConfig tc = cfg.train_config(stage);
  tc.require_pretrained = !a.allow_untrained;
  const StageResult r = stage == Stage::kFinetuneCls ? run_stage2_classification(ds, init, tc)
                                                     : run_stage3_reconstruction(ds, init, tc);
  save_checkpoint(a.out, r.checkpoint);
  m.outputs["checkpoint"] = a.out;
  return stage_output(r, a.out);
}

Json cmd_baseline(const Args& a, Manifest& m) {
  const Stage stage = a.kind == "signal-only" ? Stage::kBaselineSignalOnly : Stage::kBaselineLateFusion;
  const Dataset ds = load_dataset(a.data);
  const RunConfig cfg = bind_dataset(load_config(a), ds);
  m.config = cfg;
  m.seed = cfg.train_seed;
  m.stage = stage_name(stage);
  m.inputs["data"] = a.data;
  const StageResult r = run_baseline(ds, cfg.architecture(), cfg.train_config(stage));
  save_checkpoint(a.out, r.checkpoint);
  m.outputs["checkpoint"] = a.out;
  return stage_output(r, a.out);
}

Json cmd_eval(const Args& a, Manifest& m) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Dataset ds = load_dataset(a.data);
  m.inputs["checkpoint"] = a.ckpt;
  m.inputs["data"] = a.data;
  m.stage = stage_name(ckpt.stage);
  m.seed = ckpt.seed;
  Json j = to_json(evaluate(ckpt.model, ds, parse_split(a.split)));
  write_text(a.out, dump_json(j) + "\n");
  m.outputs["report"] = a.out;
  return j;
}

Json cmd_explain(const Args& a, Manifest& m) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Dataset ds = load_dataset(a.data);
  const Split& split = ds.split(parse_split(a.split));
  if (a.index >= split.size()) {
    throw ConfigError("--index " + std::to_string(a.index) + " out of range for split '" + a.split + "' of " +
                      std::to_string(split.size()) + " encounters");
  }
  m.inputs["checkpoint"] = a.ckpt;
  m.inputs["data"] = a.data;
  m.stage = stage_name(ckpt.stage);
  m.seed = ckpt.seed;
  const std::vector<std::size_t> row{a.index};
  const Tensor x = reshape(gather_rows(split.x, row), {split.x.dim(1), split.x.dim(2)});
  Json j;
  j["split"] = a.split;
  j["index"] = a.index;
  j["explanation"] = to_json(explain(ckpt.model, x, a.top_k));
  return j;
}

Json cmd_gradcheck(const Args& a, Manifest& m, int& exit_code) {
  const RunConfig cfg = load_config(a);
  m.config = cfg;
  const GradCheckReport report = run_gradcheck(cfg.architecture());
  exit_code = report.passed() ? kOk : kCheckFailed;
  return to_json(report);
}

Json cmd_reproduce(const Args& a, Manifest& m) {
  const RunConfig cfg = load_config(a);
  m.config = cfg;
  m.seed = cfg.experiment_seed_base;
  const std::size_t seeds = a.seeds ? a.seeds : cfg.experiment_seeds;
  const OrderingSummary summary = reproduce_ordering(cfg, seeds, threads_from_env());
  Json j = to_json(summary);
  for (auto& row : j["seeds"]) row.erase("seconds");  // keep the table byte-reproducible
  write_text(a.out, dump_json(j) + "\n");
  m.outputs["table"] = a.out;
  return j;
}

Json manifest_json(const Manifest& m, const Args& a, double seconds) {
  Json j;
  j["command"] = m.command;
  j["version"] = CARDIOFUSE_VERSION;
  j["config_path"] = a.config.empty() ? Json(nullptr) : Json(a.config);
  j["resolved_config"] = m.config ? Json(m.config->to_text()) : Json(nullptr);
  j["seed"] = m.seed ? Json(*m.seed) : Json(nullptr);
  j["stage"] = m.stage ? Json(*m.stage) : Json(nullptr);
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["duration_seconds"] = seconds;
  return j;
}

Json error_json(const std::string& type, const std::string& message) {
  return Json{{"error", {{"type", type}, {"message", message}}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardiofuse: cross-modal joint-embedding training on synthetic multimodal encounters"};
  app.set_version_flag("--version", CARDIOFUSE_VERSION);
  app.require_subcommand(1);
  Args a;
  app.add_option("--log-level", a.log_level, "error, warning, info or debug")
      ->check(CLI::IsMember({"error", "warning", "info", "debug"}));
  app.add_option("--manifest", a.manifest, "Run manifest path (default: <out>.manifest.json)");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", a.config, "Config file")->check(CLI::ExistingFile);
  gen->add_option("--out", a.out, "Dataset file to write")->required();

  auto* pre = app.add_subcommand("pretrain", "Joint-embedding pre-training");
  pre->add_option("--data", a.data, "Dataset file")->required()->check(CLI::ExistingFile);
  pre->add_option("--config", a.config, "Config file")->check(CLI::ExistingFile);
  pre->add_option("--out", a.out, "Checkpoint to write")->required();

  auto* fine = app.add_subcommand("finetune", "Diagnosis (cls) or lab reconstruction (recon) fine-tuning");
  fine->add_option("--stage", a.stage, "cls or recon")->required()->check(CLI::IsMember({"cls", "recon"}));
  fine->add_option("--data", a.data, "Dataset file")->required()->check(CLI::ExistingFile);
  fine->add_option("--init", a.init, "Initial checkpoint")->required()->check(CLI::ExistingFile);
  fine->add_option("--config", a.config, "Config file")->check(CLI::ExistingFile);
  fine->add_option("--out", a.out, "Checkpoint to write")->required();
  fine->add_flag("--allow-untrained", a.allow_untrained, "Accept an untrained initial checkpoint");

  auto* base = app.add_subcommand("baseline", "Supervised comparison baselines");
  base->add_option("--kind", a.kind, "signal-only or late-fusion")
      ->required()
      ->check(CLI::IsMember({"signal-only", "late-fusion"}));
  base->add_option("--data", a.data, "Dataset file")->required()->check(CLI::ExistingFile);
  base->add_option("--config", a.config, "Config file")->check(CLI::ExistingFile);
  base->add_option("--out", a.out, "Checkpoint to write")->required();

  auto* ev = app.add_subcommand("eval", "Macro-AUROC report for a checkpoint");
  ev->add_option("--ckpt", a.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", a.data, "Dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", a.split, "val or test")->check(CLI::IsMember({"val", "test"}));
  ev->add_option("--out", a.out, "Report JSON to write")->required();

  auto* ex = app.add_subcommand("explain", "Diagnosis probabilities with the top-k predicted lab abnormalities");
  ex->add_option("--ckpt", a.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--data", a.data, "Dataset file")->required()->check(CLI::ExistingFile);
  ex->add_option("--split", a.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ex->add_option("--index", a.index, "Encounter index within the split")->required();
  ex->add_option("--top-k", a.top_k, "Number of labs to list");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--config", a.config, "Config file (architecture)")->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("reproduce-ordering", "Multi-seed signal-only / JE+recon / late-fusion comparison");
  rep->add_option("--config", a.config, "Config file")->check(CLI::ExistingFile);
  rep->add_option("--seeds", a.seeds, "Number of seeds (default: experiment.seeds)");
  rep->add_option("--out", a.out, "Table JSON to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit(error_json("usage_error", e.what()));
    return kUsage;
  }

  set_log_level(a.log_level == "error"     ? LogLevel::kError
                : a.log_level == "warning" ? LogLevel::kWarning
                : a.log_level == "debug"   ? LogLevel::kDebug
                                           : LogLevel::kInfo);

  const auto start = std::chrono::steady_clock::now();
  Manifest manifest;
  manifest.command = app.get_subcommands().front()->get_name();
  int exit_code = kOk;
  try {
    Json result;
    if (gen->parsed()) result = cmd_gen_data(a, manifest);
    else if (pre->parsed()) result = cmd_pretrain(a, manifest);
    else if (fine->parsed()) result = cmd_finetune(a, manifest);
    else if (base->parsed()) result = cmd_baseline(a, manifest);
    else if (ev->parsed()) result = cmd_eval(a, manifest);
    else if (ex->parsed()) result = cmd_explain(a, manifest);
    else if (gc->parsed()) result = cmd_gradcheck(a, manifest, exit_code);
    else result = cmd_reproduce(a, manifest);

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string manifest_path =
        !a.manifest.empty() ? a.manifest : (!a.out.empty() ? a.out : manifest.command) + ".manifest.json";
    write_text(manifest_path, dump_json(manifest_json(manifest, a, seconds)) + "\n");
    log_info(manifest.command + " finished in " + std::to_string(seconds) + " s; manifest " + manifest_path);
    emit(result);
    return exit_code;
  } catch (const ConfigError& e) {
    emit(error_json("config_error", e.what()));
    return kUsage;
  } catch (const FormatError& e) {
    emit(error_json(std::string("format_error.") + to_string(e.kind()), e.what()));
    return kBadInput;
  } catch (const CapabilityError& e) {
    emit(error_json("capability_error", e.what()));
    return kBadInput;
  } catch (const DimensionError& e) {
    emit(error_json("dimension_error", e.what()));
    return kBadInput;
  } catch (const std::exception& e) {
    emit(error_json("error", e.what()));
    return kFailure;
  }
}
