#include "cardiofuse/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cardiofuse/errors.hpp"
#include "json.hpp"

namespace cardiofuse {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ConfigError("'" + text + "' is not a valid number");
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("'" + text + "' is not true or false");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text, ',')) out.push_back(parse_number<std::size_t>(item));
  return out;
}

std::string format_dims(const std::vector<std::size_t>& dims) {
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) out += (i ? ", " : "") + std::to_string(dims[i]);
  return out;
}

std::vector<ConvBlockSpec> parse_blocks(const std::string& text) {
  std::vector<ConvBlockSpec> out;
  for (const auto& item : split_list(text, ',')) {
    const auto parts = split_list(item, ':');
    if (parts.size() != 3) throw ConfigError("conv block '" + item + "' must be out:width:stride");
    out.push_back({parse_number<std::size_t>(parts[0]), parse_number<std::size_t>(parts[1]),
                   parse_number<std::size_t>(parts[2])});
  }
  return out;
}

std::string format_blocks(const std::vector<ConvBlockSpec>& blocks) {
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    out += (i ? ", " : "") + std::to_string(blocks[i].out_channels) + ":" + std::to_string(blocks[i].kernel_width) +
           ":" + std::to_string(blocks[i].stride);
  }
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Key size_key(const char* name, T RunConfig::*field) {
  return {name, [field](RunConfig& c, const std::string& v) { c.*field = parse_number<T>(v); },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

template <typename T>
Key data_key(const char* name, T GeneratorConfig::*field) {
  return {name,
          [field](RunConfig& c, const std::string& v) { c.data.*field = parse_number<T>(v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.data.*field);
            else return std::to_string(c.data.*field);
          }};
}

Key double_key(const char* name, double RunConfig::*field) {
  return {name, [field](RunConfig& c, const std::string& v) { c.*field = parse_number<double>(v); },
          [field](const RunConfig& c) { return format_double(c.*field); }};
}

Key dims_key(const char* name, std::vector<std::size_t> RunConfig::*field) {
  return {name, [field](RunConfig& c, const std::string& v) { c.*field = parse_dims(v); },
          [field](const RunConfig& c) { return format_dims(c.*field); }};
}

Key string_key(const char* name, std::string RunConfig::*field) {
  return {name, [field](RunConfig& c, const std::string& v) { c.*field = v; },
          [field](const RunConfig& c) { return c.*field; }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      data_key("data.latent_dim", &GeneratorConfig::latent_dim),
      data_key("data.lead_count", &GeneratorConfig::lead_count),
      data_key("data.seq_len", &GeneratorConfig::seq_len),
      data_key("data.routine_dim", &GeneratorConfig::routine_dim),
      data_key("data.n_diagnoses", &GeneratorConfig::n_diagnoses),
      data_key("data.n_labs", &GeneratorConfig::n_labs),
      data_key("data.sigma_x", &GeneratorConfig::sigma_x),
      data_key("data.sigma_m", &GeneratorConfig::sigma_m),
      data_key("data.sigma_p", &GeneratorConfig::sigma_p),
      data_key("data.lab_prevalence", &GeneratorConfig::lab_prevalence),
      data_key("data.n_train", &GeneratorConfig::n_train),
      data_key("data.n_val", &GeneratorConfig::n_val),
      data_key("data.n_test", &GeneratorConfig::n_test),
      data_key("data.seed", &GeneratorConfig::seed),
      {"model.conv_blocks", [](RunConfig& c, const std::string& v) { c.conv_blocks = parse_blocks(v); },
       [](const RunConfig& c) { return format_blocks(c.conv_blocks); }},
      size_key("model.feature_dim", &RunConfig::feature_dim),
      dims_key("model.tabular_hidden", &RunConfig::tabular_hidden),
      size_key("model.tabular_out", &RunConfig::tabular_out),
      dims_key("model.projector_hidden", &RunConfig::projector_hidden),
      size_key("model.embed_dim", &RunConfig::embed_dim),
      dims_key("model.head_hidden", &RunConfig::head_hidden),
      dims_key("model.fusion_hidden", &RunConfig::fusion_hidden),
      {"model.append_labs_to_m", [](RunConfig& c, const std::string& v) { c.append_labs_to_m = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.append_labs_to_m ? "true" : "false"); }},
      double_key("train.lr", &RunConfig::lr),
      size_key("train.batch_size", &RunConfig::batch_size),
      size_key("train.seed", &RunConfig::train_seed),
      double_key("train.adam_beta1", &RunConfig::adam_beta1),
      double_key("train.adam_beta2", &RunConfig::adam_beta2),
      double_key("train.adam_eps", &RunConfig::adam_eps),
      size_key("pretrain.epochs", &RunConfig::pretrain_epochs),
      double_key("pretrain.lambda", &RunConfig::pretrain_lambda),
      string_key("pretrain.freeze", &RunConfig::pretrain_freeze),
      size_key("cls.epochs", &RunConfig::cls_epochs),
      string_key("cls.freeze", &RunConfig::cls_freeze),
      size_key("recon.epochs", &RunConfig::recon_epochs),
      string_key("recon.freeze", &RunConfig::recon_freeze),
      size_key("baseline.epochs", &RunConfig::baseline_epochs),
      string_key("pipeline.order", &RunConfig::pipeline_order),
      size_key("experiment.seeds", &RunConfig::experiment_seeds),
      size_key("experiment.seed_base", &RunConfig::experiment_seed_base),
  };
  return table;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[k.name] = &k;

  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError(where + "'" + key + "' already set on line " + std::to_string(prev->second));
    }
    seen[key] = line_no;
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  // A run manifest is accepted too; its resolved config is self-contained.
  if (const auto first = text.find_first_not_of(" \t\r\n"); first != std::string::npos && text[first] == '{') {
    try {
      const auto manifest = nlohmann::json::parse(text);
      return parse(manifest.at("resolved_config").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("'" + path.string() + "' is JSON but not a run manifest: " + e.what());
    }
  }
  return parse(text);
}

std::string RunConfig::to_text() const {
  std::string out;
  std::string section;
  for (const auto& k : keys()) {
    const std::string name = k.name;
    const std::string sec = name.substr(0, name.find('.'));
    if (sec != section) {
      if (!section.empty()) out += "\n";
      section = sec;
    }
    out += name + " = " + k.get(*this) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  data.validate();
  architecture().validate();
  for (Stage s : {Stage::kPretrainJe, Stage::kFinetuneCls, Stage::kFinetuneRecon, Stage::kBaselineSignalOnly,
                  Stage::kBaselineLateFusion}) {
    train_config(s).validate();
  }
  if (pipeline_order != "cls,recon" && pipeline_order != "recon,cls") {
    throw ConfigError("pipeline.order must be 'cls,recon' or 'recon,cls', got '" + pipeline_order + "'");
  }
  if (experiment_seeds < 1) throw ConfigError("experiment.seeds must be >= 1");
}

ArchitectureConfig RunConfig::architecture() const {
  ArchitectureConfig a;
  a.signal.lead_count = data.lead_count;
  a.signal.seq_len = data.seq_len;
  a.signal.conv_blocks = conv_blocks;
  a.signal.feature_dim = feature_dim;
  a.tabular_dim = data.routine_dim + (append_labs_to_m ? data.n_labs : 0);
  a.tabular_hidden = tabular_hidden;
  a.tabular_out = tabular_out;
  a.projector_hidden = projector_hidden;
  a.embed_dim = embed_dim;
  a.head_hidden = head_hidden;
  a.n_diagnoses = data.n_diagnoses;
  a.n_labs = data.n_labs;
  a.fusion_hidden = fusion_hidden;
  return a;
}

TrainConfig RunConfig::train_config(Stage stage) const {
  TrainConfig t;
  t.stage = stage;
  t.lr = lr;
  t.batch_size = batch_size;
  t.seed = train_seed;
  t.adam_beta1 = adam_beta1;
  t.adam_beta2 = adam_beta2;
  t.adam_eps = adam_eps;
  t.lambda = pretrain_lambda;
  switch (stage) {
    case Stage::kPretrainJe:
      t.epochs = pretrain_epochs;
      t.freeze = FreezeMask::parse(pretrain_freeze);
      break;
    case Stage::kFinetuneCls:
      t.epochs = cls_epochs;
      t.freeze = FreezeMask::parse(cls_freeze);
      break;
    case Stage::kFinetuneRecon:
      t.epochs = recon_epochs;
      t.freeze = FreezeMask::parse(recon_freeze);
      break;
    case Stage::kBaselineSignalOnly:
    case Stage::kBaselineLateFusion:
      t.epochs = baseline_epochs;
      break;
    case Stage::kInitialized:
      throw ConfigError("no training configuration for the 'initialized' stage");
  }
  return t;
}

RunConfig RunConfig::with_seed(std::uint64_t seed) const {
  RunConfig c = *this;
  c.data.seed = seed;
  c.train_seed = seed;
  return c;
}

}  // namespace cardiofuse
