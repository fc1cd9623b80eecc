// Flat key=value configuration with section prefixes (grid., norm., model.,
// train., eval., synth.). Unknown keys are rejected, never ignored.
#ifndef LODNN_CONFIG_HPP
#define LODNN_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lodnn/common.hpp"
#include "lodnn/model.hpp"
#include "lodnn/rasterizer.hpp"
#include "lodnn/trainer.hpp"

namespace lodnn {

struct EvalConfig {
  int tau_grid_cap = 1000;  // 0 = every observed unique confidence
  std::vector<double> roi_bounds = {46.0, 41.0, 36.0, 31.0, 26.0, 21.0};
};

struct SynthConfig {
  int count = 12;
  int scene_kind = 0;  // 0 = randomized family
};

struct PipelineConfig {
  GridSpec grid;
  NormalizationSpec norm;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  SynthConfig synth;

  void validate() const {
    grid.validate();
    norm.validate();
    model.validate();
    train.validate();
  }
};

namespace config_detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + ": expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  double d;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size())
    throw ConfigError("config key " + key + ": trailing characters in '" + v + "'");
  return d;
}

inline long long parse_int(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  long long i;
  try {
    i = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
  if (pos != v.size())
    throw ConfigError("config key " + key + ": trailing characters in '" + v + "'");
  return i;
}

inline std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(parse_double(item, key));
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

}  // namespace config_detail

// Applies a single key=value pair; throws ConfigError on unknown keys.
inline void apply_config_key(PipelineConfig& cfg, const std::string& key,
                             const std::string& value) {
  using namespace config_detail;
  if (key == "grid.x_min") cfg.grid.x_min = parse_double(value, key);
  else if (key == "grid.x_max") cfg.grid.x_max = parse_double(value, key);
  else if (key == "grid.y_min") cfg.grid.y_min = parse_double(value, key);
  else if (key == "grid.y_max") cfg.grid.y_max = parse_double(value, key);
  else if (key == "grid.cell_size") cfg.grid.cell_size = parse_double(value, key);
  else if (key == "norm.count_cap") cfg.norm.count_cap = parse_double(value, key);
  else if (key == "norm.z_low") cfg.norm.z_low = parse_double(value, key);
  else if (key == "norm.z_high") cfg.norm.z_high = parse_double(value, key);
  else if (key == "norm.std_z_cap") cfg.norm.std_z_cap = parse_double(value, key);
  else if (key == "model.input_channels") cfg.model.input_channels = static_cast<int>(parse_int(value, key));
  else if (key == "model.encoder_maps") cfg.model.encoder_maps = static_cast<int>(parse_int(value, key));
  else if (key == "model.context_maps") cfg.model.context_maps = static_cast<int>(parse_int(value, key));
  else if (key == "model.context_out_maps") cfg.model.context_out_maps = static_cast<int>(parse_int(value, key));
  else if (key == "model.decoder_maps") cfg.model.decoder_maps = static_cast<int>(parse_int(value, key));
  else if (key == "model.dropout_p") cfg.model.dropout_p = parse_double(value, key);
  else if (key == "train.batch_size") cfg.train.batch_size = static_cast<int>(parse_int(value, key));
  else if (key == "train.initial_lr") cfg.train.initial_lr = parse_double(value, key);
  else if (key == "train.lr_decay_factor") cfg.train.lr_decay_factor = parse_double(value, key);
  else if (key == "train.max_epochs") cfg.train.max_epochs = static_cast<int>(parse_int(value, key));
  else if (key == "train.patience") cfg.train.patience = static_cast<int>(parse_int(value, key));
  else if (key == "train.seed") cfg.train.seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "train.augment") cfg.train.augment = parse_bool(value, key);
  else if (key == "train.use_exact_gt") cfg.train.use_exact_gt = parse_bool(value, key);
  else if (key == "train.target_train_maxf") cfg.train.target_train_maxf = parse_double(value, key);
  else if (key == "train.target_val_maxf") cfg.train.target_val_maxf = parse_double(value, key);
  else if (key == "eval.tau_grid_cap") cfg.eval.tau_grid_cap = static_cast<int>(parse_int(value, key));
  else if (key == "eval.roi_bounds") cfg.eval.roi_bounds = parse_double_list(value, key);
  else if (key == "synth.count") cfg.synth.count = static_cast<int>(parse_int(value, key));
  else if (key == "synth.scene_kind") cfg.synth.scene_kind = static_cast<int>(parse_int(value, key));
  else throw ConfigError("unknown config key: " + key);
}

inline void load_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto key_end = key.find_last_not_of(" \t");
    key = key.substr(0, key_end == std::string::npos ? 0 : key_end + 1);
    const auto val_begin = value.find_first_not_of(" \t");
    value = val_begin == std::string::npos ? "" : value.substr(val_begin);
    apply_config_key(cfg, key, value);
  }
}

// The effective configuration, printable and reloadable.
inline std::string dump_config(const PipelineConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "grid.x_min=" << cfg.grid.x_min << "\n";
  os << "grid.x_max=" << cfg.grid.x_max << "\n";
  os << "grid.y_min=" << cfg.grid.y_min << "\n";
  os << "grid.y_max=" << cfg.grid.y_max << "\n";
  os << "grid.cell_size=" << cfg.grid.cell_size << "\n";
  os << "norm.count_cap=" << cfg.norm.count_cap << "\n";
  os << "norm.z_low=" << cfg.norm.z_low << "\n";
  os << "norm.z_high=" << cfg.norm.z_high << "\n";
  os << "norm.std_z_cap=" << cfg.norm.std_z_cap << "\n";
  os << "model.input_channels=" << cfg.model.input_channels << "\n";
  os << "model.encoder_maps=" << cfg.model.encoder_maps << "\n";
  os << "model.context_maps=" << cfg.model.context_maps << "\n";
  os << "model.context_out_maps=" << cfg.model.context_out_maps << "\n";
  os << "model.decoder_maps=" << cfg.model.decoder_maps << "\n";
  os << "model.dropout_p=" << cfg.model.dropout_p << "\n";
  os << "train.batch_size=" << cfg.train.batch_size << "\n";
  os << "train.initial_lr=" << cfg.train.initial_lr << "\n";
  os << "train.lr_decay_factor=" << cfg.train.lr_decay_factor << "\n";
  os << "train.max_epochs=" << cfg.train.max_epochs << "\n";
  os << "train.patience=" << cfg.train.patience << "\n";
  os << "train.seed=" << cfg.train.seed << "\n";
  os << "train.augment=" << (cfg.train.augment ? "true" : "false") << "\n";
  os << "train.use_exact_gt=" << (cfg.train.use_exact_gt ? "true" : "false") << "\n";
  os << "train.target_train_maxf=" << cfg.train.target_train_maxf << "\n";
  os << "train.target_val_maxf=" << cfg.train.target_val_maxf << "\n";
  os << "eval.tau_grid_cap=" << cfg.eval.tau_grid_cap << "\n";
  os << "eval.roi_bounds=";
  for (std::size_t i = 0; i < cfg.eval.roi_bounds.size(); ++i)
    os << (i ? "," : "") << cfg.eval.roi_bounds[i];
  os << "\n";
  os << "synth.count=" << cfg.synth.count << "\n";
  os << "synth.scene_kind=" << cfg.synth.scene_kind << "\n";
  return os.str();
}

// Checkpoint sidecar: the configuration needed to rebuild the model.
inline void save_config(const std::string& path, const PipelineConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << dump_config(cfg);
  if (!os) throw IoError("write failed: " + path);
}

inline PipelineConfig load_config(const std::string& path) {
  PipelineConfig cfg;
  load_config_file(cfg, path);
  return cfg;
}

}  // namespace lodnn

#endif  // LODNN_CONFIG_HPP
