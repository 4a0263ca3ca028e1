#include "irdfusion/config.hpp"

#include <set>
#include <sstream>

#include "irdfusion/errors.hpp"
#include "irdfusion/irdt.hpp"

namespace irdfusion {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const FusionConfig& c) {
  ordered_json j;
  j["d"] = c.d;
  j["d_h"] = c.d_h;
  j["d_lambda"] = c.d_lambda;
  j["K"] = c.K;
  j["merge_mode"] = to_string(c.merge_mode);
  j["dropout_p"] = c.dropout_p;
  j["pe"] = to_string(c.pe);
  j["lambda_init"] = c.lambda_init;
  return j;
}

ordered_json to_json(const SceneConfig& c) {
  ordered_json j;
  j["H"] = c.H;
  j["W"] = c.W;
  j["C"] = c.C;
  j["n_objects_min"] = c.n_objects_min;
  j["n_objects_max"] = c.n_objects_max;
  j["extent_min"] = c.extent_min;
  j["extent_max"] = c.extent_max;
  j["a_obj"] = c.a_obj;
  j["a_bg"] = c.a_bg;
  j["sigma_cm"] = c.sigma_cm;
  j["sigma_ind"] = c.sigma_ind;
  j["rho"] = c.rho;
  j["seed"] = c.seed;
  return j;
}

ordered_json to_json(const TrainSettings& t) {
  ordered_json j;
  j["variant"] = to_string(t.variant);
  j["epochs"] = t.epochs;
  j["lr"] = t.lr;
  j["batch"] = t.batch;
  j["seed"] = t.seed;
  j["n_train"] = t.n_train;
  j["n_test"] = t.n_test;
  j["seeds"] = t.seeds;
  j["k_values"] = t.k_values;
  return j;
}

ordered_json to_json(const CliConfig& c) {
  ordered_json j;
  j["fusion"] = to_json(c.fusion);
  j["scene"] = to_json(c.scene);
  j["train"] = to_json(c.train);
  return j;
}

namespace {

/// Strict field reader: every key of `j` must be consumed, with the right type.
class Reader {
 public:
  Reader(const json& j, std::string_view where) : j_(j), where_(where) {
    if (!j.is_object()) throw ContractError(std::string(where) + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string name = where_ + "." + key;
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ContractError(name + " must be a number");
      out = it->template get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_unsigned()) throw ContractError(name + " must be a non-negative integer");
      out = it->template get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ContractError(name + " must be a string");
      out = it->template get<std::string>();
    } else {
      if (!it->is_array()) throw ContractError(name + " must be an array");
      out.clear();
      for (const auto& e : *it) {
        if (!e.is_number_unsigned()) {
          throw ContractError(name + " entries must be non-negative integers");
        }
        out.push_back(e.template get<typename T::value_type>());
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ContractError("unknown config key '" + where_ + "." + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

FusionConfig fusion_config_from_json(const json& j, std::string_view where) {
  FusionConfig c;
  Reader r(j, where);
  std::string merge = to_string(c.merge_mode), pe = to_string(c.pe);
  r.get("d", c.d);
  r.get("d_h", c.d_h);
  r.get("d_lambda", c.d_lambda);
  r.get("K", c.K);
  r.get("merge_mode", merge);
  r.get("dropout_p", c.dropout_p);
  r.get("pe", pe);
  r.get("lambda_init", c.lambda_init);
  r.finish();
  c.merge_mode = parse_merge_mode(merge);
  c.pe = parse_pe_kind(pe);
  return c;
}

SceneConfig scene_config_from_json(const json& j, std::string_view where) {
  SceneConfig c;
  Reader r(j, where);
  r.get("H", c.H);
  r.get("W", c.W);
  r.get("C", c.C);
  r.get("n_objects_min", c.n_objects_min);
  r.get("n_objects_max", c.n_objects_max);
  r.get("extent_min", c.extent_min);
  r.get("extent_max", c.extent_max);
  r.get("a_obj", c.a_obj);
  r.get("a_bg", c.a_bg);
  r.get("sigma_cm", c.sigma_cm);
  r.get("sigma_ind", c.sigma_ind);
  r.get("rho", c.rho);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

namespace {

TrainSettings train_settings_from_json(const json& j, std::string_view where) {
  TrainSettings t;
  Reader r(j, where);
  std::string variant = to_string(t.variant);
  r.get("variant", variant);
  r.get("epochs", t.epochs);
  r.get("lr", t.lr);
  r.get("batch", t.batch);
  r.get("seed", t.seed);
  r.get("n_train", t.n_train);
  r.get("n_test", t.n_test);
  r.get("seeds", t.seeds);
  r.get("k_values", t.k_values);
  r.finish();
  t.variant = parse_variant(variant);
  return t;
}

void rethrow_with_prefix(const char* prefix) {
  try {
    throw;
  } catch (const ContractError& e) {
    throw ContractError(std::string("invalid config: ") + prefix + e.what());
  }
}

std::string line_context(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

json parse_override(const std::string& key, const std::string& raw, const json& like) {
  try {
    if (like.is_number_unsigned()) {
      if (raw.empty() || raw[0] == '-') throw std::invalid_argument("negative");
      std::size_t used = 0;
      const unsigned long long v = std::stoull(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("trailing");
      return v;
    }
    if (like.is_number()) {
      std::size_t used = 0;
      const double v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("trailing");
      return v;
    }
    if (like.is_array()) {
      json arr = json::array();
      std::istringstream in(raw);
      for (std::string part; std::getline(in, part, ',');) {
        if (part.empty() || part[0] == '-') throw std::invalid_argument("negative");
        arr.push_back(std::stoull(part));
      }
      return arr;
    }
    return raw;
  } catch (const std::logic_error&) {
    throw ContractError("invalid value '" + raw + "' for " + key);
  }
}

}  // namespace

void CliConfig::validate() const {
  try {
    fusion.validate();
  } catch (const ContractError&) {
    rethrow_with_prefix("fusion.");
  }
  try {
    scene.validate();
  } catch (const ContractError&) {
    rethrow_with_prefix("");
  }
  if (fusion.d != scene.C) {
    throw ContractError("invalid config: fusion.d (" + std::to_string(fusion.d) +
                        ") must equal scene.C (" + std::to_string(scene.C) + ")");
  }
  if (train.batch < 1) throw ContractError("invalid config: train.batch must be >= 1");
  if (!(train.lr >= 0.0)) throw ContractError("invalid config: train.lr must be >= 0");
  if (train.n_train < 1) throw ContractError("invalid config: train.n_train must be >= 1");
  if (train.k_values.empty()) throw ContractError("invalid config: train.k_values must be non-empty");
  for (std::size_t k : train.k_values) {
    if (k < 1) throw ContractError("invalid config: train.k_values entries must be >= 1");
  }
  if (train.seeds.empty()) throw ContractError("invalid config: train.seeds must be non-empty");
}

TrainOptions CliConfig::train_options() const {
  return {train.epochs, train.lr, train.batch, train.seed};
}

ExperimentSpec CliConfig::experiment(std::size_t threads) const {
  ExperimentSpec spec;
  spec.fusion = fusion;
  spec.scene = scene;
  spec.train = train_options();
  spec.n_train = train.n_train;
  spec.n_test = train.n_test;
  spec.seeds = train.seeds;
  spec.threads = threads;
  return spec;
}

CliConfig resolve_config(std::string_view json_text, const Overrides& overrides,
                         std::string_view origin) {
  json file = json::object();
  const bool blank = json_text.find_first_not_of(" \t\r\n") == std::string_view::npos;
  if (!blank) {
    try {
      file = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw ContractError("cannot parse " + std::string(origin) + " at " +
                          line_context(json_text, e.byte) + ": " + e.what());
    }
  }
  if (!file.is_object()) throw ContractError(std::string(origin) + ": top level must be an object");
  for (auto it = file.begin(); it != file.end(); ++it) {
    if (it.key() != "fusion" && it.key() != "scene" && it.key() != "train") {
      throw ContractError("unknown config key '" + it.key() + "'");
    }
  }

  // Overrides are applied on top of defaults+file through the JSON tree.
  const ordered_json defaults = to_json(CliConfig{});
  for (const auto& [key, raw] : overrides) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    const std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
    if (dot == std::string::npos || !defaults.contains(section) ||
        !defaults[section].contains(field)) {
      throw ContractError("unknown config key '" + key + "'");
    }
    file[section][field] = parse_override(key, raw, defaults[section][field]);
  }

  CliConfig cfg;
  const json empty = json::object();
  auto section = [&](const char* name) -> const json& {
    return file.contains(name) ? file[name] : empty;
  };
  cfg.scene = scene_config_from_json(section("scene"), "scene");
  cfg.train = train_settings_from_json(section("train"), "train");
  const json& fusion = section("fusion");
  cfg.fusion = fusion_config_from_json(fusion, "fusion");
  if (!fusion.contains("d")) cfg.fusion.d = cfg.scene.C;
  if (!fusion.contains("d_h")) cfg.fusion.d_h = 4 * cfg.fusion.d;
  cfg.validate();
  return cfg;
}

CliConfig load_config(const std::optional<std::filesystem::path>& path,
                      const Overrides& overrides) {
  if (!path) return resolve_config("", overrides);
  std::string text;
  try {
    text = read_text(*path);
  } catch (const IoError& e) {
    throw ContractError(e.what());
  }
  return resolve_config(text, overrides, path->string());
}

}  // namespace irdfusion
