#pragma once

// Run configuration: defaults <- JSON file <- command-line overrides.
//
// File layout (every key optional; unknown keys are rejected):
//   { "fusion": { d, d_h, d_lambda, K, merge_mode, dropout_p, pe, lambda_init },
//     "scene":  { H, W, C, n_objects_min, n_objects_max, extent_min, extent_max,
//                 a_obj, a_bg, sigma_cm, sigma_ind, rho, seed },
//     "train":  { variant, epochs, lr, batch, seed, n_train, n_test, seeds, k_values } }
//
// Unless set explicitly, fusion.d follows scene.C, and fusion.d_h = 4·d.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "irdfusion/fusion.hpp"
#include "irdfusion/harness.hpp"
#include "irdfusion/synth.hpp"
#include "json.hpp"

namespace irdfusion {

/// Flat object with exactly the FusionConfig field names.
nlohmann::ordered_json to_json(const FusionConfig& cfg);
nlohmann::ordered_json to_json(const SceneConfig& cfg);
/// `where` prefixes error messages (e.g. "fusion").
FusionConfig fusion_config_from_json(const nlohmann::json& j, std::string_view where);
SceneConfig scene_config_from_json(const nlohmann::json& j, std::string_view where);

struct TrainSettings {
  VariantTag variant = VariantTag::full;
  std::size_t epochs = 60;
  double lr = 0.05;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  std::size_t n_train = 24;
  std::size_t n_test = 24;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::size_t> k_values = {1, 2, 3, 4, 5, 6};
};

struct CliConfig {
  FusionConfig fusion;
  SceneConfig scene;
  TrainSettings train;

  /// All module invariants plus fusion.d == scene.C.
  void validate() const;
  TrainOptions train_options() const;
  ExperimentSpec experiment(std::size_t threads) const;
};

nlohmann::ordered_json to_json(const TrainSettings& t);
nlohmann::ordered_json to_json(const CliConfig& c);

/// Dotted key ("fusion.K") to raw flag text; parsed by the type of the default.
using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Resolves defaults <- text <- overrides and validates. `origin` names the
/// source in parse errors, which carry line and column.
CliConfig resolve_config(std::string_view json_text, const Overrides& overrides,
                         std::string_view origin = "<config>");
CliConfig load_config(const std::optional<std::filesystem::path>& path,
                      const Overrides& overrides);

}  // namespace irdfusion
