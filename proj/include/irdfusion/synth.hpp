#pragma once

// Paired two-modality scenes. Both maps share one background field and one
// common-mode noise draw; each object's channel signature is split into a
// visible-only part, a thermal-only part and a shared part.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "irdfusion/fusion.hpp"
#include "json.hpp"

namespace irdfusion {

struct SceneConfig {
  std::size_t H = 16, W = 16, C = 8;
  std::size_t n_objects_min = 1, n_objects_max = 3;
  std::size_t extent_min = 2, extent_max = 5;
  double a_obj = 2.0;     // object signature amplitude
  double a_bg = 1.0;      // background amplitude
  double sigma_cm = 0.5;  // common-mode noise, identical in both maps
  double sigma_ind = 0.1; // independent noise, drawn per map
  double rho = 0.4;       // fraction of channels exclusive to each modality
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct SceneObject {
  std::size_t y0 = 0, x0 = 0, height = 0, width = 0;
  std::vector<double> signature;         // length C
  std::vector<std::size_t> v_channels;   // signature visible only in map_v
  std::vector<std::size_t> t_channels;   // only in map_t
  std::vector<std::size_t> shared_channels;
};

struct SceneSample {
  FeatureMapPair pair;
  Tensor target;  // H×W, 1 on object cells
  std::vector<SceneObject> objects;
};

/// Pure function of (cfg, index); the generator stream is
/// Rng::stream(cfg.seed, index, 'scen').
SceneSample gen_scene(const SceneConfig& cfg, std::uint64_t index);

struct Dataset {
  std::vector<SceneSample> train;
  std::vector<SceneSample> test;
};

/// Train samples use indices [0, n_train), test samples the next n_test.
Dataset make_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test);

/// Writes IRDT triples (map_v, map_t, target) and manifest.json into
/// out_dir. Returns the manifest text. A non-null `run_config` is stored
/// under "config".
std::string gen_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                        const std::filesystem::path& out_dir,
                        const nlohmann::ordered_json& run_config = nullptr);

/// Reads a directory written by gen_dataset (object metadata is not stored).
Dataset load_dataset(const std::filesystem::path& dir, SceneConfig* cfg_out = nullptr);

}  // namespace irdfusion
