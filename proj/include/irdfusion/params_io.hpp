#pragma once

// Parameter directories: one IRDT file per parameter plus manifest.txt.
//
//   tool_version=irdfusion 0.1.0
//   <extra header lines, key=value>
//   param name=mfrm.v.wq file=mfrm.v.wq.irdt shape=8x8 role=projection
//   ...

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "irdfusion/autodiff.hpp"
#include "irdfusion/harness.hpp"

namespace irdfusion {

struct ManifestEntry {
  std::string name;
  std::string file;
  Shape shape;
  std::string role;
};

struct ParameterManifest {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<ManifestEntry> entries;
};

void save_parameters(const std::filesystem::path& dir, std::span<Parameter* const> params,
                     const std::vector<std::pair<std::string, std::string>>& header = {});
ParameterManifest read_parameter_manifest(const std::filesystem::path& dir);
/// Loads every parameter by name; a missing name or shape mismatch is an error.
void load_parameters(const std::filesystem::path& dir, std::span<Parameter* const> params);

/// Checkpoint = parameter directory + config.json holding the variant and
/// the flat fusion config (plus `extra`, e.g. the resolved run config).
void save_model(const std::filesystem::path& dir, Model& model,
                const nlohmann::ordered_json& extra = nullptr);
Model load_model(const std::filesystem::path& dir);

}  // namespace irdfusion
