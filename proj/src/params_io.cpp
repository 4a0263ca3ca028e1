#include "irdfusion/params_io.hpp"

#include <algorithm>
#include <sstream>

#include "irdfusion/config.hpp"
#include "irdfusion/errors.hpp"
#include "irdfusion/irdt.hpp"
#include "irdfusion/version.hpp"

namespace irdfusion {

namespace {

Shape parse_shape(const std::string& s, const std::filesystem::path& where) {
  Shape shape;
  std::istringstream in(s);
  for (std::string part; std::getline(in, part, 'x');) {
    try {
      shape.push_back(std::stoul(part));
    } catch (const std::logic_error&) {
      throw IoError("manifest " + where.string() + ": bad shape '" + s + "'");
    }
  }
  return shape;
}

std::string shape_token(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

}  // namespace

void save_parameters(const std::filesystem::path& dir, std::span<Parameter* const> params,
                     const std::vector<std::pair<std::string, std::string>>& header) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << "tool_version=" << kToolVersion << "\n";
  for (const auto& [k, v] : header) manifest << k << "=" << v << "\n";
  for (const Parameter* p : params) {
    const std::string file = p->name + ".irdt";
    write_irdt(dir / file, p->value);
    manifest << "param name=" << p->name << " file=" << file
             << " shape=" << shape_token(p->value.shape()) << " role=" << p->role << "\n";
  }
  write_text(dir / "manifest.txt", manifest.str());
}

ParameterManifest read_parameter_manifest(const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / "manifest.txt";
  std::istringstream in(read_text(path));
  ParameterManifest m;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("param ", 0) == 0) {
      ManifestEntry e;
      std::istringstream tokens(line.substr(6));
      for (std::string tok; tokens >> tok;) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw IoError("manifest " + path.string() + ": bad token '" + tok + "'");
        const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
        if (key == "name") e.name = value;
        else if (key == "file") e.file = value;
        else if (key == "shape") e.shape = parse_shape(value, path);
        else if (key == "role") e.role = value;
        else throw IoError("manifest " + path.string() + ": unknown field '" + key + "'");
      }
      if (e.name.empty() || e.file.empty()) {
        throw IoError("manifest " + path.string() + ": parameter line without name/file");
      }
      m.entries.push_back(std::move(e));
    } else {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError("manifest " + path.string() + ": bad line '" + line + "'");
      m.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  return m;
}

void load_parameters(const std::filesystem::path& dir, std::span<Parameter* const> params) {
  const ParameterManifest m = read_parameter_manifest(dir);
  for (Parameter* p : params) {
    const auto it = std::find_if(m.entries.begin(), m.entries.end(),
                                 [&](const ManifestEntry& e) { return e.name == p->name; });
    if (it == m.entries.end()) {
      throw IoError("checkpoint " + dir.string() + " has no parameter '" + p->name + "'");
    }
    Tensor value = read_irdt(dir / it->file);
    if (value.shape() != p->value.shape()) {
      throw ShapeError("checkpoint parameter '" + p->name + "' has shape " +
                       shape_string(value.shape()) + ", model expects " +
                       shape_string(p->value.shape()));
    }
    p->value = std::move(value);
    p->zero_grad();
  }
}

void save_model(const std::filesystem::path& dir, Model& model, const nlohmann::ordered_json& extra) {
  const std::vector<Parameter*> params = model.parameters();
  save_parameters(dir, params, {{"variant", to_string(model.variant)}, {"config", "config.json"}});
  nlohmann::ordered_json cfg;
  cfg["tool_version"] = kToolVersion;
  cfg["variant"] = to_string(model.variant);
  cfg["fusion"] = to_json(model.cfg);
  if (!extra.is_null()) cfg["run_config"] = extra;
  write_text(dir / "config.json", cfg.dump(2) + "\n");
}

Model load_model(const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / "config.json";
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint config " + path.string() + ": " + e.what());
  }
  FusionConfig fusion;
  VariantTag variant;
  try {
    fusion = fusion_config_from_json(cfg.at("fusion"), "fusion");
    variant = parse_variant(cfg.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint config " + path.string() + ": " + e.what());
  }
  Model model = build_model(variant, fusion, 0);
  const std::vector<Parameter*> params = model.parameters();
  load_parameters(dir, params);
  return model;
}

}  // namespace irdfusion
