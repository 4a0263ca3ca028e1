#include "irdfusion/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "irdfusion/config.hpp"
#include "irdfusion/errors.hpp"
#include "irdfusion/irdt.hpp"
#include "irdfusion/version.hpp"
#include "json.hpp"

namespace irdfusion {

void SceneConfig::validate() const {
  if (H < 1) throw ContractError("scene.H must be >= 1");
  if (W < 1) throw ContractError("scene.W must be >= 1");
  if (C < 1) throw ContractError("scene.C must be >= 1");
  if (n_objects_min > n_objects_max) {
    throw ContractError("scene.n_objects_min must not exceed scene.n_objects_max");
  }
  if (extent_min < 1) throw ContractError("scene.extent_min must be >= 1");
  if (extent_min > extent_max) {
    throw ContractError("scene.extent_min must not exceed scene.extent_max");
  }
  const std::pair<const char*, double> amplitudes[] = {
      {"scene.a_obj", a_obj}, {"scene.a_bg", a_bg}, {"scene.sigma_cm", sigma_cm},
      {"scene.sigma_ind", sigma_ind}};
  for (auto [name, v] : amplitudes) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError(std::string(name) + " must be >= 0");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw ContractError("scene.rho must lie in [0, 1]");
  if (rho > 0.5) {
    throw ContractError("scene.rho must be <= 0.5: exclusive channel subsets must be disjoint");
  }
}

namespace {

constexpr std::uint64_t kSceneSalt = 0x7363656eULL;  // "scen"

struct Cosine {
  double fx, fy, phase;
  std::vector<double> channel_amp;
};

}  // namespace

// Draw order (fixed; part of the reproducibility contract):
//   1. background: count in [1,4], then per cosine fx, fy, phase, C amplitudes
//   2. object count, then per object: height, width, y0, x0, channel
//      permutation (Fisher-Yates), C magnitudes, C signs
//   3. common-mode noise, C·H·W normals
//   4. independent noise for map_v, then for map_t
SceneSample gen_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const std::size_t H = cfg.H, W = cfg.W, C = cfg.C;
  Rng rng = Rng::stream(cfg.seed, index, kSceneSalt);

  std::vector<Cosine> cosines(static_cast<std::size_t>(rng.uniform_int(1, 4)));
  const double amp_scale = 1.0 / std::sqrt(static_cast<double>(cosines.size()));
  for (auto& c : cosines) {
    // At most 1.5 cycles across the map in either direction.
    c.fx = 2.0 * std::numbers::pi * rng.uniform(0.0, 1.5) / static_cast<double>(W);
    c.fy = 2.0 * std::numbers::pi * rng.uniform(0.0, 1.5) / static_cast<double>(H);
    c.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c.channel_amp.resize(C);
    for (auto& a : c.channel_amp) a = rng.normal() * amp_scale;
  }

  SceneSample sample;
  Tensor background({C, H, W});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double v = 0.0;
        for (const auto& c : cosines) {
          v += c.channel_amp[ch] *
               std::cos(c.fx * static_cast<double>(x) + c.fy * static_cast<double>(y) + c.phase);
        }
        background[(ch * H + y) * W + x] = cfg.a_bg * v;
      }

  Tensor map_v = background;
  Tensor map_t = background;
  sample.target = Tensor({H, W}, 0.0);

  const auto n_objects = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(cfg.n_objects_min), static_cast<std::int64_t>(cfg.n_objects_max)));
  const auto n_exclusive = static_cast<std::size_t>(std::floor(cfg.rho * static_cast<double>(C)));
  for (std::size_t o = 0; o < n_objects; ++o) {
    SceneObject obj;
    const auto ext = [&](std::size_t limit) {
      const auto e = static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(cfg.extent_min), static_cast<std::int64_t>(cfg.extent_max)));
      return std::min(e, limit);
    };
    obj.height = ext(H);
    obj.width = ext(W);
    obj.y0 = rng.uniform_index(H - obj.height + 1);
    obj.x0 = rng.uniform_index(W - obj.width + 1);

    std::vector<std::size_t> perm(C);
    for (std::size_t i = 0; i < C; ++i) perm[i] = i;
    for (std::size_t i = C; i-- > 1;) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    obj.v_channels.assign(perm.begin(), perm.begin() + n_exclusive);
    obj.t_channels.assign(perm.begin() + n_exclusive, perm.begin() + 2 * n_exclusive);
    obj.shared_channels.assign(perm.begin() + 2 * n_exclusive, perm.end());

    obj.signature.resize(C);
    for (auto& s : obj.signature) s = cfg.a_obj * rng.uniform(0.5, 1.5);
    for (auto& s : obj.signature) {
      if (rng.uniform() < 0.5) s = -s;
    }

    auto stamp = [&](Tensor& map, const std::vector<std::size_t>& channels) {
      for (std::size_t ch : channels)
        for (std::size_t y = obj.y0; y < obj.y0 + obj.height; ++y)
          for (std::size_t x = obj.x0; x < obj.x0 + obj.width; ++x)
            map[(ch * H + y) * W + x] += obj.signature[ch];
    };
    stamp(map_v, obj.v_channels);
    stamp(map_v, obj.shared_channels);
    stamp(map_t, obj.t_channels);
    stamp(map_t, obj.shared_channels);
    for (std::size_t y = obj.y0; y < obj.y0 + obj.height; ++y)
      for (std::size_t x = obj.x0; x < obj.x0 + obj.width; ++x) sample.target(y, x) = 1.0;
    sample.objects.push_back(std::move(obj));
  }

  for (std::size_t i = 0; i < map_v.size(); ++i) {
    const double cm = cfg.sigma_cm * rng.normal();
    map_v[i] += cm;
    map_t[i] += cm;
  }
  for (std::size_t i = 0; i < map_v.size(); ++i) map_v[i] += cfg.sigma_ind * rng.normal();
  for (std::size_t i = 0; i < map_t.size(); ++i) map_t[i] += cfg.sigma_ind * rng.normal();

  sample.pair = {std::move(map_v), std::move(map_t)};
  return sample;
}

Dataset make_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test) {
  Dataset ds;
  ds.train.reserve(n_train);
  ds.test.reserve(n_test);
  for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(gen_scene(cfg, i));
  for (std::size_t i = 0; i < n_test; ++i) ds.test.push_back(gen_scene(cfg, n_train + i));
  return ds;
}

namespace {

std::string sample_stem(const char* split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", split, i);
  return buf;
}

}  // namespace

std::string gen_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                        const std::filesystem::path& out_dir,
                        const nlohmann::ordered_json& run_config) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["tool_version"] = kToolVersion;
  if (!run_config.is_null()) manifest["config"] = run_config;
  manifest["scene"] = to_json(cfg);
  manifest["train"] = nlohmann::ordered_json::array();
  manifest["test"] = nlohmann::ordered_json::array();
  auto emit = [&](const char* split, std::size_t i, std::uint64_t index) {
    const SceneSample s = gen_scene(cfg, index);
    const std::string stem = sample_stem(split, i);
    nlohmann::ordered_json entry;
    entry["index"] = index;
    entry["map_v"] = stem + "_v.irdt";
    entry["map_t"] = stem + "_t.irdt";
    entry["target"] = stem + "_target.irdt";
    write_irdt(out_dir / entry["map_v"].get<std::string>(), s.pair.map_v);
    write_irdt(out_dir / entry["map_t"].get<std::string>(), s.pair.map_t);
    write_irdt(out_dir / entry["target"].get<std::string>(), s.target);
    manifest[split].push_back(std::move(entry));
  };
  for (std::size_t i = 0; i < n_train; ++i) emit("train", i, i);
  for (std::size_t i = 0; i < n_test; ++i) emit("test", i, n_train + i);
  std::string text = manifest.dump(2) + "\n";
  write_text(out_dir / "manifest.json", text);
  return text;
}

Dataset load_dataset(const std::filesystem::path& dir, SceneConfig* cfg_out) {
  const std::filesystem::path manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  auto load_split = [&](const char* split, std::vector<SceneSample>& out) {
    for (const auto& entry : manifest.at(split)) {
      SceneSample s;
      s.pair.map_v = read_irdt(dir / entry.at("map_v").get<std::string>());
      s.pair.map_t = read_irdt(dir / entry.at("map_t").get<std::string>());
      s.target = read_irdt(dir / entry.at("target").get<std::string>());
      s.pair.validate();
      out.push_back(std::move(s));
    }
  };
  try {
    load_split("train", ds.train);
    load_split("test", ds.test);
    if (cfg_out) *cfg_out = scene_config_from_json(manifest.at("scene"), "scene");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace irdfusion
