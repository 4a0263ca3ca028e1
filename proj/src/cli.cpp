#include "irdfusion/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "irdfusion/config.hpp"
#include "irdfusion/errors.hpp"
#include "irdfusion/harness.hpp"
#include "irdfusion/heatmap.hpp"
#include "irdfusion/irdt.hpp"
#include "irdfusion/params_io.hpp"
#include "irdfusion/suites.hpp"
#include "irdfusion/version.hpp"

namespace irdfusion {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

// Flags mirroring config fields. --seed, --k and --variant are the short forms.
constexpr FlagSpec kConfigFlags[] = {
    {"--seed", "train.seed", "model / training seed"},
    {"--k", "fusion.K", "feedback passes"},
    {"--variant", "train.variant", "baseline_concat | mfrm_only | dffm_only | full"},
    {"--d", "fusion.d", "model width (defaults to scene channels)"},
    {"--d-h", "fusion.d_h", "MLP hidden width (defaults to 4*d)"},
    {"--d-lambda", "fusion.d_lambda", "lambda vector length"},
    {"--merge-mode", "fusion.merge_mode", "sum | concat_project"},
    {"--dropout-p", "fusion.dropout_p", "dropout probability"},
    {"--pe", "fusion.pe", "none | sinusoidal2d"},
    {"--lambda-init", "fusion.lambda_init", "initial lambda offset"},
    {"--epochs", "train.epochs", "training epochs"},
    {"--lr", "train.lr", "SGD learning rate"},
    {"--batch", "train.batch", "mini-batch size"},
    {"--n-train", "train.n_train", "training samples"},
    {"--n-test", "train.n_test", "test samples"},
    {"--seeds", "train.seeds", "comma-separated seed list"},
    {"--k-values", "train.k_values", "comma-separated K list"},
    {"--scene-seed", "scene.seed", "dataset seed"},
    {"--height", "scene.H", "map height"},
    {"--width", "scene.W", "map width"},
    {"--channels", "scene.C", "map channels"},
    {"--rho", "scene.rho", "exclusive channel fraction per modality"},
    {"--a-obj", "scene.a_obj", "object amplitude"},
    {"--a-bg", "scene.a_bg", "background amplitude"},
    {"--sigma-cm", "scene.sigma_cm", "common-mode noise sigma"},
    {"--sigma-ind", "scene.sigma_ind", "independent noise sigma"},
};

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;  // flag -> raw text
  CLI::App* app = nullptr;

  void attach(CLI::App* sub) {
    app = sub;
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", sets, "override KEY=VALUE, e.g. fusion.K=3");
    for (const FlagSpec& f : kConfigFlags) sub->add_option(f.flag, values[f.flag], f.help);
  }

  CliConfig resolve() const {
    Overrides ov;
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ContractError("--set expects KEY=VALUE, got '" + s + "'");
      ov.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const FlagSpec& f : kConfigFlags) {
      if (app->count(f.flag) > 0) ov.emplace_back(f.key, values.at(f.flag));
    }
    std::optional<fs::path> path;
    if (!config_path.empty()) path = config_path;
    return load_config(path, ov);
  }
};

std::size_t harness_threads() {
  const char* env = std::getenv("IRDFUSION_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(env, &end, 10);
  if (*end != '\0' || n == 0 || env[0] == '-') {
    throw ContractError(std::string("IRDFUSION_THREADS must be a positive integer, got '") + env +
                        "'");
  }
  return n;
}

ordered_json envelope(const char* command, const ordered_json& config) {
  ordered_json j;
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  j["config"] = config;
  return j;
}

void emit_json(const ordered_json& j, const std::string& out_path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    const fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, text);
  }
}

fs::path require_dir(const std::string& out) {
  if (out.empty()) throw ContractError("--out DIR is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create directory " + out + ": " + ec.message());
  return fs::path(out);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Dataset dataset_for(const std::string& data_dir, CliConfig& cfg) {
  if (data_dir.empty()) return make_dataset(cfg.scene, cfg.train.n_train, cfg.train.n_test);
  SceneConfig scene;
  Dataset ds = load_dataset(data_dir, &scene);
  cfg.scene = scene;
  cfg.validate();
  return ds;
}

std::string heatmap_comment(const ordered_json& config, const std::string& what) {
  return "tool_version=" + std::string(kToolVersion) + "\nconfig=" + config.dump() +
         "\ncontent=" + what;
}

void print_usage(const CLI::App& app, std::ostream& err) { err << app.help(); }

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iterative two-modality feature fusion toolkit", "irdfusion"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(0, 1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
  ConfigFlags gen_cfg;
  gen_cfg.attach(gen);
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* trn = app.add_subcommand("train", "train one variant and save a checkpoint");
  ConfigFlags trn_cfg;
  trn_cfg.attach(trn);
  std::string trn_out, trn_data;
  trn->add_option("--out", trn_out, "output directory")->required();
  trn->add_option("--data", trn_data, "dataset directory (default: generate in memory)");

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  ConfigFlags evl_cfg;
  evl_cfg.attach(evl);
  std::string evl_model, evl_data, evl_out, evl_split = "test";
  evl->add_option("--model", evl_model, "checkpoint directory")->required();
  evl->add_option("--data", evl_data, "dataset directory (default: generate in memory)");
  evl->add_option("--split", evl_split, "train | test");
  evl->add_option("--out", evl_out, "report file (default: stdout)");

  // ablate
  auto* abl = app.add_subcommand("ablate", "train all four variants over several seeds");
  ConfigFlags abl_cfg;
  abl_cfg.attach(abl);
  std::string abl_out;
  abl->add_option("--out", abl_out, "report file (default: stdout)");

  // sweep-iters
  auto* swp = app.add_subcommand("sweep-iters", "train the full model at several K");
  ConfigFlags swp_cfg;
  swp_cfg.attach(swp);
  std::string swp_out;
  swp->add_option("--out", swp_out, "report file (default: stdout)");

  // fuse
  auto* fus = app.add_subcommand("fuse", "fuse two IRDT maps, write the fused map and heatmaps");
  ConfigFlags fus_cfg;
  fus_cfg.attach(fus);
  std::string fus_v, fus_t, fus_out, fus_model;
  fus->add_option("--map-v", fus_v, "visible map, C×H×W IRDT")->required();
  fus->add_option("--map-t", fus_t, "thermal map, C×H×W IRDT")->required();
  fus->add_option("--out", fus_out, "output directory")->required();
  fus->add_option("--model", fus_model, "checkpoint (default: fresh init from --seed)");

  // check-identity
  auto* idn = app.add_subcommand("check-identity", "relation-map identity suite");
  std::size_t idn_seeds = 100, idn_n = 16, idn_d = 8;
  double idn_tol = 1e-10;
  std::string idn_out;
  idn->add_option("--seeds", idn_seeds, "number of random seeds");
  idn->add_option("--n", idn_n, "sequence length N");
  idn->add_option("--d", idn_d, "feature width d");
  idn->add_option("--tol", idn_tol, "max relative deviation");
  idn->add_option("--out", idn_out, "report file (default: stdout)");

  // grad-check
  auto* grd = app.add_subcommand("grad-check", "finite-difference gradient suite");
  std::uint64_t grd_seed = 0;
  double grd_h = 1e-5, grd_tol = 1e-5;
  std::string grd_out;
  grd->add_option("--seed", grd_seed, "problem seed");
  grd->add_option("--step", grd_h, "central difference step h");
  grd->add_option("--tol", grd_tol, "max relative error");
  grd->add_option("--out", grd_out, "report file (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    print_usage(app, err);
    return kExitContract;
  }
  if (app.get_subcommands().empty()) {
    print_usage(app, err);
    return kExitContract;
  }

  try {
    if (*gen) {
      CliConfig cfg = gen_cfg.resolve();
      const auto t0 = std::chrono::steady_clock::now();
      gen_dataset(cfg.scene, cfg.train.n_train, cfg.train.n_test, gen_out, to_json(cfg));
      err << "gen-data: " << cfg.train.n_train << "+" << cfg.train.n_test << " samples in "
          << seconds_since(t0) << " s\n";
      return kExitOk;
    }

    if (*trn) {
      CliConfig cfg = trn_cfg.resolve();
      const Dataset data = dataset_for(trn_data, cfg);
      const fs::path dir = require_dir(trn_out);
      Model model = build_model(cfg.train.variant, cfg.fusion, cfg.train.seed);
      const TrainReport report = train(model, data, cfg.train_options());
      ordered_json j = envelope("train", to_json(cfg));
      j["report"] = to_json(report);
      emit_json(j, (dir / "report.json").string(), out);
      ordered_json timing;
      timing["wall_seconds"] = report.wall_seconds;
      write_text(dir / "timing.json", timing.dump(2) + "\n");
      save_model(dir / "model", model, to_json(cfg));
      err << "train: " << to_string(cfg.train.variant) << " test soft-IoU "
          << report.test_soft_iou << " in " << report.wall_seconds << " s\n";
      return kExitOk;
    }

    if (*evl) {
      CliConfig cfg = evl_cfg.resolve();
      Model model = load_model(evl_model);
      if (evl_cfg.app->count("--variant") == 0) cfg.train.variant = model.variant;
      cfg.fusion = model.cfg;
      const Dataset data = dataset_for(evl_data, cfg);
      if (evl_split != "train" && evl_split != "test") {
        throw ContractError("--split must be train or test, got '" + evl_split + "'");
      }
      const auto& samples = evl_split == "train" ? data.train : data.test;
      if (samples.empty()) throw ContractError("the " + evl_split + " split is empty");
      const Metrics m = evaluate(model, samples);
      ordered_json j = envelope("eval", to_json(cfg));
      j["model"] = evl_model;
      j["variant"] = to_string(model.variant);
      j["split"] = evl_split;
      j["samples"] = samples.size();
      j["metrics"] = {{"bce", m.bce}, {"soft_iou", m.soft_iou}};
      emit_json(j, evl_out, out);
      return kExitOk;
    }

    if (*abl) {
      CliConfig cfg = abl_cfg.resolve();
      const auto t0 = std::chrono::steady_clock::now();
      ordered_json j = envelope("ablate", to_json(cfg));
      j["report"] = ablation_run(cfg.experiment(harness_threads()));
      emit_json(j, abl_out, out);
      err << "ablate: " << seconds_since(t0) << " s\n";
      return kExitOk;
    }

    if (*swp) {
      CliConfig cfg = swp_cfg.resolve();
      const auto t0 = std::chrono::steady_clock::now();
      ordered_json j = envelope("sweep-iters", to_json(cfg));
      j["report"] = iteration_sweep(cfg.experiment(harness_threads()), cfg.train.k_values);
      emit_json(j, swp_out, out);
      err << "sweep-iters: " << seconds_since(t0) << " s\n";
      return kExitOk;
    }

    if (*fus) {
      CliConfig cfg = fus_cfg.resolve();
      FeatureMapPair pair{read_irdt(fus_v), read_irdt(fus_t)};
      pair.validate();
      std::optional<Model> model;
      FusionParams fresh;
      FusionParams* params = nullptr;
      if (!fus_model.empty()) {
        model = load_model(fus_model);
        if (!model->fusion) {
          throw ContractError("checkpoint variant " + to_string(model->variant) +
                              " has no fusion parameters");
        }
        cfg.fusion = model->cfg;
        params = &*model->fusion;
      } else {
        fresh = init_fusion_params(cfg.fusion, cfg.train.seed);
        params = &fresh;
      }
      const std::size_t height = pair.map_v.dim(1), width = pair.map_v.dim(2);
      if (pair.map_v.dim(0) != cfg.fusion.d) {
        throw ShapeError("map channels " + std::to_string(pair.map_v.dim(0)) +
                         " differ from fusion.d " + std::to_string(cfg.fusion.d));
      }
      const fs::path dir = require_dir(fus_out);
      Tape tape;
      const FusedMap fused = irdfusion_forward(tape, pair, *params, cfg.fusion, Mode::eval);
      const ordered_json config = to_json(cfg);
      write_irdt(dir / "fused.irdt", fused.map.value());
      emit_heatmap(fused.map.value(), dir / "fused.pgm", heatmap_comment(config, "fused"));

      ordered_json iterations = ordered_json::array();
      for (const IterationRecord& r : fused.result.trace) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "iter_%02zu", r.k);
        const std::string sv = std::string(stem) + "_v.pgm", st = std::string(stem) + "_t.pgm";
        emit_heatmap(reshape_map(r.next_v, height, width), dir / sv,
                     heatmap_comment(config, "F_v after feedback pass " + std::to_string(r.k)));
        emit_heatmap(reshape_map(r.next_t, height, width), dir / st,
                     heatmap_comment(config, "F_t after feedback pass " + std::to_string(r.k)));
        ordered_json it;
        it["k"] = r.k;
        it["lambda_v"] = r.lambda_v;
        it["lambda_t"] = r.lambda_t;
        it["heatmap_v"] = sv;
        it["heatmap_t"] = st;
        iterations.push_back(std::move(it));
      }
      ordered_json j = envelope("fuse", config);
      j["map_v"] = fus_v;
      j["map_t"] = fus_t;
      j["model"] = fus_model.empty() ? ordered_json(nullptr) : ordered_json(fus_model);
      j["fused"] = "fused.irdt";
      j["iterations"] = std::move(iterations);
      emit_json(j, (dir / "report.json").string(), out);
      return kExitOk;
    }

    if (*idn) {
      if (idn_seeds == 0 || idn_n == 0 || idn_d == 0) {
        throw ContractError("--seeds, --n and --d must be positive");
      }
      const IdentitySuiteResult r = run_identity_suite(idn_seeds, idn_n, idn_d, idn_tol);
      ordered_json config{{"seeds", idn_seeds}, {"N", idn_n}, {"d", idn_d}, {"tolerance", idn_tol}};
      ordered_json j = envelope("check-identity", config);
      j.update(r.to_json());
      emit_json(j, idn_out, out);
      err << "check-identity: max deviation " << r.max_deviation << " in " << r.seconds << " s\n";
      return r.pass() ? kExitOk : kExitVerification;
    }

    if (*grd) {
      const GradSuiteResult r = run_grad_suite(grd_seed, grd_h, grd_tol);
      ordered_json config{{"seed", grd_seed}, {"h", grd_h}, {"tolerance", grd_tol}};
      ordered_json j = envelope("grad-check", config);
      j["report"] = r.to_json();
      emit_json(j, grd_out, out);
      err << "grad-check: max rel error " << r.max_rel_error() << " in " << r.seconds << " s\n";
      return r.pass() ? kExitOk : kExitVerification;
    }
  } catch (const VerificationError& e) {
    err << "verification failed: " << e.what() << "\n";
    return kExitVerification;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitContract;
  }
  print_usage(app, err);
  return kExitContract;
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace irdfusion
