#include "irdfusion/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "irdfusion/errors.hpp"

namespace irdfusion {

std::string to_string(VariantTag v) {
  switch (v) {
    case VariantTag::baseline_concat: return "baseline_concat";
    case VariantTag::mfrm_only: return "mfrm_only";
    case VariantTag::dffm_only: return "dffm_only";
    case VariantTag::full: return "full";
  }
  return "?";
}

VariantTag parse_variant(std::string_view s) {
  for (VariantTag v : kAllVariants) {
    if (s == to_string(v)) return v;
  }
  throw ContractError("unknown variant '" + std::string(s) +
                      "' (expected baseline_concat, mfrm_only, dffm_only or full)");
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  if (fusion) out = fusion->parameters();
  if (baseline_merge) {
    for (Parameter* p : baseline_merge->parameters()) out.push_back(p);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

Model build_model(VariantTag variant, const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.variant = variant;
  m.cfg = cfg;
  Rng rng = Rng::stream(seed, 0x6d6f64656cULL);  // "model"
  if (variant == VariantTag::baseline_concat) {
    m.baseline_merge = init_merge_params(2 * cfg.d, cfg.d, rng, "baseline.merge");
  } else {
    FusionParams f;
    f.mfrm = init_mfrm_params(cfg, rng);
    if (variant != VariantTag::mfrm_only) {
      f.dffm_v = init_dffm_params(cfg, rng, "dffm.v");
      f.dffm_t = init_dffm_params(cfg, rng, "dffm.t");
    }
    if (cfg.merge_mode == MergeMode::concat_project) {
      f.merge = init_merge_params(2 * cfg.d, cfg.d, rng, "merge");
    }
    m.fusion = std::move(f);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  Tensor w({cfg.d, 1});
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  m.head_w = Parameter("head.weight", std::move(w), "head");
  m.head_b = Parameter("head.bias", Tensor({1}, 0.0), "head");
  return m;
}

Var model_logits(Tape& tape, Model& model, const FeatureMapPair& pair, Mode mode, Rng* rng) {
  pair.validate();
  const FusionConfig& cfg = model.cfg;
  Var seq_v = tape.constant(flatten_pe(pair.map_v, cfg.d, cfg.pe));
  Var seq_t = tape.constant(flatten_pe(pair.map_t, cfg.d, cfg.pe));

  Var features;
  if (model.variant == VariantTag::baseline_concat) {
    features = add_row_bias(matmul(concat_cols(seq_v, seq_t),
                                   tape.parameter(model.baseline_merge->weight)),
                            tape.parameter(model.baseline_merge->bias));
  } else {
    FusionOptions options;
    options.mode = mode;
    options.rng = rng;
    options.record_trace = false;
    options.feedback_passes = model.variant == VariantTag::mfrm_only ? 0 : cfg.K;
    options.zero_lambda = model.variant == VariantTag::dffm_only;
    features = fuse_sequences(seq_v, seq_t, *model.fusion, cfg, options).fused_seq;
  }
  return add_row_bias(matmul(features, tape.parameter(model.head_w)), tape.parameter(model.head_b));
}

Var model_loss(Tape& tape, Model& model, const SceneSample& sample, Mode mode, Rng* rng) {
  return bce_with_logits(model_logits(tape, model, sample.pair, mode, rng), sample.target);
}

Tensor predict(Model& model, const FeatureMapPair& pair) {
  Tape tape;
  Var logits = model_logits(tape, model, pair, Mode::eval);
  Tensor p({pair.map_v.dim(1), pair.map_v.dim(2)});
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 1.0 / (1.0 + std::exp(-logits.value()[i]));
  return p;
}

double soft_iou(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size()) throw ShapeError("soft_iou: prediction/target length mismatch");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += std::min(p[i], y[i]);
    uni += std::max(p[i], y[i]);
  }
  return uni > 0.0 ? inter / uni : 1.0;
}

Metrics evaluate(Model& model, const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw ContractError("evaluate: dataset is empty");
  double bce_total = 0.0, inter = 0.0, uni = 0.0;
  std::size_t cells = 0;
  for (const SceneSample& s : samples) {
    Tape tape;
    Var logits = model_logits(tape, model, s.pair, Mode::eval);
    const Tensor& z = logits.value();
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double y = s.target[i];
      bce_total += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
      const double p = 1.0 / (1.0 + std::exp(-z[i]));
      inter += std::min(p, y);
      uni += std::max(p, y);
    }
    cells += z.size();
  }
  return {bce_total / static_cast<double>(cells), uni > 0.0 ? inter / uni : 1.0};
}

double TrainReport::final_train_loss() const {
  return epoch_train_loss.empty() ? initial_train_loss : epoch_train_loss.back();
}

nlohmann::ordered_json to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["K"] = r.K;
  j["seed"] = r.seed;
  j["parameter_count"] = r.parameter_count;
  j["initial_train_loss"] = r.initial_train_loss;
  j["final_train_loss"] = r.final_train_loss();
  j["epoch_train_loss"] = r.epoch_train_loss;
  j["test_bce"] = r.test_bce;
  j["test_soft_iou"] = r.test_soft_iou;
  return j;
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x73687566ULL;  // "shuf"
constexpr std::uint64_t kDropoutSalt = 0x64726f70ULL;  // "drop"

double mean_loss(Model& model, const std::vector<SceneSample>& samples) {
  double total = 0.0;
  for (const SceneSample& s : samples) {
    Tape tape;
    total += model_loss(tape, model, s, Mode::eval).value().item();
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

TrainReport train(Model& model, const Dataset& data, const TrainOptions& options) {
  if (data.train.empty()) throw ContractError("train: training split is empty");
  if (options.batch < 1) throw ContractError("train: batch must be >= 1");
  if (!(options.lr >= 0.0) || !std::isfinite(options.lr)) {
    throw ContractError("train: lr must be finite and >= 0");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.variant = to_string(model.variant);
  report.K = model.variant == VariantTag::full || model.variant == VariantTag::dffm_only
                 ? model.cfg.K
                 : 0;
  report.seed = options.seed;
  report.parameter_count = model.parameter_count();
  report.initial_train_loss = mean_loss(model, data.train);

  std::vector<Parameter*> params = model.parameters();
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) try {
    Rng shuffle = Rng::stream(options.seed, epoch, kShuffleSalt);
    Rng drop = Rng::stream(options.seed, epoch, kDropoutSalt);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[shuffle.uniform_index(i + 1)]);

    for (std::size_t b = 0; b < order.size(); b += options.batch) {
      const std::size_t end = std::min(order.size(), b + options.batch);
      for (Parameter* p : params) p->zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        Tape tape;
        Var loss = model_loss(tape, model, data.train[order[i]], Mode::train, &drop);
        if (!std::isfinite(loss.value().item())) {
          throw NonFiniteError("training diverged at epoch " + std::to_string(epoch + 1));
        }
        tape.backward(loss);
      }
      const double step = options.lr / static_cast<double>(end - b);
      for (Parameter* p : params) {
        for (std::size_t k = 0; k < p->value.size(); ++k) p->value[k] -= step * p->grad[k];
      }
    }
    const double epoch_loss = mean_loss(model, data.train);
    if (!std::isfinite(epoch_loss)) {
      throw NonFiniteError("training diverged at epoch " + std::to_string(epoch + 1));
    }
    report.epoch_train_loss.push_back(epoch_loss);
  } catch (const NonFiniteError& e) {
    const std::string tag = "training diverged at epoch ";
    if (std::string_view(e.what()).starts_with(tag)) throw;
    throw NonFiniteError(tag + std::to_string(epoch + 1) + ": " + e.what());
  }
  if (!data.test.empty()) {
    const Metrics m = evaluate(model, data.test);
    report.test_bce = m.bce;
    report.test_soft_iou = m.soft_iou;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

struct Cell {
  VariantTag variant;
  std::size_t K;
  std::uint64_t seed;
  TrainReport report;
};

/// Trains every cell; results land in their own slots so the outcome does
/// not depend on the thread count.
void run_cells(std::vector<Cell>& cells, const ExperimentSpec& spec, const Dataset& data) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        FusionConfig cfg = spec.fusion;
        cfg.K = cells[i].K;
        Model model = build_model(cells[i].variant, cfg, cells[i].seed);
        TrainOptions opts = spec.train;
        opts.seed = cells[i].seed;
        cells[i].report = train(model, data, opts);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(spec.threads, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

void validate_spec(const ExperimentSpec& spec) {
  spec.fusion.validate();
  spec.scene.validate();
  if (spec.fusion.d != spec.scene.C) {
    throw ContractError("fusion.d (" + std::to_string(spec.fusion.d) + ") must equal scene.C (" +
                        std::to_string(spec.scene.C) + ")");
  }
  if (spec.n_train == 0) throw ContractError("n_train must be >= 1");
  if (spec.n_test == 0) throw ContractError("n_test must be >= 1");
}

const char* ordering(double a, double b) { return a > b ? ">" : (a < b ? "<" : "="); }

}  // namespace

nlohmann::ordered_json ablation_run(const ExperimentSpec& spec) {
  validate_spec(spec);
  if (spec.seeds.size() < 3) throw ContractError("ablation needs at least 3 seeds");
  const Dataset data = make_dataset(spec.scene, spec.n_train, spec.n_test);

  std::vector<Cell> cells;
  for (VariantTag v : kAllVariants)
    for (std::uint64_t seed : spec.seeds) cells.push_back({v, spec.fusion.K, seed, {}});
  run_cells(cells, spec, data);

  nlohmann::ordered_json report;
  report["kind"] = "ablation";
  report["seeds"] = spec.seeds;
  report["n_train"] = spec.n_train;
  report["n_test"] = spec.n_test;

  std::array<double, 4> med_iou{};
  nlohmann::ordered_json variants = nlohmann::ordered_json::array();
  bool learning_ok = true;
  for (std::size_t vi = 0; vi < kAllVariants.size(); ++vi) {
    std::vector<double> iou, bce;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    std::size_t params = 0;
    for (const Cell& c : cells) {
      if (c.variant != kAllVariants[vi]) continue;
      iou.push_back(c.report.test_soft_iou);
      bce.push_back(c.report.test_bce);
      params = c.report.parameter_count;
      runs.push_back(to_json(c.report));
      if (c.variant == VariantTag::full &&
          !(c.report.final_train_loss() < 0.9 * c.report.initial_train_loss)) {
        learning_ok = false;
      }
    }
    med_iou[vi] = median(iou);
    nlohmann::ordered_json v;
    v["variant"] = to_string(kAllVariants[vi]);
    v["mfrm"] = kAllVariants[vi] == VariantTag::mfrm_only || kAllVariants[vi] == VariantTag::full;
    v["dffm"] = kAllVariants[vi] == VariantTag::dffm_only || kAllVariants[vi] == VariantTag::full;
    v["parameter_count"] = params;
    v["median_test_soft_iou"] = med_iou[vi];
    v["median_test_bce"] = median(bce);
    v["delta_soft_iou_vs_baseline"] = med_iou[vi] - med_iou[0];
    v["runs"] = std::move(runs);
    variants.push_back(std::move(v));
  }
  report["variants"] = std::move(variants);

  nlohmann::ordered_json orderings;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) {
      orderings[to_string(kAllVariants[a]) + "_vs_" + to_string(kAllVariants[b])] =
          ordering(med_iou[a], med_iou[b]);
    }
  report["orderings"] = std::move(orderings);
  report["full_gt_baseline_concat"] = med_iou[3] > med_iou[0];
  report["full_ge_mfrm_only"] = med_iou[3] >= med_iou[1];
  report["learning_signal_ok"] = learning_ok;
  report["reference_improvement_points"] = {{"mAP50", 3.5}, {"mAP75", 4.0}, {"mAP", 3.8}};
  return report;
}

nlohmann::ordered_json iteration_sweep(const ExperimentSpec& spec,
                                       const std::vector<std::size_t>& k_values) {
  validate_spec(spec);
  if (k_values.empty()) throw ContractError("iteration sweep needs at least one K");
  if (spec.seeds.empty()) throw ContractError("iteration sweep needs at least one seed");
  for (std::size_t k : k_values) {
    if (k < 1) throw ContractError("iteration sweep K values must be >= 1");
  }
  const Dataset data = make_dataset(spec.scene, spec.n_train, spec.n_test);

  std::vector<Cell> cells;
  for (std::size_t k : k_values)
    for (std::uint64_t seed : spec.seeds) cells.push_back({VariantTag::full, k, seed, {}});
  run_cells(cells, spec, data);

  nlohmann::ordered_json report;
  report["kind"] = "iteration_sweep";
  report["k_values"] = k_values;
  report["seeds"] = spec.seeds;
  report["n_train"] = spec.n_train;
  report["n_test"] = spec.n_test;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  bool all_finite = true;
  std::size_t best_k = k_values.front();
  double best = -1.0;
  for (std::size_t k : k_values) {
    std::vector<double> iou, bce;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const Cell& c : cells) {
      if (c.K != k) continue;
      iou.push_back(c.report.test_soft_iou);
      bce.push_back(c.report.test_bce);
      all_finite = all_finite && std::isfinite(c.report.test_soft_iou) &&
                   std::isfinite(c.report.test_bce) && std::isfinite(c.report.final_train_loss());
      runs.push_back(to_json(c.report));
    }
    const double m = median(iou);
    if (m > best) {
      best = m;
      best_k = k;
    }
    nlohmann::ordered_json row;
    row["K"] = k;
    row["median_test_soft_iou"] = m;
    row["median_test_bce"] = median(bce);
    row["runs"] = std::move(runs);
    rows.push_back(std::move(row));
  }
  report["rows"] = std::move(rows);
  report["all_finite"] = all_finite;
  report["argmax_K"] = best_k;
  report["paper_reference_optimum"] = 4;
  return report;
}

}  // namespace irdfusion
