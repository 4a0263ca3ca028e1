#pragma once

// Toy dense object-presence task over fused features, used to compare
// module variants and iteration counts.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irdfusion/fusion.hpp"
#include "irdfusion/synth.hpp"
#include "json.hpp"

namespace irdfusion {

enum class VariantTag { baseline_concat, mfrm_only, dffm_only, full };

inline constexpr std::array<VariantTag, 4> kAllVariants = {
    VariantTag::baseline_concat, VariantTag::mfrm_only, VariantTag::dffm_only, VariantTag::full};

std::string to_string(VariantTag v);
VariantTag parse_variant(std::string_view s);

/// baseline_concat: channel concat + learned affine merge, no attention or feedback.
/// mfrm_only:       one refinement pass, no feedback (K ignored).
/// dffm_only:       K feedback passes with both lambdas forced to a detached 0.
/// full:            complete fusion with K feedback passes.
/// Every variant ends in a per-cell affine d→1 head and a sigmoid.
struct Model {
  VariantTag variant = VariantTag::full;
  FusionConfig cfg;
  std::optional<FusionParams> fusion;
  std::optional<MergeParams> baseline_merge;
  Parameter head_w;  // d×1
  Parameter head_b;  // 1

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
};

Model build_model(VariantTag variant, const FusionConfig& cfg, std::uint64_t seed);

/// Per-cell logits [(H·W)×1] in scan order.
Var model_logits(Tape& tape, Model& model, const FeatureMapPair& pair, Mode mode,
                 Rng* rng = nullptr);
Var model_loss(Tape& tape, Model& model, const SceneSample& sample, Mode mode, Rng* rng = nullptr);
/// Sigmoid probabilities, H×W.
Tensor predict(Model& model, const FeatureMapPair& pair);

/// Σ min(p, y) / Σ max(p, y); 1 when both are identically zero.
double soft_iou(std::span<const double> p, std::span<const double> y);

struct Metrics {
  double bce = 0.0;
  double soft_iou = 0.0;
};

/// Mean per-cell BCE and soft-IoU pooled over every cell of every sample.
Metrics evaluate(Model& model, const std::vector<SceneSample>& samples);

struct TrainOptions {
  std::size_t epochs = 60;
  double lr = 0.05;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::string variant;
  std::size_t K = 0;
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;
  double initial_train_loss = 0.0;         // eval-mode BCE on the train split before any step
  std::vector<double> epoch_train_loss;    // same measure after each epoch
  double test_bce = 0.0;
  double test_soft_iou = 0.0;
  double wall_seconds = 0.0;               // kept out of the deterministic JSON

  double final_train_loss() const;
};

nlohmann::ordered_json to_json(const TrainReport& r);

/// Plain SGD on mean per-cell BCE. Batch order and dropout masks come from
/// streams of options.seed. Throws ContractError if the train split is empty
/// and NonFiniteError naming the epoch on divergence.
TrainReport train(Model& model, const Dataset& data, const TrainOptions& options);

struct ExperimentSpec {
  FusionConfig fusion;
  SceneConfig scene;
  TrainOptions train;
  std::size_t n_train = 24;
  std::size_t n_test = 24;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t threads = 1;
};

/// Trains all four variants per seed on one dataset and reports per-variant
/// medians, pairwise orderings and a module on/off table.
nlohmann::ordered_json ablation_run(const ExperimentSpec& spec);

/// Trains the full variant at each K.
nlohmann::ordered_json iteration_sweep(const ExperimentSpec& spec,
                                       const std::vector<std::size_t>& k_values);

double median(std::vector<double> values);

}  // namespace irdfusion
