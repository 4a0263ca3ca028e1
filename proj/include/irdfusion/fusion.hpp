#pragma once

// Cross-modal fusion of an RGB (v) and a thermal (t) feature map.
//
// Mutual refinement: each modality projects to Q/K/V, forms its own
// attention map A_i = softmax(Q_i K_iᵀ / sqrt(d)), and applies it to a
// lambda-weighted blend of both modalities' values,
//     F'_i = F_i + Dropout(LN(A_i (V_i + lambda_i V_other))),
// where lambda_i = exp(<q1,k1>) - exp(<q2,k2>) + lambda_init.
//
// Differential feedback (v stream shown; t mirrors it):
//     dif_v     = F'_t - beta F'_v
//     F_v(k+1)  = mu F_v(k) + alpha MLP(LN(dif_v))
// while the thermal input stays at its original value.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "irdfusion/autodiff.hpp"
#include "irdfusion/rng.hpp"
#include "irdfusion/tensor.hpp"

namespace irdfusion {

enum class MergeMode { sum, concat_project };
enum class PeKind { none, sinusoidal2d };

std::string to_string(MergeMode m);
std::string to_string(PeKind p);
MergeMode parse_merge_mode(std::string_view s);
PeKind parse_pe_kind(std::string_view s);

struct FusionConfig {
  std::size_t d = 8;         // model width == channel count of the maps
  std::size_t d_h = 32;      // MLP hidden width
  std::size_t d_lambda = 8;  // length of each lambda vector
  std::size_t K = 4;         // feedback passes
  MergeMode merge_mode = MergeMode::sum;
  double dropout_p = 0.1;
  PeKind pe = PeKind::sinusoidal2d;
  double lambda_init = 0.5;

  /// Throws ContractError naming the offending field.
  void validate() const;

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

struct ModalityParams {
  Parameter wq, wk, wv;
  Parameter lambda_q1, lambda_k1, lambda_q2, lambda_k2;
  Parameter norm_gamma, norm_beta;  // the LN of the LN&D block

  std::vector<Parameter*> parameters();
};

struct MfrmParams {
  ModalityParams v, t;
  Parameter lambda_init;

  std::vector<Parameter*> parameters();
};

struct MlpParams {
  Parameter w1, b1, w2, b2;
};

struct DffmParams {
  Parameter alpha, beta, mu;
  MlpParams mlp;
  Parameter ln_gamma, ln_beta;

  std::vector<Parameter*> parameters();
};

/// Width-2d concatenation through a learned d-output affine map.
struct MergeParams {
  Parameter weight, bias;

  std::vector<Parameter*> parameters();
};

struct FusionParams {
  MfrmParams mfrm;
  std::optional<DffmParams> dffm_v, dffm_t;  // one copy per stream
  std::optional<MergeParams> merge;          // concat_project only

  std::vector<Parameter*> parameters();
};

ModalityParams init_modality_params(const FusionConfig& cfg, Rng& rng, const std::string& prefix);
MfrmParams init_mfrm_params(const FusionConfig& cfg, Rng& rng);
DffmParams init_dffm_params(const FusionConfig& cfg, Rng& rng, const std::string& prefix);
MergeParams init_merge_params(std::size_t in, std::size_t out, Rng& rng, const std::string& prefix);
/// Full parameter set for cfg, drawn from one seeded stream.
FusionParams init_fusion_params(const FusionConfig& cfg, std::uint64_t seed);

struct FeatureMapPair {
  Tensor map_v, map_t;  // C×H×W each

  /// Both maps rank 3 with identical extents.
  void validate() const;
};

// ---- flatten / positional encoding ----------------------------------------

/// Fixed 2-D sinusoidal table [(H·W)×d]. Channels [0, d/2) encode x and
/// [d/2, d) encode y; within a half, channel 2j holds sin(pos / 10000^(2j/(d/2)))
/// and 2j+1 the matching cosine. Requires d/2 even.
Tensor positional_encoding_2d(std::size_t height, std::size_t width, std::size_t d);
/// C×H×W map to [(H·W)×C] rows in scan order (row y·W+x), plus the PE table.
Tensor flatten_pe(const Tensor& map, std::size_t d, PeKind pe);
/// Inverse of flatten_pe with PeKind::none.
Tensor reshape_map(const Tensor& seq, std::size_t height, std::size_t width);

// ---- mutual refinement ------------------------------------------------------

struct Qkv {
  Var q, k, v;
};

struct DropoutState {
  Mode mode = Mode::eval;
  double p = 0.0;
  Rng* rng = nullptr;
};

Qkv project_qkv(const Var& features, ModalityParams& params);
/// softmax_rows(Q·Kᵀ / sqrt(d)), single head.
Var attention_map(const Var& q, const Var& k);
Var compute_lambda(Tape& tape, ModalityParams& params, Parameter& lambda_init);
double compute_lambda(const Tensor& q1, const Tensor& k1, const Tensor& q2, const Tensor& k2,
                      double lambda_init);
/// v_self + lambda · v_other
Var fuse_values(const Var& v_self, const Var& v_other, const Var& lambda);

/// Projections and attention of one modality's input; reusable across
/// passes while that input is held fixed.
struct ModalityEncoding {
  Var input;
  Qkv qkv;
  Var attn;
};

ModalityEncoding encode_modality(const Var& features, ModalityParams& params);

struct MfrmOutput {
  Var refined_v, refined_t;    // after LN&D and the residual
  Var pre_norm_v, pre_norm_t;  // A_i (V_i + lambda_i V_other)
  Var attn_v, attn_t;
  Var value_v, value_t;
  Var lambda_v, lambda_t;
};

MfrmOutput mfrm_combine(const ModalityEncoding& v, const ModalityEncoding& t,
                        const Var& lambda_v, const Var& lambda_t, MfrmParams& params,
                        const DropoutState& dropout);

/// One mutual-refinement pass. `zero_lambda` replaces both lambdas with a
/// constant 0 that is disconnected from the lambda parameters.
MfrmOutput mfrm_forward(const Var& f_v, const Var& f_t, MfrmParams& params,
                        const DropoutState& dropout, bool zero_lambda = false);

// ---- differential feedback --------------------------------------------------

struct DffmOutput {
  Var next;  // input of the next pass for this stream
  Var dif;
};

/// affine(d→d_h) → GELU → affine(d_h→d)
Var mlp_forward(const Var& x, MlpParams& mlp);

DffmOutput dffm_step(const Var& refined_self, const Var& refined_other, const Var& self_k,
                     DffmParams& params);

// ---- iterated fusion --------------------------------------------------------

/// Every intermediate of feedback pass k (1-based), both streams.
struct IterationRecord {
  std::size_t k = 0;
  // v stream: refines F_v holding F_t fixed
  Tensor input_v;    // F_v(k)
  Tensor held_t;     // thermal input of this pass; always the original F_t
  Tensor refined_v;  // F'_v(k)
  Tensor cross_v;    // F'_t(k) as computed inside the v stream
  Tensor dif_v;      // F'_t(k) - beta_v F'_v(k)
  Tensor next_v;     // F_v(k+1)
  // t stream: mirror
  Tensor input_t;
  Tensor held_v;
  Tensor refined_t;
  Tensor cross_t;
  Tensor dif_t;
  Tensor next_t;
  double lambda_v = 0.0;
  double lambda_t = 0.0;
};

using IterationTrace = std::vector<IterationRecord>;

struct FusionOptions {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // required in train mode with dropout_p > 0
  std::size_t feedback_passes = 4;
  bool zero_lambda = false;
  bool record_trace = true;
};

struct FusionResult {
  Var fused_seq;            // [(H·W)×d]
  Var final_v, final_t;     // F' of the last refinement pass of each stream
  IterationTrace trace;
};

/// Runs both streams on already-flattened sequences: `feedback_passes`
/// refine+feedback rounds, then a final refinement pass whose F'_v (v stream)
/// and F'_t (t stream) are merged. Zero passes is a single refinement.
FusionResult fuse_sequences(const Var& seq_v, const Var& seq_t, FusionParams& params,
                            const FusionConfig& cfg, const FusionOptions& options);

Var merge_streams(const Var& final_v, const Var& final_t, FusionParams& params,
                  const FusionConfig& cfg);

struct FusedMap {
  Var map;  // C×H×W
  FusionResult result;
};

/// Flatten+PE both maps, run cfg.K passes, merge and reshape.
FusedMap irdfusion_forward(Tape& tape, const FeatureMapPair& pair, FusionParams& params,
                           const FusionConfig& cfg, Mode mode, Rng* rng = nullptr);

/// Per-thread invocation counts of the fusion building blocks.
struct FusionCallCounters {
  std::size_t attention_map = 0;
  std::size_t mfrm = 0;
  std::size_t dffm_step = 0;
};

FusionCallCounters& call_counters();
void reset_call_counters();

}  // namespace irdfusion
