#include "irdfusion/fusion.hpp"

#include <cmath>

#include "irdfusion/errors.hpp"

namespace irdfusion {

std::string to_string(MergeMode m) {
  return m == MergeMode::sum ? "sum" : "concat_project";
}

std::string to_string(PeKind p) { return p == PeKind::none ? "none" : "sinusoidal2d"; }

MergeMode parse_merge_mode(std::string_view s) {
  if (s == "sum") return MergeMode::sum;
  if (s == "concat_project") return MergeMode::concat_project;
  throw ContractError("merge_mode must be sum or concat_project, got '" + std::string(s) + "'");
}

PeKind parse_pe_kind(std::string_view s) {
  if (s == "none") return PeKind::none;
  if (s == "sinusoidal2d") return PeKind::sinusoidal2d;
  throw ContractError("pe must be none or sinusoidal2d, got '" + std::string(s) + "'");
}

void FusionConfig::validate() const {
  if (d < 1) throw ContractError("d must be >= 1");
  if (d_h < 1) throw ContractError("d_h must be >= 1");
  if (d_lambda < 1) throw ContractError("d_lambda must be >= 1");
  if (K < 1) throw ContractError("K must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw ContractError("dropout_p must lie in [0, 1)");
  }
  if (!std::isfinite(lambda_init)) throw ContractError("lambda_init must be finite");
  if (pe == PeKind::sinusoidal2d && (d % 4 != 0)) {
    throw ContractError("d must be a multiple of 4 for pe=sinusoidal2d (even d/2 split)");
  }
}

// ---- parameters -------------------------------------------------------------

std::vector<Parameter*> ModalityParams::parameters() {
  return {&wq, &wk, &wv, &lambda_q1, &lambda_k1, &lambda_q2, &lambda_k2, &norm_gamma, &norm_beta};
}

std::vector<Parameter*> MfrmParams::parameters() {
  auto out = v.parameters();
  for (Parameter* p : t.parameters()) out.push_back(p);
  out.push_back(&lambda_init);
  return out;
}

std::vector<Parameter*> DffmParams::parameters() {
  return {&alpha, &beta, &mu, &mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2, &ln_gamma, &ln_beta};
}

std::vector<Parameter*> MergeParams::parameters() { return {&weight, &bias}; }

std::vector<Parameter*> FusionParams::parameters() {
  auto out = mfrm.parameters();
  for (auto* dffm : {&dffm_v, &dffm_t}) {
    if (*dffm) {
      for (Parameter* p : (*dffm)->parameters()) out.push_back(p);
    }
  }
  if (merge) {
    for (Parameter* p : merge->parameters()) out.push_back(p);
  }
  return out;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

ModalityParams init_modality_params(const FusionConfig& cfg, Rng& rng, const std::string& prefix) {
  const std::size_t d = cfg.d;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  ModalityParams m;
  m.wq = Parameter(prefix + ".wq", uniform_tensor({d, d}, bound, rng), "projection");
  m.wk = Parameter(prefix + ".wk", uniform_tensor({d, d}, bound, rng), "projection");
  m.wv = Parameter(prefix + ".wv", uniform_tensor({d, d}, bound, rng), "projection");
  m.lambda_q1 = Parameter(prefix + ".lambda_q1", normal_tensor({cfg.d_lambda}, 0.1, rng), "lambda");
  m.lambda_k1 = Parameter(prefix + ".lambda_k1", normal_tensor({cfg.d_lambda}, 0.1, rng), "lambda");
  m.lambda_q2 = Parameter(prefix + ".lambda_q2", normal_tensor({cfg.d_lambda}, 0.1, rng), "lambda");
  m.lambda_k2 = Parameter(prefix + ".lambda_k2", normal_tensor({cfg.d_lambda}, 0.1, rng), "lambda");
  m.norm_gamma = Parameter(prefix + ".norm_gamma", Tensor({d}, 1.0), "norm");
  m.norm_beta = Parameter(prefix + ".norm_beta", Tensor({d}, 0.0), "norm");
  return m;
}

MfrmParams init_mfrm_params(const FusionConfig& cfg, Rng& rng) {
  MfrmParams p;
  p.v = init_modality_params(cfg, rng, "mfrm.v");
  p.t = init_modality_params(cfg, rng, "mfrm.t");
  p.lambda_init = Parameter("mfrm.lambda_init", Tensor::scalar(cfg.lambda_init), "lambda");
  return p;
}

DffmParams init_dffm_params(const FusionConfig& cfg, Rng& rng, const std::string& prefix) {
  const std::size_t d = cfg.d, h = cfg.d_h;
  DffmParams p;
  p.alpha = Parameter(prefix + ".alpha", Tensor::scalar(1.0), "feedback_gain");
  p.beta = Parameter(prefix + ".beta", Tensor::scalar(1.0), "feedback_gain");
  p.mu = Parameter(prefix + ".mu", Tensor::scalar(1.0), "feedback_gain");
  p.mlp.w1 = Parameter(prefix + ".mlp.w1",
                       uniform_tensor({d, h}, 1.0 / std::sqrt(static_cast<double>(d)), rng), "mlp");
  p.mlp.b1 = Parameter(prefix + ".mlp.b1", Tensor({h}, 0.0), "mlp");
  // Zero output layer: the first feedback is exactly F_next = mu F_k.
  p.mlp.w2 = Parameter(prefix + ".mlp.w2", Tensor({h, d}, 0.0), "mlp");
  p.mlp.b2 = Parameter(prefix + ".mlp.b2", Tensor({d}, 0.0), "mlp");
  p.ln_gamma = Parameter(prefix + ".ln_gamma", Tensor({d}, 1.0), "norm");
  p.ln_beta = Parameter(prefix + ".ln_beta", Tensor({d}, 0.0), "norm");
  return p;
}

MergeParams init_merge_params(std::size_t in, std::size_t out, Rng& rng, const std::string& prefix) {
  MergeParams m;
  m.weight = Parameter(prefix + ".weight",
                       uniform_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                       "merge");
  m.bias = Parameter(prefix + ".bias", Tensor({out}, 0.0), "merge");
  return m;
}

FusionParams init_fusion_params(const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::stream(seed, 0x66757369ULL);
  FusionParams p;
  p.mfrm = init_mfrm_params(cfg, rng);
  p.dffm_v = init_dffm_params(cfg, rng, "dffm.v");
  p.dffm_t = init_dffm_params(cfg, rng, "dffm.t");
  if (cfg.merge_mode == MergeMode::concat_project) {
    p.merge = init_merge_params(2 * cfg.d, cfg.d, rng, "merge");
  }
  return p;
}

void FeatureMapPair::validate() const {
  if (map_v.rank() != 3 || map_t.rank() != 3) {
    throw ShapeError("feature maps must be C×H×W, got " + shape_string(map_v.shape()) + " and " +
                     shape_string(map_t.shape()));
  }
  if (map_v.shape() != map_t.shape()) {
    throw ShapeError("feature map shapes differ: map_v " + shape_string(map_v.shape()) +
                     " vs map_t " + shape_string(map_t.shape()));
  }
}

// ---- flatten / PE -------------------------------------------------------------

Tensor positional_encoding_2d(std::size_t height, std::size_t width, std::size_t d) {
  if (d % 2 != 0 || (d / 2) % 2 != 0) {
    throw ContractError("sinusoidal2d needs an even d/2 split, got d=" + std::to_string(d));
  }
  const std::size_t half = d / 2;
  Tensor pe({height * width, d});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t row = y * width + x;
      for (std::size_t j = 0; j < half / 2; ++j) {
        const double freq =
            1.0 / std::pow(10000.0, static_cast<double>(2 * j) / static_cast<double>(half));
        pe(row, 2 * j) = std::sin(static_cast<double>(x) * freq);
        pe(row, 2 * j + 1) = std::cos(static_cast<double>(x) * freq);
        pe(row, half + 2 * j) = std::sin(static_cast<double>(y) * freq);
        pe(row, half + 2 * j + 1) = std::cos(static_cast<double>(y) * freq);
      }
    }
  }
  return pe;
}

Tensor flatten_pe(const Tensor& map, std::size_t d, PeKind pe) {
  if (map.rank() != 3) {
    throw ShapeError("flatten_pe: expected C×H×W, got " + shape_string(map.shape()));
  }
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  if (c != d) {
    throw ShapeError("flatten_pe: map has " + std::to_string(c) + " channels, model width is " +
                     std::to_string(d));
  }
  Tensor seq = transpose(map.reshaped({c, h * w}));
  if (pe == PeKind::sinusoidal2d) seq = add(seq, positional_encoding_2d(h, w, d));
  return seq;
}

Tensor reshape_map(const Tensor& seq, std::size_t height, std::size_t width) {
  if (seq.rank() != 2 || seq.rows() != height * width) {
    throw ShapeError("reshape_map: sequence " + shape_string(seq.shape()) + " does not hold " +
                     std::to_string(height) + "x" + std::to_string(width) + " positions");
  }
  return transpose(seq).reshaped({seq.cols(), height, width});
}

// ---- mutual refinement --------------------------------------------------------

namespace {

thread_local FusionCallCounters g_counters;

void require_width(const Var& f, const Tensor& w, std::string_view what) {
  const Tensor& fv = f.value();
  if (fv.rank() != 2 || fv.cols() != w.rows()) {
    throw ShapeError(std::string(what) + ": features " + shape_string(fv.shape()) +
                     " do not fit projection " + shape_string(w.shape()));
  }
}

}  // namespace

FusionCallCounters& call_counters() { return g_counters; }
void reset_call_counters() { g_counters = {}; }

Qkv project_qkv(const Var& features, ModalityParams& params) {
  require_width(features, params.wq.value, "project_qkv");
  Tape& tape = features.tape();
  return {matmul(features, tape.parameter(params.wq)), matmul(features, tape.parameter(params.wk)),
          matmul(features, tape.parameter(params.wv))};
}

Var attention_map(const Var& q, const Var& k) {
  if (q.shape() != k.shape()) {
    throw ShapeError("attention_map: Q " + shape_string(q.shape()) + " vs K " +
                     shape_string(k.shape()));
  }
  ++g_counters.attention_map;
  const double d = static_cast<double>(q.value().cols());
  // Scaling Q (N×d) instead of the N×N logits.
  return softmax_rows(matmul_nt(scale(q, 1.0 / std::sqrt(d)), k));
}

Var compute_lambda(Tape& tape, ModalityParams& params, Parameter& lambda_init) {
  Var e1 = exp(dot(tape.parameter(params.lambda_q1), tape.parameter(params.lambda_k1)));
  Var e2 = exp(dot(tape.parameter(params.lambda_q2), tape.parameter(params.lambda_k2)));
  return add(sub(e1, e2), tape.parameter(lambda_init));
}

double compute_lambda(const Tensor& q1, const Tensor& k1, const Tensor& q2, const Tensor& k2,
                      double lambda_init) {
  if (q1.size() != k1.size() || q1.size() != q2.size() || q1.size() != k2.size()) {
    throw ShapeError("compute_lambda: lambda vectors must share one length");
  }
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < q1.size(); ++i) {
    d1 += q1[i] * k1[i];
    d2 += q2[i] * k2[i];
  }
  const double lambda = std::exp(d1) - std::exp(d2) + lambda_init;
  if (!std::isfinite(lambda)) throw NonFiniteError("non-finite value produced by compute_lambda");
  return lambda;
}

Var fuse_values(const Var& v_self, const Var& v_other, const Var& lambda) {
  return add(v_self, scale(v_other, lambda));
}

ModalityEncoding encode_modality(const Var& features, ModalityParams& params) {
  ModalityEncoding enc{features, project_qkv(features, params), {}};
  enc.attn = attention_map(enc.qkv.q, enc.qkv.k);
  return enc;
}

MfrmOutput mfrm_combine(const ModalityEncoding& v, const ModalityEncoding& t,
                        const Var& lambda_v, const Var& lambda_t, MfrmParams& params,
                        const DropoutState& dropout) {
  if (v.input.shape() != t.input.shape()) {
    throw ShapeError("mfrm: F_v " + shape_string(v.input.shape()) + " vs F_t " +
                     shape_string(t.input.shape()));
  }
  ++g_counters.mfrm;
  Tape& tape = v.input.tape();
  MfrmOutput out;
  out.attn_v = v.attn;
  out.attn_t = t.attn;
  out.value_v = v.qkv.v;
  out.value_t = t.qkv.v;
  out.lambda_v = lambda_v;
  out.lambda_t = lambda_t;
  out.pre_norm_v = matmul(v.attn, fuse_values(v.qkv.v, t.qkv.v, lambda_v));
  out.pre_norm_t = matmul(t.attn, fuse_values(t.qkv.v, v.qkv.v, lambda_t));

  auto ln_d = [&](const Var& input, const Var& x, ModalityParams& mp) {
    Var normed = layer_norm(x, tape.parameter(mp.norm_gamma), tape.parameter(mp.norm_beta));
    return add(input, irdfusion::dropout(normed, dropout.p, dropout.mode, dropout.rng));
  };
  out.refined_v = ln_d(v.input, out.pre_norm_v, params.v);
  out.refined_t = ln_d(t.input, out.pre_norm_t, params.t);
  return out;
}

namespace {

std::pair<Var, Var> lambdas(Tape& tape, MfrmParams& params, bool zero_lambda) {
  if (zero_lambda) {
    Var zero = tape.constant(Tensor::scalar(0.0));
    return {zero, zero};
  }
  return {compute_lambda(tape, params.v, params.lambda_init),
          compute_lambda(tape, params.t, params.lambda_init)};
}

}  // namespace

MfrmOutput mfrm_forward(const Var& f_v, const Var& f_t, MfrmParams& params,
                        const DropoutState& dropout, bool zero_lambda) {
  if (f_v.shape() != f_t.shape()) {
    throw ShapeError("mfrm_forward: F_v " + shape_string(f_v.shape()) + " vs F_t " +
                     shape_string(f_t.shape()));
  }
  auto [lambda_v, lambda_t] = lambdas(f_v.tape(), params, zero_lambda);
  return mfrm_combine(encode_modality(f_v, params.v), encode_modality(f_t, params.t), lambda_v,
                      lambda_t, params, dropout);
}

// ---- differential feedback ------------------------------------------------------

Var mlp_forward(const Var& x, MlpParams& mlp) {
  Tape& tape = x.tape();
  Var hidden = gelu(add_row_bias(matmul(x, tape.parameter(mlp.w1)), tape.parameter(mlp.b1)));
  return add_row_bias(matmul(hidden, tape.parameter(mlp.w2)), tape.parameter(mlp.b2));
}

DffmOutput dffm_step(const Var& refined_self, const Var& refined_other, const Var& self_k,
                     DffmParams& params) {
  if (refined_self.shape() != refined_other.shape() || refined_self.shape() != self_k.shape()) {
    throw ShapeError("dffm_step: operand shapes differ (" + shape_string(refined_self.shape()) +
                     ", " + shape_string(refined_other.shape()) + ", " +
                     shape_string(self_k.shape()) + ")");
  }
  ++g_counters.dffm_step;
  Tape& tape = self_k.tape();
  DffmOutput out;
  out.dif = sub(refined_other, scale(refined_self, tape.parameter(params.beta)));
  Var normed =
      layer_norm(out.dif, tape.parameter(params.ln_gamma), tape.parameter(params.ln_beta));
  Var feedback = scale(mlp_forward(normed, params.mlp), tape.parameter(params.alpha));
  out.next = add(scale(self_k, tape.parameter(params.mu)), feedback);
  return out;
}

// ---- iterated fusion ------------------------------------------------------------

Var merge_streams(const Var& final_v, const Var& final_t, FusionParams& params,
                  const FusionConfig& cfg) {
  if (cfg.merge_mode == MergeMode::sum) return add(final_v, final_t);
  if (!params.merge) throw ContractError("merge_mode=concat_project requires merge parameters");
  Tape& tape = final_v.tape();
  return add_row_bias(matmul(concat_cols(final_v, final_t), tape.parameter(params.merge->weight)),
                      tape.parameter(params.merge->bias));
}

FusionResult fuse_sequences(const Var& seq_v, const Var& seq_t, FusionParams& params,
                            const FusionConfig& cfg, const FusionOptions& options) {
  if (seq_v.shape() != seq_t.shape()) {
    throw ShapeError("fuse_sequences: sequence shapes differ " + shape_string(seq_v.shape()) +
                     " vs " + shape_string(seq_t.shape()));
  }
  if (options.feedback_passes > 0 && (!params.dffm_v || !params.dffm_t)) {
    throw ContractError("feedback passes require DFFM parameters");
  }
  Tape& tape = seq_v.tape();
  const DropoutState drop{options.mode, cfg.dropout_p, options.rng};
  auto [lambda_v, lambda_t] = lambdas(tape, params.mfrm, options.zero_lambda);

  const ModalityEncoding origin_v = encode_modality(seq_v, params.mfrm.v);
  const ModalityEncoding origin_t = encode_modality(seq_t, params.mfrm.t);
  ModalityEncoding cur_v = origin_v;
  ModalityEncoding cur_t = origin_t;

  FusionResult result;
  for (std::size_t k = 1; k <= options.feedback_passes; ++k) {
    // v stream: thermal side held at its original encoding.
    MfrmOutput vs = mfrm_combine(cur_v, origin_t, lambda_v, lambda_t, params.mfrm, drop);
    DffmOutput dv = dffm_step(vs.refined_v, vs.refined_t, cur_v.input, *params.dffm_v);
    // t stream: visible side held.
    MfrmOutput ts = mfrm_combine(origin_v, cur_t, lambda_v, lambda_t, params.mfrm, drop);
    DffmOutput dt = dffm_step(ts.refined_t, ts.refined_v, cur_t.input, *params.dffm_t);

    if (options.record_trace) {
      IterationRecord rec;
      rec.k = k;
      rec.input_v = cur_v.input.value();
      rec.held_t = origin_t.input.value();
      rec.refined_v = vs.refined_v.value();
      rec.cross_v = vs.refined_t.value();
      rec.dif_v = dv.dif.value();
      rec.next_v = dv.next.value();
      rec.input_t = cur_t.input.value();
      rec.held_v = origin_v.input.value();
      rec.refined_t = ts.refined_t.value();
      rec.cross_t = ts.refined_v.value();
      rec.dif_t = dt.dif.value();
      rec.next_t = dt.next.value();
      rec.lambda_v = lambda_v.value().item();
      rec.lambda_t = lambda_t.value().item();
      result.trace.push_back(std::move(rec));
    }

    cur_v = encode_modality(dv.next, params.mfrm.v);
    cur_t = encode_modality(dt.next, params.mfrm.t);
  }

  if (options.feedback_passes == 0) {
    MfrmOutput out = mfrm_combine(origin_v, origin_t, lambda_v, lambda_t, params.mfrm, drop);
    result.final_v = out.refined_v;
    result.final_t = out.refined_t;
  } else {
    result.final_v =
        mfrm_combine(cur_v, origin_t, lambda_v, lambda_t, params.mfrm, drop).refined_v;
    result.final_t =
        mfrm_combine(origin_v, cur_t, lambda_v, lambda_t, params.mfrm, drop).refined_t;
  }
  result.fused_seq = merge_streams(result.final_v, result.final_t, params, cfg);
  return result;
}

FusedMap irdfusion_forward(Tape& tape, const FeatureMapPair& pair, FusionParams& params,
                           const FusionConfig& cfg, Mode mode, Rng* rng) {
  cfg.validate();
  pair.validate();
  const std::size_t h = pair.map_v.dim(1), w = pair.map_v.dim(2);
  Var seq_v = tape.constant(flatten_pe(pair.map_v, cfg.d, cfg.pe));
  Var seq_t = tape.constant(flatten_pe(pair.map_t, cfg.d, cfg.pe));
  FusionOptions options;
  options.mode = mode;
  options.rng = rng;
  options.feedback_passes = cfg.K;
  FusedMap out;
  out.result = fuse_sequences(seq_v, seq_t, params, cfg, options);
  out.map = seq_to_map(out.result.fused_seq, h, w);
  return out;
}

}  // namespace irdfusion
