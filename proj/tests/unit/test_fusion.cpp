#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "irdfusion/errors.hpp"
#include "irdfusion/fusion.hpp"
#include "irdfusion/params_io.hpp"
#include "test_util.hpp"

namespace irdfusion {
namespace {

using testing::max_abs;
using testing::max_abs_diff;
using testing::random_tensor;

// ---- loop oracles -------------------------------------------------------------

Tensor loop_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t p = 0; p < a.cols(); ++p) c(i, j) += a(i, p) * b(p, j);
  return c;
}

// softmax(q kᵀ / sqrt(d)) v, one row at a time.
Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t n = q.rows(), d = q.cols();
  Tensor out({n, v.cols()});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(n);
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
      logits[j] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += logits[j] / z * v(j, c);
  }
  return out;
}

Tensor loop_layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  Tensor out({x.rows(), x.cols()});
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= n;
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= n;
    for (std::size_t j = 0; j < x.cols(); ++j)
      out(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * gamma[j] + beta[j];
  }
  return out;
}

// next = mu F + alpha (GELU(LN(other - beta self) W1 + b1) W2 + b2), element by element.
Tensor feedback_oracle(const Tensor& self, const Tensor& other, const Tensor& f_k,
                       DffmParams& p) {
  const double beta = p.beta.value.item(), alpha = p.alpha.value.item(), mu = p.mu.value.item();
  Tensor dif({self.rows(), self.cols()});
  for (std::size_t i = 0; i < self.size(); ++i) dif[i] = other[i] - beta * self[i];
  const Tensor normed = loop_layer_norm(dif, p.ln_gamma.value, p.ln_beta.value);
  const Tensor& w1 = p.mlp.w1.value;
  const Tensor& w2 = p.mlp.w2.value;
  Tensor next({self.rows(), self.cols()});
  for (std::size_t i = 0; i < self.rows(); ++i) {
    std::vector<double> hidden(w1.cols());
    for (std::size_t h = 0; h < w1.cols(); ++h) {
      double s = p.mlp.b1.value[h];
      for (std::size_t c = 0; c < self.cols(); ++c) s += normed(i, c) * w1(c, h);
      hidden[h] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
    }
    for (std::size_t c = 0; c < self.cols(); ++c) {
      double s = p.mlp.b2.value[c];
      for (std::size_t h = 0; h < w1.cols(); ++h) s += hidden[h] * w2(h, c);
      next(i, c) = mu * f_k(i, c) + alpha * s;
    }
  }
  return next;
}

FusionConfig small_config(std::size_t d = 4, std::size_t k = 2) {
  FusionConfig cfg;
  cfg.d = d;
  cfg.d_h = 4 * d;
  cfg.d_lambda = d;
  cfg.K = k;
  return cfg;
}

void randomize(std::vector<Parameter*> params, Rng& rng, double sd) {
  for (Parameter* p : params)
    for (double& x : p->value.data()) x += rng.normal(0.0, sd);
}

void zero_lambdas(MfrmParams& m) {
  for (ModalityParams* mp : {&m.v, &m.t})
    for (Parameter* p : {&mp->lambda_q1, &mp->lambda_k1, &mp->lambda_q2, &mp->lambda_k2})
      p->value = Tensor(p->value.shape(), 0.0);
  m.lambda_init.value = Tensor::scalar(0.0);
}

// ---- flatten / PE -------------------------------------------------------------

TEST(FlattenPe, PlainReshapeIsScanOrder) {
  const Tensor map({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor seq = flatten_pe(map, 1, PeKind::none);
  EXPECT_EQ(seq, Tensor({4, 1}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(reshape_map(seq, 2, 2), map);
}

TEST(FlattenPe, ChannelVectorLandsInRowYTimesWPlusX) {
  Rng rng(1);
  const Tensor map = random_tensor({3, 2, 5}, rng);
  const Tensor seq = flatten_pe(map, 3, PeKind::none);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(seq(y * 5 + x, c), map[(c * 2 + y) * 5 + x]);
}

TEST(FlattenPe, ZeroMapYieldsThePositionalTable) {
  const Tensor seq = flatten_pe(Tensor({8, 2, 3}, 0.0), 8, PeKind::sinusoidal2d);
  EXPECT_EQ(seq, positional_encoding_2d(2, 3, 8));
}

TEST(FlattenPe, TableEncodesXThenYWithGeometricWavelengths) {
  const Tensor pe = positional_encoding_2d(2, 3, 8);
  const std::size_t row = 1 * 3 + 2;  // y = 1, x = 2
  const double expect[8] = {std::sin(2.0),  std::cos(2.0),  std::sin(0.02), std::cos(0.02),
                            std::sin(1.0),  std::cos(1.0),  std::sin(0.01), std::cos(0.01)};
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(pe(row, c), expect[c], 1e-15) << c;
}

TEST(FlattenPe, ContractViolations) {
  EXPECT_THROW(flatten_pe(Tensor({4, 2, 2}), 8, PeKind::none), ShapeError);
  EXPECT_THROW(flatten_pe(Tensor({6, 2, 2}), 6, PeKind::sinusoidal2d), ContractError);
  EXPECT_THROW(reshape_map(Tensor({6, 2}), 2, 2), ShapeError);
}

TEST(FlattenPe, RoundTripIsBitExactOnRandomMaps) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t c = 1 + rng.uniform_index(8), h = 1 + rng.uniform_index(6),
                      w = 1 + rng.uniform_index(6);
    const Tensor map = random_tensor({c, h, w}, rng);
    EXPECT_EQ(reshape_map(flatten_pe(map, c, PeKind::none), h, w), map);
  }
}

// ---- projections, attention, lambda ---------------------------------------------------

TEST(ProjectQkv, IdentityWeightsReturnInput) {
  Rng rng(3);
  ModalityParams mp = init_modality_params(small_config(), rng, "m");
  mp.wq.value = mp.wk.value = mp.wv.value = Tensor::identity(4);
  Tape tape;
  const Tensor f = random_tensor({5, 4}, rng);
  const Qkv qkv = project_qkv(tape.constant(f), mp);
  EXPECT_EQ(qkv.q.value(), f);
  EXPECT_EQ(qkv.k.value(), f);
  EXPECT_EQ(qkv.v.value(), f);
  const Qkv zero = project_qkv(tape.constant(Tensor({5, 4}, 0.0)), mp);
  EXPECT_EQ(zero.v.value(), Tensor({5, 4}, 0.0));
}

TEST(ProjectQkv, AgreesWithTransposedProduct) {
  Rng rng(4);
  ModalityParams mp = init_modality_params(small_config(), rng, "m");
  Tape tape;
  const Tensor f = random_tensor({6, 4}, rng);
  const Qkv qkv = project_qkv(tape.constant(f), mp);
  // (F W)ᵀ = Wᵀ Fᵀ
  const Tensor via_t = transpose(loop_matmul(transpose(mp.wq.value), transpose(f)));
  EXPECT_LE(max_abs_diff(qkv.q.value(), via_t), 1e-14);
  EXPECT_THROW(project_qkv(tape.constant(Tensor({6, 3})), mp), ShapeError);
}

TEST(AttentionMap, ZeroQueryGivesUniformRows) {
  Rng rng(5);
  Tape tape;
  const Tensor a = attention_map(tape.constant(Tensor({5, 4}, 0.0)),
                                 tape.constant(random_tensor({5, 4}, rng)))
                       .value();
  for (double v : a.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(AttentionMap, SingleTokenIsOne) {
  Tape tape;
  const Tensor a =
      attention_map(tape.constant(Tensor({1, 4}, 0.3)), tape.constant(Tensor({1, 4}, -2.0))).value();
  EXPECT_EQ(a, Tensor({1, 1}, 1.0));
}

TEST(AttentionMap, RowsSumToOne) {
  Rng rng(6);
  Tape tape;
  const Tensor a = attention_map(tape.constant(random_tensor({9, 4}, rng, 3.0)),
                                 tape.constant(random_tensor({9, 4}, rng, 3.0)))
                       .value();
  for (std::size_t i = 0; i < 9; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += a(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(ComputeLambda, EqualDotProductsCancelExactly) {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Tensor q = random_tensor({8}, rng), k = random_tensor({8}, rng);
    const double init = rng.uniform(-1.0, 1.0);
    EXPECT_EQ(compute_lambda(q, k, q, k, init), init);
  }
  EXPECT_EQ(compute_lambda(Tensor({4}, 0.0), Tensor({4}, 0.0), Tensor({4}, 0.0),
                           Tensor({4}, 0.0), 0.5),
            0.5);
}

TEST(ComputeLambda, LogTwoGivesTwoMinusOne) {
  const Tensor q1({1}, std::log(2.0)), k1({1}, 1.0), zero({1}, 0.0);
  EXPECT_NEAR(compute_lambda(q1, k1, zero, zero, 0.25), 2.0 - 1.0 + 0.25, 1e-15);
}

TEST(ComputeLambda, TapedVersionMatchesScalarVersion) {
  Rng rng(8);
  ModalityParams mp = init_modality_params(small_config(), rng, "m");
  Parameter init("lambda_init", Tensor::scalar(0.4));
  Tape tape;
  EXPECT_EQ(compute_lambda(tape, mp, init).value().item(),
            compute_lambda(mp.lambda_q1.value, mp.lambda_k1.value, mp.lambda_q2.value,
                           mp.lambda_k2.value, 0.4));
}

TEST(ComputeLambda, OverflowSurfacesAsNonFinite) {
  const Tensor big({1}, 30.0), zero({1}, 0.0);
  EXPECT_THROW(compute_lambda(big, big, zero, zero, 0.0), NonFiniteError);
}

TEST(FuseValues, ZeroLambdaAndCancellation) {
  Rng rng(9);
  Tape tape;
  const Tensor vs = random_tensor({3, 4}, rng);
  Tensor neg = vs;
  for (double& x : neg.data()) x = -x;
  EXPECT_EQ(fuse_values(tape.constant(vs), tape.constant(neg), tape.constant(Tensor::scalar(0.0)))
                .value(),
            vs);
  EXPECT_EQ(fuse_values(tape.constant(vs), tape.constant(neg), tape.constant(Tensor::scalar(1.0)))
                .value(),
            Tensor({3, 4}, 0.0));
}

TEST(FuseValues, RandomCaseMatchesElementLoop) {
  Rng rng(10);
  Tape tape;
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  const Tensor got =
      fuse_values(tape.constant(a), tape.constant(b), tape.constant(Tensor::scalar(0.3))).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(got[i], a[i] + 0.3 * b[i]);
}

// ---- mutual refinement --------------------------------------------------------------------

TEST(Mfrm, SymmetricWeightsAndInputsGiveEqualOutputs) {
  Rng rng(11);
  const FusionConfig cfg = small_config();
  MfrmParams p = init_mfrm_params(cfg, rng);
  zero_lambdas(p);
  p.t = p.v;
  Tape tape;
  const Tensor f = random_tensor({6, 4}, rng);
  const MfrmOutput out = mfrm_forward(tape.constant(f), tape.constant(f), p, DropoutState{});
  EXPECT_EQ(out.refined_v.value(), out.refined_t.value());
}

TEST(Mfrm, SingleTokenCollapsesAttention) {
  Rng rng(12);
  MfrmParams p = init_mfrm_params(small_config(), rng);
  Tape tape;
  const MfrmOutput out = mfrm_forward(tape.constant(random_tensor({1, 4}, rng)),
                                      tape.constant(random_tensor({1, 4}, rng)), p, DropoutState{});
  EXPECT_EQ(out.attn_v.value(), Tensor({1, 1}, 1.0));
  const double lv = out.lambda_v.value().item();
  const Tensor& vv = out.value_v.value();
  const Tensor& vt = out.value_t.value();
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_NEAR(out.pre_norm_v.value()[c], vv[c] + lv * vt[c], 1e-15);
}

TEST(Mfrm, OutputIsResidualPlusNormalizedAttentionOfFusedValues) {
  Rng rng(13);
  MfrmParams p = init_mfrm_params(small_config(), rng);
  randomize(p.parameters(), rng, 0.3);
  Tape tape;
  const Tensor fv = random_tensor({7, 4}, rng), ft = random_tensor({7, 4}, rng);
  const MfrmOutput out = mfrm_forward(tape.constant(fv), tape.constant(ft), p, DropoutState{});
  const double lv = out.lambda_v.value().item();
  const Tensor vv = loop_matmul(fv, p.v.wv.value), vt = loop_matmul(ft, p.t.wv.value);
  Tensor fused = vv;
  for (std::size_t i = 0; i < fused.size(); ++i) fused[i] += lv * vt[i];
  const Tensor pre =
      self_attention(loop_matmul(fv, p.v.wq.value), loop_matmul(fv, p.v.wk.value), fused);
  EXPECT_LE(max_abs_diff(out.pre_norm_v.value(), pre), 1e-12);
  Tensor refined = loop_layer_norm(pre, p.v.norm_gamma.value, p.v.norm_beta.value);
  for (std::size_t i = 0; i < refined.size(); ++i) refined[i] += fv[i];
  EXPECT_LE(max_abs_diff(out.refined_v.value(), refined), 1e-12);
}

TEST(Mfrm, ZeroLambdaInitWithCancellingVectorsIsSelfAttention) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    MfrmParams p = init_mfrm_params(small_config(8), rng);
    for (ModalityParams* m : {&p.v, &p.t}) {
      m->lambda_q2.value = m->lambda_q1.value;
      m->lambda_k2.value = m->lambda_k1.value;
    }
    p.lambda_init.value = Tensor::scalar(0.0);
    Tape tape;
    const Tensor fv = random_tensor({16, 8}, rng), ft = random_tensor({16, 8}, rng);
    const MfrmOutput out = mfrm_forward(tape.constant(fv), tape.constant(ft), p, DropoutState{});
    EXPECT_EQ(out.lambda_v.value().item(), 0.0);
    EXPECT_EQ(out.lambda_t.value().item(), 0.0);
    const Tensor ref_v = self_attention(loop_matmul(fv, p.v.wq.value),
                                        loop_matmul(fv, p.v.wk.value), loop_matmul(fv, p.v.wv.value));
    const Tensor ref_t = self_attention(loop_matmul(ft, p.t.wq.value),
                                        loop_matmul(ft, p.t.wk.value), loop_matmul(ft, p.t.wv.value));
    EXPECT_LE(max_abs_diff(out.pre_norm_v.value(), ref_v), 1e-12);
    EXPECT_LE(max_abs_diff(out.pre_norm_t.value(), ref_t), 1e-12);
  }
}

TEST(Mfrm, TrainModeDropoutNeedsAGenerator) {
  Rng rng(14);
  MfrmParams p = init_mfrm_params(small_config(), rng);
  Tape tape;
  const Var f = tape.constant(random_tensor({3, 4}, rng));
  EXPECT_THROW(mfrm_forward(f, f, p, DropoutState{Mode::train, 0.1, nullptr}), ContractError);
  Rng drop(1);
  EXPECT_NO_THROW(mfrm_forward(f, f, p, DropoutState{Mode::train, 0.1, &drop}));
}

// ---- differential feedback ------------------------------------------------------------------

TEST(Dffm, CommonModeIsRejectedExactly) {
  Rng rng(15);
  DffmParams p = init_dffm_params(small_config(), rng, "dffm.v");
  p.mu.value = Tensor::scalar(0.8);
  Tape tape;
  const Tensor refined = random_tensor({6, 4}, rng), fk = random_tensor({6, 4}, rng);
  const DffmOutput out =
      dffm_step(tape.constant(refined), tape.constant(refined), tape.constant(fk), p);
  EXPECT_EQ(out.dif.value(), Tensor({6, 4}, 0.0));
  Tensor mu_fk = fk;
  for (double& x : mu_fk.data()) x *= 0.8;
  EXPECT_EQ(out.next.value(), mu_fk);
}

TEST(Dffm, ClosedGateLeavesOnlyMuScaling) {
  Rng rng(16);
  DffmParams p = init_dffm_params(small_config(), rng, "dffm.v");
  randomize(p.parameters(), rng, 0.5);
  p.alpha.value = Tensor::scalar(0.0);
  Tape tape;
  const Tensor fk = random_tensor({5, 4}, rng);
  const DffmOutput out = dffm_step(tape.constant(random_tensor({5, 4}, rng)),
                                   tape.constant(random_tensor({5, 4}, rng)), tape.constant(fk), p);
  const double mu = p.mu.value.item();
  for (std::size_t i = 0; i < fk.size(); ++i) EXPECT_EQ(out.next.value()[i], mu * fk[i]);
}

TEST(Dffm, RandomCaseMatchesScalarOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    DffmParams p = init_dffm_params(small_config(), rng, "dffm.v");
    randomize(p.parameters(), rng, 0.5);
    Tape tape;
    const Tensor self = random_tensor({6, 4}, rng), other = random_tensor({6, 4}, rng),
                 fk = random_tensor({6, 4}, rng);
    const DffmOutput out =
        dffm_step(tape.constant(self), tape.constant(other), tape.constant(fk), p);
    EXPECT_LE(max_abs_diff(out.next.value(), feedback_oracle(self, other, fk, p)), 1e-12);
  }
}

TEST(Dffm, InitializationIsIdentityLikeFeedback) {
  Rng rng(17);
  DffmParams p = init_dffm_params(small_config(), rng, "dffm.v");
  EXPECT_EQ(p.alpha.value.item(), 1.0);
  EXPECT_EQ(p.beta.value.item(), 1.0);
  EXPECT_EQ(p.mu.value.item(), 1.0);
  EXPECT_EQ(max_abs(p.mlp.w2.value), 0.0);
  EXPECT_EQ(max_abs(p.mlp.b2.value), 0.0);
  EXPECT_GT(max_abs(p.mlp.w1.value), 0.0);
  EXPECT_EQ(p.mlp.w1.value.shape(), (Shape{4, 16}));
}

TEST(Dffm, ShapeMismatchIsRejected) {
  Rng rng(18);
  DffmParams p = init_dffm_params(small_config(), rng, "dffm.v");
  Tape tape;
  EXPECT_THROW(dffm_step(tape.constant(Tensor({2, 4})), tape.constant(Tensor({3, 4})),
                         tape.constant(Tensor({2, 4})), p),
               ShapeError);
}

// ---- full forward ---------------------------------------------------------------------------

TEST(IrdfusionForward, GatedConfigurationIsSummedSelfAttention) {
  Rng rng(19);
  FusionConfig cfg = small_config(4, 1);
  cfg.pe = PeKind::none;
  FusionParams p = init_fusion_params(cfg, 3);
  zero_lambdas(p.mfrm);
  for (ModalityParams* m : {&p.mfrm.v, &p.mfrm.t})
    m->wq.value = m->wk.value = m->wv.value = Tensor::identity(4);
  for (DffmParams* d : {&*p.dffm_v, &*p.dffm_t}) {
    d->alpha.value = Tensor::scalar(0.0);
    d->mu.value = Tensor::scalar(1.0);
  }
  const FeatureMapPair pair{random_tensor({4, 2, 3}, rng), random_tensor({4, 2, 3}, rng)};
  Tape tape;
  const FusedMap out = irdfusion_forward(tape, pair, p, cfg, Mode::eval);

  Tensor expect({6, 4});
  for (const Tensor* m : {&pair.map_v, &pair.map_t}) {
    const Tensor f = flatten_pe(*m, 4, PeKind::none);
    const Tensor n = loop_layer_norm(self_attention(f, f, f), Tensor({4}, 1.0), Tensor({4}, 0.0));
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += f[i] + n[i];
  }
  EXPECT_LE(max_abs_diff(out.map.value(), reshape_map(expect, 2, 3)), 1e-12);
}

FusionParams swap_streams(const FusionParams& p) {
  FusionParams s = p;
  std::swap(s.mfrm.v, s.mfrm.t);
  std::swap(s.dffm_v, s.dffm_t);
  return s;
}

TEST(IrdfusionForward, SwappingModalitiesAndStreamsLeavesOutputUnchanged) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(200 + seed);
    const FusionConfig cfg = small_config(4, 3);
    FusionParams p = init_fusion_params(cfg, seed);
    randomize(p.parameters(), rng, 0.3);
    FusionParams swapped = swap_streams(p);
    const Tensor a = random_tensor({4, 3, 3}, rng), b = random_tensor({4, 3, 3}, rng);
    Tape t1, t2;
    const Tensor fwd = irdfusion_forward(t1, {a, b}, p, cfg, Mode::eval).map.value();
    const Tensor rev = irdfusion_forward(t2, {b, a}, swapped, cfg, Mode::eval).map.value();
    EXPECT_LE(max_abs_diff(fwd, rev), 1e-10);
  }
}

TEST(IrdfusionForward, IdenticalInputsAndWeightsAreSymmetric) {
  Rng rng(20);
  const FusionConfig cfg = small_config(4, 2);
  FusionParams p = init_fusion_params(cfg, 5);
  randomize(p.parameters(), rng, 0.3);
  p.mfrm.t = p.mfrm.v;
  *p.dffm_t = *p.dffm_v;
  const Tensor m = random_tensor({4, 2, 2}, rng);
  Tape tape;
  const FusedMap out = irdfusion_forward(tape, {m, m}, p, cfg, Mode::eval);
  EXPECT_EQ(out.result.final_v.value(), out.result.final_t.value());
}

TEST(IrdfusionForward, HeldModalityIsTheOriginalInputAtEveryPass) {
  Rng rng(21);
  const FusionConfig cfg = small_config(8, 4);
  FusionParams p = init_fusion_params(cfg, 6);
  randomize(p.parameters(), rng, 0.3);
  const FeatureMapPair pair{random_tensor({8, 3, 4}, rng), random_tensor({8, 3, 4}, rng)};
  Tape tape;
  const FusedMap out = irdfusion_forward(tape, pair, p, cfg, Mode::eval);
  const Tensor seq_v = flatten_pe(pair.map_v, 8, cfg.pe);
  const Tensor seq_t = flatten_pe(pair.map_t, 8, cfg.pe);
  ASSERT_EQ(out.result.trace.size(), 4u);
  for (const IterationRecord& r : out.result.trace) {
    EXPECT_EQ(r.held_t, seq_t);
    EXPECT_EQ(r.held_v, seq_v);
  }
  EXPECT_EQ(out.result.trace.front().input_v, seq_v);
  EXPECT_EQ(out.result.trace.front().input_t, seq_t);
}

TEST(IrdfusionForward, TraceIsCompleteAndReproducible) {
  Rng rng(22);
  const FusionConfig cfg = small_config(4, 3);
  FusionParams p = init_fusion_params(cfg, 7);
  randomize(p.parameters(), rng, 0.3);
  const FeatureMapPair pair{random_tensor({4, 2, 3}, rng), random_tensor({4, 2, 3}, rng)};
  Tape tape;
  const FusedMap out = irdfusion_forward(tape, pair, p, cfg, Mode::eval);
  const auto& trace = out.result.trace;
  ASSERT_EQ(trace.size(), cfg.K);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const IterationRecord& r = trace[k];
    EXPECT_EQ(r.k, k + 1);
    for (const Tensor* t : {&r.input_v, &r.refined_v, &r.cross_v, &r.dif_v, &r.next_v, &r.input_t,
                            &r.refined_t, &r.cross_t, &r.dif_t, &r.next_t}) {
      EXPECT_EQ(t->shape(), (Shape{6, 4}));
    }
    if (k + 1 < trace.size()) {
      EXPECT_EQ(trace[k + 1].input_v, r.next_v);
      EXPECT_EQ(trace[k + 1].input_t, r.next_t);
    }
    const double bv = p.dffm_v->beta.value.item();
    for (std::size_t i = 0; i < r.dif_v.size(); ++i)
      EXPECT_EQ(r.dif_v[i], r.cross_v[i] - bv * r.refined_v[i]);
    EXPECT_LE(max_abs_diff(r.next_v, feedback_oracle(r.refined_v, r.cross_v, r.input_v, *p.dffm_v)),
              1e-12);
    EXPECT_LE(max_abs_diff(r.next_t, feedback_oracle(r.refined_t, r.cross_t, r.input_t, *p.dffm_t)),
              1e-12);
  }
  // Rerun gives the same bits.
  Tape again;
  EXPECT_EQ(irdfusion_forward(again, pair, p, cfg, Mode::eval).map.value(), out.map.value());
}

TEST(IrdfusionForward, FourPassesStayFiniteAndBounded) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(300 + seed);
    const FusionConfig cfg = small_config(8, 4);
    FusionParams p = init_fusion_params(cfg, seed);
    const FeatureMapPair pair{random_tensor({8, 4, 4}, rng), random_tensor({8, 4, 4}, rng)};
    Tape tape;
    const FusedMap out = irdfusion_forward(tape, pair, p, cfg, Mode::eval);
    for (const IterationRecord& r : out.result.trace) {
      for (const Tensor* t : {&r.refined_v, &r.dif_v, &r.next_v, &r.refined_t, &r.dif_t, &r.next_t})
        EXPECT_TRUE(t->all_finite());
    }
    double in = 0.0, outn = 0.0;
    for (double x : pair.map_v.data()) in += x * x;
    for (double x : pair.map_t.data()) in += x * x;
    for (double x : out.map.value().data()) outn += x * x;
    EXPECT_LT(std::sqrt(outn), 1e3 * std::sqrt(in));
  }
}

TEST(IrdfusionForward, RejectsZeroPassesAndMismatchedMaps) {
  FusionConfig cfg = small_config(4, 0);
  FusionParams p = init_fusion_params(small_config(4, 1), 1);
  Tape tape;
  EXPECT_THROW(irdfusion_forward(tape, {Tensor({4, 2, 2}), Tensor({4, 2, 2})}, p, cfg, Mode::eval),
               ContractError);
  cfg.K = 1;
  EXPECT_THROW(irdfusion_forward(tape, {Tensor({4, 2, 2}), Tensor({4, 2, 3})}, p, cfg, Mode::eval),
               ShapeError);
}

TEST(IrdfusionForward, CountsOneFeedbackStepPerStreamPerPass) {
  const FusionConfig cfg = small_config(4, 3);
  FusionParams p = init_fusion_params(cfg, 2);
  Rng rng(23);
  Tape tape;
  reset_call_counters();
  irdfusion_forward(tape, {random_tensor({4, 2, 2}, rng), random_tensor({4, 2, 2}, rng)}, p, cfg,
                    Mode::eval);
  EXPECT_EQ(call_counters().dffm_step, 6u);
  EXPECT_EQ(call_counters().mfrm, 8u);
}

TEST(IrdfusionForward, ConcatProjectMergeUsesLearnedMap) {
  FusionConfig cfg = small_config(4, 1);
  cfg.merge_mode = MergeMode::concat_project;
  FusionParams p = init_fusion_params(cfg, 4);
  ASSERT_TRUE(p.merge.has_value());
  EXPECT_EQ(p.merge->weight.value.shape(), (Shape{8, 4}));
  Rng rng(24);
  const FeatureMapPair pair{random_tensor({4, 2, 2}, rng), random_tensor({4, 2, 2}, rng)};
  Tape tape;
  const FusedMap out = irdfusion_forward(tape, pair, p, cfg, Mode::eval);
  const Tensor fv = out.result.final_v.value(), ft = out.result.final_t.value();
  Tensor cat({4, 8});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      cat(i, c) = fv(i, c);
      cat(i, 4 + c) = ft(i, c);
    }
  Tensor expect = loop_matmul(cat, p.merge->weight.value);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 4; ++c) expect(i, c) += p.merge->bias.value[c];
  EXPECT_LE(max_abs_diff(out.result.fused_seq.value(), expect), 1e-12);
}

// ---- config and parameters ------------------------------------------------------------------

TEST(FusionConfig, ValidationNamesTheField) {
  auto message = [](FusionConfig c) {
    try {
      c.validate();
    } catch (const ContractError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  FusionConfig c;
  EXPECT_EQ(message(c), "");
  c.dropout_p = -0.1;
  EXPECT_NE(message(c).find("dropout_p"), std::string::npos);
  c = FusionConfig{};
  c.K = 0;
  EXPECT_NE(message(c).find("K"), std::string::npos);
  c = FusionConfig{};
  c.d_h = 0;
  EXPECT_NE(message(c).find("d_h"), std::string::npos);
  EXPECT_THROW(parse_merge_mode("avg"), ContractError);
  EXPECT_THROW(parse_pe_kind("learned"), ContractError);
}

TEST(FusionParams, NamedGroupsWithDocumentedInitialization) {
  const FusionConfig cfg;
  FusionParams p = init_fusion_params(cfg, 9);
  std::set<std::string> names;
  for (Parameter* x : p.parameters()) {
    EXPECT_TRUE(names.insert(x->name).second) << "duplicate " << x->name;
    EXPECT_FALSE(x->role.empty()) << x->name;
    EXPECT_EQ(x->grad.shape(), x->value.shape());
  }
  for (const char* n : {"mfrm.v.wq", "mfrm.t.wv", "mfrm.v.lambda_q1", "mfrm.lambda_init",
                        "dffm.v.alpha", "dffm.t.mu", "dffm.v.mlp.w2", "dffm.t.ln_gamma"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
  const double bound = 1.0 / std::sqrt(8.0);
  for (double x : p.mfrm.v.wq.value.data()) EXPECT_LE(std::abs(x), bound);
  EXPECT_EQ(p.mfrm.lambda_init.value.item(), cfg.lambda_init);
  // Same seed, same bits.
  FusionParams again = init_fusion_params(cfg, 9);
  EXPECT_EQ(again.mfrm.v.lambda_k2.value, p.mfrm.v.lambda_k2.value);
}

TEST(ParamsIo, DirectoryRoundTripAndErrors) {
  const auto dir = testing::scratch_dir("params_io");
  const FusionConfig cfg = small_config();
  FusionParams p = init_fusion_params(cfg, 1);
  auto list = p.parameters();
  save_parameters(dir, list, {{"note", "x"}});
  const ParameterManifest m = read_parameter_manifest(dir);
  EXPECT_EQ(m.entries.size(), list.size());
  EXPECT_EQ(m.header.front().first, "tool_version");

  FusionParams q = init_fusion_params(cfg, 2);
  auto qlist = q.parameters();
  load_parameters(dir, qlist);
  for (std::size_t i = 0; i < list.size(); ++i) EXPECT_EQ(qlist[i]->value, list[i]->value);

  FusionParams wide = init_fusion_params(small_config(8), 1);
  auto wlist = wide.parameters();
  EXPECT_THROW(load_parameters(dir, wlist), ShapeError);
  Parameter extra("not.there", Tensor({1}));
  std::vector<Parameter*> missing{&extra};
  EXPECT_THROW(load_parameters(dir, missing), IoError);
}

}  // namespace
}  // namespace irdfusion
