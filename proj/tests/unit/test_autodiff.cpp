#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "irdfusion/autodiff.hpp"
#include "irdfusion/errors.hpp"
#include "irdfusion/gradcheck.hpp"
#include "test_util.hpp"

namespace irdfusion {
namespace {

using testing::random_tensor;

TEST(Parameter, GradMatchesValueShapeAndResetsToZero) {
  Parameter p("w", Tensor({2, 3}, 1.5));
  EXPECT_EQ(p.grad.shape(), p.value.shape());
  p.grad[0] = 4.0;
  p.zero_grad();
  EXPECT_EQ(p.grad, Tensor({2, 3}, 0.0));
}

TEST(Backward, LinearMapGradientIsBroadcastInput) {
  Parameter w("w", Tensor::matrix(2, 3, {1, -1, 2, 0.5, 3, -2}));
  const Tensor x = Tensor::matrix(3, 1, {0.25, -1.5, 2.0});
  Tape tape;
  tape.backward(sum(matmul(tape.parameter(w), tape.constant(x))));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(w.grad(i, j), x[j]);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Rng rng(2);
  Parameter z("z", random_tensor({4, 5}, rng));
  Tape tape;
  tape.backward(sum(softmax_rows(tape.parameter(z))));
  for (double g : z.grad.data()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, NonScalarLossIsRejected) {
  Parameter w("w", Tensor({2, 2}, 1.0));
  Tape tape;
  EXPECT_THROW(tape.backward(tape.parameter(w)), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Parameter w("w", Tensor::matrix(1, 2, {3, 4}));
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    Var p = tape.parameter(w);
    tape.backward(sum(hadamard(p, p)));
  }
  EXPECT_EQ(w.grad, Tensor::matrix(1, 2, {12, 16}));
}

TEST(Backward, AdjointsReplayInReverseRecordingOrder) {
  Parameter w("w", Tensor({1}, 1.0));
  Tape tape;
  std::vector<int> order;
  Var a = tape.parameter(w);
  auto step = [&](const Var& in, int tag) {
    return tape.record(in.value(), {in}, [&order, tag, in](const Tensor& g, const Tensor&,
                                                           Tape::Grads& grads) {
      order.push_back(tag);
      grads.accumulate(in, g);
    });
  };
  Var b = step(a, 1);
  Var c = step(b, 2);
  Var d = step(c, 3);
  tape.backward(d);
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1}));
}

TEST(Backward, ClearedTapeContributesNothing) {
  Parameter w("w", Tensor({1}, 2.0));
  Tape tape;
  Var old_loss = sum(scale(tape.parameter(w), 3.0));
  tape.clear();
  EXPECT_THROW(tape.backward(old_loss), ContractError);
  EXPECT_EQ(w.grad, Tensor({1}, 0.0));
  tape.backward(sum(scale(tape.parameter(w), 5.0)));
  EXPECT_EQ(w.grad, Tensor({1}, 5.0));
}

TEST(Backward, ConstantsReceiveNoGradientNodes) {
  Tape tape;
  Var c = tape.constant(Tensor({2}, 1.0));
  Var y = scale(c, 2.0);
  EXPECT_FALSE(tape.requires_grad(y));
}

TEST(BceWithLogits, MatchesDirectFormula) {
  const Tensor logits = Tensor::matrix(3, 1, {-2.0, 0.3, 40.0});
  const Tensor target = Tensor::matrix(3, 1, {0.0, 1.0, 1.0});
  Tape tape;
  const double got = bce_with_logits(tape.constant(logits), target).value().item();
  double want = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    want -= target[i] == 1.0 ? std::log(p) : std::log1p(-p);
  }
  EXPECT_NEAR(got, want / 3.0, 1e-14);
}

TEST(GradCheck, QuadraticIsExactUpToRoundoff) {
  Rng rng(1);
  Parameter w("w", random_tensor({3, 4}, rng));
  std::vector<Parameter*> ps{&w};
  const auto r = finite_diff_check(
      [&](Tape& tape) {
        Var p = tape.parameter(w);
        return sum(hadamard(p, p));
      },
      ps, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-7);
  EXPECT_EQ(r.elements_checked, 12u);
}

TEST(GradCheck, MatmulSoftmaxChain) {
  Rng rng(2);
  Parameter a("a", random_tensor({4, 3}, rng)), b("b", random_tensor({3, 5}, rng));
  const Tensor weights = random_tensor({4, 5}, rng);
  std::vector<Parameter*> ps{&a, &b};
  const auto r = finite_diff_check(
      [&](Tape& tape) {
        Var s = softmax_rows(matmul(tape.parameter(a), tape.parameter(b)));
        return sum(hadamard(s, tape.constant(weights)));
      },
      ps, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, EveryPrimitiveComposed) {
  Rng rng(3);
  Parameter x("x", random_tensor({4, 6}, rng));
  Parameter y("y", random_tensor({4, 6}, rng));
  Parameter gamma("gamma", random_tensor({6}, rng, 0.5));
  Parameter beta("beta", random_tensor({6}, rng, 0.5));
  Parameter w("w", random_tensor({12, 3}, rng, 0.5));
  Parameter bias("bias", random_tensor({3}, rng));
  Parameter u("u", random_tensor({5}, rng, 0.3));
  Parameter v("v", random_tensor({5}, rng, 0.3));
  const Tensor target = Tensor({12, 1}, std::vector<double>{1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0});
  std::vector<Parameter*> ps{&x, &y, &gamma, &beta, &w, &bias, &u, &v};
  const auto r = finite_diff_check(
      [&](Tape& tape) {
        Var px = tape.parameter(x), py = tape.parameter(y);
        Var mix = add(hadamard(px, py), sub(px, scale(py, 0.7)));
        Var normed = layer_norm(mix, tape.parameter(gamma), tape.parameter(beta));
        Var act = gelu(dropout(normed, 0.3, Mode::eval, nullptr));
        Var wide = concat_cols(act, softmax_rows(py));
        Var proj = add_row_bias(matmul(wide, tape.parameter(w)), tape.parameter(bias));
        Var lam = exp(dot(tape.parameter(u), tape.parameter(v)));
        Var mapped = seq_to_map(scale(proj, lam), 2, 2);
        Var logits = reshape(matmul_nt(reshape(mapped, {12, 1}), tape.constant(Tensor({1, 1}, 1.0))),
                             {12, 1});
        return bce_with_logits(logits, target);
      },
      ps, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_parameter << "[" << r.worst_index << "]";
  EXPECT_EQ(r.per_parameter.size(), ps.size());
}

TEST(GradCheck, RestoresParameterValuesExactly) {
  Rng rng(4);
  Parameter w("w", random_tensor({2, 3}, rng));
  const Tensor before = w.value;
  std::vector<Parameter*> ps{&w};
  finite_diff_check([&](Tape& tape) { return sum(gelu(tape.parameter(w))); }, ps, 1e-5);
  EXPECT_EQ(w.value, before);
}

}  // namespace
}  // namespace irdfusion
