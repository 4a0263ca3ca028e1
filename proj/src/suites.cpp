#include "irdfusion/suites.hpp"

#include <algorithm>
#include <chrono>

#include "irdfusion/autodiff.hpp"
#include "irdfusion/relation.hpp"
#include "irdfusion/rng.hpp"

namespace irdfusion {

namespace {

constexpr std::uint64_t kIdentityStream = 0x6964656e;  // "iden"
constexpr std::uint64_t kGradStream = 0x67726164;      // "grad"

Tensor random_normal(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (double& x : t.data()) x = rng.normal(0.0, sd);
  return t;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

nlohmann::ordered_json IdentitySuiteResult::to_json() const {
  nlohmann::ordered_json j;
  j["seeds"] = seeds;
  j["N"] = n;
  j["d"] = d;
  j["tolerance"] = tolerance;
  j["max_deviation"] = max_deviation;
  j["max_feedback_deviation"] = max_feedback_deviation;
  j["worst_seed"] = worst_seed;
  j["pass"] = pass();
  return j;
}

IdentitySuiteResult run_identity_suite(std::size_t seeds, std::size_t n, std::size_t d,
                                       double tolerance) {
  const auto start = std::chrono::steady_clock::now();
  IdentitySuiteResult out;
  out.seeds = seeds;
  out.n = n;
  out.d = d;
  out.tolerance = tolerance;

  FusionConfig cfg;
  cfg.d = d;
  cfg.d_lambda = d;
  cfg.pe = PeKind::none;
  cfg.validate();

  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng rng = Rng::stream(seed, kIdentityStream);
    MfrmParams params = init_mfrm_params(cfg, rng);
    // Larger lambda vectors than the default init so lambda_v/lambda_t
    // spread well away from lambda_init.
    for (ModalityParams* m : {&params.v, &params.t}) {
      for (Parameter* p : {&m->lambda_q1, &m->lambda_k1, &m->lambda_q2, &m->lambda_k2}) {
        p->value = random_normal(p->value.shape(), rng, 0.5);
      }
    }
    params.lambda_init.value = Tensor::scalar(rng.uniform(0.1, 0.9));
    const double beta = rng.uniform(0.5, 1.5);

    Tape tape;
    const Var f_v = tape.constant(random_normal({n, d}, rng));
    const Var f_t = tape.constant(random_normal({n, d}, rng));
    const MfrmOutput m = mfrm_forward(f_v, f_t, params, DropoutState{});

    const Tensor& pre_v = m.pre_norm_v.value();
    const Tensor& pre_t = m.pre_norm_t.value();
    const Tensor direct = sub(pre_v, scale(pre_t, beta));

    const double lambda_v = m.lambda_v.value().item();
    const double lambda_t = m.lambda_t.value().item();
    const auto coeffs = relation::relation_coeffs(m.attn_v.value(), m.attn_t.value(), lambda_v,
                                                  lambda_t, beta);
    const Tensor via_relation =
        relation::differential_via_relation(coeffs, m.value_v.value(), m.value_t.value());
    const double dev = relation::max_relative_deviation(direct, via_relation).max_rel;

    const Tensor fp_t =
        relation::reconstruct(m.attn_t.value(), m.value_t.value(), m.value_v.value(), lambda_t);
    const Tensor rebuilt = relation::feedback_update_relation(via_relation, fp_t, beta);
    const double fb_dev = relation::max_relative_deviation(pre_v, rebuilt).max_rel;

    if (dev > out.max_deviation) {
      out.max_deviation = dev;
      out.worst_seed = seed;
    }
    out.max_feedback_deviation = std::max(out.max_feedback_deviation, fb_dev);
  }
  out.seconds = seconds_since(start);
  return out;
}

double GradSuiteResult::max_rel_error() const {
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, c.result.max_rel_error);
  return worst;
}

nlohmann::ordered_json GradSuiteResult::to_json() const {
  nlohmann::ordered_json j;
  j["h"] = h;
  j["tolerance"] = tolerance;
  j["seed"] = seed;
  j["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : cases) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["merge_mode"] = to_string(c.cfg.merge_mode);
    cj["K"] = c.cfg.K;
    cj["elements_checked"] = c.result.elements_checked;
    cj["max_rel_error"] = c.result.max_rel_error;
    cj["worst_parameter"] = c.result.worst_parameter;
    cj["worst_index"] = c.result.worst_index;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [name, err] : c.result.per_parameter) per[name] = err;
    cj["per_parameter"] = per;
    j["cases"].push_back(std::move(cj));
  }
  j["max_rel_error"] = max_rel_error();
  j["pass"] = pass();
  return j;
}

GradSuiteResult run_grad_suite(std::uint64_t seed, double h, double tolerance) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteResult out;
  out.h = h;
  out.tolerance = tolerance;
  out.seed = seed;

  constexpr std::size_t kH = 2, kW = 3, kD = 4;
  for (MergeMode merge : {MergeMode::sum, MergeMode::concat_project}) {
    FusionConfig cfg;
    cfg.d = kD;
    cfg.d_h = 8;
    cfg.d_lambda = 4;
    cfg.K = 2;
    cfg.merge_mode = merge;
    cfg.dropout_p = 0.1;  // inactive in eval mode
    cfg.pe = PeKind::sinusoidal2d;

    Rng rng = Rng::stream(seed, kGradStream, static_cast<std::uint64_t>(merge));
    FusionParams params = init_fusion_params(cfg, rng.next_u64());
    std::vector<Parameter*> list = params.parameters();
    for (Parameter* p : list) {
      for (double& x : p->value.data()) x += rng.normal(0.0, 0.3);
    }
    FeatureMapPair pair{random_normal({kD, kH, kW}, rng), random_normal({kD, kH, kW}, rng)};
    const Tensor weights = random_normal({kD, kH, kW}, rng);

    const LossBuilder loss = [&](Tape& tape) {
      const FusedMap fused = irdfusion_forward(tape, pair, params, cfg, Mode::eval);
      return sum(hadamard(fused.map, tape.constant(weights)));
    };
    GradSuiteCase c;
    c.name = "full_K2_" + to_string(merge);
    c.cfg = cfg;
    c.result = finite_diff_check(loss, list, h);
    out.cases.push_back(std::move(c));
  }
  out.seconds = seconds_since(start);
  return out;
}

}  // namespace irdfusion
