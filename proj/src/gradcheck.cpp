#include "irdfusion/gradcheck.hpp"

#include <cmath>

#include "irdfusion/errors.hpp"

namespace irdfusion {

namespace {

double evaluate(const LossBuilder& f) {
  Tape tape;
  return f(tape).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const LossBuilder& f, std::span<Parameter* const> params,
                                  double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }

  GradCheckResult result;
  for (Parameter* p : params) {
    double worst = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double original = p->value[i];
      p->value[i] = original + h;
      const double up = evaluate(f);
      p->value[i] = original - h;
      const double down = evaluate(f);
      p->value[i] = original;

      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double err = std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
      if (err > worst) worst = err;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_parameter = p->name;
        result.worst_index = i;
      }
      ++result.elements_checked;
    }
    result.per_parameter[p->name] = worst;
  }
  return result;
}

}  // namespace irdfusion
