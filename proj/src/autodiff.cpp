#include "irdfusion/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "irdfusion/errors.hpp"

namespace irdfusion {

Parameter::Parameter(std::string name_, Tensor value_, std::string role_)
    : name(std::move(name_)), role(std::move(role_)), value(std::move(value_)) {
  grad = Tensor(value.shape(), 0.0);
}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  } else {
    for (auto& g : grad.data()) g = 0.0;
  }
}

const Tensor& Var::value() const { return tape().value(*this); }

Tape& Var::tape() const {
  if (!tape_) throw ContractError("Var is not attached to a tape");
  return *tape_;
}

bool Var::valid() const {
  return tape_ && generation_ == tape_->generation_ && id_ < tape_->nodes_.size();
}

void Tape::Grads::accumulate(const Var& v, const Tensor& g) {
  if (tape_.requires_grad(v)) accumulate(v, Tensor(g));
}

void Tape::Grads::accumulate(const Var& v, Tensor&& g) {
  if (!tape_.requires_grad(v)) return;
  Tensor& slot = slots_[v.id()];
  if (slot.empty()) {
    slot = std::move(g);
  } else {
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
  }
}

void Tape::check(const Var& v) const {
  if (v.tape_ != this || v.generation_ != generation_ || v.id_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape (or the tape was cleared)");
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr});
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var(this, it->second, generation_);
  }
  if (p.grad.shape() != p.value.shape()) p.zero_grad();
  nodes_.push_back(Node{p.value, {}, true, &p});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    check(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs ? std::move(fn) : BackwardFn{}, needs, nullptr});
  return Var(this, nodes_.size() - 1, generation_);
}

bool Tape::requires_grad(const Var& v) const {
  check(v);
  return nodes_[v.id()].requires_grad;
}

const Tensor& Tape::value(const Var& v) const {
  check(v);
  return nodes_[v.id()].value;
}

void Tape::backward(const Var& loss) {
  check(loss);
  if (nodes_[loss.id()].value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(nodes_[loss.id()].value.shape()));
  }
  Grads grads(*this, nodes_.size());
  grads.slots_[loss.id()] = Tensor(nodes_[loss.id()].value.shape(), 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    Tensor& g = grads.slots_[id];
    if (!node.requires_grad || g.empty()) continue;
    if (node.param) {
      Tensor& pg = node.param->grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
    } else if (node.backward) {
      node.backward(g, node.value, grads);
    }
    g = Tensor();
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
  ++generation_;
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  return a.tape().record(matmul(a.value(), b.value()), {a, b},
                         [a, b](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           Tape& tape = a.tape();
                           if (tape.requires_grad(a)) grads.accumulate(a, matmul_nt(g, b.value()));
                           if (tape.requires_grad(b)) grads.accumulate(b, matmul_tn(a.value(), g));
                         });
}

Var matmul_nt(const Var& a, const Var& b) {
  return a.tape().record(matmul_nt(a.value(), b.value()), {a, b},
                         [a, b](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           Tape& tape = a.tape();
                           if (tape.requires_grad(a)) grads.accumulate(a, matmul(g, b.value()));
                           if (tape.requires_grad(b)) grads.accumulate(b, matmul_tn(g, a.value()));
                         });
}

Var add(const Var& a, const Var& b) {
  return a.tape().record(add(a.value(), b.value()), {a, b},
                         [a, b](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(a, g);
                           grads.accumulate(b, g);
                         });
}

Var sub(const Var& a, const Var& b) {
  return a.tape().record(sub(a.value(), b.value()), {a, b},
                         [a, b](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(a, g);
                           grads.accumulate(b, scale(g, -1.0));
                         });
}

Var hadamard(const Var& a, const Var& b) {
  return a.tape().record(hadamard(a.value(), b.value()), {a, b},
                         [a, b](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(a, hadamard(g, b.value()));
                           grads.accumulate(b, hadamard(g, a.value()));
                         });
}

Var scale(const Var& a, double s) {
  return a.tape().record(scale(a.value(), s), {a}, [a, s](const Tensor& g, const Tensor&, Tape::Grads& grads) {
    grads.accumulate(a, scale(g, s));
  });
}

Var scale(const Var& a, const Var& s) {
  const double sv = s.value().item();
  return a.tape().record(scale(a.value(), sv), {a, s},
                         [a, s, sv](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(a, scale(g, sv));
                           const Tensor& av = a.value();
                           double acc = 0.0;
                           for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                           grads.accumulate(s, Tensor(s.shape(), acc));
                         });
}

Var add_row_bias(const Var& a, const Var& b) {
  return a.tape().record(add_row_bias(a.value(), b.value()), {a, b},
                         [a, b](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(a, g);
                           grads.accumulate(b, column_sums(g).reshaped(b.shape()));
                         });
}

Var softmax_rows(const Var& t) {
  return t.tape().record(softmax_rows(t.value()), {t},
                         [t](const Tensor& g, const Tensor& y, Tape::Grads& grads) {
                           const std::size_t m = y.rows(), n = y.cols();
                           Tensor dx = Tensor::uninitialized({m, n});
                           for (std::size_t i = 0; i < m; ++i) {
                             const double* gi = g.data().data() + i * n;
                             const double* yi = y.data().data() + i * n;
                             double* di = dx.data().data() + i * n;
                             double inner = 0.0;
                             for (std::size_t j = 0; j < n; ++j) inner += gi[j] * yi[j];
                             for (std::size_t j = 0; j < n; ++j) di[j] = yi[j] * (gi[j] - inner);
                           }
                           grads.accumulate(t, std::move(dx));
                         });
}

Var layer_norm(const Var& t, const Var& gamma, const Var& beta, double eps) {
  LayerNormCache cache;
  Tensor y = layer_norm(t.value(), gamma.value(), beta.value(), eps, &cache);
  return t.tape().record(
      std::move(y), {t, gamma, beta},
      [t, gamma, beta, cache = std::move(cache)](const Tensor& g, const Tensor&,
                                                  Tape::Grads& grads) {
        const Tensor& xh = cache.normalized;
        const Tensor& gm = gamma.value();
        const std::size_t m = xh.rows(), n = xh.cols();
        Tensor dgamma(gamma.shape()), dbeta(beta.shape()), dx({m, n});
        std::vector<double> dxh(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dgamma[j] += g(i, j) * xh(i, j);
            dbeta[j] += g(i, j);
            dxh[j] = g(i, j) * gm[j];
            mean_dxh += dxh[j];
            mean_dxh_xh += dxh[j] * xh(i, j);
          }
          mean_dxh /= static_cast<double>(n);
          mean_dxh_xh /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            dx(i, j) = cache.rstd[i] * (dxh[j] - mean_dxh - xh(i, j) * mean_dxh_xh);
          }
        }
        grads.accumulate(t, dx);
        grads.accumulate(gamma, dgamma);
        grads.accumulate(beta, dbeta);
      });
}

Var dropout(const Var& t, double p, Mode mode, Rng* rng) {
  DropoutResult r = dropout(t.value(), p, mode, rng);
  if (mode == Mode::eval || p == 0.0) {
    // Identity: pass the node through without recording anything new.
    return t;
  }
  return t.tape().record(std::move(r.output), {t},
                         [t, mask = std::move(r.mask)](const Tensor& g, const Tensor&,
                                                       Tape::Grads& grads) {
                           grads.accumulate(t, hadamard(g, mask));
                         });
}

Var gelu(const Var& t) {
  return t.tape().record(gelu(t.value()), {t},
                         [t](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           const Tensor& x = t.value();
                           Tensor dx(x.shape());
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             dx[i] = g[i] * gelu_derivative(x[i]);
                           }
                           grads.accumulate(t, dx);
                         });
}

Var exp(const Var& t) {
  Tensor y = t.value();
  for (auto& v : y.data()) v = std::exp(v);
  ensure_finite(y, "exp");
  return t.tape().record(std::move(y), {t},
                         [t](const Tensor& g, const Tensor& y, Tape::Grads& grads) {
                           grads.accumulate(t, hadamard(g, y));
                         });
}

Var dot(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) {
    throw ShapeError("dot: length mismatch " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return a.tape().record(Tensor::scalar(acc), {a, b},
                         [a, b](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(a, scale(b.value(), g.item()).reshaped(a.shape()));
                           grads.accumulate(b, scale(a.value(), g.item()).reshaped(b.shape()));
                         });
}

Var sum(const Var& t) {
  double acc = 0.0;
  for (double v : t.value().data()) acc += v;
  return t.tape().record(Tensor::scalar(acc), {t},
                         [t](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(t, Tensor(t.shape(), g.item()));
                         });
}

Var concat_cols(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: row mismatch " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), na = av.cols(), nb = bv.cols();
  Tensor out({m, na + nb});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < na; ++j) out(i, j) = av(i, j);
    for (std::size_t j = 0; j < nb; ++j) out(i, na + j) = bv(i, j);
  }
  return a.tape().record(std::move(out), {a, b},
                         [a, b, m, na, nb](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           Tensor ga({m, na}), gb({m, nb});
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < na; ++j) ga(i, j) = g(i, j);
                             for (std::size_t j = 0; j < nb; ++j) gb(i, j) = g(i, na + j);
                           }
                           grads.accumulate(a, ga);
                           grads.accumulate(b, gb);
                         });
}

Var reshape(const Var& t, Shape shape) {
  return t.tape().record(t.value().reshaped(std::move(shape)), {t},
                         [t](const Tensor& g, const Tensor&, Tape::Grads& grads) {
                           grads.accumulate(t, g.reshaped(t.shape()));
                         });
}

Var seq_to_map(const Var& seq, std::size_t height, std::size_t width) {
  const Tensor& s = seq.value();
  if (s.rows() != height * width) {
    throw ShapeError("seq_to_map: " + std::to_string(s.rows()) + " rows do not match " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t channels = s.cols();
  Tensor map = transpose(s).reshaped({channels, height, width});
  return seq.tape().record(std::move(map), {seq},
                           [seq, channels, height, width](const Tensor& g, const Tensor&,
                                                          Tape::Grads& grads) {
                             grads.accumulate(
                                 seq, transpose(g.reshaped({channels, height * width})));
                           });
}

Var bce_with_logits(const Var& logits, const Tensor& target) {
  const Tensor& z = logits.value();
  if (z.size() != target.size()) {
    throw ShapeError("bce_with_logits: " + shape_string(z.shape()) + " logits vs " +
                     shape_string(target.shape()) + " target");
  }
  const double n = static_cast<double>(z.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x = z[i];
    acc += std::max(x, 0.0) - x * target[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return logits.tape().record(
      Tensor::scalar(acc / n), {logits},
      [logits, target, n](const Tensor& g, const Tensor&, Tape::Grads& grads) {
        const Tensor& z = logits.value();
        Tensor dz(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double sig = 1.0 / (1.0 + std::exp(-z[i]));
          dz[i] = g.item() * (sig - target[i]) / n;
        }
        grads.accumulate(logits, dz);
      });
}

}  // namespace irdfusion
