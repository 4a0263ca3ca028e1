#pragma once

// Tape-based reverse-mode differentiation over whole-tensor primitives.
//
// A Tape owns every intermediate value of one forward pass. Var is a cheap
// handle into it. backward() replays the recorded adjoints in exact reverse
// recording order and accumulates into the bound Parameters' grad tensors.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "irdfusion/kernels.hpp"
#include "irdfusion/tensor.hpp"

namespace irdfusion {

/// A learnable tensor with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, std::string role = {});

  std::string name;
  std::string role;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id, std::uint64_t generation)
      : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

class Tape {
 public:
  /// Gradient slots, one per node; an empty tensor means "no gradient yet".
  class Grads {
   public:
    void accumulate(const Var& v, const Tensor& g);
    void accumulate(const Var& v, Tensor&& g);

   private:
    friend class Tape;
    Grads(Tape& tape, std::size_t n) : tape_(tape), slots_(n) {}
    Tape& tape_;
    std::vector<Tensor> slots_;
  };

  /// Receives the output gradient and the node's own forward value.
  using BackwardFn =
      std::function<void(const Tensor& grad_out, const Tensor& output, Grads& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf bound to `p`; backward() adds into p.grad. Reuses the node if
  /// `p` is already on this tape.
  Var parameter(Parameter& p);
  /// Records an operation output. `fn` is dropped when no input needs a
  /// gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  bool requires_grad(const Var& v) const;
  const Tensor& value(const Var& v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. Loss must hold one element.
  void backward(const Var& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  void check(const Var& v) const;

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::uint64_t generation_ = 1;
};

// Differentiable primitives. Shapes follow the kernels of the same name.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a scaled by the single element of `s`.
Var scale(const Var& a, const Var& s);
Var add_row_bias(const Var& a, const Var& b);
Var softmax_rows(const Var& t);
Var layer_norm(const Var& t, const Var& gamma, const Var& beta, double eps = kLayerNormEps);
Var dropout(const Var& t, double p, Mode mode, Rng* rng);
Var gelu(const Var& t);
Var exp(const Var& t);
/// Inner product of two equal-length tensors, as a one-element tensor.
Var dot(const Var& a, const Var& b);
Var sum(const Var& t);
Var concat_cols(const Var& a, const Var& b);
Var reshape(const Var& t, Shape shape);
/// [(H·W)×C] sequence to a C×H×W map.
Var seq_to_map(const Var& seq, std::size_t height, std::size_t width);
/// Mean binary cross-entropy of sigmoid(logits) against `target`.
Var bce_with_logits(const Var& logits, const Tensor& target);

}  // namespace irdfusion
