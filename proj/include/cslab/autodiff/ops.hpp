#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cslab/autodiff/tensor.hpp"

namespace cslab::ad {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node;
template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until backward reaches the node
  std::string_view op = "leaf";
  std::vector<Var<T>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  // Allocates a zero gradient on first use.
  Tensor<T>& grad_buffer();
};

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true);
template <typename T>
Var<T> constant(Tensor<T> value);

// All primitives accept rank-1 or rank-2 operands and validate shapes, throwing
// ShapeError naming the primitive and both shapes.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
// a · bᵀ for a (m×k), b (n×k).
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
// Same-shape elementwise, or b a row vector broadcast over the rows of a.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> relu(const Var<T>& a);
template <typename T>
Var<T> softmax(const Var<T>& a);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> ids);
template <typename T>
Var<T> mean(const Var<T>& a);
template <typename T>
Var<T> sum(const Var<T>& a);
// Mean over rows whose target is >= 0; rows with target -1 are ignored. Zero when every
// row is ignored.
template <typename T>
Var<T> cross_entropy_with_logits(const Var<T>& logits, std::span<const std::int32_t> targets);
// q, k, v are (batch·seq) × d_model with heads laid out side by side; returns the
// concatenated head outputs under a causal mask.
template <typename T>
Var<T> causal_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t batch, std::size_t seq,
                        std::size_t heads);

// Reverse pass from a scalar. Leaf gradients accumulate across calls.
template <typename T>
void backward(const Var<T>& loss);

// While a probe is alive on this thread, every relu records whether each input is
// positive; grad_check compares signatures to skip coordinates that straddle a kink.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  std::uint64_t signature() const { return hash_; }
  void reset() { hash_ = 1469598103934665603ull; }
  void record(bool positive);
  static KinkProbe* active();

 private:
  std::uint64_t hash_ = 1469598103934665603ull;
  KinkProbe* previous_ = nullptr;
};

}  // namespace cslab::ad
