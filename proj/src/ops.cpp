#include "cslab/autodiff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace cslab::ad {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;
template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
MapMat<T> as_mat(Tensor<T>& t) {
  return MapMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
CMapMat<T> as_mat(const Tensor<T>& t) {
  return CMapMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_fail(std::string_view op, const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " + shape_to_string(b));
}

template <typename T>
Var<T> make_node(std::string_view op, Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var<T>& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

enum class Broadcast { none, row };

template <typename T>
Broadcast check_binary(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) return Broadcast::row;
  shape_fail(op, a.shape(), b.shape());
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Adds a (rows × cols) gradient into a tensor that was either same-shaped or a
// broadcast row vector.
template <typename T>
void accumulate_broadcast(Tensor<T>& dst, const Tensor<T>& src, Broadcast mode) {
  if (mode == Broadcast::none) {
    accumulate(dst, src);
    return;
  }
  const std::size_t rows = src.rows(), cols = src.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* s = src.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += s[c];
  }
}

thread_local KinkProbe* g_probe = nullptr;

}  // namespace

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

KinkProbe::KinkProbe() : previous_(g_probe) { g_probe = this; }
KinkProbe::~KinkProbe() { g_probe = previous_; }
KinkProbe* KinkProbe::active() { return g_probe; }
void KinkProbe::record(bool positive) {
  hash_ ^= positive ? 0x9Eu : 0x3Bu;
  hash_ *= 1099511628211ull;
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& A = a->value;
  const auto& B = b->value;
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) shape_fail("matmul", A.shape(), B.shape());
  Tensor<T> out({A.rows(), B.cols()});
  as_mat(out).noalias() = as_mat(A) * as_mat(B);
  return make_node<T>("matmul", std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto G = as_mat(std::as_const(n.grad));
    if (pa.requires_grad) as_mat(pa.grad_buffer()).noalias() += G * as_mat(std::as_const(pb.value)).transpose();
    if (pb.requires_grad) as_mat(pb.grad_buffer()).noalias() += as_mat(std::as_const(pa.value)).transpose() * G;
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const auto& A = a->value;
  const auto& B = b->value;
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) shape_fail("matmul_nt", A.shape(), B.shape());
  Tensor<T> out({A.rows(), B.rows()});
  as_mat(out).noalias() = as_mat(A) * as_mat(B).transpose();
  return make_node<T>("matmul_nt", std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto G = as_mat(std::as_const(n.grad));
    if (pa.requires_grad) as_mat(pa.grad_buffer()).noalias() += G * as_mat(std::as_const(pb.value));
    if (pb.requires_grad) as_mat(pb.grad_buffer()).noalias() += G.transpose() * as_mat(std::as_const(pa.value));
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Broadcast mode = check_binary("add", a->value, b->value);
  Tensor<T> out = a->value;
  const std::size_t cols = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    T* o = out.data() + r * cols;
    const T* s = mode == Broadcast::row ? b->value.data() : b->value.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += s[c];
  }
  return make_node<T>("add", std::move(out), {a, b}, [mode](Node<T>& n) {
    if (n.parents[0]->requires_grad) accumulate(n.parents[0]->grad_buffer(), n.grad);
    if (n.parents[1]->requires_grad) accumulate_broadcast(n.parents[1]->grad_buffer(), n.grad, mode);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const Broadcast mode = check_binary("sub", a->value, b->value);
  Tensor<T> out = a->value;
  const std::size_t cols = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    T* o = out.data() + r * cols;
    const T* s = mode == Broadcast::row ? b->value.data() : b->value.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] -= s[c];
  }
  return make_node<T>("sub", std::move(out), {a, b}, [mode](Node<T>& n) {
    if (n.parents[0]->requires_grad) accumulate(n.parents[0]->grad_buffer(), n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor<T> neg = n.grad;
      for (auto& v : neg.values()) v = -v;
      accumulate_broadcast(n.parents[1]->grad_buffer(), neg, mode);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Broadcast mode = check_binary("mul", a->value, b->value);
  Tensor<T> out = a->value;
  const std::size_t cols = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    T* o = out.data() + r * cols;
    const T* s = mode == Broadcast::row ? b->value.data() : b->value.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= s[c];
  }
  return make_node<T>("mul", std::move(out), {a, b}, [mode](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const std::size_t rows = n.grad.rows(), cols = n.grad.cols();
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* s = mode == Broadcast::row ? pb.value.data() : pb.value.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += n.grad[r * cols + c] * s[c];
      }
    }
    if (pb.requires_grad) {
      Tensor<T> prod(n.grad.shape());
      for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = n.grad[i] * pa.value[i];
      accumulate_broadcast(pb.grad_buffer(), prod, mode);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a->value;
  for (auto& v : out.values()) v *= factor;
  return make_node<T>("scale", std::move(out), {a}, [factor](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  KinkProbe* probe = KinkProbe::active();
  for (auto& v : out.values()) {
    if (probe) probe->record(v > T(0));
    if (!(v > T(0))) v = T(0);
  }
  return make_node<T>("relu", std::move(out), {a}, [](Node<T>& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.value[i] > T(0)) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& a) {
  if (a->value.rank() == 0) shape_fail("softmax", a->value.shape(), {});
  Tensor<T> out = a->value;
  const std::size_t cols = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(o, o + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(o[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_node<T>("softmax", std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const std::size_t cols = n.value.cols();
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
      const T* y = n.value.data() + r * cols;
      const T* dy = n.grad.data() + r * cols;
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const auto& X = x->value;
  const std::size_t rows = X.rows(), cols = X.cols();
  if (X.rank() == 0 || gain->value.rank() != 1 || gain->value.size() != cols) {
    shape_fail("layer_norm", X.shape(), gain->value.shape());
  }
  if (!bias->value.same_shape(gain->value)) shape_fail("layer_norm", gain->value.shape(), bias->value.shape());
  Tensor<T> out(X.shape());
  Tensor<T> xhat(X.shape());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(cols);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (xr[c] - mu) * rstd[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gain->value[c] + bias->value[c];
    }
  }
  return make_node<T>("layer_norm", std::move(out), {x, gain, bias},
                      [xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& n) {
                        auto& px = *n.parents[0];
                        auto& pg = *n.parents[1];
                        auto& pb = *n.parents[2];
                        const std::size_t rows = n.value.rows(), cols = n.value.cols();
                        if (pg.requires_grad || pb.requires_grad) {
                          auto& gg = pg.grad_buffer();
                          auto& gb = pb.grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < cols; ++c) {
                              gg[c] += n.grad[r * cols + c] * xhat[r * cols + c];
                              gb[c] += n.grad[r * cols + c];
                            }
                          }
                        }
                        if (!px.requires_grad) return;
                        auto& gx = px.grad_buffer();
                        std::vector<T> dh(cols);
                        for (std::size_t r = 0; r < rows; ++r) {
                          T mean_dh = 0, mean_dh_h = 0;
                          for (std::size_t c = 0; c < cols; ++c) {
                            dh[c] = n.grad[r * cols + c] * pg.value[c];
                            mean_dh += dh[c];
                            mean_dh_h += dh[c] * xhat[r * cols + c];
                          }
                          mean_dh /= static_cast<T>(cols);
                          mean_dh_h /= static_cast<T>(cols);
                          for (std::size_t c = 0; c < cols; ++c) {
                            gx[r * cols + c] += rstd[r] * (dh[c] - mean_dh - xhat[r * cols + c] * mean_dh_h);
                          }
                        }
                      });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> ids) {
  const auto& W = table->value;
  if (W.rank() != 2) shape_fail("gather_rows", W.shape(), {ids.size()});
  const std::size_t cols = W.cols();
  Tensor<T> out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= W.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(W.rows()) + " rows");
    }
    std::copy_n(W.data() + static_cast<std::size_t>(ids[i]) * cols, cols, out.data() + i * cols);
  }
  return make_node<T>("gather_rows", std::move(out), {table},
                      [idx = std::vector<std::int32_t>(ids.begin(), ids.end())](Node<T>& n) {
                        auto& g = n.parents[0]->grad_buffer();
                        const std::size_t cols = n.value.cols();
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          T* dst = g.data() + static_cast<std::size_t>(idx[i]) * cols;
                          const T* src = n.grad.data() + i * cols;
                          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                        }
                      });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a->value.values()) total += v;
  return make_node<T>("sum", Tensor<T>::scalar(total), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const T up = n.grad[0];
    for (auto& v : g.values()) v += up;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  if (a->value.empty()) throw ShapeError("mean: empty tensor " + a->value.shape_str());
  T total = 0;
  for (T v : a->value.values()) total += v;
  const T count = static_cast<T>(a->value.size());
  return make_node<T>("mean", Tensor<T>::scalar(total / count), {a}, [count](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const T up = n.grad[0] / count;
    for (auto& v : g.values()) v += up;
  });
}

template <typename T>
Var<T> cross_entropy_with_logits(const Var<T>& logits, std::span<const std::int32_t> targets) {
  const auto& Z = logits->value;
  if (Z.rank() != 2 || Z.rows() != targets.size()) shape_fail("cross_entropy_with_logits", Z.shape(), {targets.size()});
  const std::size_t rows = Z.rows(), cols = Z.cols();
  Tensor<T> probs(Z.shape());
  T total = 0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t t = targets[r];
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= cols) {
      throw std::out_of_range("cross_entropy_with_logits: target " + std::to_string(t) + " outside " +
                              std::to_string(cols) + " classes");
    }
    const T* z = Z.data() + r * cols;
    T* p = probs.data() + r * cols;
    const T mx = *std::max_element(z, z + cols);
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(z[c] - mx);
      s += p[c];
    }
    for (std::size_t c = 0; c < cols; ++c) p[c] /= s;
    total += std::log(s) + mx - z[t];
    ++counted;
  }
  const T denom = counted ? static_cast<T>(counted) : T(1);
  return make_node<T>("cross_entropy_with_logits", Tensor<T>::scalar(total / denom), {logits},
                      [probs = std::move(probs), tg = std::vector<std::int32_t>(targets.begin(), targets.end()),
                       denom](Node<T>& n) {
                        auto& g = n.parents[0]->grad_buffer();
                        const std::size_t cols = probs.cols();
                        const T up = n.grad[0] / denom;
                        for (std::size_t r = 0; r < tg.size(); ++r) {
                          if (tg[r] < 0) continue;
                          T* gr = g.data() + r * cols;
                          const T* p = probs.data() + r * cols;
                          for (std::size_t c = 0; c < cols; ++c) gr[c] += up * p[c];
                          gr[static_cast<std::size_t>(tg[r])] -= up;
                        }
                      });
}

template <typename T>
Var<T> causal_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t batch, std::size_t seq,
                        std::size_t heads) {
  const auto& Qt = q->value;
  if (Qt.rank() != 2 || Qt.rows() != batch * seq || heads == 0 || Qt.cols() % heads != 0) {
    shape_fail("causal_attention", Qt.shape(), {batch, seq, heads});
  }
  if (!k->value.same_shape(Qt)) shape_fail("causal_attention", Qt.shape(), k->value.shape());
  if (!v->value.same_shape(Qt)) shape_fail("causal_attention", Qt.shape(), v->value.shape());
  const std::size_t d = Qt.cols(), hd = d / heads;
  const auto ld = static_cast<Eigen::Index>(d);
  const auto S = static_cast<Eigen::Index>(seq), H = static_cast<Eigen::Index>(hd);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  Tensor<T> out({batch * seq, d});
  std::vector<Mat<T>> probs(batch * heads);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * seq * d + h * hd;
      CStridedMap<T> Q(Qt.data() + off, S, H, Eigen::OuterStride<>(ld));
      CStridedMap<T> K(k->value.data() + off, S, H, Eigen::OuterStride<>(ld));
      CStridedMap<T> V(v->value.data() + off, S, H, Eigen::OuterStride<>(ld));
      Mat<T> P = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < S; ++i) {
        T mx = P(i, 0);
        for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, P(i, j));
        T s = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          P(i, j) = std::exp(P(i, j) - mx);
          s += P(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) P(i, j) /= s;
        for (Eigen::Index j = i + 1; j < S; ++j) P(i, j) = T(0);
      }
      StridedMap<T> O(out.data() + off, S, H, Eigen::OuterStride<>(ld));
      O.noalias() = P * V;
      probs[b * heads + h] = std::move(P);
    }
  }
  return make_node<T>(
      "causal_attention", std::move(out), {q, k, v},
      [probs = std::move(probs), batch, seq, heads, d, hd, inv_sqrt](Node<T>& n) {
        auto& pq = *n.parents[0];
        auto& pk = *n.parents[1];
        auto& pv = *n.parents[2];
        const auto ld = static_cast<Eigen::Index>(d);
        const auto S = static_cast<Eigen::Index>(seq), H = static_cast<Eigen::Index>(hd);
        T* gq = pq.requires_grad ? pq.grad_buffer().data() : nullptr;
        T* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
        T* gv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const Mat<T>& P = probs[b * heads + h];
            const std::size_t off = b * seq * d + h * hd;
            CStridedMap<T> Q(pq.value.data() + off, S, H, Eigen::OuterStride<>(ld));
            CStridedMap<T> K(pk.value.data() + off, S, H, Eigen::OuterStride<>(ld));
            CStridedMap<T> V(pv.value.data() + off, S, H, Eigen::OuterStride<>(ld));
            CStridedMap<T> dO(n.grad.data() + off, S, H, Eigen::OuterStride<>(ld));
            if (gv) StridedMap<T>(gv + off, S, H, Eigen::OuterStride<>(ld)).noalias() += P.transpose() * dO;
            if (!gq && !gk) continue;
            Mat<T> dP = dO * V.transpose();
            for (Eigen::Index i = 0; i < S; ++i) {
              T dot = 0;
              for (Eigen::Index j = 0; j <= i; ++j) dot += dP(i, j) * P(i, j);
              for (Eigen::Index j = 0; j < S; ++j) dP(i, j) = j <= i ? P(i, j) * (dP(i, j) - dot) * inv_sqrt : T(0);
            }
            if (gq) StridedMap<T>(gq + off, S, H, Eigen::OuterStride<>(ld)).noalias() += dP * K;
            if (gk) StridedMap<T>(gk + off, S, H, Eigen::OuterStride<>(ld)).noalias() += dP.transpose() * Q;
          }
        }
      });
}

template <typename T>
void backward(const Var<T>& loss) {
  if (loss->value.size() != 1) throw ShapeError("backward: loss must be scalar, got " + loss->value.shape_str());
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* node : order) {
    if (node->backward_fn) node->grad = Tensor<T>();
  }
  if (!loss->requires_grad) return;
  loss->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

#define CSLAB_INSTANTIATE(T)                                                                        \
  template struct Node<T>;                                                                          \
  template Var<T> leaf(Tensor<T>, bool);                                                            \
  template Var<T> constant(Tensor<T>);                                                              \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> scale(const Var<T>&, T);                                                          \
  template Var<T> relu(const Var<T>&);                                                              \
  template Var<T> softmax(const Var<T>&);                                                           \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                       \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::int32_t>);                        \
  template Var<T> mean(const Var<T>&);                                                              \
  template Var<T> sum(const Var<T>&);                                                               \
  template Var<T> cross_entropy_with_logits(const Var<T>&, std::span<const std::int32_t>);          \
  template Var<T> causal_attention(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t, \
                                   std::size_t);                                                    \
  template void backward(const Var<T>&);

CSLAB_INSTANTIATE(float)
CSLAB_INSTANTIATE(double)
#undef CSLAB_INSTANTIATE

}  // namespace cslab::ad
