#pragma once

// Reverse-mode autodiff over dense row-major tensors, templated on the scalar
// so the whole stack runs in f32 (training) or f64 (test mode, finite
// difference oracles).
//
// Graph model: every op returns a fresh node holding its forward value. Node
// ids are assigned in creation order, which is a valid topological order of
// any graph built by these ops. backward() walks ids in descending order and
// runs each node's pullback exactly once, accumulating (never overwriting)
// parent grads, so repeated backward() calls without zero_grad() sum their
// contributions. Tensors whose inputs all have requires_grad == false record
// neither parents nor pullbacks; a forward pass through such tensors (e.g.
// the EMA teacher) builds no graph beyond the values themselves.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "hpm/kernels.hpp"

namespace hpm {

using i64 = std::int64_t;
using i32 = std::int32_t;
using Shape = std::vector<i64>;

inline i64 numel_of(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;  // sized lazily; empty means "all zero, never touched"
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> pullback;

  i64 numel() const { return numel_of(shape); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<std::size_t>(numel()), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto n = make_node(std::move(shape));
    n->data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n->numel()), value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    auto n = make_node(std::move(shape));
    if (static_cast<i64>(values.size()) != n->numel())
      throw std::invalid_argument("from_vector: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(n->shape));
    n->data = std::make_shared<std::vector<T>>(std::move(values));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_vector({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  i64 numel() const { return n_->numel(); }
  std::uint64_t id() const { return n_->id; }
  bool requires_grad() const { return n_->requires_grad; }

  std::span<T> data() { return {n_->data->data(), n_->data->size()}; }
  std::span<const T> data() const { return {n_->data->data(), n_->data->size()}; }

  // Grad of an untouched tensor reads as empty; ensure_grad() to materialize.
  std::span<const T> grad() const { return {n_->grad.data(), n_->grad.size()}; }
  void ensure_grad() { n_->ensure_grad(); }
  void zero_grad() { n_->grad.assign(static_cast<std::size_t>(numel()), T(0)); }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
    return (*n_->data)[0];
  }

  // New leaf sharing this tensor's values, cut off from the graph.
  Tensor detach() const {
    auto n = make_node(n_->shape);
    n->data = n_->data;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

  void backward() const {
    if (numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(shape()));
    if (!n_->requires_grad) return;
    std::vector<Node<T>*> order;
    collect(n_.get(), order);
    // Creation ids are a topological order; walk newest first.
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });
    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (Node<T>* node : order)
      if (node->pullback) node->pullback();
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static std::shared_ptr<Node<T>> make_node(Shape shape) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    for (i64 d : n->shape)
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(n->shape));
    n->id = next_id_++;
    return n;
  }

 private:
  static void collect(Node<T>* root, std::vector<Node<T>*>& out) {
    out.clear();
    std::unordered_set<const void*> visited;
    std::vector<Node<T>*> work{root};
    visited.insert(root);
    while (!work.empty()) {
      Node<T>* cur = work.back();
      work.pop_back();
      out.push_back(cur);
      for (auto& p : cur->parents)
        if (p->requires_grad && visited.insert(p.get()).second) work.push_back(p.get());
    }
  }

  inline static std::uint64_t next_id_ = 1;
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> out_node(Shape shape, std::initializer_list<Tensor<T>> inputs) {
  auto n = Tensor<T>::make_node(std::move(shape));
  n->data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n->numel()));
  for (const auto& in : inputs)
    if (in.requires_grad()) {
      n->requires_grad = true;
      break;
    }
  if (n->requires_grad)
    for (const auto& in : inputs) n->parents.push_back(in.node());
  return n;
}

template <typename T>
void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---- binary elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check<T>(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = detail::out_node<T>(a.shape(), {a, b});
  kern::ew_add(n->numel(), a.data().data(), b.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pa = a.node(); auto pb = b.node();
    n->pullback = [self = n.get(), pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), pa->grad.data()); }
      if (pb->requires_grad) { pb->ensure_grad(); kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), pb->grad.data()); }
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check<T>(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = detail::out_node<T>(a.shape(), {a, b});
  kern::ew_sub(n->numel(), a.data().data(), b.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pa = a.node(); auto pb = b.node();
    n->pullback = [self = n.get(), pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), pa->grad.data()); }
      if (pb->requires_grad) { pb->ensure_grad(); kern::axpy_acc<T>(self->numel(), T(-1), self->grad.data(), pb->grad.data()); }
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check<T>(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = detail::out_node<T>(a.shape(), {a, b});
  kern::ew_mul(n->numel(), a.data().data(), b.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pa = a.node(); auto pb = b.node();
    n->pullback = [self = n.get(), pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); kern::mul_acc<T>(self->numel(), self->grad.data(), pb->data->data(), pa->grad.data()); }
      if (pb->requires_grad) { pb->ensure_grad(); kern::mul_acc<T>(self->numel(), self->grad.data(), pa->data->data(), pb->grad.data()); }
    };
  }
  return Tensor<T>(n);
}

// ---- scalar ops ----

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  auto n = detail::out_node<T>(x.shape(), {x});
  kern::scale(n->numel(), c, x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, c] {
      px->ensure_grad();
      kern::axpy_acc<T>(self->numel(), c, self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  auto n = detail::out_node<T>(x.shape(), {x});
  kern::add_scalar(n->numel(), c, x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px] {
      px->ensure_grad();
      kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) { return mul_scalar(x, T(-1)); }

// ---- unary activations ----

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  auto n = detail::out_node<T>(x.shape(), {x});
  kern::gelu(n->numel(), x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px] {
      px->ensure_grad();
      kern::gelu_bwd<T>(self->numel(), px->data->data(), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto n = detail::out_node<T>(x.shape(), {x});
  kern::sigmoid(n->numel(), x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px] {
      px->ensure_grad();
      kern::sigmoid_bwd<T>(self->numel(), self->data->data(), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  auto n = detail::out_node<T>(x.shape(), {x});
  kern::softplus(n->numel(), x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px] {
      px->ensure_grad();
      kern::softplus_bwd<T>(self->numel(), px->data->data(), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

// ---- matmul family ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check<T>(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
                   "matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const i64 m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
  auto n = detail::out_node<T>({m, nn}, {a, b});
  kern::gemm_nn(m, k, nn, a.data().data(), b.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pa = a.node(); auto pb = b.node();
    n->pullback = [self = n.get(), pa, pb, m, k, nn] {
      if (pa->requires_grad) {
        pa->ensure_grad();
        kern::gemm_nt<T>(m, nn, k, self->grad.data(), pb->data->data(), pa->grad.data(), true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        kern::gemm_tn<T>(m, k, nn, pa->data->data(), self->grad.data(), pb->grad.data(), true);
      }
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> bmm_nn(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check<T>(a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[0] == b.shape()[0] &&
                       a.shape()[2] == b.shape()[1],
                   "bmm_nn: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const i64 g = a.shape()[0], m = a.shape()[1], k = a.shape()[2], nn = b.shape()[2];
  auto n = detail::out_node<T>({g, m, nn}, {a, b});
  kern::bgemm_nn(g, m, k, nn, a.data().data(), b.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pa = a.node(); auto pb = b.node();
    n->pullback = [self = n.get(), pa, pb, g, m, k, nn] {
      if (pa->requires_grad) {
        pa->ensure_grad();
        kern::bgemm_nt<T>(g, m, nn, k, self->grad.data(), pb->data->data(), pa->grad.data(), true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        kern::bgemm_tn<T>(g, m, k, nn, pa->data->data(), self->grad.data(), pb->grad.data(), true);
      }
    };
  }
  return Tensor<T>(n);
}

// a [g,m,k] times b [g,n,k] transposed -> [g,m,n]
template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check<T>(a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[0] == b.shape()[0] &&
                       a.shape()[2] == b.shape()[2],
                   "bmm_nt: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const i64 g = a.shape()[0], m = a.shape()[1], k = a.shape()[2], nn = b.shape()[1];
  auto n = detail::out_node<T>({g, m, nn}, {a, b});
  kern::bgemm_nt(g, m, k, nn, a.data().data(), b.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pa = a.node(); auto pb = b.node();
    n->pullback = [self = n.get(), pa, pb, g, m, k, nn] {
      if (pa->requires_grad) {
        pa->ensure_grad();
        kern::bgemm_nn<T>(g, m, nn, k, self->grad.data(), pb->data->data(), pa->grad.data(), true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        kern::bgemm_tn<T>(g, m, nn, k, self->grad.data(), pa->data->data(), pb->grad.data(), true);
      }
    };
  }
  return Tensor<T>(n);
}

// ---- broadcast adds ----

// x viewed as [rows, n] plus bias [n] on every row.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::check<T>(bias.shape().size() == 1 && !x.shape().empty() && x.shape().back() == bias.shape()[0],
                   "add_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  const i64 nn = bias.shape()[0];
  const i64 rows = x.numel() / nn;
  auto n = detail::out_node<T>(x.shape(), {x, bias});
  for (i64 r = 0; r < rows; ++r)
    kern::ew_add(nn, x.data().data() + r * nn, bias.data().data(), n->data->data() + r * nn);
  if (n->requires_grad) {
    auto px = x.node(); auto pbias = bias.node();
    n->pullback = [self = n.get(), px, pbias, rows, nn] {
      if (px->requires_grad) {
        px->ensure_grad();
        kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), px->grad.data());
      }
      if (pbias->requires_grad) {
        pbias->ensure_grad();
        kern::reduce_axis_sum<T>(1, rows, nn, self->grad.data(), pbias->grad.data(), true);
      }
    };
  }
  return Tensor<T>(n);
}

// x [g, r, d] plus table [r, d] broadcast over axis 0 (positional embeddings).
template <typename T>
Tensor<T> add_rowtable(const Tensor<T>& x, const Tensor<T>& table) {
  detail::check<T>(x.shape().size() == 3 && table.shape().size() == 2 && x.shape()[1] == table.shape()[0] &&
                       x.shape()[2] == table.shape()[1],
                   "add_rowtable: " + shape_str(x.shape()) + " with table " + shape_str(table.shape()));
  const i64 g = x.shape()[0], rd = x.shape()[1] * x.shape()[2];
  auto n = detail::out_node<T>(x.shape(), {x, table});
  for (i64 gg = 0; gg < g; ++gg)
    kern::ew_add(rd, x.data().data() + gg * rd, table.data().data(), n->data->data() + gg * rd);
  if (n->requires_grad) {
    auto px = x.node(); auto pt = table.node();
    n->pullback = [self = n.get(), px, pt, g, rd] {
      if (px->requires_grad) {
        px->ensure_grad();
        kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), px->grad.data());
      }
      if (pt->requires_grad) {
        pt->ensure_grad();
        kern::reduce_axis_sum<T>(1, g, rd, self->grad.data(), pt->grad.data(), true);
      }
    };
  }
  return Tensor<T>(n);
}

// ---- normalizations ----

template <typename T>
Tensor<T> softmax_lastaxis(const Tensor<T>& x) {
  detail::check<T>(!x.shape().empty(), "softmax_lastaxis: scalar input");
  const i64 nn = x.shape().back();
  const i64 rows = x.numel() / nn;
  auto n = detail::out_node<T>(x.shape(), {x});
  kern::softmax_rows(rows, nn, x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, rows, nn] {
      px->ensure_grad();
      kern::softmax_rows_bwd<T>(rows, nn, self->data->data(), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> layer_norm_lastaxis(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const i64 nn = x.shape().back();
  detail::check<T>(gamma.shape() == Shape{nn} && beta.shape() == Shape{nn},
                   "layer_norm_lastaxis: affine params must be " + shape_str({nn}));
  const i64 rows = x.numel() / nn;
  auto n = detail::out_node<T>(x.shape(), {x, gamma, beta});
  auto mean = std::make_shared<std::vector<T>>(rows);
  auto rstd = std::make_shared<std::vector<T>>(rows);
  kern::layernorm_rows(rows, nn, x.data().data(), gamma.data().data(), beta.data().data(), eps,
                       n->data->data(), mean->data(), rstd->data());
  if (n->requires_grad) {
    auto px = x.node(); auto pg = gamma.node(); auto pb = beta.node();
    n->pullback = [self = n.get(), px, pg, pb, mean, rstd, rows, nn] {
      px->ensure_grad();
      pg->ensure_grad();
      pb->ensure_grad();
      kern::layernorm_rows_bwd<T>(rows, nn, px->data->data(), pg->data->data(), mean->data(),
                                  rstd->data(), self->grad.data(), px->grad.data(),
                                  pg->grad.data(), pb->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> l2_normalize_lastaxis(const Tensor<T>& x, T eps) {
  const i64 nn = x.shape().back();
  const i64 rows = x.numel() / nn;
  auto n = detail::out_node<T>(x.shape(), {x});
  auto norm = std::make_shared<std::vector<T>>(rows);
  kern::l2norm_rows(rows, nn, x.data().data(), eps, n->data->data(), norm->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, norm, eps, rows, nn] {
      px->ensure_grad();
      kern::l2norm_rows_bwd<T>(rows, nn, self->data->data(), norm->data(), eps, self->grad.data(),
                               px->grad.data());
    };
  }
  return Tensor<T>(n);
}

// ---- reductions ----

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  const auto& s = x.shape();
  detail::check<T>(axis >= 0 && axis < static_cast<int>(s.size()), "sum_axis: axis out of range");
  i64 outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
  const i64 rn = s[axis];
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape = {1};
  auto n = detail::out_node<T>(out_shape, {x});
  kern::reduce_axis_sum(outer, rn, inner, x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, outer, rn, inner] {
      px->ensure_grad();
      kern::broadcast_axis_add<T>(outer, rn, inner, T(1), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const i64 rn = x.shape()[static_cast<std::size_t>(axis)];
  return mul_scalar(sum_axis(x, axis), T(1) / T(rn));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto n = detail::out_node<T>({1}, {x});
  (*n->data)[0] = kern::sum_all(x.numel(), x.data().data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px] {
      px->ensure_grad();
      const T g = self->grad[0];
      for (T& v : px->grad) v += g;
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / T(x.numel()));
}

// ---- shape ops ----

// Zero-copy view: shares the parent's buffer.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  detail::check<T>(numel_of(new_shape) == x.numel(),
                   "reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
  auto n = Tensor<T>::make_node(std::move(new_shape));
  n->data = x.node()->data;
  n->requires_grad = x.requires_grad();
  if (n->requires_grad) {
    n->parents.push_back(x.node());
    auto px = x.node();
    n->pullback = [self = n.get(), px] {
      px->ensure_grad();
      kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

// x [g, r, d] with per-group row indices idx (g*v entries) -> [g, v, d]
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::shared_ptr<std::vector<i32>> idx, i64 v) {
  detail::check<T>(x.shape().size() == 3, "gather_rows: need rank 3, got " + shape_str(x.shape()));
  const i64 g = x.shape()[0], r = x.shape()[1], d = x.shape()[2];
  detail::check<T>(static_cast<i64>(idx->size()) == g * v, "gather_rows: index count mismatch");
  for (i32 i : *idx)
    detail::check<T>(i >= 0 && i < r, "gather_rows: index out of range");
  auto n = detail::out_node<T>({g, v, d}, {x});
  kern::gather_rows(g, v, r, d, idx->data(), x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, idx, g, v, r, d] {
      px->ensure_grad();
      kern::scatter_rows_add<T>(g, v, r, d, idx->data(), self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check<T>(a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[0] == b.shape()[0] &&
                       a.shape()[2] == b.shape()[2],
                   "concat_rows: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const i64 g = a.shape()[0], r1 = a.shape()[1], r2 = b.shape()[1], d = a.shape()[2];
  auto n = detail::out_node<T>({g, r1 + r2, d}, {a, b});
  kern::concat_rows(g, r1, r2, d, a.data().data(), b.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pa = a.node(); auto pb = b.node();
    n->pullback = [self = n.get(), pa, pb, g, r1, r2, d] {
      pa->ensure_grad();
      pb->ensure_grad();
      kern::split_rows_acc<T>(g, r1, r2, d, self->grad.data(), pa->grad.data(), pb->grad.data());
    };
  }
  return Tensor<T>(n);
}

// token [d] -> [rows, d]
template <typename T>
Tensor<T> expand_token(const Tensor<T>& token, i64 rows) {
  detail::check<T>(token.shape().size() == 1, "expand_token: token must be rank 1");
  const i64 d = token.shape()[0];
  auto n = detail::out_node<T>({rows, d}, {token});
  kern::repeat_row(rows, d, token.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pt = token.node();
    n->pullback = [self = n.get(), pt, rows, d] {
      pt->ensure_grad();
      kern::repeat_row_acc<T>(rows, d, self->grad.data(), pt->grad.data());
    };
  }
  return Tensor<T>(n);
}

// [b, r, h*dh] -> [b*h, r, dh]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, i64 h) {
  detail::check<T>(x.shape().size() == 3 && x.shape()[2] % h == 0,
                   "split_heads: " + shape_str(x.shape()) + " with h=" + std::to_string(h));
  const i64 b = x.shape()[0], r = x.shape()[1], dh = x.shape()[2] / h;
  auto n = detail::out_node<T>({b * h, r, dh}, {x});
  kern::split_heads(b, r, h, dh, x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, b, r, h, dh] {
      px->ensure_grad();
      kern::split_heads_acc<T>(b, r, h, dh, self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

// [b*h, r, dh] -> [b, r, h*dh]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, i64 h) {
  detail::check<T>(x.shape().size() == 3 && x.shape()[0] % h == 0,
                   "merge_heads: " + shape_str(x.shape()) + " with h=" + std::to_string(h));
  const i64 b = x.shape()[0] / h, r = x.shape()[1], dh = x.shape()[2];
  auto n = detail::out_node<T>({b, r, h * dh}, {x});
  kern::merge_heads(b, r, h, dh, x.data().data(), n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, b, r, h, dh] {
      px->ensure_grad();
      kern::merge_heads_acc<T>(b, r, h, dh, self->grad.data(), px->grad.data());
    };
  }
  return Tensor<T>(n);
}

// v [k] -> [k, k] of v_i - v_j
template <typename T>
Tensor<T> pairwise_diff(const Tensor<T>& v) {
  detail::check<T>(v.shape().size() == 1, "pairwise_diff: need rank 1, got " + shape_str(v.shape()));
  const i64 k = v.shape()[0];
  auto n = detail::out_node<T>({k, k}, {v});
  kern::pairwise_diff(k, v.data().data(), n->data->data());
  if (n->requires_grad) {
    auto pv = v.node();
    n->pullback = [self = n.get(), pv, k] {
      pv->ensure_grad();
      kern::pairwise_diff_bwd<T>(k, self->grad.data(), pv->grad.data());
    };
  }
  return Tensor<T>(n);
}

// x [g, ...rest] -> [...rest] for one group index.
template <typename T>
Tensor<T> slice_group(const Tensor<T>& x, i64 g0) {
  detail::check<T>(x.shape().size() >= 2 && g0 >= 0 && g0 < x.shape()[0],
                   "slice_group: index " + std::to_string(g0) + " in " + shape_str(x.shape()));
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const i64 len = numel_of(out_shape);
  auto n = detail::out_node<T>(out_shape, {x});
  kern::copy(len, x.data().data() + g0 * len, n->data->data());
  if (n->requires_grad) {
    auto px = x.node();
    n->pullback = [self = n.get(), px, g0, len] {
      px->ensure_grad();
      kern::axpy_acc<T>(len, T(1), self->grad.data(), px->grad.data() + g0 * len);
    };
  }
  return Tensor<T>(n);
}

// Sum of same-shaped tensors; keeps wide loss sums shallow.
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs) {
  detail::check<T>(!xs.empty(), "add_n: empty input");
  for (const auto& x : xs)
    detail::check<T>(x.shape() == xs[0].shape(), "add_n: shape mismatch");
  auto n = Tensor<T>::make_node(xs[0].shape());
  n->data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n->numel()), T(0));
  for (const auto& x : xs) {
    kern::axpy_acc<T>(n->numel(), T(1), x.data().data(), n->data->data());
    if (x.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const auto& x : xs) n->parents.push_back(x.node());
    n->pullback = [self = n.get()] {
      for (auto& p : self->parents)
        if (p->requires_grad) {
          p->ensure_grad();
          kern::axpy_acc<T>(self->numel(), T(1), self->grad.data(), p->grad.data());
        }
    };
  }
  return Tensor<T>(n);
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace hpm
