#include "rvo/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>

#include "rvo/errors.hpp"

namespace rvo::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

int64_t rows_of(const Shape& shape) {
  if (shape.size() <= 1) return 1;
  int64_t r = 1;
  for (size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
  return r;
}

int64_t cols_of(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

template <typename T>
NodePtr<T> make_node(Shape shape, std::vector<NodePtr<T>> inputs) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(numel(n->shape)), T(0));
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  n->requires_grad = needs;
  if (needs) n->inputs = std::move(inputs);
  return n;
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.numel() != b.numel() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
  }
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D deriv) {
  auto n = make_node<T>(a.shape(), {a.shared()});
  const auto& x = a.node()->value;
  for (size_t i = 0; i < x.size(); ++i) n->value[i] = f(x[i]);
  if (n->requires_grad) {
    n->backward_fn = [deriv](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
      }
    };
  }
  return Var<T>(n);
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
int64_t Var<T>::rows() const {
  return rows_of(node_->shape);
}

template <typename T>
Var<T> Var<T>::constant(Shape shape, std::vector<T> values) {
  if (ag::numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeMismatch("constant: " + std::to_string(values.size()) + " values for shape " +
                        shape_str(shape));
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(values.begin(), values.end());
  return Var<T>(n);
}

template <typename T>
Var<T> Var<T>::constant(Shape shape, T fill) {
  auto count = static_cast<size_t>(ag::numel(shape));
  return constant(std::move(shape), std::vector<T>(count, fill));
}

template <typename T>
Var<T> Var<T>::parameter(Shape shape, std::vector<T> values) {
  Var<T> v = constant(std::move(shape), std::move(values));
  v.node_->requires_grad = true;
  return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& root) {
  if (root.numel() != 1) throw ShapeMismatch("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back().first;
    size_t& next = stack.back().second;
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad_data()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  auto n = make_node<T>(a.shape(), {a.shared(), b.shared()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] + b.value()[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      for (auto& in : self.inputs) {
        if (!in->requires_grad) continue;
        T* g = in->grad_data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  auto n = make_node<T>(a.shape(), {a.shared(), b.shared()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] - b.value()[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      if (self.inputs[0]->requires_grad) {
        T* g = self.inputs[0]->grad_data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
      if (self.inputs[1]->requires_grad) {
        T* g = self.inputs[1]->grad_data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  auto n = make_node<T>(a.shape(), {a.shared(), b.shared()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * b.value()[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      Node<T>& x = *self.inputs[0];
      Node<T>& y = *self.inputs[1];
      if (x.requires_grad) {
        T* g = x.grad_data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y.value[i];
      }
      if (y.requires_grad) {
        T* g = y.grad_data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x.value[i];
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> sin(const Var<T>& a) {
  return unary(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Var<T> cos(const Var<T>& a) {
  return unary(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <typename T>
Var<T> asin(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::asin(std::clamp(x, T(-1), T(1))); },
      [](T x, T) { return std::abs(x) < T(1) ? T(1) / std::sqrt(T(1) - x * x) : T(0); });
}

template <typename T>
Var<T> atan2(const Var<T>& y, const Var<T>& x) {
  require_same(y, x, "atan2");
  auto n = make_node<T>(y.shape(), {y.shared(), x.shared()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::atan2(y.value()[i], x.value()[i]);
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      Node<T>& yn = *self.inputs[0];
      Node<T>& xn = *self.inputs[1];
      T* gy = yn.requires_grad ? yn.grad_data() : nullptr;
      T* gx = xn.requires_grad ? xn.grad_data() : nullptr;
      for (size_t i = 0; i < self.grad.size(); ++i) {
        T r2 = xn.value[i] * xn.value[i] + yn.value[i] * yn.value[i];
        if (r2 == T(0)) continue;
        if (gy) gy[i] += self.grad[i] * xn.value[i] / r2;
        if (gx) gx[i] -= self.grad[i] * yn.value[i] / r2;
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> mul_col(const Var<T>& x, const Var<T>& s) {
  if (s.cols() != 1 || s.rows() != x.rows()) {
    throw ShapeMismatch("mul_col: " + shape_str(x.shape()) + " by " + shape_str(s.shape()));
  }
  auto n = make_node<T>(x.shape(), {x.shared(), s.shared()});
  const int64_t rows = x.rows(), cols = x.cols();
  for (int64_t r = 0; r < rows; ++r) {
    const T sv = s.value()[r];
    for (int64_t c = 0; c < cols; ++c) n->value[r * cols + c] = x.value()[r * cols + c] * sv;
  }
  if (n->requires_grad) {
    n->backward_fn = [rows, cols](Node<T>& self) {
      Node<T>& xn = *self.inputs[0];
      Node<T>& sn = *self.inputs[1];
      T* gx = xn.requires_grad ? xn.grad_data() : nullptr;
      T* gs = sn.requires_grad ? sn.grad_data() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (int64_t c = 0; c < cols; ++c) {
          const T g = self.grad[r * cols + c];
          if (gx) gx[r * cols + c] += g * sn.value[r];
          acc += g * xn.value[r * cols + c];
        }
        if (gs) gs[r] += acc;
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& s) {
  if (s.numel() != 1) throw ShapeMismatch("mul_scalar: scalar operand has " + shape_str(s.shape()));
  auto n = make_node<T>(x.shape(), {x.shared(), s.shared()});
  const T sv = s.item();
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = x.value()[i] * sv;
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      Node<T>& xn = *self.inputs[0];
      Node<T>& sn = *self.inputs[1];
      T acc = 0;
      T* gx = xn.requires_grad ? xn.grad_data() : nullptr;
      for (size_t i = 0; i < self.grad.size(); ++i) {
        if (gx) gx[i] += self.grad[i] * sn.value[0];
        acc += self.grad[i] * xn.value[i];
      }
      if (sn.requires_grad) sn.grad_data()[0] += acc;
    };
  }
  return Var<T>(n);
}

// ---- structural -----------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto n = make_node<T>(std::move(shape), {a.shared()});
  n->value = a.node()->value;
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const int64_t rows = parts[0].rows();
  int64_t total = 0;
  std::vector<NodePtr<T>> inputs;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeMismatch("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                          shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
    inputs.push_back(p.shared());
  }
  auto n = make_node<T>(Shape{rows, total}, std::move(inputs));
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].node()->value;
    const int64_t w = widths[k];
    for (int64_t r = 0; r < rows; ++r) {
      std::copy_n(src.begin() + r * w, w, n->value.begin() + r * total + offset);
    }
    offset += w;
  }
  if (n->requires_grad) {
    n->backward_fn = [rows, total, widths](Node<T>& self) {
      int64_t off = 0;
      for (size_t k = 0; k < self.inputs.size(); ++k) {
        Node<T>& in = *self.inputs[k];
        const int64_t w = widths[k];
        if (in.requires_grad && w > 0) {
          T* g = in.grad_data();
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * total + off + c];
          }
        }
        off += w;
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const int64_t cols = parts[0].cols();
  int64_t rows = 0;
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column mismatch");
    rows += p.rows();
    inputs.push_back(p.shared());
  }
  auto n = make_node<T>(Shape{rows, cols}, std::move(inputs));
  size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), n->value.begin() + offset);
    offset += p.value().size();
  }
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      size_t off = 0;
      for (auto& in : self.inputs) {
        if (in->requires_grad) {
          T* g = in->grad_data();
          for (size_t i = 0; i < in->value.size(); ++i) g[i] += self.grad[off + i];
        }
        off += in->value.size();
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, int64_t begin, int64_t end) {
  const int64_t rows = a.rows(), cols = a.cols();
  if (begin < 0 || end > cols || begin > end) throw IndexOutOfRange("slice_cols: bad range");
  const int64_t w = end - begin;
  auto n = make_node<T>(Shape{rows, w}, {a.shared()});
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < w; ++c) n->value[r * w + c] = a.value()[r * cols + begin + c];
  }
  if (n->requires_grad) {
    n->backward_fn = [rows, cols, begin, w](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < w; ++c) g[r * cols + begin + c] += self.grad[r * w + c];
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, int64_t begin, int64_t end) {
  const int64_t rows = a.rows(), cols = a.cols();
  if (begin < 0 || end > rows || begin > end) throw IndexOutOfRange("slice_rows: bad range");
  auto n = make_node<T>(Shape{end - begin, cols}, {a.shared()});
  std::copy(a.value().begin() + begin * cols, a.value().begin() + end * cols, n->value.begin());
  if (n->requires_grad) {
    n->backward_fn = [begin, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data() + begin * cols;
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, const Index& index) {
  const int64_t rows = a.rows(), cols = a.cols();
  for (auto i : index) {
    if (i < 0 || i >= rows) {
      throw IndexOutOfRange("gather_rows: index " + std::to_string(i) + " outside [0," +
                            std::to_string(rows) + ")");
    }
  }
  const auto m = static_cast<int64_t>(index.size());
  auto n = make_node<T>(Shape{m, cols}, {a.shared()});
  for (int64_t r = 0; r < m; ++r) {
    std::copy_n(a.value().begin() + index[r] * cols, cols, n->value.begin() + r * cols);
  }
  if (n->requires_grad) {
    n->backward_fn = [index, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data();
      for (size_t r = 0; r < index.size(); ++r) {
        T* dst = g + index[r] * cols;
        const T* src = self.grad.data() + r * cols;
        for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> repeat_rows(const Var<T>& a, int64_t k) {
  Index idx(static_cast<size_t>(a.rows() * k));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int32_t>(i / k);
  return gather_rows(a, idx);
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  auto n = make_node<T>(Shape{1, 1}, {a.shared()});
  T acc = 0;
  for (T v : a.value()) acc += v;
  n->value[0] = acc;
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data();
      for (size_t i = 0; i < in.value.size(); ++i) g[i] += self.grad[0];
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Var<T> row_norm(const Var<T>& a) {
  const int64_t rows = a.rows(), cols = a.cols();
  auto n = make_node<T>(Shape{rows, 1}, {a.shared()});
  for (int64_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (int64_t c = 0; c < cols; ++c) acc += a.value()[r * cols + c] * a.value()[r * cols + c];
    n->value[r] = std::sqrt(acc);
  }
  if (n->requires_grad) {
    n->backward_fn = [rows, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data();
      for (int64_t r = 0; r < rows; ++r) {
        if (self.value[r] == T(0)) continue;
        const T f = self.grad[r] / self.value[r];
        for (int64_t c = 0; c < cols; ++c) g[r * cols + c] += f * in.value[r * cols + c];
      }
    };
  }
  return Var<T>(n);
}

namespace {
void check_groups(int64_t rows, int64_t k, const char* op) {
  if (k <= 0 || rows % k != 0) {
    throw ShapeMismatch(std::string(op) + ": " + std::to_string(rows) +
                        " rows not divisible into groups of " + std::to_string(k));
  }
}
}  // namespace

template <typename T>
Var<T> group_sum(const Var<T>& a, int64_t k) {
  const int64_t rows = a.rows(), cols = a.cols();
  check_groups(rows, k, "group_sum");
  const int64_t m = rows / k;
  auto n = make_node<T>(Shape{m, cols}, {a.shared()});
  for (int64_t g = 0; g < m; ++g) {
    for (int64_t j = 0; j < k; ++j) {
      const T* src = a.value().data() + (g * k + j) * cols;
      for (int64_t c = 0; c < cols; ++c) n->value[g * cols + c] += src[c];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [m, k, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* gr = in.grad_data();
      for (int64_t g = 0; g < m; ++g) {
        for (int64_t j = 0; j < k; ++j) {
          for (int64_t c = 0; c < cols; ++c) gr[(g * k + j) * cols + c] += self.grad[g * cols + c];
        }
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> group_mean(const Var<T>& a, int64_t k) {
  return scale(group_sum(a, k), T(1) / static_cast<T>(k));
}

template <typename T>
Var<T> group_max(const Var<T>& a, int64_t k) {
  const int64_t rows = a.rows(), cols = a.cols();
  check_groups(rows, k, "group_max");
  const int64_t m = rows / k;
  auto n = make_node<T>(Shape{m, cols}, {a.shared()});
  Index arg(static_cast<size_t>(m * cols));
  for (int64_t g = 0; g < m; ++g) {
    for (int64_t c = 0; c < cols; ++c) {
      int64_t best = g * k;
      for (int64_t j = 1; j < k; ++j) {
        if (a.value()[(g * k + j) * cols + c] > a.value()[best * cols + c]) best = g * k + j;
      }
      n->value[g * cols + c] = a.value()[best * cols + c];
      arg[g * cols + c] = static_cast<int32_t>(best);
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [arg = std::move(arg), cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* g = in.grad_data();
      for (size_t i = 0; i < arg.size(); ++i) {
        g[arg[i] * cols + static_cast<int64_t>(i) % cols] += self.grad[i];
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> group_softmax(const Var<T>& a, int64_t k) {
  const int64_t rows = a.rows(), cols = a.cols();
  check_groups(rows, k, "group_softmax");
  const int64_t m = rows / k;
  auto n = make_node<T>(a.shape(), {a.shared()});
  const T* x = a.value().data();
  T* y = n->value.data();
  for (int64_t g = 0; g < m; ++g) {
    for (int64_t c = 0; c < cols; ++c) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t j = 0; j < k; ++j) mx = std::max(mx, x[(g * k + j) * cols + c]);
      T z = 0;
      for (int64_t j = 0; j < k; ++j) {
        T e = std::exp(x[(g * k + j) * cols + c] - mx);
        y[(g * k + j) * cols + c] = e;
        z += e;
      }
      for (int64_t j = 0; j < k; ++j) y[(g * k + j) * cols + c] /= z;
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [m, k, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* gi = in.grad_data();
      const T* yv = self.value.data();
      const T* gy = self.grad.data();
      for (int64_t g = 0; g < m; ++g) {
        for (int64_t c = 0; c < cols; ++c) {
          T dot = 0;
          for (int64_t j = 0; j < k; ++j) {
            const int64_t i = (g * k + j) * cols + c;
            dot += yv[i] * gy[i];
          }
          for (int64_t j = 0; j < k; ++j) {
            const int64_t i = (g * k + j) * cols + c;
            gi[i] += yv[i] * (gy[i] - dot);
          }
        }
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> row_softmax(const Var<T>& a) {
  const int64_t rows = a.rows(), cols = a.cols();
  auto n = make_node<T>(a.shape(), {a.shared()});
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = a.value().data() + r * cols;
    T* y = n->value.data() + r * cols;
    const T mx = *std::max_element(x, x + cols);
    T z = 0;
    for (int64_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (int64_t c = 0; c < cols; ++c) y[c] /= z;
  }
  if (n->requires_grad) {
    n->backward_fn = [rows, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T* gi = in.grad_data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* y = self.value.data() + r * cols;
        const T* gy = self.grad.data() + r * cols;
        T dot = 0;
        for (int64_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
        for (int64_t c = 0; c < cols; ++c) gi[r * cols + c] += y[c] * (gy[c] - dot);
      }
    };
  }
  return Var<T>(n);
}

// ---- dense layers ---------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return linear(a, b, Var<T>());
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const int64_t n_rows = x.rows(), in = x.cols();
  if (w.rows() != in) {
    throw ShapeMismatch("linear: input " + shape_str(x.shape()) + " vs weight " +
                        shape_str(w.shape()));
  }
  const int64_t out = w.cols();
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out) throw ShapeMismatch("linear: bias width mismatch");
  std::vector<NodePtr<T>> inputs{x.shared(), w.shared()};
  if (has_bias) inputs.push_back(bias.shared());
  auto n = make_node<T>(Shape{n_rows, out}, std::move(inputs));
  MatMap<T> y(n->value.data(), n_rows, out);
  ConstMatMap<T> xm(x.value().data(), n_rows, in);
  ConstMatMap<T> wm(w.value().data(), in, out);
  if (in > 0) y.noalias() = xm * wm;
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias.value().data(), out);
    y.rowwise() += bm;
  }
  if (n->requires_grad) {
    n->backward_fn = [n_rows, in, out, has_bias](Node<T>& self) {
      ConstMatMap<T> dy(self.grad.data(), n_rows, out);
      Node<T>& xn = *self.inputs[0];
      Node<T>& wn = *self.inputs[1];
      if (in > 0 && xn.requires_grad) {
        MatMap<T> dx(xn.grad_data(), n_rows, in);
        dx.noalias() += dy * ConstMatMap<T>(wn.value.data(), in, out).transpose();
      }
      if (in > 0 && wn.requires_grad) {
        MatMap<T> dw(wn.grad_data(), in, out);
        dw.noalias() += ConstMatMap<T>(xn.value.data(), n_rows, in).transpose() * dy;
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(self.inputs[2]->grad_data(), out);
        db += dy.colwise().sum();
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  std::vector<T>& running_mean, std::vector<T>& running_var,
                  const BatchNormState& state) {
  const int64_t rows = x.rows(), cols = x.cols();
  if (gamma.numel() != cols || beta.numel() != cols ||
      static_cast<int64_t>(running_mean.size()) != cols ||
      static_cast<int64_t>(running_var.size()) != cols) {
    throw ShapeMismatch("batch_norm: channel count mismatch for input " + shape_str(x.shape()));
  }
  if (rows == 0) throw ShapeMismatch("batch_norm: empty input");
  auto n = make_node<T>(x.shape(), {x.shared(), gamma.shared(), beta.shared()});
  std::vector<T> mean(cols, T(0)), inv(cols);
  const T* xv = x.value().data();
  if (state.training) {
    std::vector<T> var(cols, T(0));
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) mean[c] += xv[r * cols + c];
    for (auto& m : mean) m /= static_cast<T>(rows);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) {
        const T d = xv[r * cols + c] - mean[c];
        var[c] += d * d;
      }
    }
    const T mom = static_cast<T>(state.momentum);
    for (int64_t c = 0; c < cols; ++c) {
      const T biased = var[c] / static_cast<T>(rows);
      inv[c] = T(1) / std::sqrt(biased + static_cast<T>(state.eps));
      const T unbiased = rows > 1 ? var[c] / static_cast<T>(rows - 1) : biased;
      running_mean[c] = (T(1) - mom) * running_mean[c] + mom * mean[c];
      running_var[c] = (T(1) - mom) * running_var[c] + mom * unbiased;
    }
  } else {
    for (int64_t c = 0; c < cols; ++c) {
      mean[c] = running_mean[c];
      inv[c] = T(1) / std::sqrt(running_var[c] + static_cast<T>(state.eps));
    }
  }
  std::vector<T> xhat(static_cast<size_t>(rows * cols));
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      const int64_t i = r * cols + c;
      xhat[i] = (xv[i] - mean[c]) * inv[c];
      n->value[i] = gv[c] * xhat[i] + bv[c];
    }
  }
  if (n->requires_grad) {
    const bool training = state.training;
    n->backward_fn = [rows, cols, training, inv = std::move(inv),
                      xhat = std::move(xhat)](Node<T>& self) {
      Node<T>& xn = *self.inputs[0];
      Node<T>& gn = *self.inputs[1];
      Node<T>& bn = *self.inputs[2];
      std::vector<T> sum_dy(cols, T(0)), sum_dy_xhat(cols, T(0));
      const T* dy = self.grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
          sum_dy[c] += dy[r * cols + c];
          sum_dy_xhat[c] += dy[r * cols + c] * xhat[r * cols + c];
        }
      }
      if (gn.requires_grad) {
        T* g = gn.grad_data();
        for (int64_t c = 0; c < cols; ++c) g[c] += sum_dy_xhat[c];
      }
      if (bn.requires_grad) {
        T* g = bn.grad_data();
        for (int64_t c = 0; c < cols; ++c) g[c] += sum_dy[c];
      }
      if (!xn.requires_grad) return;
      T* dx = xn.grad_data();
      const T* gamma_v = gn.value.data();
      const T nr = static_cast<T>(rows);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
          const int64_t i = r * cols + c;
          if (training) {
            dx[i] += gamma_v[c] * inv[c] / nr *
                     (nr * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
          } else {
            dx[i] += gamma_v[c] * inv[c] * dy[i];
          }
        }
      }
    };
  }
  return Var<T>(n);
}

namespace {

struct ConvGeometry {
  int64_t batch, height, width, cin, out_h, out_w, stride;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int64_t patch = 9 * g.cin;
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t oy = 0; oy < g.out_h; ++oy) {
      for (int64_t ox = 0; ox < g.out_w; ++ox) {
        T* row = cols + ((b * g.out_h + oy) * g.out_w + ox) * patch;
        for (int64_t ky = 0; ky < 3; ++ky) {
          const int64_t iy = oy * g.stride + ky - 1;
          for (int64_t kx = 0; kx < 3; ++kx) {
            const int64_t ix = ox * g.stride + kx - 1;
            T* dst = row + (ky * 3 + kx) * g.cin;
            if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) {
              std::fill_n(dst, g.cin, T(0));
            } else {
              std::copy_n(x + ((b * g.height + iy) * g.width + ix) * g.cin, g.cin, dst);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const int64_t patch = 9 * g.cin;
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t oy = 0; oy < g.out_h; ++oy) {
      for (int64_t ox = 0; ox < g.out_w; ++ox) {
        const T* row = cols + ((b * g.out_h + oy) * g.out_w + ox) * patch;
        for (int64_t ky = 0; ky < 3; ++ky) {
          const int64_t iy = oy * g.stride + ky - 1;
          if (iy < 0 || iy >= g.height) continue;
          for (int64_t kx = 0; kx < 3; ++kx) {
            const int64_t ix = ox * g.stride + kx - 1;
            if (ix < 0 || ix >= g.width) continue;
            const T* src = row + (ky * 3 + kx) * g.cin;
            T* dst = dx + ((b * g.height + iy) * g.width + ix) * g.cin;
            for (int64_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv3x3(const Var<T>& x, const Var<T>& w, int stride) {
  if (x.shape().size() != 4) throw ShapeMismatch("conv3x3: expected NHWC input");
  ConvGeometry g{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], 0, 0, stride};
  g.out_h = (g.height - 1) / stride + 1;
  g.out_w = (g.width - 1) / stride + 1;
  if (w.rows() != 9 * g.cin) {
    throw ShapeMismatch("conv3x3: weight " + shape_str(w.shape()) + " for " +
                        std::to_string(g.cin) + " input channels");
  }
  const int64_t cout = w.cols();
  const int64_t out_rows = g.batch * g.out_h * g.out_w;
  const int64_t patch = 9 * g.cin;
  auto n = make_node<T>(Shape{g.batch, g.out_h, g.out_w, cout}, {x.shared(), w.shared()});
  Buffer<T> cols(static_cast<size_t>(out_rows * patch));
  im2col(x.value().data(), g, cols.data());
  MatMap<T>(n->value.data(), out_rows, cout).noalias() =
      ConstMatMap<T>(cols.data(), out_rows, patch) * ConstMatMap<T>(w.value().data(), patch, cout);
  if (n->requires_grad) {
    n->backward_fn = [g, out_rows, patch, cout](Node<T>& self) {
      Node<T>& xn = *self.inputs[0];
      Node<T>& wn = *self.inputs[1];
      ConstMatMap<T> dy(self.grad.data(), out_rows, cout);
      if (wn.requires_grad) {
        Buffer<T> cols(static_cast<size_t>(out_rows * patch));
        im2col(xn.value.data(), g, cols.data());
        MatMap<T>(wn.grad_data(), patch, cout).noalias() +=
            ConstMatMap<T>(cols.data(), out_rows, patch).transpose() * dy;
      }
      if (xn.requires_grad) {
        Buffer<T> dcols(static_cast<size_t>(out_rows * patch));
        MatMap<T>(dcols.data(), out_rows, patch).noalias() =
            dy * ConstMatMap<T>(wn.value.data(), patch, cout).transpose();
        col2im_add(dcols.data(), g, xn.grad_data());
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> bilinear_sample(const Var<T>& map, const Var<T>& coords, const Index& batch) {
  if (map.shape().size() != 4) throw ShapeMismatch("bilinear_sample: expected NHWC map");
  const int64_t nb = map.shape()[0], h = map.shape()[1], w = map.shape()[2], c = map.shape()[3];
  const int64_t m = coords.rows();
  if (coords.cols() != 2 || static_cast<int64_t>(batch.size()) != m) {
    throw ShapeMismatch("bilinear_sample: coords must be m x 2 with one batch index per row");
  }
  for (auto b : batch) {
    if (b < 0 || b >= nb) throw IndexOutOfRange("bilinear_sample: batch index out of range");
  }
  struct Tap {
    int64_t i00, i01, i10, i11;
    T fx, fy;
    bool inside_x, inside_y;
  };
  std::vector<Tap> taps(static_cast<size_t>(m));
  auto n = make_node<T>(Shape{m, c}, {map.shared(), coords.shared()});
  const T* mv = map.value().data();
  const T lo = T(-0.5);
  for (int64_t i = 0; i < m; ++i) {
    const T cx = coords.value()[i * 2], cy = coords.value()[i * 2 + 1];
    const T hx = static_cast<T>(w) - T(0.5), hy = static_cast<T>(h) - T(0.5);
    const T x = std::clamp(cx, lo, hx), y = std::clamp(cy, lo, hy);
    const T x0f = std::floor(x), y0f = std::floor(y);
    const auto x0 = static_cast<int64_t>(x0f), y0 = static_cast<int64_t>(y0f);
    const int64_t xa = std::clamp<int64_t>(x0, 0, w - 1), xb = std::clamp<int64_t>(x0 + 1, 0, w - 1);
    const int64_t ya = std::clamp<int64_t>(y0, 0, h - 1), yb = std::clamp<int64_t>(y0 + 1, 0, h - 1);
    const int64_t base = batch[i] * h * w;
    Tap& t = taps[i];
    t.i00 = (base + ya * w + xa) * c;
    t.i01 = (base + ya * w + xb) * c;
    t.i10 = (base + yb * w + xa) * c;
    t.i11 = (base + yb * w + xb) * c;
    t.fx = x - x0f;
    t.fy = y - y0f;
    t.inside_x = cx > lo && cx < hx;
    t.inside_y = cy > lo && cy < hy;
    const T w00 = (T(1) - t.fx) * (T(1) - t.fy), w01 = t.fx * (T(1) - t.fy);
    const T w10 = (T(1) - t.fx) * t.fy, w11 = t.fx * t.fy;
    T* out = n->value.data() + i * c;
    for (int64_t k = 0; k < c; ++k) {
      out[k] = w00 * mv[t.i00 + k] + w01 * mv[t.i01 + k] + w10 * mv[t.i10 + k] + w11 * mv[t.i11 + k];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [taps = std::move(taps), m, c](Node<T>& self) {
      Node<T>& mapn = *self.inputs[0];
      Node<T>& cn = *self.inputs[1];
      T* gm = mapn.requires_grad ? mapn.grad_data() : nullptr;
      T* gc = cn.requires_grad ? cn.grad_data() : nullptr;
      const T* mv = mapn.value.data();
      for (int64_t i = 0; i < m; ++i) {
        const Tap& t = taps[i];
        const T* dy = self.grad.data() + i * c;
        const T w00 = (T(1) - t.fx) * (T(1) - t.fy), w01 = t.fx * (T(1) - t.fy);
        const T w10 = (T(1) - t.fx) * t.fy, w11 = t.fx * t.fy;
        T dx = 0, dyy = 0;
        for (int64_t k = 0; k < c; ++k) {
          if (gm) {
            gm[t.i00 + k] += w00 * dy[k];
            gm[t.i01 + k] += w01 * dy[k];
            gm[t.i10 + k] += w10 * dy[k];
            gm[t.i11 + k] += w11 * dy[k];
          }
          if (gc) {
            const T v00 = mv[t.i00 + k], v01 = mv[t.i01 + k], v10 = mv[t.i10 + k],
                    v11 = mv[t.i11 + k];
            dx += dy[k] * ((T(1) - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
            dyy += dy[k] * ((T(1) - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
          }
        }
        if (gc) {
          if (t.inside_x) gc[i * 2] += dx;
          if (t.inside_y) gc[i * 2 + 1] += dyy;
        }
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> grouped_attention(const Var<T>& q, const Var<T>& keys, const Var<T>& values, int64_t k,
                         int64_t heads) {
  const int64_t m = q.rows(), c = q.cols();
  if (keys.rows() != m * k || values.rows() != m * k || keys.cols() != c || values.cols() != c) {
    throw ShapeMismatch("grouped_attention: key/value shapes must be (m*k) x c");
  }
  if (heads <= 0 || c % heads != 0) throw ShapeMismatch("grouped_attention: heads must divide width");
  const int64_t d = c / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d));
  auto n = make_node<T>(Shape{m, c}, {q.shared(), keys.shared(), values.shared()});
  std::vector<T> probs(static_cast<size_t>(m * heads * k));
  const T* qv = q.value().data();
  const T* kv = keys.value().data();
  const T* vv = values.value().data();
  std::vector<T> scores(static_cast<size_t>(k));
  for (int64_t p = 0; p < m; ++p) {
    for (int64_t hd = 0; hd < heads; ++hd) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t j = 0; j < k; ++j) {
        T s = 0;
        for (int64_t e = 0; e < d; ++e) s += qv[p * c + hd * d + e] * kv[(p * k + j) * c + hd * d + e];
        scores[j] = s * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      T z = 0;
      for (int64_t j = 0; j < k; ++j) z += (scores[j] = std::exp(scores[j] - mx));
      T* pr = probs.data() + (p * heads + hd) * k;
      for (int64_t j = 0; j < k; ++j) pr[j] = scores[j] / z;
      T* out = n->value.data() + p * c + hd * d;
      for (int64_t j = 0; j < k; ++j) {
        for (int64_t e = 0; e < d; ++e) out[e] += pr[j] * vv[(p * k + j) * c + hd * d + e];
      }
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [probs = std::move(probs), m, c, k, heads, d, inv_sqrt](Node<T>& self) {
      Node<T>& qn = *self.inputs[0];
      Node<T>& kn = *self.inputs[1];
      Node<T>& vn = *self.inputs[2];
      T* gq = qn.requires_grad ? qn.grad_data() : nullptr;
      T* gk = kn.requires_grad ? kn.grad_data() : nullptr;
      T* gv = vn.requires_grad ? vn.grad_data() : nullptr;
      std::vector<T> dprob(static_cast<size_t>(k));
      for (int64_t p = 0; p < m; ++p) {
        for (int64_t hd = 0; hd < heads; ++hd) {
          const T* pr = probs.data() + (p * heads + hd) * k;
          const T* dout = self.grad.data() + p * c + hd * d;
          T dot = 0;
          for (int64_t j = 0; j < k; ++j) {
            const T* vrow = vn.value.data() + (p * k + j) * c + hd * d;
            T acc = 0;
            for (int64_t e = 0; e < d; ++e) {
              acc += dout[e] * vrow[e];
              if (gv) gv[(p * k + j) * c + hd * d + e] += pr[j] * dout[e];
            }
            dprob[j] = acc;
            dot += pr[j] * acc;
          }
          for (int64_t j = 0; j < k; ++j) {
            const T ds = pr[j] * (dprob[j] - dot) * inv_sqrt;
            for (int64_t e = 0; e < d; ++e) {
              if (gq) gq[p * c + hd * d + e] += ds * kn.value[(p * k + j) * c + hd * d + e];
              if (gk) gk[(p * k + j) * c + hd * d + e] += ds * qn.value[p * c + hd * d + e];
            }
          }
        }
      }
    };
  }
  return Var<T>(n);
}

// ---- rigid-body helpers ---------------------------------------------------

template <typename T>
Var<T> mat3_mul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != 9 || b.cols() != 9 || a.rows() != b.rows()) {
    throw ShapeMismatch("mat3_mul: expected matching n x 9 inputs");
  }
  const int64_t rows = a.rows();
  auto n = make_node<T>(Shape{rows, 9}, {a.shared(), b.shared()});
  using M3 = Eigen::Matrix<T, 3, 3, Eigen::RowMajor>;
  for (int64_t r = 0; r < rows; ++r) {
    Eigen::Map<M3>(n->value.data() + r * 9) =
        Eigen::Map<const M3>(a.value().data() + r * 9) * Eigen::Map<const M3>(b.value().data() + r * 9);
  }
  if (n->requires_grad) {
    n->backward_fn = [rows](Node<T>& self) {
      Node<T>& an = *self.inputs[0];
      Node<T>& bn = *self.inputs[1];
      for (int64_t r = 0; r < rows; ++r) {
        Eigen::Map<const M3> dc(self.grad.data() + r * 9);
        if (an.requires_grad) {
          Eigen::Map<M3>(an.grad_data() + r * 9) +=
              dc * Eigen::Map<const M3>(bn.value.data() + r * 9).transpose();
        }
        if (bn.requires_grad) {
          Eigen::Map<M3>(bn.grad_data() + r * 9) +=
              Eigen::Map<const M3>(an.value.data() + r * 9).transpose() * dc;
        }
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> mat3_vec(const Var<T>& a, const Var<T>& v) {
  if (a.cols() != 9 || v.cols() != 3 || a.rows() != v.rows()) {
    throw ShapeMismatch("mat3_vec: expected n x 9 and n x 3 inputs");
  }
  const int64_t rows = a.rows();
  auto n = make_node<T>(Shape{rows, 3}, {a.shared(), v.shared()});
  using M3 = Eigen::Matrix<T, 3, 3, Eigen::RowMajor>;
  using V3 = Eigen::Matrix<T, 3, 1>;
  for (int64_t r = 0; r < rows; ++r) {
    Eigen::Map<V3>(n->value.data() + r * 3) =
        Eigen::Map<const M3>(a.value().data() + r * 9) * Eigen::Map<const V3>(v.value().data() + r * 3);
  }
  if (n->requires_grad) {
    n->backward_fn = [rows](Node<T>& self) {
      Node<T>& an = *self.inputs[0];
      Node<T>& vn = *self.inputs[1];
      for (int64_t r = 0; r < rows; ++r) {
        Eigen::Map<const V3> dy(self.grad.data() + r * 3);
        if (an.requires_grad) {
          Eigen::Map<M3>(an.grad_data() + r * 9) +=
              dy * Eigen::Map<const V3>(vn.value.data() + r * 3).transpose();
        }
        if (vn.requires_grad) {
          Eigen::Map<V3>(vn.grad_data() + r * 3) +=
              Eigen::Map<const M3>(an.value.data() + r * 9).transpose() * dy;
        }
      }
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> transform_points(const Var<T>& points, const Var<T>& rotation, const Var<T>& translation,
                        const Index& batch) {
  const int64_t np = points.rows();
  if (points.cols() != 3 || rotation.cols() != 9 || translation.cols() != 3 ||
      rotation.rows() != translation.rows() || static_cast<int64_t>(batch.size()) != np) {
    throw ShapeMismatch("transform_points: bad operand shapes");
  }
  for (auto b : batch) {
    if (b < 0 || b >= rotation.rows()) throw IndexOutOfRange("transform_points: batch index");
  }
  auto n = make_node<T>(Shape{np, 3}, {points.shared(), rotation.shared(), translation.shared()});
  using M3 = Eigen::Matrix<T, 3, 3, Eigen::RowMajor>;
  using V3 = Eigen::Matrix<T, 3, 1>;
  for (int64_t i = 0; i < np; ++i) {
    const int32_t b = batch[i];
    Eigen::Map<V3>(n->value.data() + i * 3) =
        Eigen::Map<const M3>(rotation.value().data() + b * 9) *
            Eigen::Map<const V3>(points.value().data() + i * 3) +
        Eigen::Map<const V3>(translation.value().data() + b * 3);
  }
  if (n->requires_grad) {
    n->backward_fn = [batch, np](Node<T>& self) {
      Node<T>& pn = *self.inputs[0];
      Node<T>& rn = *self.inputs[1];
      Node<T>& tn = *self.inputs[2];
      for (int64_t i = 0; i < np; ++i) {
        const int32_t b = batch[i];
        Eigen::Map<const V3> dy(self.grad.data() + i * 3);
        if (pn.requires_grad) {
          Eigen::Map<V3>(pn.grad_data() + i * 3) +=
              Eigen::Map<const M3>(rn.value.data() + b * 9).transpose() * dy;
        }
        if (rn.requires_grad) {
          Eigen::Map<M3>(rn.grad_data() + b * 9) +=
              dy * Eigen::Map<const V3>(pn.value.data() + i * 3).transpose();
        }
        if (tn.requires_grad) Eigen::Map<V3>(tn.grad_data() + b * 3) += dy;
      }
    };
  }
  return Var<T>(n);
}

// ---- explicit instantiations ----------------------------------------------

#define RVO_INSTANTIATE(T)                                                                    \
  template class Var<T>;                                                                      \
  template void backward<T>(const Var<T>&);                                                   \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> scale<T>(const Var<T>&, T);                                                 \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                            \
  template Var<T> neg<T>(const Var<T>&);                                                      \
  template Var<T> relu<T>(const Var<T>&);                                                     \
  template Var<T> sigmoid<T>(const Var<T>&);                                                  \
  template Var<T> exp<T>(const Var<T>&);                                                      \
  template Var<T> sin<T>(const Var<T>&);                                                      \
  template Var<T> cos<T>(const Var<T>&);                                                      \
  template Var<T> asin<T>(const Var<T>&);                                                     \
  template Var<T> atan2<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> mul_col<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> mul_scalar<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                           \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                 \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                 \
  template Var<T> slice_cols<T>(const Var<T>&, int64_t, int64_t);                             \
  template Var<T> slice_rows<T>(const Var<T>&, int64_t, int64_t);                             \
  template Var<T> gather_rows<T>(const Var<T>&, const Index&);                                \
  template Var<T> repeat_rows<T>(const Var<T>&, int64_t);                                     \
  template Var<T> sum_all<T>(const Var<T>&);                                                  \
  template Var<T> mean_all<T>(const Var<T>&);                                                 \
  template Var<T> row_norm<T>(const Var<T>&);                                                 \
  template Var<T> group_sum<T>(const Var<T>&, int64_t);                                       \
  template Var<T> group_mean<T>(const Var<T>&, int64_t);                                      \
  template Var<T> group_max<T>(const Var<T>&, int64_t);                                       \
  template Var<T> group_softmax<T>(const Var<T>&, int64_t);                                   \
  template Var<T> row_softmax<T>(const Var<T>&);                                              \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::vector<T>&, \
                                std::vector<T>&, const BatchNormState&);                      \
  template Var<T> conv3x3<T>(const Var<T>&, const Var<T>&, int);                              \
  template Var<T> bilinear_sample<T>(const Var<T>&, const Var<T>&, const Index&);             \
  template Var<T> grouped_attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, int64_t,  \
                                       int64_t);                                              \
  template Var<T> mat3_mul<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> mat3_vec<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> transform_points<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Index&);

RVO_INSTANTIATE(float)
RVO_INSTANTIATE(double)

#undef RVO_INSTANTIATE

}  // namespace rvo::ag
