#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// Tensors are rank-2 for almost every op: `rows` is the product of all leading
// dimensions and `cols` the last one. Image tensors use NHWC (B, H, W, C).
// Groups of K consecutive rows encode per-point neighborhoods.

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <vector>

namespace rvo::ag {

using Shape = std::vector<int64_t>;
using Index = std::vector<int32_t>;

int64_t numel(const Shape& shape);

/// Cache-line aligned allocator. Vectorized reductions peel elements up to the
/// first aligned address, so fixed alignment keeps their rounding independent
/// of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + kAlignment - 1) / kAlignment * kAlignment;
    void* p = std::aligned_alloc(kAlignment, bytes == 0 ? kAlignment : bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<T> values);
  static Var constant(Shape shape, T fill);
  static Var parameter(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int64_t rows() const;
  int64_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<const T> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  /// Empty when no gradient has reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  T item() const { return node_->value.at(0); }
  T at(int64_t r, int64_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Accumulates d(root)/d(x) into every reachable tensor that requires grad.
/// The root must hold a single element.
template <typename T>
void backward(const Var<T>& root);

bool grad_enabled();

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- elementwise ----------------------------------------------------------
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> sin(const Var<T>& a);
template <typename T> Var<T> cos(const Var<T>& a);
/// asin with the input clamped to [-1, 1]; zero gradient where clamped.
template <typename T> Var<T> asin(const Var<T>& a);
template <typename T> Var<T> atan2(const Var<T>& y, const Var<T>& x);
/// x (n x c) times s (n x 1), broadcast across columns.
template <typename T> Var<T> mul_col(const Var<T>& x, const Var<T>& s);
/// x (n x c) times a 1x1 tensor.
template <typename T> Var<T> mul_scalar(const Var<T>& x, const Var<T>& s);

// ---- structural -----------------------------------------------------------
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(const Var<T>& a, int64_t begin, int64_t end);
template <typename T> Var<T> slice_rows(const Var<T>& a, int64_t begin, int64_t end);
/// out[i] = a[index[i]]; backward scatter-adds.
template <typename T> Var<T> gather_rows(const Var<T>& a, const Index& index);
/// Each row repeated k times consecutively.
template <typename T> Var<T> repeat_rows(const Var<T>& a, int64_t k);

// ---- reductions -----------------------------------------------------------
template <typename T> Var<T> sum_all(const Var<T>& a);
template <typename T> Var<T> mean_all(const Var<T>& a);
/// Per-row Euclidean norm -> n x 1. Gradient is zero at a zero row.
template <typename T> Var<T> row_norm(const Var<T>& a);
/// Reductions over consecutive groups of k rows: (m*k) x c -> m x c.
template <typename T> Var<T> group_sum(const Var<T>& a, int64_t k);
template <typename T> Var<T> group_mean(const Var<T>& a, int64_t k);
template <typename T> Var<T> group_max(const Var<T>& a, int64_t k);
/// Softmax across the k rows of each group, independently per column.
template <typename T> Var<T> group_softmax(const Var<T>& a, int64_t k);
/// Softmax across columns of each row.
template <typename T> Var<T> row_softmax(const Var<T>& a);

// ---- dense layers ---------------------------------------------------------
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x (n x a) * w (a x b) + bias (1 x b); bias may be undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

struct BatchNormState {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-column batch normalization over all rows. Running statistics are
/// updated in place in training mode and consumed in evaluation mode.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  std::vector<T>& running_mean, std::vector<T>& running_var,
                  const BatchNormState& state);

/// 3x3 convolution, padding 1, NHWC input (B,H,W,Cin), weight (9*Cin x Cout)
/// with rows ordered (ky, kx, cin).
template <typename T> Var<T> conv3x3(const Var<T>& x, const Var<T>& w, int stride);

/// Bilinear lookup into an NHWC map. coords (m x 2) holds (x, y) in map pixel
/// units; batch[i] selects the image. Coordinates are clamped to
/// [-0.5, extent - 0.5] and corner indices to the border.
template <typename T>
Var<T> bilinear_sample(const Var<T>& map, const Var<T>& coords, const Index& batch);

/// Per-point multi-head attention of a single query row against its own group
/// of k key/value rows. q: m x c, keys/values: (m*k) x c.
template <typename T>
Var<T> grouped_attention(const Var<T>& q, const Var<T>& keys, const Var<T>& values,
                         int64_t k, int64_t heads);

// ---- small rigid-body helpers (rows are flattened row-major 3x3) ----------
template <typename T> Var<T> mat3_mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mat3_vec(const Var<T>& a, const Var<T>& v);
/// p'[i] = R[batch[i]] * p[i] + t[batch[i]]
template <typename T>
Var<T> transform_points(const Var<T>& points, const Var<T>& rotation, const Var<T>& translation,
                        const Index& batch);

}  // namespace rvo::ag
