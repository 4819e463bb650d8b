#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 matrices.
//
// Ops are recorded on the thread's active Tape (see Tape::Recording). When no
// tape is active, or no input requires a gradient, ops run eagerly without
// recording, which is how inference paths disable gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <new>
#include <vector>

namespace gns::ad {

using Shape = std::vector<std::size_t>;
using Index = std::uint32_t;

/// Cache-line aligned allocator that default-initializes, so resize() leaves doubles
/// unset. Fixed alignment keeps vectorized reductions bitwise reproducible.
template <class T>
struct DefaultInitAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  DefaultInitAllocator() = default;
  template <class U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const DefaultInitAllocator<U>&) const noexcept {
    return true;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

using Buffer = std::vector<double, DefaultInitAllocator<double>>;

namespace detail {
struct Node {
  Shape shape;
  Buffer values;
  Buffer grad;  // empty until a gradient flows (leaves with requires_grad: always sized)
  bool requires_grad = false;
  bool is_leaf = true;
  const void* tape = nullptr;  // tape that recorded this node as an op output
};
}  // namespace detail

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::span<const double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Rows of a matrix; a vector counts as one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Writable view of the values; intended for leaves (optimizer updates, initialization).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Detached deep copy (leaf, same requires_grad flag, zero gradient).
  Tensor clone() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of executed ops. backward() visits entries in exact reverse
/// recording order, so gradients are deterministic.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Makes a tape the active recorder on the current thread for its lifetime.
  class Recording {
   public:
    explicit Recording(Tape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  struct Entry {
    std::string_view op;
    std::shared_ptr<detail::Node> output;
    std::function<void()> backward;
  };

  /// Populates gradients of every requires_grad leaf reachable from `loss`.
  /// Leaf gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor& loss);
  /// Drops every entry, releasing intermediates.
  void clear();
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  void record(std::string_view op, std::shared_ptr<detail::Node> output,
              std::function<void()> backward);

 private:
  std::vector<Entry> entries_;
};

/// Tape currently recording on this thread, or nullptr.
Tape* active_tape();

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n,k]·w[k,m] + bias[m] broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Exact GELU 0.5·x·(1 + erf(x/√2)).
Tensor gelu(const Tensor& x);
inline constexpr double kLayerNormEpsilon = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
Tensor gather_rows(const Tensor& x, std::span<const Index> idx);
/// Per-receiver mean of message rows; receivers with no incoming rows are zero.
Tensor scatter_mean(const Tensor& msgs, std::span<const Index> receivers, std::size_t n);
Tensor concat_cols(std::span<const Tensor> parts);
/// Rows [begin, end) of a matrix, as a copy.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor sum(const Tensor& x);
/// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// One input block of fused_mlp2: the rows of x, or x gathered by `rows` when non-empty.
struct MlpPart {
  Tensor x;
  std::span<const Index> rows;
};

/// gelu(Σ_p gather(x_p·W1_p, rows_p) + b1)·W2 + b2, where W1_p are consecutive row
/// blocks of w1 sized by each part's width. Same result as composing the
/// individual ops, evaluated in cache-sized row tiles with one tape entry.
Tensor fused_mlp2(std::span<const MlpPart> parts, std::size_t rows, const Tensor& w1, const Tensor& b1,
                  const Tensor& w2, const Tensor& b2);

/// Elementwise erf, vectorized. Accurate to a few ulp against std::erf.
void erf_inplace(std::span<double> x);

// ---- optimizer -------------------------------------------------------------

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::int64_t step = 0;
  std::vector<Buffer> first_moment;
  std::vector<Buffer> second_moment;

  AdamState() = default;
  AdamState(AdamHyper h, std::span<const Tensor> params);
};

/// One bias-corrected Adam update using explicit gradients.
void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state);
/// Same, using each parameter's accumulated gradient (missing gradient = zero).
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace gns::ad
