#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to its storage. Operations executed while a
// Tape is alive on the current thread are recorded when any input requires
// a gradient; Tape::backward then replays them in reverse.
//
// Tensor<float> carries either single precision or emulated binary16 (values
// rounded to half after every half-precision operation, stored in float).
// Tensor<double> is used for gradient checking.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace vxf {

enum class Precision : std::uint8_t { kHalf, kSingle, kDouble };

const char* precision_name(Precision p) noexcept;

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Operation families for the mixed-precision cast policy.
enum class OpCategory : std::uint8_t {
  kConvolution,
  kElementwise,
  kNormalization,
  kLoss,
  kReduction,
  kOptimizerState,
  kMasterParameters,
};

/// Compute precision per operation family.
struct CastPolicy {
  std::array<Precision, 7> compute{};

  Precision precision_for(OpCategory category) const noexcept {
    return compute[static_cast<std::size_t>(category)];
  }

  /// Convolutions and elementwise ops in half; normalization statistics,
  /// losses, reductions, optimizer state and master weights in single.
  static CastPolicy mixed() noexcept;
  static CastPolicy single() noexcept;

  /// Throws UsageError if master parameters or optimizer state are half.
  void validate() const;
};

/// Enables a cast policy for float ops on this thread while alive.
class AutocastScope {
 public:
  explicit AutocastScope(const CastPolicy& policy = CastPolicy::mixed());
  ~AutocastScope();
  AutocastScope(const AutocastScope&) = delete;
  AutocastScope& operator=(const AutocastScope&) = delete;

 private:
  CastPolicy policy_;
  const CastPolicy* previous_;
};

const CastPolicy* active_cast_policy() noexcept;

template <class Real>
constexpr Precision native_precision() noexcept {
  return std::is_same_v<Real, double> ? Precision::kDouble : Precision::kSingle;
}

/// Precision an op of `category` computes in under the current autocast state.
template <class Real>
Precision compute_precision(OpCategory category) noexcept {
  if constexpr (std::is_same_v<Real, double>) {
    return Precision::kDouble;
  } else {
    const CastPolicy* policy = active_cast_policy();
    return policy ? policy->precision_for(category) : Precision::kSingle;
  }
}

template <class Real>
struct TensorStorage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient arrives
  Precision precision = native_precision<Real>();
  bool requires_grad = false;
  const void* tape = nullptr;  // tape that recorded the producing op
  std::size_t node = 0;
};

template <class Real>
class Tape;

template <class Real>
class Tensor {
 public:
  using Storage = TensorStorage<Real>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Storage> storage) : storage_(std::move(storage)) {}

  static Tensor zeros(Shape shape, Precision precision = native_precision<Real>());
  static Tensor full(Shape shape, Real value, Precision precision = native_precision<Real>());
  /// Values are rounded to half when `precision` is kHalf.
  static Tensor from_data(Shape shape, std::vector<Real> data,
                          Precision precision = native_precision<Real>());
  /// Leaf that accumulates gradients (master precision).
  static Tensor parameter(Shape shape, std::vector<Real> data);

  bool defined() const noexcept { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  std::int64_t dim(std::size_t i) const { return storage_->shape.at(i); }
  std::size_t rank() const { return storage_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(storage_->data.size()); }
  Precision precision() const { return storage_->precision; }
  bool requires_grad() const { return storage_->requires_grad; }
  bool is_leaf() const { return storage_->tape == nullptr; }

  std::span<const Real> data() const { return storage_->data; }
  /// Direct write access, intended for parameters and freshly built inputs.
  std::span<Real> mutable_data() { return storage_->data; }

  bool has_grad() const { return !storage_->grad.empty(); }
  /// Zero-filled span when no gradient has been accumulated yet.
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();
  void set_requires_grad(bool value) { storage_->requires_grad = value; }

  Real item() const;

  const std::shared_ptr<Storage>& storage() const noexcept { return storage_; }

 private:
  std::shared_ptr<Storage> storage_;
};

/// Recording of differentiable operations, in execution (hence topological)
/// order. Only one tape may record on a thread at a time; constructing one
/// makes it current until it is destroyed.
template <class Real>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() noexcept;

  void record(const std::shared_ptr<TensorStorage<Real>>& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = seed and sweeps the nodes once in reverse,
  /// summing gradients over paths. Throws for non-scalar losses, losses not
  /// recorded on this tape, and a second sweep.
  void backward(const Tensor<Real>& loss, Real seed = Real(1));

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    std::shared_ptr<TensorStorage<Real>> output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

/// Backward on the tape that recorded `loss` (the current tape).
template <class Real>
void backward(const Tensor<Real>& loss, Real seed = Real(1));

/// True when an op with these inputs should be recorded.
template <class Real>
bool should_record(std::initializer_list<const Tensor<Real>*> inputs) noexcept;

/// Buffer for gradient accumulation into `target`, allocated on first use.
template <class Real>
std::span<Real> gradient_buffer(TensorStorage<Real>& target);

/// Adds `contribution` to target's gradient. When the producing op computed
/// in half, or the target holds half values, contributions and sums are
/// rounded to binary16 as a half-precision backward pass would.
template <class Real>
void accumulate_gradient(TensorStorage<Real>& target, std::span<const Real> contribution,
                         Precision op_precision);

/// Rounds to half in place for float buffers tagged kHalf; no-op otherwise.
template <class Real>
void apply_precision(std::span<Real> values, Precision precision) noexcept;

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace vxf
