#include "voxelforge/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "voxelforge/errors.hpp"
#include "voxelforge/half.hpp"

namespace vxf {
namespace {

thread_local const CastPolicy* t_policy = nullptr;

template <class Real>
Tape<Real>*& current_tape() noexcept {
  thread_local Tape<Real>* tape = nullptr;
  return tape;
}

template <class Real>
void check_precision(Precision p) {
  if constexpr (std::is_same_v<Real, double>) {
    if (p != Precision::kDouble) throw UsageError("double tensors must use 64-bit precision");
  } else {
    if (p == Precision::kDouble) throw UsageError("float tensors cannot be tagged 64-bit");
  }
}

}  // namespace

const char* precision_name(Precision p) noexcept {
  switch (p) {
    case Precision::kHalf: return "half";
    case Precision::kSingle: return "single";
    case Precision::kDouble: return "double";
  }
  return "?";
}

std::int64_t shape_numel(const Shape& shape) noexcept {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

CastPolicy CastPolicy::mixed() noexcept {
  CastPolicy p;
  p.compute = {Precision::kHalf,   Precision::kHalf,   Precision::kSingle, Precision::kSingle,
               Precision::kSingle, Precision::kSingle, Precision::kSingle};
  return p;
}

CastPolicy CastPolicy::single() noexcept {
  CastPolicy p;
  p.compute.fill(Precision::kSingle);
  return p;
}

void CastPolicy::validate() const {
  if (precision_for(OpCategory::kMasterParameters) == Precision::kHalf)
    throw UsageError("master parameters may not be stored in half precision");
  if (precision_for(OpCategory::kOptimizerState) == Precision::kHalf)
    throw UsageError("optimizer state may not be stored in half precision");
  for (auto p : compute)
    if (p == Precision::kDouble) throw UsageError("cast policy applies to float tensors only");
}

AutocastScope::AutocastScope(const CastPolicy& policy) : policy_(policy), previous_(t_policy) {
  policy_.validate();
  t_policy = &policy_;
}

AutocastScope::~AutocastScope() { t_policy = previous_; }

const CastPolicy* active_cast_policy() noexcept { return t_policy; }

template <class Real>
void apply_precision(std::span<Real> values, Precision precision) noexcept {
  if constexpr (std::is_same_v<Real, float>) {
    if (precision == Precision::kHalf) round_to_half_inplace(values);
  } else {
    (void)values;
    (void)precision;
  }
}

template <class Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, Precision precision) {
  return full(std::move(shape), Real(0), precision);
}

template <class Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, Precision precision) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), value),
                   precision);
}

template <class Real>
Tensor<Real> Tensor<Real>::from_data(Shape shape, std::vector<Real> data, Precision precision) {
  check_precision<Real>(precision);
  for (auto e : shape)
    if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_string(shape));
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  s->precision = precision;
  apply_precision<Real>(s->data, precision);
  return Tensor(std::move(s));
}

template <class Real>
Tensor<Real> Tensor<Real>::parameter(Shape shape, std::vector<Real> data) {
  Tensor t = from_data(std::move(shape), std::move(data), native_precision<Real>());
  t.storage_->requires_grad = true;
  return t;
}

template <class Real>
std::span<const Real> Tensor<Real>::grad() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), Real(0));
  return storage_->grad;
}

template <class Real>
std::span<Real> Tensor<Real>::mutable_grad() {
  return gradient_buffer(*storage_);
}

template <class Real>
void Tensor<Real>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), Real(0));
}

template <class Real>
Real Tensor<Real>::item() const {
  if (storage_->data.size() != 1)
    throw ShapeError("item() needs a single-element tensor, shape is " + shape_string(shape()));
  return storage_->data[0];
}

template <class Real>
Tape<Real>::Tape() : previous_(current_tape<Real>()) {
  if (previous_) throw UsageError("a gradient tape is already recording on this thread");
  current_tape<Real>() = this;
}

template <class Real>
Tape<Real>::~Tape() {
  if (current_tape<Real>() == this) current_tape<Real>() = previous_;
}

template <class Real>
Tape<Real>* Tape<Real>::current() noexcept {
  return current_tape<Real>();
}

template <class Real>
void Tape<Real>::record(const std::shared_ptr<TensorStorage<Real>>& output,
                        std::function<void()> backward) {
  if (consumed_) throw UsageError("cannot record on a tape after backward");
  output->requires_grad = true;
  output->tape = this;
  output->node = nodes_.size();
  nodes_.push_back(Node{output, std::move(backward)});
}

template <class Real>
void Tape<Real>::backward(const Tensor<Real>& loss, Real seed) {
  if (consumed_) throw UsageError("backward already ran on this tape; record a new pass");
  if (loss.numel() != 1)
    throw ShapeError("backward needs a scalar loss, shape is " + shape_string(loss.shape()));
  auto& s = *loss.storage();
  if (s.tape != this) throw UsageError("loss was not recorded on this tape");
  consumed_ = true;
  gradient_buffer(s)[0] += seed;
  for (std::size_t i = s.node + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.output->grad.empty()) node.backward();
  }
}

template <class Real>
void backward(const Tensor<Real>& loss, Real seed) {
  Tape<Real>* tape = Tape<Real>::current();
  if (!tape) throw UsageError("backward called without an active tape");
  tape->backward(loss, seed);
}

template <class Real>
bool should_record(std::initializer_list<const Tensor<Real>*> inputs) noexcept {
  if (!Tape<Real>::current()) return false;
  for (const Tensor<Real>* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

template <class Real>
std::span<Real> gradient_buffer(TensorStorage<Real>& target) {
  if (target.grad.empty()) target.grad.assign(target.data.size(), Real(0));
  return target.grad;
}

template <class Real>
void accumulate_gradient(TensorStorage<Real>& target, std::span<const Real> contribution,
                         Precision op_precision) {
  if (contribution.size() != target.data.size())
    throw ShapeError("gradient contribution does not match tensor size");
  auto g = gradient_buffer(target);
  if constexpr (std::is_same_v<Real, float>) {
    const bool round_in = op_precision == Precision::kHalf || target.precision == Precision::kHalf;
    const bool round_out = target.precision == Precision::kHalf;
    if (round_in) {
      constexpr std::size_t kBlock = 1024;
      float tmp[kBlock];
      for (std::size_t base = 0; base < g.size(); base += kBlock) {
        const std::size_t n = std::min(kBlock, g.size() - base);
        std::copy_n(contribution.data() + base, n, tmp);
        round_to_half_inplace({tmp, n});
        for (std::size_t i = 0; i < n; ++i) g[base + i] += tmp[i];
        if (round_out) round_to_half_inplace(g.subspan(base, n));
      }
      return;
    }
  } else {
    (void)op_precision;
  }
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

template void backward(const Tensor<float>&, float);
template void backward(const Tensor<double>&, double);
template bool should_record(std::initializer_list<const Tensor<float>*>) noexcept;
template bool should_record(std::initializer_list<const Tensor<double>*>) noexcept;
template std::span<float> gradient_buffer(TensorStorage<float>&);
template std::span<double> gradient_buffer(TensorStorage<double>&);
template void accumulate_gradient(TensorStorage<float>&, std::span<const float>, Precision);
template void accumulate_gradient(TensorStorage<double>&, std::span<const double>, Precision);
template void apply_precision(std::span<float>, Precision) noexcept;
template void apply_precision(std::span<double>, Precision) noexcept;

}  // namespace vxf
