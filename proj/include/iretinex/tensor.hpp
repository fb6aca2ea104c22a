#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iretinex/errors.hpp"

namespace iretinex {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Allocator whose value-less construct() leaves scalars uninitialized, so
/// op outputs that are fully overwritten skip a zero fill. Storage is 64-byte
/// aligned: Eigen peels vectorized loops to the buffer's alignment, so a
/// fixed alignment keeps summation order, and results, independent of where
/// the heap places a buffer.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  static constexpr std::align_val_t kAlign{64};
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t n) noexcept { ::operator delete(p, n * sizeof(T), kAlign); }

  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using Buffer = std::vector<T, DefaultInitAllocator<T>>;

/// Tag for tensors whose every element the caller writes before reading.
struct Uninitialized {};
inline constexpr Uninitialized uninitialized{};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until the first backward pass touches the node
  bool requires_grad = false;
  std::uint64_t id = 0;  // 0: leaf, otherwise position in the recording tape (1-based)

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
  }
};

/// Dense row-major tensor with an optional gradient accumulator.
///
/// Copies are shallow: two Tensor handles may refer to the same node. Values
/// produced by an op are never modified by the library afterwards; only the
/// optimizer writes into parameter leaves.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, Uninitialized) : node_(std::make_shared<Node<T>>()) {
    node_->value.resize(numel(shape));
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, const std::vector<T>& values) : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(numel(shape)) + " elements, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value.assign(values.begin(), values.end());
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, const std::vector<T>& values) {
    Tensor t(std::move(shape), values);
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }

  T item() const {
    if (size() != 1) {
      throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), T{0}); }

  /// Value copy with no tape history and no gradient flag.
  Tensor detach() const {
    Tensor t(shape(), uninitialized);
    std::copy(node_->value.begin(), node_->value.end(), t.node_->value.begin());
    return t;
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Ordered record of differentiable operations.
///
/// Ops append to the tape that is active on the calling thread (see
/// TapeScope). backward() walks the records in reverse.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  struct Record {
    std::vector<NodePtr> inputs;
    NodePtr output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return current_; }

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  void clear() { records_.clear(); }

  void record(NodePtr output, std::vector<NodePtr> inputs, std::function<void()> fn) {
    output->requires_grad = true;
    output->id = records_.size() + 1;
    records_.push_back(Record{std::move(inputs), std::move(output), std::move(fn)});
  }

  /// True when every recorded input was produced before the op that reads it.
  bool is_topologically_ordered() const {
    for (std::size_t i = 0; i < records_.size(); ++i) {
      for (const auto& in : records_[i].inputs) {
        if (in->id != 0 && in->id > i) return false;
      }
    }
    return true;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  ///
  /// Gradients of recorded (non-leaf) nodes are reset first, so calling this
  /// twice on the same tape gives identical results. Leaf gradients
  /// accumulate; callers zero them between steps.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    for (auto& r : records_) r.output->grad.assign(r.output->value.size(), T{0});
    auto& root = loss.node();
    root->ensure_grad();
    root->grad[0] += T{1};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      for (auto& in : it->inputs) {
        if (in->requires_grad) in->ensure_grad();
      }
      it->backward();
    }
  }

 private:
  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoTapeScope;

  std::vector<Record> records_;
  static inline thread_local Tape* current_ = nullptr;
};

/// Makes a tape the active recorder on this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::current_) { Tape<T>::current_ = &tape; }
  ~TapeScope() { Tape<T>::current_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on this thread (inference, finite differences).
template <typename T>
class NoTapeScope {
 public:
  NoTapeScope() : previous_(Tape<T>::current_) { Tape<T>::current_ = nullptr; }
  ~NoTapeScope() { Tape<T>::current_ = previous_; }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Counts floating-point operations of `matmul` calls (2·M·K·N per call).
class FlopCounter {
 public:
  std::uint64_t matmul_flops() const { return matmul_flops_; }
  std::uint64_t matmul_calls() const { return matmul_calls_; }
  void reset() { matmul_flops_ = matmul_calls_ = 0; }

  static FlopCounter* active() { return current_; }
  static void add_matmul(std::uint64_t m, std::uint64_t k, std::uint64_t n) {
    if (current_) {
      current_->matmul_flops_ += 2 * m * k * n;
      ++current_->matmul_calls_;
    }
  }

 private:
  friend class FlopScope;
  std::uint64_t matmul_flops_ = 0;
  std::uint64_t matmul_calls_ = 0;
  static inline thread_local FlopCounter* current_ = nullptr;
};

class FlopScope {
 public:
  explicit FlopScope(FlopCounter& c) : previous_(FlopCounter::current_) { FlopCounter::current_ = &c; }
  ~FlopScope() { FlopCounter::current_ = previous_; }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopCounter* previous_;
};

namespace detail {

/// Appends `out` to the active tape when any input needs a gradient.
/// `fn` receives nothing; it captures the nodes it reads and writes.
template <typename T, typename Fn>
void record(const Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Fn&& fn) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  bool any = false;
  for (const Tensor<T>* in : inputs) {
    if (in && in->defined()) {
      nodes.push_back(in->node());
      any = any || in->requires_grad();
    }
  }
  if (any) tape->record(out.node(), std::move(nodes), std::forward<Fn>(fn));
}

template <typename T>
void record_many(const Tensor<T>& out, const std::vector<Tensor<T>>& inputs,
                 std::function<void()> fn) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  bool any = false;
  for (const auto& in : inputs) {
    nodes.push_back(in.node());
    any = any || in.requires_grad();
  }
  if (any) tape->record(out.node(), std::move(nodes), std::move(fn));
}

}  // namespace detail

}  // namespace iretinex
