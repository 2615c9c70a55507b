#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atseg/tensor.hpp"

namespace atseg {

/// A trainable tensor and its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape.
///
/// Every op appends one entry holding its output value and a closure over whatever
/// it saved for the backward pass. backward() walks the entries in exact reverse
/// recording order and sums the contributions of every consumer into each
/// input's gradient. A Tape is single-owner; it is not safe to record from two
/// threads at once.
class Tape {
 public:
  /// Receives the output gradient and one slot per input: a gradient buffer to add
  /// into, or nullptr when that input does not need a gradient.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that never receives a gradient.
  Var constant(Tensor value);
  /// Input whose gradient is kept after backward() and readable through grad().
  Var leaf(Tensor value, bool requires_grad = true);
  /// Binds a parameter; backward() adds d(loss)/d(param) into param.grad.
  /// The parameter must outlive the call to backward().
  Var param(Parameter& p);

  /// Appends an op output. `fn` is dropped when no input requires a gradient.
  Var record(std::string_view kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  /// Populates gradients from a one-element loss. `on_visit`, if given, sees the
  /// index of every entry whose backward closure runs, in visiting order.
  void backward(Var loss, const std::function<void(std::size_t)>& on_visit = {});

  const Tensor& value(Var v) const { return entries_.at(v.id()).value; }
  bool requires_grad(Var v) const { return entries_.at(v.id()).requires_grad; }
  /// Gradient of a leaf after backward(). Throws if none was computed.
  const Tensor& grad(Var v) const;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return entries_.size(); }
  std::string_view kind(std::size_t index) const { return entries_.at(index).kind; }

 private:
  struct Entry {
    std::string kind;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter* param = nullptr;
    std::optional<Tensor> grad;
  };

  Var push(Entry entry);

  std::vector<Entry> entries_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

/// Central-difference gradient of a scalar function, accumulated in double.
/// `f` is evaluated 2·numel(x) times with one element perturbed by ±eps.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace atseg
