#include "atseg/autodiff.hpp"

#include <stdexcept>

#include "atseg/errors.hpp"

namespace atseg {

Var Tape::push(Entry entry) {
  entries_.push_back(std::move(entry));
  return Var(this, entries_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Entry e;
  e.kind = "constant";
  e.value = std::move(value);
  e.is_leaf = true;
  return push(std::move(e));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Entry e;
  e.kind = "leaf";
  e.value = std::move(value);
  e.is_leaf = true;
  e.requires_grad = requires_grad && grad_enabled_;
  return push(std::move(e));
}

Var Tape::param(Parameter& p) {
  Entry e;
  e.kind = "param";
  e.value = p.value;
  e.is_leaf = true;
  e.requires_grad = grad_enabled_;
  e.param = grad_enabled_ ? &p : nullptr;
  return push(std::move(e));
}

Var Tape::record(std::string_view kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Entry e;
  e.kind = std::string(kind);
  e.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw std::logic_error("op '" + e.kind + "' mixes values from different tapes");
    e.inputs.push_back(v.id());
    e.requires_grad = e.requires_grad || entries_[v.id()].requires_grad;
  }
  if (e.requires_grad) e.backward = std::move(fn);
  return push(std::move(e));
}

void Tape::backward(Var loss, const std::function<void(std::size_t)>& on_visit) {
  if (loss.tape_ != this) throw std::logic_error("backward: loss belongs to another tape");
  Entry& root = entries_.at(loss.id());
  if (root.value.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(root.value.shape()));
  }
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0f);

  std::vector<Tensor*> slots;
  for (std::size_t idx = loss.id() + 1; idx-- > 0;) {
    Entry& e = entries_[idx];
    if (!e.grad) continue;
    if (e.is_leaf) {
      if (e.param) accumulate(e.param->grad, *e.grad);
      continue;
    }
    slots.clear();
    for (std::size_t in : e.inputs) {
      Entry& src = entries_[in];
      if (!src.requires_grad) {
        slots.push_back(nullptr);
        continue;
      }
      if (!src.grad) src.grad = Tensor(src.value.shape());
      slots.push_back(&*src.grad);
    }
    if (on_visit) on_visit(idx);
    e.backward(*e.grad, slots);
    // Intermediate gradients are not needed once propagated.
    e.grad.reset();
  }
}

const Tensor& Tape::grad(Var v) const {
  const Entry& e = entries_.at(v.id());
  if (!e.grad) throw std::logic_error("no gradient recorded for tape entry " + std::to_string(v.id()));
  return *e.grad;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  Tensor probe = x;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float original = probe[i];
    probe[i] = static_cast<float>(static_cast<double>(original) + eps);
    const double up = f(probe);
    const double step_up = static_cast<double>(probe[i]) - original;
    probe[i] = static_cast<float>(static_cast<double>(original) - eps);
    const double down = f(probe);
    const double step_down = original - static_cast<double>(probe[i]);
    probe[i] = original;
    out[i] = static_cast<float>((up - down) / (step_up + step_down));
  }
  return out;
}

}  // namespace atseg
