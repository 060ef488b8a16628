// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/autograd.hpp"

#include <unordered_set>

#include "nutime/errors.hpp"

namespace nutime {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
T* Node<T>::grad_buffer() {
  if (!requires_grad) return nullptr;
  if (!has_grad) {
    grad = Tensor<T>(value.shape(), T(0));
    has_grad = true;
  }
  return grad.data().data();
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var(std::move(n));
}

template <typename T>
Var<T> Var<T>::parameter(std::string name, Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->name = std::move(name);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward,
                   const char* op_name) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name);
  }
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool tracked = false;
    for (const auto& p : parents) tracked = tracked || p.requires_grad();
    if (tracked) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.ptr());
      n->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

template <typename T>
GradientSet<T> backward(const Var<T>& loss) {
  if (!loss) throw UsageError("backward: empty loss");
  if (loss.value().size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  GradientSet<T> grads;
  if (!loss.requires_grad()) return grads;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->has_grad) continue;
    if (node->backward) {
      node->backward(*node);
      node->grad = Tensor<T>();
      node->has_grad = false;
    } else if (!node->name.empty()) {
      grads[node->name] = std::move(node->grad);
      node->grad = Tensor<T>();
      node->has_grad = false;
    }
  }
  return grads;
}

template <typename T>
const Var<T>& ParamStore<T>::add(const std::string& name, Tensor<T> init, bool requires_grad, const std::string& id) {
  if (params_.count(name)) throw UsageError("parameter already exists: " + name);
  auto [it, ok] = params_.emplace(name, Var<T>::parameter(id.empty() ? name : id, std::move(init), requires_grad));
  return it->second;
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& kv : params_) out.push_back(kv.first);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& kv : params_) n += kv.second.value().size();
  return n;
}

template <typename T>
void ParamStore<T>::assign(const std::string& name, Tensor<T> value) {
  Tensor<T>& slot = mutable_value(name);
  if (slot.shape() != value.shape()) {
    throw UsageError("assign " + name + ": shape " + shape_str(value.shape()) + " != " + shape_str(slot.shape()));
  }
  slot = std::move(value);
}

template <typename T>
Tensor<T>& ParamStore<T>::mutable_value(const std::string& name) {
  return get(name).node()->value;
}

template <typename T>
void ParamStore<T>::set_requires_grad(bool on) {
  for (auto& kv : params_) kv.second.node()->requires_grad = on;
}

template <typename T>
ParamStore<T> ParamStore<T>::clone(const std::string& id_prefix) const {
  ParamStore out;
  for (const auto& [name, var] : params_) out.add(name, var.value(), var.requires_grad(), id_prefix + name);
  return out;
}

#define NUTIME_INSTANTIATE(T)                                                                          \
  template struct Node<T>;                                                                             \
  template class Var<T>;                                                                               \
  template class ParamStore<T>;                                                                        \
  template Var<T> make_result<T>(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>, const char*); \
  template GradientSet<T> backward<T>(const Var<T>&);

NUTIME_INSTANTIATE(float)
NUTIME_INSTANTIATE(double)
#undef NUTIME_INSTANTIATE

}  // namespace nutime
