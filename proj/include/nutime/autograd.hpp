// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nutime/tensor.hpp"

namespace nutime {

/// One vertex of the reverse-mode tape. Leaves with a non-empty `name` are
/// parameters; interior nodes carry a backward closure that reads `grad` and
/// accumulates into the parents.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Zero-initialised gradient buffer, or nullptr when this node is not tracked.
  T* grad_buffer();
};

/// Shared handle to a tape node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var parameter(std::string name, Tensor<T> value, bool requires_grad = true);

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Gradients keyed by parameter name.
template <typename T>
using GradientSet = std::map<std::string, Tensor<T>>;

bool grad_enabled() noexcept;

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result: checks finiteness, then records parents and the
/// backward closure when any parent is tracked and recording is on.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward,
                   const char* op_name);

/// Reverse pass from a scalar loss. Returns the gradient of every tracked
/// parameter reachable from `loss`. Parameter gradients are moved out of the
/// tape, so each graph supports one backward pass.
template <typename T>
GradientSet<T> backward(const Var<T>& loss);

/// Named, ordered collection of parameter leaves.
template <typename T>
class ParamStore {
 public:
  /// Registers a leaf. Its gradient id is `id` when given, else `name`.
  const Var<T>& add(const std::string& name, Tensor<T> init, bool requires_grad = true, const std::string& id = {});
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;

  const Tensor<T>& value(const std::string& name) const { return get(name).value(); }
  /// Replaces a parameter's value; the shape must match.
  void assign(const std::string& name, Tensor<T> value);
  Tensor<T>& mutable_value(const std::string& name);
  void erase(const std::string& name) { params_.erase(name); }

  void set_requires_grad(bool on);
  /// Deep copy with fresh leaves. Each leaf's gradient id becomes
  /// `id_prefix + name`; lookup names are unchanged.
  ParamStore clone(const std::string& id_prefix = {}) const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, var] : params_) out.add(name, var.value().template cast<U>(), var.requires_grad());
    return out;
  }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Var<T>> params_;
};

}  // namespace nutime
