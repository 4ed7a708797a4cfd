/*
 * Copyright 2026 The microdense authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MICRODENSE_AUTOGRAD_HPP_
#define MICRODENSE_AUTOGRAD_HPP_

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "microdense/tensor.hpp"

namespace microdense {

/// Learnable tensor with its gradient and momentum buffer. Gradients
/// accumulate across backward() calls until zero_grad().
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Tensor<Scalar> momentum;
  bool decay_exempt = false;  // batch-norm scale/shift and biases

  explicit Parameter(std::string n, Tensor<Scalar> v, bool exempt = false)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        momentum(value.shape()),
        decay_exempt(exempt) {}

  void zero_grad() { grad.set_zero(); }
};

/// Node handle inside a Graph.
struct Value {
  int idx = -1;
};

/// Reverse-mode tape over a small fixed operation set. Nodes evaluate
/// eagerly as they are added; forward() re-executes the tape against the
/// current input bindings and parameter values; backward() fills gradients
/// in reverse topological order, accumulating at fan-out.
///
/// A Graph is confined to one thread at a time. Distinct graphs may run
/// concurrently.
template <typename Scalar>
class Graph {
public:
  using Fwd = std::function<void(Graph&, int)>;
  using Bwd = std::function<void(Graph&, int)>;

  struct Node {
    std::string tag;
    std::vector<int> inputs;
    Tensor<Scalar> out;
    Tensor<Scalar> grad;
    Fwd fwd;
    Bwd bwd;
    Parameter<Scalar>* param = nullptr;
    std::string input_name;  // non-empty for named inputs
  };

  Value input(const std::string& name, Tensor<Scalar> t) {
    Node n;
    n.tag = "input:" + name;
    n.input_name = name;
    n.out = std::move(t);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  Value constant(Tensor<Scalar> t, const std::string& tag = "constant") {
    Node n;
    n.tag = tag;
    n.out = std::move(t);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  /// Parameter leaf. forward() refreshes the node value from the parameter,
  /// backward() accumulates the node gradient into the parameter gradient.
  Value param(Parameter<Scalar>& p) {
    Node n;
    n.tag = "param:" + p.name;
    n.param = &p;
    n.out = p.value;
    n.fwd = [](Graph& g, int self) {
      g.nodes_[static_cast<std::size_t>(self)].out =
          g.nodes_[static_cast<std::size_t>(self)].param->value;
    };
    n.bwd = [](Graph& g, int self) {
      auto& node = g.nodes_[static_cast<std::size_t>(self)];
      node.param->grad.array() += node.grad.array();
    };
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  /// Appends an operation node and evaluates it immediately.
  Value add_node(std::string tag, std::vector<Value> inputs, Fwd fwd, Bwd bwd) {
    Node n;
    n.tag = std::move(tag);
    n.inputs.reserve(inputs.size());
    for (auto v : inputs) {
      if (v.idx < 0 || v.idx >= static_cast<int>(nodes_.size()))
        throw Error("graph: node '" + n.tag + "' references an unknown input");
      n.inputs.push_back(v.idx);
    }
    n.fwd = std::move(fwd);
    n.bwd = std::move(bwd);
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    nodes_.back().fwd(*this, id);
    return Value{id};
  }

  /// Replaces the value bound to a named input; shape must match.
  void rebind(const std::string& name, Tensor<Scalar> t) {
    for (auto& n : nodes_) {
      if (n.input_name == name) {
        if (n.out.shape() != t.shape())
          throw Error("graph: rebind '" + name + "' expected shape " +
                      shape_str(n.out.shape()) + ", got " + shape_str(t.shape()));
        n.out = std::move(t);
        return;
      }
    }
    throw Error("graph: no input named '" + name + "'");
  }

  /// Re-executes every node in topological (insertion) order.
  void forward() {
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.fwd) n.fwd(*this, i);
    }
  }

  /// Binds the named inputs, then re-executes the tape.
  void forward(const std::map<std::string, Tensor<Scalar>>& inputs) {
    for (const auto& [name, t] : inputs) rebind(name, t);
    forward();
  }

  /// Reverse pass from a scalar terminal. Node gradients are local to this
  /// call; parameter gradients accumulate until Parameter::zero_grad().
  void backward(Value loss) {
    auto& terminal = node(loss);
    if (terminal.out.size() != 1)
      throw Error("backward: terminal node '" + terminal.tag +
                  "' has shape " + shape_str(terminal.out.shape()) +
                  ", expected a scalar");
    for (auto& n : nodes_) n.grad.reset(n.out.shape());
    terminal.grad[0] = Scalar(1);
    for (int i = loss.idx; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.bwd) n.bwd(*this, i);
    }
  }

  Node& node(Value v) { return nodes_.at(static_cast<std::size_t>(v.idx)); }
  const Node& node(Value v) const { return nodes_.at(static_cast<std::size_t>(v.idx)); }
  Tensor<Scalar>& out(Value v) { return node(v).out; }
  const Tensor<Scalar>& out(Value v) const { return node(v).out; }
  Tensor<Scalar>& grad(Value v) { return node(v).grad; }

  Tensor<Scalar>& out_of(int idx) { return nodes_[static_cast<std::size_t>(idx)].out; }
  Tensor<Scalar>& grad_of(int idx) { return nodes_[static_cast<std::size_t>(idx)].grad; }

  std::size_t size() const { return nodes_.size(); }

private:
  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void check_same_shape(const char* op, const Tensor<Scalar>& a,
                      const Tensor<Scalar>& b) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
}

}  // namespace detail

/// y = x. Present so that trivial graphs and rebinding tests have a node.
template <typename Scalar>
Value identity(Graph<Scalar>& g, Value x) {
  return g.add_node(
      "identity", {x},
      [x](Graph<Scalar>& g, int self) { g.out_of(self) = g.out(x); },
      [x](Graph<Scalar>& g, int self) {
        g.grad(x).array() += g.grad_of(self).array();
      });
}

template <typename Scalar>
Value add(Graph<Scalar>& g, Value a, Value b) {
  detail::check_same_shape("add", g.out(a), g.out(b));
  return g.add_node(
      "add", {a, b},
      [a, b](Graph<Scalar>& g, int self) {
        auto& o = g.out_of(self);
        o.reset(g.out(a).shape());
        o.array() = g.out(a).array() + g.out(b).array();
      },
      [a, b](Graph<Scalar>& g, int self) {
        g.grad(a).array() += g.grad_of(self).array();
        g.grad(b).array() += g.grad_of(self).array();
      });
}

/// Elementwise product.
template <typename Scalar>
Value mul(Graph<Scalar>& g, Value a, Value b) {
  detail::check_same_shape("mul", g.out(a), g.out(b));
  return g.add_node(
      "mul", {a, b},
      [a, b](Graph<Scalar>& g, int self) {
        auto& o = g.out_of(self);
        o.reset(g.out(a).shape());
        o.array() = g.out(a).array() * g.out(b).array();
      },
      [a, b](Graph<Scalar>& g, int self) {
        g.grad(a).array() += g.grad_of(self).array() * g.out(b).array();
        g.grad(b).array() += g.grad_of(self).array() * g.out(a).array();
      });
}

/// Sum of all elements, producing a scalar (shape (1)).
template <typename Scalar>
Value sum(Graph<Scalar>& g, Value x) {
  return g.add_node(
      "sum", {x},
      [x](Graph<Scalar>& g, int self) {
        auto& o = g.out_of(self);
        o.reset({1});
        o[0] = g.out(x).array().sum();
      },
      [x](Graph<Scalar>& g, int self) {
        g.grad(x).array() += g.grad_of(self)[0];
      });
}

/// Central-difference gradient estimate of a scalar function:
/// (f(x + h e_i) - f(x - h e_i)) / 2h per element.
template <typename Scalar, typename F>
Tensor<Scalar> finite_diff_grad(F f, const Tensor<Scalar>& x, Scalar h) {
  if (!(h > Scalar(0))) throw Error("finite_diff_grad: step h must be > 0");
  Tensor<Scalar> g(x.shape());
  Tensor<Scalar> probe = x;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const Scalar saved = probe[i];
    probe[i] = saved + h;
    const Scalar fp = f(probe);
    probe[i] = saved - h;
    const Scalar fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(static_cast<double>(fp)) ||
        !std::isfinite(static_cast<double>(fm)))
      throw Error("finite_diff_grad: non-finite function value at element " +
                  std::to_string(i));
    g[i] = (fp - fm) / (Scalar(2) * h);
  }
  return g;
}

}  // namespace microdense

#endif  // MICRODENSE_AUTOGRAD_HPP_
