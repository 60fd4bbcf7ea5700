#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "bem/tensor.hpp"

namespace bem {

class Tape;
using NodeId = std::size_t;

// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
  public:
    Var() = default;

    Tape* tape() const noexcept { return tape_; }
    NodeId id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

  private:
    friend class Tape;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

// Receives the gradient of a node's output and accumulates into the gradient
// slots of its parents. A slot is null when that parent does not require a
// gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

// Gradients produced by Tape::backward, keyed by node.
class Gradients {
  public:
    // Gradient of `v`. Leaves that require a gradient but were not reached
    // from the loss hold zeros. Throws ContractError for nodes that do not
    // require a gradient.
    const Tensor& of(Var v) const;

  private:
    friend class Tape;
    std::vector<Tensor> slots_;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// parents always precede their children. A tape belongs to one thread; build a
// fresh tape for every forward pass.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad);
    // Leaf that never receives a gradient.
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Appends an op result. The backward closure is dropped when no parent
    // requires a gradient.
    Var record(Tensor value, std::vector<NodeId> parents, BackwardFn backward);

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    std::span<const NodeId> parents(NodeId id) const { return nodes_.at(id).parents; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Reverse sweep from a scalar `loss` recorded on this tape.
    Gradients backward(Var loss) const;

  private:
    struct Node {
        Tensor value;
        std::vector<NodeId> parents;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_leaf = false;
    };

    std::deque<Node> nodes_;
};

}  // namespace bem
