#include "bem/tape.hpp"

#include "bem/error.hpp"

namespace bem {

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->requires_grad(id_);
}

const Tensor& Gradients::of(Var v) const {
    if (v.id() >= slots_.size() || slots_[v.id()].empty()) {
        throw ContractError("no gradient recorded for node " + std::to_string(v.id()));
    }
    return slots_[v.id()];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<NodeId> parents, BackwardFn backward) {
    bool needs = false;
    for (auto p : parents) {
        if (p >= nodes_.size()) throw ContractError("parent node " + std::to_string(p) + " is not on this tape");
        needs = needs || nodes_[p].requires_grad;
    }
    if (!needs) backward = nullptr;
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), needs, false});
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
    if (loss.tape() != this) throw ContractError("backward: loss was not recorded on this tape");
    const Tensor& loss_value = value(loss.id());
    if (loss_value.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_to_string(loss_value.shape()));
    }

    Gradients grads;
    grads.slots_.resize(nodes_.size());
    for (NodeId i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].is_leaf && nodes_[i].requires_grad) grads.slots_[i] = Tensor::zeros(nodes_[i].value.shape());
    }
    if (!nodes_[loss.id()].requires_grad) return grads;

    grads.slots_[loss.id()] = Tensor::full(loss_value.shape(), 1.0);
    std::vector<Tensor*> parent_slots;
    for (NodeId i = loss.id() + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.backward || grads.slots_[i].empty()) continue;
        parent_slots.clear();
        for (auto p : node.parents) {
            if (!nodes_[p].requires_grad) {
                parent_slots.push_back(nullptr);
                continue;
            }
            if (grads.slots_[p].empty()) grads.slots_[p] = Tensor::zeros(nodes_[p].value.shape());
            parent_slots.push_back(&grads.slots_[p]);
        }
        node.backward(grads.slots_[i], parent_slots);
    }
    return grads;
}

}  // namespace bem
