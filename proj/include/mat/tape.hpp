#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mat/error.hpp"
#include "mat/tensor.hpp"

namespace mat {

// Reverse-mode tape. Ops append nodes in execution order (so every parent id
// precedes its children) and backward() sweeps them once in reverse,
// accumulating gradients into per-node slots. Used by exactly one logical
// thread at a time.
template <typename T>
class Tape {
 public:
  // Called during the reverse sweep with the node's output gradient;
  // accumulates into the parents' slots via grad_slot().
  using BackwardFn = std::function<void(Tape<T>&, const std::vector<T>&)>;

  // Registers a gradient-carrying leaf and returns a copy holding its handle.
  Tensor<T> leaf(Tensor<T> v) {
    v.node = add_node("leaf", {}, v.numel(), nullptr);
    leaves_.push_back(v.node);
    return v;
  }

  int add_node(const char* op, std::vector<int> parents, int64_t out_numel, BackwardFn fn) {
    nodes_.push_back(Node{op, std::move(parents), out_numel, std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Backpropagates from a scalar loss node. Every node gets a zero-initialized
  // gradient slot, so leaves that do not participate come back as zeros.
  void backward(int loss_node) {
    if (loss_node < 0 || loss_node >= static_cast<int>(nodes_.size())) {
      throw ContractError("backward: unknown node id " + std::to_string(loss_node));
    }
    if (nodes_[loss_node].numel != 1) {
      throw ContractError("backward: loss node must be scalar, has " +
                          std::to_string(nodes_[loss_node].numel) + " elements");
    }
    grads_.clear();
    grads_.resize(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) {
      grads_[i].assign(static_cast<size_t>(nodes_[i].numel), T(0));
    }
    grads_[loss_node][0] = T(1);
    for (int id = loss_node; id >= 0; --id) {
      if (nodes_[id].backward) nodes_[id].backward(*this, grads_[id]);
    }
    ran_backward_ = true;
  }

  const std::vector<T>& grad(int node) const {
    if (!ran_backward_) throw ContractError("grad: backward has not run");
    return grads_.at(static_cast<size_t>(node));
  }

  std::vector<T>& grad_slot(int node) { return grads_.at(static_cast<size_t>(node)); }

  const std::vector<int>& leaves() const { return leaves_; }
  size_t size() const { return nodes_.size(); }
  const char* op_at(int node) const { return nodes_.at(static_cast<size_t>(node)).op; }

 private:
  struct Node {
    const char* op;
    std::vector<int> parents;
    int64_t numel;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::vector<int> leaves_;
  bool ran_backward_ = false;
};

}  // namespace mat
