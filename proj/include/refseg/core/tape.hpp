#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "refseg/core/tensor.hpp"

namespace refseg {

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// ids form a topological order and backward() is a single reverse sweep.
// Gradient buffers are allocated lazily on first accumulation; nodes whose
// gradient was never touched are skipped during the sweep.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  int push(Tensor<T> value, BackwardFn back = nullptr) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(back), false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int leaf(const Tensor<T>& value) { return push(value); }
  int constant(Tensor<T> value) { return push(std::move(value)); }

  Tensor<T>& value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  // Gradient buffer, zero-initialized to the value's shape on first use.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.touched) {
      n.grad = Tensor<T>(n.value.shape());
      n.touched = true;
    }
    return n.grad;
  }

  bool touched(int id) const { return nodes_[static_cast<std::size_t>(id)].touched; }

  // Seeds d(root)/d(root) = 1 and propagates. root must be scalar.
  void backward(int root) {
    if (value(root).size() != 1) throw std::logic_error("backward root must be a scalar");
    grad(root)[0] = T(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.touched && n.back) n.back(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn back;
    bool touched = false;
  };
  std::vector<Node> nodes_;
};

}  // namespace refseg
