#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace kinr::nn {

using Shape = std::vector<int>;

std::size_t numel(Shape const &shape);
std::string to_string(Shape const &shape);

// One value in the reverse-mode tape. `backward` reads this node's grad and accumulates into
// the grads of `inputs`; it never captures the owning shared_ptr, so graphs are acyclic in
// ownership and die with the last Var that references their root.
template <typename T>
struct Node
{
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node &)> backward;

  std::span<T> ensure_grad()
  {
    if (grad.size() != value.size()) {
      grad.assign(value.size(), T(0));
    }
    return grad;
  }
};

template <typename T>
class Var
{
public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node)
    : node_{std::move(node)}
  {
  }

  static Var constant(Shape shape, std::vector<T> value);
  static Var parameter(Shape shape, std::vector<T> value);
  static Var zeros(Shape shape);

  bool defined() const { return static_cast<bool>(node_); }
  Shape const &shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<T const> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  std::span<T const> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.clear(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const { return node_->value.at(0); }

  Node<T> *node() const { return node_.get(); }
  std::shared_ptr<Node<T>> const &ptr() const { return node_; }

private:
  std::shared_ptr<Node<T>> node_;
};

// Seeds d(root)/d(root) = 1 (root must hold a single element) and runs the tape in reverse
// topological order. Gradients accumulate into leaves.
template <typename T>
void backward(Var<T> const &root);

// Builds the result node of an op. Inputs and the backward closure are dropped when no input
// requires a gradient or gradient recording is disabled.
template <typename T>
Var<T> make_result(Shape shape, std::vector<T> value, std::vector<Var<T>> const &inputs,
                   std::function<void(Node<T> &)> backward);

bool grad_enabled();

class NoGradGuard
{
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(NoGradGuard const &) = delete;
  NoGradGuard &operator=(NoGradGuard const &) = delete;

private:
  bool previous_;
};

} // namespace kinr::nn
