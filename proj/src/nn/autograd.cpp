#include "kinr/nn/autograd.hpp"

#include "kinr/error.hpp"

#include <unordered_set>

namespace kinr::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard()
  : previous_{g_grad_enabled}
{
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t numel(Shape const &shape)
{
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) {
      throw ShapeError("negative dimension in shape " + to_string(shape));
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(Shape const &shape)
{
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? "x" : "") + std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Var<T> Var<T>::constant(Shape shape, std::vector<T> value)
{
  if (nn::numel(shape) != value.size()) {
    throw ShapeError("value count does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::parameter(Shape shape, std::vector<T> value)
{
  auto v = constant(std::move(shape), std::move(value));
  v.node()->requires_grad = true;
  return v;
}

template <typename T>
Var<T> Var<T>::zeros(Shape shape)
{
  auto const n = nn::numel(shape);
  return constant(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Var<T> make_result(Shape shape, std::vector<T> value, std::vector<Var<T>> const &inputs,
                   std::function<void(Node<T> &)> backward)
{
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (auto const &in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto const &in : inputs) {
      node->inputs.push_back(in.ptr());
    }
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void backward(Var<T> const &root)
{
  if (root.numel() != 1) {
    throw ShapeError("backward needs a scalar root, got " + to_string(root.shape()));
  }
  if (!root.requires_grad()) {
    return;
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T> *> order;
  std::unordered_set<Node<T> *> seen;
  std::vector<std::pair<Node<T> *, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto *child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T> *n = *it;
    if (n->backward && n->grad.size() == n->value.size()) {
      n->backward(*n);
    }
  }
  // Interior grads are no longer needed; leaves keep theirs.
  for (Node<T> *n : order) {
    if (n->backward) {
      std::vector<T>().swap(n->grad);
    }
  }
}

#define KINR_INSTANTIATE(T)                                                                                            \
  template class Var<T>;                                                                                               \
  template Var<T> make_result<T>(Shape, std::vector<T>, std::vector<Var<T>> const &, std::function<void(Node<T> &)>); \
  template void backward<T>(Var<T> const &);

KINR_INSTANTIATE(float)
KINR_INSTANTIATE(double)

} // namespace kinr::nn
