#include "avatar/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "avatar/common.hpp"

namespace avatar {

namespace {
std::atomic<std::uint64_t> g_seq{0};

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<float> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("tensor buffer length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->seq = g_seq.fetch_add(1);
  return n;
}
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0) i += static_cast<int>(s.size());
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw ShapeError("dimension index out of range for shape " + shape_str(s));
  return s[i];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->values.size()); }

std::span<const float> Tensor::values() const { return node_->values; }

std::span<float> Tensor::mutable_values() {
  if (!node_->leaf) throw ContractError("mutable_values() on a non-leaf tensor");
  return node_->values;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }

std::span<const float> Tensor::grad() const { return node_->ensure_grad(); }
std::span<float> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const { return from(shape(), node_->values, false); }

Tensor Tensor::make_result(Shape shape, std::vector<float> values, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward_fn) {
  for (float v : values)
    if (!std::isfinite(v)) throw NumericalError("non-finite value produced by tensor op");
  auto node = new_node(std::move(shape), std::move(values));
  bool any = false;
  for (auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->leaf = false;
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss");
  auto& root = loss.node();
  if (root.consumed) throw ContractError("backward() called twice on the same graph");
  if (!root.requires_grad) throw ContractError("loss is not connected to any tensor requiring grad");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{&root};
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->consumed) throw ContractError("graph was already released by an earlier backward()");
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  root.ensure_grad()[0] += 1.0f;
  for (auto* n : order) {
    if (n->leaf) continue;
    n->ensure_grad();
    for (auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    n->backward_fn(*n);
  }
  // Releasing parents can free nodes still referenced from `order`, so the
  // edges are moved out first and dropped together at the end.
  std::vector<std::shared_ptr<detail::Node>> released;
  for (auto* n : order) {
    if (n->leaf) continue;
    n->consumed = true;
    n->backward_fn = nullptr;
    for (auto& p : n->parents) released.push_back(std::move(p));
    n->parents.clear();
  }
}

void check_finite(const Tensor& t, const std::string& what) {
  for (float v : t.values())
    if (!std::isfinite(v)) throw NumericalError("non-finite value in " + what);
}

}  // namespace avatar
