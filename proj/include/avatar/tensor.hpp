#pragma once

// Dense float tensors with define-by-run reverse-mode differentiation.
//
// Every op that consumes a tensor with requires_grad() produces a node that
// remembers its parents and a closure propagating gradients back to them.
// Nodes carry a creation sequence number; sorting the reachable nodes by that
// number in descending order is a valid reverse topological order, which is
// what backward() walks.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace avatar {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::int64_t dim(int i) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  std::span<const float> values() const;
  /// Writable view of the buffer; only legal on leaf tensors.
  std::span<float> mutable_values();
  float item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Accumulated gradient (zeros if nothing was accumulated yet).
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// A leaf sharing no history with this tensor (values copied).
  Tensor detach() const;

  // Internal: op construction.
  static Tensor make_result(Shape shape, std::vector<float> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);
  detail::Node& node() const { return *node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

namespace detail {
struct Node {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<float>& ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0f);
    return grad;
  }
};
}  // namespace detail

/// Reverse pass from a scalar loss. Leaves with requires_grad accumulate
/// d(loss)/d(leaf). The graph is released afterwards; calling backward on the
/// same loss again throws ContractError.
void backward(const Tensor& loss);

/// Checks every value is finite; throws NumericalError naming `what`.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace avatar
