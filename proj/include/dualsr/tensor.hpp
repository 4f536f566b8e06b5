#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dualsr {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph construction while alive (inference / frozen targets).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily, same length as values
  bool requires_grad = false;
  bool needs_graph = false;  // requires_grad, or depends on a node that does
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Scatters this node's grad into its inputs' grads.
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

/// Value-semantics handle to an n-d array participating in reverse-mode AD.
///
/// Values are treated as immutable once an op has consumed the tensor;
/// only optimizer updates write through values() on leaf parameters.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double v) {
    auto n = std::make_shared<TensorNode>();
    n->values.assign(static_cast<std::size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(std::vector<double> values, Shape shape) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " +
                                  shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return full({1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const {
    return static_cast<std::int64_t>(node_->values.size());
  }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  double operator[](std::int64_t i) const {
    return node_->values[static_cast<std::size_t>(i)];
  }

  double item() const {
    if (size() != 1)
      throw std::invalid_argument("item: tensor " + shape_str(shape()) +
                                  " is not a scalar");
    return node_->values[0];
  }

  bool is_scalar() const { return size() == 1; }

  Tensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    node_->needs_graph = v || !node_->inputs.empty();
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool needs_graph() const { return node_->needs_graph; }

  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  /// Copy of the values with no graph history; never accumulates gradient.
  Tensor detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->values = node_->values;
    return Tensor(std::move(n));
  }

  /// Reverse pass from a scalar root. Gradients accumulate (+=) into every
  /// reachable node with needs_graph set; the root's own grad ends at 1.
  void backward() const {
    if (!is_scalar())
      throw std::invalid_argument("backward: root " + shape_str(shape()) +
                                  " is not a scalar");
    // Iterative post-order topological sort over the (acyclic) tape.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        TensorNode* in = node->inputs[next++].get();
        if (in->needs_graph && !visited.count(in)) {
          visited.insert(in);
          stack.emplace_back(in, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop(**it);
    }
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Named parameter, the unit of checkpointing and optimization.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

inline void append_params(ParamList& dst, const ParamList& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

namespace detail {

/// Builds a non-leaf node; wires inputs/backprop only when grad mode is on
/// and at least one input participates in the graph.
inline Tensor make_op(Shape shape, std::vector<double> values, const char* op,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& t : inputs)
      if (t.needs_graph()) track = true;
  }
  if (track) {
    n->needs_graph = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

}  // namespace detail

}  // namespace dualsr
