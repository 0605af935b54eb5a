#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tut {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

/// Thrown when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an input lies outside an operation's domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Thrown on empty sequences where at least one row is required.
class EmptyInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One vertex of the define-by-run graph. The backward rule reads `grad`
/// and accumulates into the parents.
template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }

  void accumulate(const Matrix<Scalar>& g) {
    if (!requires_grad) return;
    if (g.rows() != value.rows() || g.cols() != value.cols())
      throw DimensionError(std::string("gradient shape mismatch in ") + op);
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = g;
    else
      grad += g;
  }

  // Ensures `grad` is allocated and returns it for in-place accumulation.
  Matrix<Scalar>& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    return grad;
  }
};

/// Dense rank-2 array participating in reverse-mode differentiation.
/// Vectors are stored as 1×n rows; scalars as 1×1.
template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Matrix<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    return Tensor(std::move(n));
  }

  static Tensor parameter(Matrix<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Tensor(std::move(n));
  }

  static Tensor scalar(Scalar v) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  bool defined() const { return static_cast<bool>(node_); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }

  const Matrix<Scalar>& value() const { return node_->value; }
  Matrix<Scalar>& mutable_value() { return node_->value; }
  const Matrix<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on a non-scalar tensor");
    return node_->value(0, 0);
  }

  void zero_grad() { node_->grad.resize(0, 0); }

  /// Runs the backward pass seeded with ones (the usual case is a scalar loss).
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Recorded operations reachable from a root, in topological order
/// (parents before children).
template <typename Scalar>
class Graph {
 public:
  explicit Graph(const Tensor<Scalar>& root) {
    using NodeT = Node<Scalar>;
    std::unordered_set<const NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        NodeT* p = node->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<Node<Scalar>*>& order() const { return order_; }

  void backward(const Matrix<Scalar>& seed) {
    if (order_.empty()) return;
    Node<Scalar>* root = order_.back();
    if (!root->requires_grad) return;
    root->accumulate(seed);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<Scalar>* n = *it;
      if (n->backward && n->has_grad()) n->backward(*n);
    }
  }

 private:
  std::vector<Node<Scalar>*> order_;
};

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  Graph<Scalar> graph(*this);
  graph.backward(Matrix<Scalar>::Ones(rows(), cols()));
}

/// Builds the result node of an operation. Parents and the backward rule are
/// only attached when recording is enabled and some input needs a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Matrix<Scalar> value,
                           std::vector<typename Tensor<Scalar>::NodePtr> parents,
                           std::function<void(Node<Scalar>&)> backward) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor<Scalar>(std::move(n));
}

template <typename To, typename From>
Matrix<To> cast(const Matrix<From>& m) {
  return m.template cast<To>();
}

}  // namespace tut
