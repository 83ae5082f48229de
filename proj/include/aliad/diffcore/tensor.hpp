#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace aliad::diff {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One vertex of the dynamically recorded graph. Interior nodes own a closure
// that reads `grad` and accumulates into `parents`.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  bool is_leaf() const { return parents.empty(); }
  std::vector<double>& grad_buffer();
};

// Handle to a graph node. Copies share the node; values are never changed by
// ops, only by explicit leaf mutation (optimizers, finite differences).
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  double operator[](std::size_t flat) const { return values()[flat]; }
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  // Gradient of the last backward pass; empty when nothing reached this node.
  std::span<const double> grad() const;
  void zero_grad();

  // Only leaves may be mutated.
  std::span<double> mutable_values();
  void set_requires_grad(bool flag);

  // Reverse-mode pass from a single-element tensor. Leaves accumulate.
  void backward() const;

  const char* op_name() const;
  const std::shared_ptr<Node>& node() const { return node_; }

  static Tensor make(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                     const char* op, BackwardFn fn);

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

}  // namespace aliad::diff
