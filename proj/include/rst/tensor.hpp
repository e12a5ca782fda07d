#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rst {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Gradient recording is on by default; NoGradGuard disables it for the
// current thread.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Names the enclosing model region ("dec0.block2.attn"). Every recorded node
// remembers the scope it was created in, which is what graph inspection
// reads back.
class ScopeGuard {
 public:
  explicit ScopeGuard(std::string name);
  ~ScopeGuard();
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;

  static std::shared_ptr<const std::string> current();
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::shared_ptr<const std::string> scope;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads the gradient of this node and accumulates into the inputs.
  std::function<void(std::span<const T>)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  T operator[](std::size_t i) const { return node().data[i]; }
  T item() const;

  // Only leaves may be written in place (optimizer updates, test setup).
  std::span<T> mutable_data();

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return node().grad.size() == node().data.size(); }
  std::span<const T> grad() const { return node().grad; }
  void zero_grad() { node().grad.clear(); }

  bool is_leaf() const { return node().inputs.empty(); }
  const char* op_name() const { return node().op; }
  std::string scope() const;

  Tensor detach() const;
  template <typename U>
  Tensor<U> cast() const;

  const NodePtr& node_ptr() const { return node_; }

 private:
  detail::Node<T>& node() const;
  NodePtr node_;
};

// Reverse-topological replay of the operations that produced a scalar loss.
template <typename T>
class GradTape {
 public:
  using NodePtr = typename Tensor<T>::NodePtr;

  // Records every tracked node reachable from `loss`, inputs before outputs.
  static GradTape record(const Tensor<T>& loss);

  std::size_t size() const { return order_.size(); }
  const std::vector<NodePtr>& nodes() const { return order_; }

  // Seeds d(loss)/d(loss) = 1 and runs every backward rule once, last
  // recorded first.
  void replay();

 private:
  std::vector<NodePtr> order_;
};

// Populates grad() of every tracked leaf that `loss` depends on.
// Throws AutodiffError for a non-scalar loss or when no tracked leaf is
// reachable.
template <typename T>
void backward(const Tensor<T>& loss);

// Calls `visit` once per node reachable from `root` (tracked or not, as
// long as it was recorded).
template <typename T>
void visit_graph(const Tensor<T>& root,
                 const std::function<void(const detail::Node<T>&)>& visit);

// Builds an op result. When gradient recording is on and any input is
// tracked, the result keeps its inputs and the backward rule.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(std::span<const T>)> backward_rule);

// Accumulation target for a backward rule; null when the input is not
// tracked.
template <typename T>
std::vector<T>* grad_sink(const Tensor<T>& t);

namespace debug {

// Deliberate corruption of one backward rule, used to prove that the audit
// harness catches broken gradients.
enum class Fault { kNone, kConv2dKernelGrad };

void set_fault(Fault fault);
Fault fault();

}  // namespace debug

}  // namespace rst
