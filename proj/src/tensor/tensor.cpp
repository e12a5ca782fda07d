#include "rst/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace rst {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::vector<std::string> g_scope_stack;
thread_local std::shared_ptr<const std::string> g_scope_cache;

std::atomic<debug::Fault> g_fault{debug::Fault::kNone};

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

ScopeGuard::ScopeGuard(std::string name) {
  g_scope_stack.push_back(std::move(name));
  g_scope_cache.reset();
}

ScopeGuard::~ScopeGuard() {
  g_scope_stack.pop_back();
  g_scope_cache.reset();
}

std::shared_ptr<const std::string> ScopeGuard::current() {
  if (g_scope_stack.empty()) return nullptr;
  if (!g_scope_cache) {
    std::string joined;
    for (const auto& s : g_scope_stack) {
      if (!joined.empty()) joined += '.';
      joined += s;
    }
    g_scope_cache = std::make_shared<const std::string>(std::move(joined));
  }
  return g_scope_cache;
}

namespace debug {
void set_fault(Fault fault) { g_fault.store(fault); }
Fault fault() { return g_fault.load(); }
}  // namespace debug

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
  if (rst::numel(shape) != data.size()) {
    throw ShapeError("tensor data has " + std::to_string(data.size()) +
                     " values but shape " + to_string(shape) + " needs " +
                     std::to_string(rst::numel(shape)));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto n = rst::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
detail::Node<T>& Tensor<T>::node() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return shape()[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().data[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw AutodiffError("in-place write to a non-leaf tensor");
  return node().data;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw AutodiffError("requires_grad can only be set on leaves");
  node().requires_grad = on;
  return *this;
}

template <typename T>
std::string Tensor<T>::scope() const {
  return node().scope ? *node().scope : std::string();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node().data);
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(numel());
  std::transform(node().data.begin(), node().data.end(), out.begin(),
                 [](T v) { return static_cast<U>(v); });
  return Tensor<U>(shape(), std::move(out));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(std::span<const T>)> backward_rule) {
  Tensor<T> out(std::move(shape), std::move(data));
  auto& node = *out.node_ptr();
  node.op = op;
  if (!GradMode::enabled()) return out;
  bool tracked = std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!tracked) return out;
  node.requires_grad = true;
  node.scope = ScopeGuard::current();
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) node.inputs.push_back(t.node_ptr());
  node.backward = std::move(backward_rule);
  return out;
}

template <typename T>
std::vector<T>* grad_sink(const Tensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  return &t.node_ptr()->grad_buffer();
}

template <typename T>
GradTape<T> GradTape<T>::record(const Tensor<T>& loss) {
  GradTape tape;
  if (!loss.requires_grad()) return tape;
  // Iterative post-order DFS so deep graphs do not exhaust the stack.
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(loss.node_ptr(), 0);
  seen.insert(loss.node_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    tape.order_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

template <typename T>
void GradTape<T>::replay() {
  if (order_.empty()) return;
  auto& root = *order_.back();
  root.grad_buffer().assign(root.data.size(), T(1));
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& node = **it;
    if (!node.backward) continue;
    node.backward(node.grad_buffer());
    // Interior gradients are not needed once propagated.
    std::vector<T>().swap(node.grad);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw AutodiffError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw AutodiffError("loss is not connected to any tracked leaf");
  }
  auto tape = GradTape<T>::record(loss);
  bool has_leaf = std::any_of(tape.nodes().begin(), tape.nodes().end(),
                              [](const auto& n) { return n->inputs.empty(); });
  if (!has_leaf) throw AutodiffError("loss is not connected to any tracked leaf");
  tape.replay();
}

template <typename T>
void visit_graph(const Tensor<T>& root,
                 const std::function<void(const detail::Node<T>&)>& visit) {
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<const detail::Node<T>*> stack{root.node_ptr().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    const auto* node = stack.back();
    stack.pop_back();
    visit(*node);
    for (const auto& in : node->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template void visit_graph(const Tensor<float>&, const std::function<void(const detail::Node<float>&)>&);
template void visit_graph(const Tensor<double>&, const std::function<void(const detail::Node<double>&)>&);
template Tensor<float> make_result(Shape, std::vector<float>, const char*, std::vector<Tensor<float>>,
                                   std::function<void(std::span<const float>)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*, std::vector<Tensor<double>>,
                                    std::function<void(std::span<const double>)>);
template std::vector<float>* grad_sink(const Tensor<float>&);
template std::vector<double>* grad_sink(const Tensor<double>&);

}  // namespace rst
