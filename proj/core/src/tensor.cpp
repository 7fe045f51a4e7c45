#include "fer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "fer/autograd.hpp"
#include "fer/errors.hpp"

namespace fer {

namespace {
Precision g_precision = Precision::f64;
thread_local bool t_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Precision precision_mode() { return g_precision; }
void set_precision_mode(Precision mode) { g_precision = mode; }

double round_to_mode(double v) {
  return g_precision == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void round_to_mode(std::span<double> values) {
  if (g_precision != Precision::f32) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Tensor

namespace {
std::shared_ptr<autograd::Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<autograd::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  round_to_mode(node->data);
  node->requires_grad = requires_grad;
  return node;
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf(Shape{1}, std::vector<double>{value}, requires_grad));
}

autograd::Node& Tensor::checked() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::size(int axis) const {
  const auto& s = shape();
  const int d = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + d : axis;
  if (a < 0 || a >= d) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }
std::span<double> Tensor::mutable_data() { return checked().data; }

double Tensor::item() const {
  const auto& n = checked();
  if (n.data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(n.shape));
  return n.data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = checked();
  if (index.size() != n.shape.size()) {
    throw DimensionError("index rank does not match shape " + shape_str(n.shape));
  }
  std::size_t off = 0;
  std::size_t d = 0;
  for (auto i : index) {
    if (i >= n.shape[d]) throw DimensionError("index out of range for shape " + shape_str(n.shape));
    off = off * n.shape[d] + i;
    ++d;
  }
  return n.data[off];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  auto& n = checked();
  if (!n.is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  n.requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return checked().is_leaf(); }
const std::string& Tensor::op_name() const { return checked().op; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& n = checked();
  if (n.grad.empty()) throw ContractError("tensor has no gradient");
  return n.grad;
}

std::span<double> Tensor::mutable_grad() {
  auto& n = checked();
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = checked();
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tensor::clear_grad() {
  auto& n = checked();
  n.grad.clear();
  n.grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
  const auto& n = checked();
  return Tensor(make_leaf(n.shape, n.data, false));
}

void Tensor::backward() const {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  const auto tape = autograd::Tape::record(*this);
  for (auto* node : tape.nodes()) {
    if (!node->is_leaf()) {
      node->grad.assign(node->data.size(), 0.0);
    } else if (node->grad.empty()) {
      node->grad.assign(node->data.size(), 0.0);
    }
  }
  root.grad[0] += 1.0;

  const auto& order = tape.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->is_leaf()) {
      round_to_mode(node->grad);
      continue;
    }
    if (node->backward) node->backward(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

// ---------------------------------------------------------------------------
// autograd

namespace autograd {

std::vector<double>* input_grad(Node& self, std::size_t i) {
  auto& in = *self.inputs.at(i);
  if (!in.requires_grad) return nullptr;
  if (in.grad.empty()) in.grad.assign(in.data.size(), 0.0);
  return &in.grad;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  round_to_mode(node->data);
  node->op = std::move(op);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

}  // namespace autograd
}  // namespace fer
