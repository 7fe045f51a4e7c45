#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Global numeric run mode. Storage is always binary64; in f32 mode every
/// op result, every new leaf and every accumulated leaf gradient is rounded
/// to the nearest binary32 value.
enum class Precision { f32, f64 };

Precision precision_mode();
void set_precision_mode(Precision mode);
double round_to_mode(double v);
void round_to_mode(std::span<double> values);

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision mode) : saved_(precision_mode()) { set_precision_mode(mode); }
  ~PrecisionScope() { set_precision_mode(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

namespace autograd {
struct Node;
}

/// Dense row-major tensor handle. Copies share the underlying node, like a
/// reference; use detach() for an independent value copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<autograd::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // In-place access for optimizer updates and finite-difference probes.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;
  const std::string& op_name() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate (+=)
  /// until cleared; intermediate gradients start from zero every call.
  void backward() const;

  Tensor detach() const;

  autograd::Node* node() const { return node_.get(); }
  const std::shared_ptr<autograd::Node>& node_ptr() const { return node_; }

 private:
  autograd::Node& checked() const;
  std::shared_ptr<autograd::Node> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

}  // namespace fer
