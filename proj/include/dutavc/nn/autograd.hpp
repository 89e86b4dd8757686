#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
// A Var is a handle to a graph node; operations on Vars record closures that
// accumulate gradients into their parents when backward() is called.

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dutavc::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

/// Row-major dense tensor.
struct Tensor {
  std::vector<int> shape;
  // Aligned so Eigen kernels take the same vectorization path on every call.
  using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;
  Buffer data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp, double fill = 0.0)
      : shape(std::move(shp)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<int>& shp) {
    return std::accumulate(shp.begin(), shp.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(i); }
  bool empty() const { return data.empty(); }

  MatMap mat(int rows, int cols) { return MatMap(data.data(), rows, cols); }
  ConstMatMap mat(int rows, int cols) const { return ConstMatMap(data.data(), rows, cols); }
  /// Leading dimension as rows, everything else as columns.
  MatMap mat() { return mat(shape.empty() ? 1 : shape[0], shape.empty() ? 1 : static_cast<int>(numel() / shape[0])); }
  ConstMatMap mat() const { return mat(shape.empty() ? 1 : shape[0], shape.empty() ? 1 : static_cast<int>(numel() / shape[0])); }
  VecMap vec() { return VecMap(data.data(), static_cast<Eigen::Index>(data.size())); }
  ConstVecMap vec() const { return ConstVecMap(data.data(), static_cast<Eigen::Index>(data.size())); }

  static Tensor from_matrix(const Eigen::MatrixXd& m);
  Eigen::MatrixXd to_matrix() const;  // rank-2 only
  std::string shape_string() const;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape, 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  Tensor& grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.numel() == node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<int>& shape() const { return node_->value.shape; }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value.data.at(0); }
  void zero_grad() { node_->grad = Tensor(); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds the output of an operation. The backward closure runs only when some
/// parent requires a gradient and gradient recording is enabled.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Runs reverse accumulation from a scalar; gradients add into every reachable
/// node that requires them.
void backward(const Var& scalar);

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace dutavc::nn
