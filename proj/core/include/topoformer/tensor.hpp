#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace topo::ad {

/// Node in the define-by-run reverse-mode graph. Tensors are thin handles
/// sharing these nodes; the graph is rebuilt on every forward pass.
struct Node {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  /// Allocates the gradient buffer on first use (kept empty until backward).
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }

  std::size_t size() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->size(); }
  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  /// Value of a one-element tensor.
  double value() const;
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// ---- core op set -----------------------------------------------------------

/// a @ b for 2-D tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise with numpy-style trailing-axis broadcasting of b into a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Elementwise division, same shape (or scalar divisor).
Tensor div(const Tensor& a, const Tensor& b);
/// c * a + d (constants).
Tensor affine(const Tensor& a, double c, double d = 0.0);
Tensor reshape(const Tensor& a, std::vector<int> shape);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
/// Slice along `axis`: indices [start, start+len).
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
/// Rows of a 2-D tensor at the given indices (duplicates allowed).
Tensor gather_rows(const Tensor& a, const std::vector<int>& indices);
/// Copy of `a` with the listed rows replaced by `row` (1 x D).
Tensor replace_rows(const Tensor& a, const std::vector<int>& indices,
                    const Tensor& row);
/// Softmax along the last axis (max-subtracted).
Tensor softmax(const Tensor& a);
/// Layer norm along the last axis with learned scale/shift, epsilon 1e-5.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
/// Full reductions to a scalar.
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Reverse-topological gradient accumulation from a scalar loss.
/// Repeated calls without zeroing grads accumulate.
void backward(const Tensor& loss);

/// True when ops record parent links and backward functions (the default).
bool grad_mode_enabled();

/// RAII scope that disables graph recording: ops still compute values but
/// intermediate results free as soon as their handles go out of scope.
/// Use for pure inference where no backward pass will follow.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- optimizer -------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

/// One Adam update over `params` using their accumulated grads. The state is
/// created lazily on first use and must always be passed with the same
/// parameter list.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace topo::ad
