#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "topoformer/tensor.hpp"

namespace topo::ad {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const std::vector<int>& a,
                              const std::vector<int>& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

void check_finite(const char* op, const Tensor& t) {
#ifndef NDEBUG
  for (double v : t.data())
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string(op) + ": non-finite input value");
#else
  (void)op;
  (void)t;
#endif
}

Tensor make_result(const char* op, std::vector<int> shape,
                   std::initializer_list<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->data.assign(node->size(), 0.0);
  if (grad_mode_enabled()) {
    for (const Tensor& p : parents) {
      node->parents.push_back(p.node());
      node->requires_grad = node->requires_grad || p.requires_grad();
    }
    if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

/// Broadcast helper: true when b's shape is a trailing suffix of a's shape
/// with size-1 axes allowed. Returns the number of repeats of b inside a.
bool trailing_broadcast(const std::vector<int>& a, const std::vector<int>& b,
                        std::size_t* repeats, std::size_t* inner) {
  if (b.size() > a.size()) return false;
  std::size_t bn = 1;
  for (int d : b) bn *= static_cast<std::size_t>(d);
  const std::size_t off = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b[i] != a[off + i] && b[i] != 1) return false;
  // only support whole-suffix repetition (b either matches the suffix exactly
  // or is all-1 in the mismatching leading axes of the suffix)
  std::size_t in = 1;
  bool matching = true;
  for (std::size_t i = b.size(); i-- > 0;) {
    if (b[i] == a[off + i]) {
      if (!matching) return false;  // interleaved broadcast not supported
      in *= static_cast<std::size_t>(b[i]);
    } else {
      matching = false;
      if (b[i] != 1) return false;
    }
  }
  std::size_t an = 1;
  for (int d : a) an *= static_cast<std::size_t>(d);
  if (in == 0 || an % in) return false;
  *inner = in;
  *repeats = an / in;
  (void)bn;
  return true;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_finite("matmul", a);
  check_finite("matmul", b);
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    shape_error("matmul", a.shape(), b.shape());
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = make_result(
      "matmul", {m, n}, {a, b}, [m, k, n](Node& node) {
        Node& A = *node.parents[0];
        Node& B = *node.parents[1];
        ConstMatMap gy(node.grad.data(), m, n);
        ConstMatMap av(A.data.data(), m, k);
        ConstMatMap bv(B.data.data(), k, n);
        MatMap(A.grad.data(), m, k).noalias() += gy * bv.transpose();
        MatMap(B.grad.data(), k, n).noalias() += av.transpose() * gy;
      });
  ConstMatMap av(a.data().data(), m, k);
  ConstMatMap bv(b.data().data(), k, n);
  MatMap(out.data().data(), m, n).noalias() = av * bv;
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_finite("add", a);
  check_finite("add", b);
  std::size_t repeats, inner;
  if (!trailing_broadcast(a.shape(), b.shape(), &repeats, &inner))
    shape_error("add", a.shape(), b.shape());
  Tensor out = make_result(
      "add", a.shape(), {a, b}, [repeats, inner](Node& node) {
        Node& A = *node.parents[0];
        Node& B = *node.parents[1];
        for (std::size_t i = 0; i < node.grad.size(); ++i)
          A.grad[i] += node.grad[i];
        for (std::size_t r = 0; r < repeats; ++r)
          for (std::size_t i = 0; i < inner; ++i)
            B.grad[i] += node.grad[r * inner + i];
      });
  for (std::size_t r = 0; r < repeats; ++r)
    for (std::size_t i = 0; i < inner; ++i)
      out.data()[r * inner + i] = a.data()[r * inner + i] + b.data()[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, affine(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_finite("mul", a);
  check_finite("mul", b);
  std::size_t repeats, inner;
  if (!trailing_broadcast(a.shape(), b.shape(), &repeats, &inner))
    shape_error("mul", a.shape(), b.shape());
  Tensor out = make_result(
      "mul", a.shape(), {a, b}, [repeats, inner](Node& node) {
        Node& A = *node.parents[0];
        Node& B = *node.parents[1];
        for (std::size_t r = 0; r < repeats; ++r)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = r * inner + i;
            A.grad[k] += node.grad[k] * B.data[i];
            B.grad[i] += node.grad[k] * A.data[k];
          }
      });
  for (std::size_t r = 0; r < repeats; ++r)
    for (std::size_t i = 0; i < inner; ++i)
      out.data()[r * inner + i] = a.data()[r * inner + i] * b.data()[i];
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_finite("div", a);
  check_finite("div", b);
  const bool scalar_b = b.size() == 1;
  if (!scalar_b && a.shape() != b.shape()) shape_error("div", a.shape(), b.shape());
  Tensor out = make_result(
      "div", a.shape(), {a, b}, [scalar_b](Node& node) {
        Node& A = *node.parents[0];
        Node& B = *node.parents[1];
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          const std::size_t bi = scalar_b ? 0 : i;
          A.grad[i] += node.grad[i] / B.data[bi];
          B.grad[bi] -= node.grad[i] * A.data[i] / (B.data[bi] * B.data[bi]);
        }
      });
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] / b.data()[scalar_b ? 0 : i];
  return out;
}

Tensor affine(const Tensor& a, double c, double d) {
  Tensor out = make_result("affine", a.shape(), {a}, [c](Node& node) {
    Node& A = *node.parents[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      A.grad[i] += c * node.grad[i];
  });
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = c * a.data()[i] + d;
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (n != a.size()) shape_error("reshape", a.shape(), shape);
  Tensor out = make_result("reshape", std::move(shape), {a}, [](Node& node) {
    Node& A = *node.parents[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i) A.grad[i] += node.grad[i];
  });
  out.data() = a.data();
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("transpose: expects a 2-D tensor, got " +
                                shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  Tensor out = make_result("transpose", {n, m}, {a}, [m, n](Node& node) {
    Node& A = *node.parents[0];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        A.grad[j * n + i] += node.grad[i * m + j];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[j * m + i] = a.data()[i * n + j];
  return out;
}

namespace {

/// Axis geometry: outer * axis_len * inner decomposition.
void axis_dims(const std::vector<int>& shape, int axis, std::size_t* outer,
               std::size_t* axis_len, std::size_t* inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= shape[i];
  *axis_len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) *inner *= shape[i];
}

}  // namespace

Tensor slice(const Tensor& a, int axis, int start, int len) {
  if (axis < 0 || axis >= static_cast<int>(a.shape().size()) || start < 0 ||
      len <= 0 || start + len > a.shape()[axis])
    throw std::invalid_argument("slice: indices out of range for shape " +
                                shape_str(a.shape()));
  std::size_t outer, alen, inner;
  axis_dims(a.shape(), axis, &outer, &alen, &inner);
  std::vector<int> shape = a.shape();
  shape[axis] = len;
  Tensor out = make_result(
      "slice", std::move(shape), {a},
      [outer, alen, inner, start, len](Node& node) {
        Node& A = *node.parents[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (int k = 0; k < len; ++k)
            for (std::size_t i = 0; i < inner; ++i)
              A.grad[(o * alen + start + k) * inner + i] +=
                  node.grad[(o * len + k) * inner + i];
      });
  for (std::size_t o = 0; o < outer; ++o)
    for (int k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out.data()[(o * len + k) * inner + i] =
            a.data()[(o * alen + start + k) * inner + i];
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.shape().size() != b.shape().size())
    shape_error("concat", a.shape(), b.shape());
  for (std::size_t i = 0; i < a.shape().size(); ++i)
    if (static_cast<int>(i) != axis && a.shape()[i] != b.shape()[i])
      shape_error("concat", a.shape(), b.shape());
  std::size_t outer, la, inner, lb, dummy;
  axis_dims(a.shape(), axis, &outer, &la, &inner);
  axis_dims(b.shape(), axis, &dummy, &lb, &dummy);
  std::vector<int> shape = a.shape();
  shape[axis] += b.shape()[axis];
  const std::size_t lo = la + lb;
  Tensor out = make_result(
      "concat", std::move(shape), {a, b},
      [outer, la, lb, lo, inner](Node& node) {
        Node& A = *node.parents[0];
        Node& B = *node.parents[1];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t k = 0; k < la; ++k)
            for (std::size_t i = 0; i < inner; ++i)
              A.grad[(o * la + k) * inner + i] += node.grad[(o * lo + k) * inner + i];
          for (std::size_t k = 0; k < lb; ++k)
            for (std::size_t i = 0; i < inner; ++i)
              B.grad[(o * lb + k) * inner + i] +=
                  node.grad[(o * lo + la + k) * inner + i];
        }
      });
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < la; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out.data()[(o * lo + k) * inner + i] = a.data()[(o * la + k) * inner + i];
    for (std::size_t k = 0; k < lb; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out.data()[(o * lo + la + k) * inner + i] =
            b.data()[(o * lb + k) * inner + i];
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("gather_rows: expects a 2-D tensor");
  const int rows = a.shape()[0], cols = a.shape()[1];
  for (int idx : indices)
    if (idx < 0 || idx >= rows)
      throw std::invalid_argument("gather_rows: index out of range");
  Tensor out = make_result(
      "gather_rows", {static_cast<int>(indices.size()), cols}, {a},
      [indices, cols](Node& node) {
        Node& A = *node.parents[0];
        for (std::size_t r = 0; r < indices.size(); ++r)
          for (int c = 0; c < cols; ++c)
            A.grad[indices[r] * cols + c] += node.grad[r * cols + c];
      });
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (int c = 0; c < cols; ++c)
      out.data()[r * cols + c] = a.data()[indices[r] * cols + c];
  return out;
}

Tensor replace_rows(const Tensor& a, const std::vector<int>& indices,
                    const Tensor& row) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("replace_rows: expects a 2-D tensor");
  const int rows = a.shape()[0], cols = a.shape()[1];
  if (static_cast<int>(row.size()) != cols)
    shape_error("replace_rows", a.shape(), row.shape());
  std::vector<std::uint8_t> replaced(rows, 0);
  for (int idx : indices) {
    if (idx < 0 || idx >= rows)
      throw std::invalid_argument("replace_rows: index out of range");
    replaced[idx] = 1;
  }
  Tensor out = make_result(
      "replace_rows", a.shape(), {a, row},
      [replaced, rows, cols](Node& node) {
        Node& A = *node.parents[0];
        Node& R = *node.parents[1];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            if (replaced[r])
              R.grad[c] += node.grad[r * cols + c];
            else
              A.grad[r * cols + c] += node.grad[r * cols + c];
          }
      });
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.data()[r * cols + c] =
          replaced[r] ? row.data()[c] : a.data()[r * cols + c];
  return out;
}

Tensor softmax(const Tensor& a) {
  check_finite("softmax", a);
  const int n = a.shape().back();
  const std::size_t rows = a.size() / n;
  Tensor out = make_result("softmax", a.shape(), {a}, [rows, n](Node& node) {
    Node& A = *node.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = node.data.data() + r * n;
      const double* gy = node.grad.data() + r * n;
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += gy[i] * y[i];
      for (int i = 0; i < n; ++i) A.grad[r * n + i] += y[i] * (gy[i] - dot);
    }
  });
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data().data() + r * n;
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (y[i] = std::exp(x[i] - mx));
    for (int i = 0; i < n; ++i) y[i] /= s;
  }
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  check_finite("layer_norm", a);
  const int n = a.shape().back();
  if (static_cast<int>(gamma.size()) != n || static_cast<int>(beta.size()) != n)
    shape_error("layer_norm", a.shape(), gamma.shape());
  const std::size_t rows = a.size() / n;
  Tensor out = make_result(
      "layer_norm", a.shape(), {a, gamma, beta}, [rows, n, eps](Node& node) {
        Node& A = *node.parents[0];
        Node& G = *node.parents[1];
        Node& B = *node.parents[2];
        for (std::size_t r = 0; r < rows; ++r) {
          const double* x = A.data.data() + r * n;
          const double* gy = node.grad.data() + r * n;
          double mu = 0.0;
          for (int i = 0; i < n; ++i) mu += x[i];
          mu /= n;
          double var = 0.0;
          for (int i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
          var /= n;
          const double inv = 1.0 / std::sqrt(var + eps);
          double sum_g = 0.0, sum_gx = 0.0;
          for (int i = 0; i < n; ++i) {
            const double xhat = (x[i] - mu) * inv;
            const double gl = gy[i] * G.data[i];
            sum_g += gl;
            sum_gx += gl * xhat;
            G.grad[i] += gy[i] * xhat;
            B.grad[i] += gy[i];
          }
          for (int i = 0; i < n; ++i) {
            const double xhat = (x[i] - mu) * inv;
            const double gl = gy[i] * G.data[i];
            A.grad[r * n + i] += inv * (gl - sum_g / n - xhat * sum_gx / n);
          }
        }
      });
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data().data() + r * n;
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += x[i];
    mu /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < n; ++i)
      y[i] = (x[i] - mu) * inv * gamma.data()[i] + beta.data()[i];
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  check_finite("gelu", a);
  static const double inv_sqrt2 = 0.7071067811865476;
  static const double inv_sqrt2pi = 0.3989422804014327;
  Tensor out = make_result("gelu", a.shape(), {a}, [](Node& node) {
    Node& A = *node.parents[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const double x = A.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      A.grad[i] += node.grad[i] * (cdf + x * pdf);
    }
  });
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    out.data()[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  check_finite("sigmoid", a);
  Tensor out = make_result("sigmoid", a.shape(), {a}, [](Node& node) {
    Node& A = *node.parents[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const double y = node.data[i];
      A.grad[i] += node.grad[i] * y * (1.0 - y);
    }
  });
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return out;
}

Tensor abs(const Tensor& a) {
  Tensor out = make_result("abs", a.shape(), {a}, [](Node& node) {
    Node& A = *node.parents[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const double s = A.data[i] > 0.0 ? 1.0 : (A.data[i] < 0.0 ? -1.0 : 0.0);
      A.grad[i] += node.grad[i] * s;
    }
  });
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::fabs(a.data()[i]);
  return out;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  Tensor out = make_result("mean", {1}, {a}, [n](Node& node) {
    Node& A = *node.parents[0];
    const double g = node.grad[0] / n;
    for (std::size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += g;
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s / n;
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_result("sum", {1}, {a}, [](Node& node) {
    Node& A = *node.parents[0];
    for (std::size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += node.grad[0];
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s;
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    shape_error("mse_loss", pred.shape(), target.shape());
  const double n = static_cast<double>(pred.size());
  Tensor out = make_result("mse_loss", {1}, {pred, target}, [n](Node& node) {
    Node& P = *node.parents[0];
    Node& T = *node.parents[1];
    const double g = 2.0 * node.grad[0] / n;
    for (std::size_t i = 0; i < P.grad.size(); ++i) {
      const double d = P.data[i] - T.data[i];
      P.grad[i] += g * d;
      T.grad[i] -= g * d;
    }
  });
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  out.data()[0] = s / n;
  return out;
}

}  // namespace topo::ad
