#pragma once

// Dense float64 tensors with a reverse-mode tape.
//
// Tensors are cheap shared handles. A Tape records every op whose output
// depends on a tensor with requires_grad set, and Tape::backward replays the
// records in reverse. Gradients accumulate into the storage of each tensor,
// so parameters that outlive a tape collect gradients across several tapes
// until zero_grad() is called.
//
// Shapes: rank 0 (scalar), rank 1 (vector) and rank 2 (row-major matrix).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mwpgen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

struct TensorStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : s_(std::make_shared<TensorStorage>()) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(shape));
    }
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_size(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({}, {v}, requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? s_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : s_->shape.back(); }

  std::span<const double> values() const { return s_->value; }
  std::span<double> mutable_values() { return s_->value; }
  double operator[](std::size_t i) const { return s_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return s_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return s_->value[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  // Zero-filled view when no gradient has reached this tensor yet.
  std::span<const double> grad() const {
    ensure_grad();
    return s_->grad;
  }
  // Tensors are handles: gradient buffers are writable through const handles.
  std::span<double> mutable_grad() const {
    ensure_grad();
    return s_->grad;
  }
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

  bool same(const Tensor& other) const { return s_ == other.s_; }

  Tensor detach() const { return Tensor(shape(), s_->value, false); }

 private:
  void ensure_grad() const {
    if (s_->grad.size() != s_->value.size()) s_->grad.assign(s_->value.size(), 0.0);
  }

  std::shared_ptr<TensorStorage> s_;
};

class Tape {
 public:
  enum class Mode { kRecord, kInference };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return records_.size(); }

  // ---- linear algebra -----------------------------------------------------

  // [m,k]x[k,n] -> [m,n]; [k]x[k,n] -> [n]; [m,k]x[k] -> [m].
  Tensor matmul(const Tensor& a, const Tensor& b) {
    std::size_t m = 0, k = 0, n = 0;
    Shape out_shape;
    if (a.rank() == 2 && b.rank() == 2) {
      m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
      if (b.shape()[0] != k) mismatch("matmul", a, b);
      out_shape = {m, n};
    } else if (a.rank() == 1 && b.rank() == 2) {
      m = 1, k = a.shape()[0], n = b.shape()[1];
      if (b.shape()[0] != k) mismatch("matmul", a, b);
      out_shape = {n};
    } else if (a.rank() == 2 && b.rank() == 1) {
      m = a.shape()[0], k = a.shape()[1], n = 1;
      if (b.shape()[0] != k) mismatch("matmul", a, b);
      out_shape = {m};
    } else {
      mismatch("matmul", a, b);
    }
    std::vector<double> out(m * n, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = &bv[p * n];
        double* orow = &out[i * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
    return record("matmul", Tensor(std::move(out_shape), std::move(out)), {a, b},
                  [a, b, m, k, n](const Tensor& o) {
                    auto go = o.grad();
                    if (a.requires_grad()) {
                      auto ga = a.mutable_grad();
                      auto bv = b.values();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * bv[p * n + j];
                          ga[i * k + p] += acc;
                        }
                    }
                    if (b.requires_grad()) {
                      auto gb = b.mutable_grad();
                      auto av = a.values();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = av[i * k + p];
                          if (aip == 0.0) continue;
                          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
                        }
                    }
                  });
  }

  Tensor dot(const Tensor& a, const Tensor& b) {
    same_shape("dot", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return record("dot", Tensor::scalar(acc), {a, b}, [a, b](const Tensor& o) {
      const double g = o.grad()[0];
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * a[i];
      }
    });
  }

  // ---- elementwise binary -------------------------------------------------

  Tensor add(const Tensor& a, const Tensor& b) {
    same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return record("add", Tensor(a.shape(), std::move(out)), {a, b},
                  [a, b](const Tensor& o) {
                    auto go = o.grad();
                    accumulate(a, go, 1.0);
                    accumulate(b, go, 1.0);
                  });
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return record("sub", Tensor(a.shape(), std::move(out)), {a, b},
                  [a, b](const Tensor& o) {
                    auto go = o.grad();
                    accumulate(a, go, 1.0);
                    accumulate(b, go, -1.0);
                  });
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    same_shape("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return record("mul", Tensor(a.shape(), std::move(out)), {a, b},
                  [a, b](const Tensor& o) {
                    auto go = o.grad();
                    if (a.requires_grad()) {
                      auto ga = a.mutable_grad();
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * b[i];
                    }
                    if (b.requires_grad()) {
                      auto gb = b.mutable_grad();
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * a[i];
                    }
                  });
  }

  // The only broadcast: add a vector to every row of a matrix (or to a vector).
  Tensor add_bias(const Tensor& m, const Tensor& bias) {
    if (bias.rank() != 1 || m.rank() == 0 || m.cols() != bias.size()) mismatch("add_bias", m, bias);
    const std::size_t r = m.rows(), c = m.cols();
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m[i * c + j] + bias[j];
    return record("add_bias", Tensor(m.shape(), std::move(out)), {m, bias},
                  [m, bias, r, c](const Tensor& o) {
                    auto go = o.grad();
                    accumulate(m, go, 1.0);
                    if (bias.requires_grad()) {
                      auto gb = bias.mutable_grad();
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
                    }
                  });
  }

  // Every entry of `a` times the single value held by `s`.
  Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("scale_by needs a one-element factor, got " + shape_string(s.shape()));
    const double f = s[0];
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * f;
    return record("scale_by", Tensor(a.shape(), std::move(out)), {a, s}, [a, s, f](const Tensor& o) {
      auto go = o.grad();
      accumulate(a, go, f);
      if (s.requires_grad()) {
        double g = 0.0;
        for (std::size_t i = 0; i < go.size(); ++i) g += go[i] * a[i];
        s.mutable_grad()[0] += g;
      }
    });
  }

  // ---- elementwise unary --------------------------------------------------

  Tensor scale(const Tensor& a, double factor) {
    return unary("scale", a, [factor](double x) { return factor * x; },
                 [factor](double, double) { return factor; });
  }

  Tensor add_scalar(const Tensor& a, double shift) {
    return unary("add_scalar", a, [shift](double x) { return x + shift; },
                 [](double, double) { return 1.0; });
  }

  // 1 - a
  Tensor one_minus(const Tensor& a) {
    return unary("one_minus", a, [](double x) { return 1.0 - x; },
                 [](double, double) { return -1.0; });
  }

  Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a,
        [](double x) {
          if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
          const double e = std::exp(x);
          return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
  }

  Tensor tanh(const Tensor& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
  }

  Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
  }

  Tensor log(const Tensor& a) {
    return unary("log", a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
  }

  Tensor square(const Tensor& a) {
    return unary("square", a, [](double x) { return x * x; },
                 [](double x, double) { return 2.0 * x; });
  }

  Tensor leaky_relu(const Tensor& a, double slope = 0.2) {
    return unary("leaky_relu", a, [slope](double x) { return x > 0 ? x : slope * x; },
                 [slope](double x, double) { return x > 0 ? 1.0 : slope; });
  }

  Tensor elu(const Tensor& a) {
    return unary("elu", a, [](double x) { return x > 0 ? x : std::expm1(x); },
                 [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
  }

  // log(sigmoid(x)), stable for large |x|.
  Tensor log_sigmoid(const Tensor& a) {
    return unary(
        "log_sigmoid", a,
        [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); },
        [](double x, double) {
          return x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
        });
  }

  // ---- reductions and normalizers ----------------------------------------

  Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    return record("sum", Tensor::scalar(acc), {a}, [a](const Tensor& o) {
      if (!a.requires_grad()) return;
      const double g = o.grad()[0];
      for (double& x : a.mutable_grad()) x += g;
    });
  }

  // Softmax over a vector, or over each row of a matrix. Max-subtracted.
  Tensor softmax(const Tensor& a) {
    if (a.rank() == 0) throw ShapeError("softmax of a scalar");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = &a.values()[i * c];
      const double mx = *std::max_element(row, row + c);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
    }
    return record("softmax", Tensor(a.shape(), std::move(out)), {a},
                  [a, r, c](const Tensor& o) {
                    if (!a.requires_grad()) return;
                    auto go = o.grad();
                    auto y = o.values();
                    auto ga = a.mutable_grad();
                    for (std::size_t i = 0; i < r; ++i) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < c; ++j) s += go[i * c + j] * y[i * c + j];
                      for (std::size_t j = 0; j < c; ++j)
                        ga[i * c + j] += y[i * c + j] * (go[i * c + j] - s);
                    }
                  });
  }

  Tensor log_softmax(const Tensor& a) {
    if (a.rank() == 0) throw ShapeError("log_softmax of a scalar");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = &a.values()[i * c];
      const double mx = *std::max_element(row, row + c);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
    }
    return record("log_softmax", Tensor(a.shape(), std::move(out)), {a},
                  [a, r, c](const Tensor& o) {
                    if (!a.requires_grad()) return;
                    auto go = o.grad();
                    auto y = o.values();
                    auto ga = a.mutable_grad();
                    for (std::size_t i = 0; i < r; ++i) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < c; ++j) s += go[i * c + j];
                      for (std::size_t j = 0; j < c; ++j)
                        ga[i * c + j] += go[i * c + j] - std::exp(y[i * c + j]) * s;
                    }
                  });
  }

  // Column-wise max over the rows of a matrix ("max-pool over time").
  // Ties go to the lowest row index.
  Tensor max_pool_rows(const Tensor& m) {
    if (m.rank() != 2 || m.rows() == 0) throw ShapeError("max_pool_rows needs a nonempty matrix");
    const std::size_t r = m.rows(), c = m.cols();
    std::vector<double> out(c);
    std::vector<std::size_t> arg(c, 0);
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = m[j];
      for (std::size_t i = 1; i < r; ++i)
        if (m[i * c + j] > out[j]) out[j] = m[i * c + j], arg[j] = i;
    }
    return record("max_pool_rows", Tensor::vector(std::move(out)), {m},
                  [m, arg = std::move(arg), c](const Tensor& o) {
                    if (!m.requires_grad()) return;
                    auto go = o.grad();
                    auto gm = m.mutable_grad();
                    for (std::size_t j = 0; j < c; ++j) gm[arg[j] * c + j] += go[j];
                  });
  }

  // ---- structural ---------------------------------------------------------

  // Concatenate vectors (scalars count as length one) end to end.
  Tensor concat(std::span<const Tensor> parts) {
    std::vector<double> out;
    for (const auto& p : parts) {
      if (p.rank() > 1) throw ShapeError("concat expects vectors, got " + shape_string(p.shape()));
      out.insert(out.end(), p.values().begin(), p.values().end());
    }
    std::vector<Tensor> in(parts.begin(), parts.end());
    return record("concat", Tensor::vector(std::move(out)), in,
                  [in](const Tensor& o) {
                    auto go = o.grad();
                    std::size_t off = 0;
                    for (auto& p : in) {
                      if (p.requires_grad()) {
                        auto gp = p.mutable_grad();
                        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[off + i];
                      }
                      off += p.size();
                    }
                  });
  }
  Tensor concat(std::initializer_list<Tensor> parts) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()));
  }

  // Stack matrices (and vectors, as single rows) on top of each other.
  Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
      if (p.rank() == 0 || p.cols() != c) throw ShapeError("concat_rows width mismatch");
      r += p.rows();
      out.insert(out.end(), p.values().begin(), p.values().end());
    }
    std::vector<Tensor> in(parts.begin(), parts.end());
    return record("concat_rows", Tensor::matrix(r, c, std::move(out)), in,
                  [in](const Tensor& o) {
                    auto go = o.grad();
                    std::size_t off = 0;
                    for (auto& p : in) {
                      if (p.requires_grad()) {
                        auto gp = p.mutable_grad();
                        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[off + i];
                      }
                      off += p.size();
                    }
                  });
  }
  Tensor concat_rows(std::initializer_list<Tensor> parts) {
    return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
  }

  // Rows of a table (embedding lookup). Result is [ids.size(), cols].
  Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
    if (table.rank() != 2) throw ShapeError("gather_rows needs a matrix");
    const std::size_t c = table.cols();
    std::vector<double> out(ids.size() * c);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= table.rows())
        throw ShapeError("row index " + std::to_string(ids[i]) + " out of range " +
                         shape_string(table.shape()));
      std::copy_n(&table.values()[ids[i] * c], c, &out[i * c]);
    }
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return record("gather_rows", Tensor::matrix(ids.size(), c, std::move(out)), {table},
                  [table, idx = std::move(idx), c](const Tensor& o) {
                    if (!table.requires_grad()) return;
                    auto go = o.grad();
                    auto gt = table.mutable_grad();
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += go[i * c + j];
                  });
  }

  // A single row as a vector.
  Tensor row(const Tensor& table, std::size_t id) {
    if (table.rank() != 2) throw ShapeError("row needs a matrix");
    if (id >= table.rows())
      throw ShapeError("row index " + std::to_string(id) + " out of range " +
                       shape_string(table.shape()));
    const std::size_t c = table.cols();
    std::vector<double> out(table.values().begin() + id * c, table.values().begin() + (id + 1) * c);
    return record("row", Tensor::vector(std::move(out)), {table},
                  [table, id, c](const Tensor& o) {
                    if (!table.requires_grad()) return;
                    auto go = o.grad();
                    auto gt = table.mutable_grad();
                    for (std::size_t j = 0; j < c; ++j) gt[id * c + j] += go[j];
                  });
  }

  Tensor embedding(const Tensor& table, std::size_t id) { return row(table, id); }

  // Same values under a new shape of equal size.
  Tensor reshape(const Tensor& t, Shape shape) {
    if (shape_size(shape) != t.size())
      throw ShapeError("reshape " + shape_string(t.shape()) + " to " + shape_string(shape));
    std::vector<double> v(t.values().begin(), t.values().end());
    return record("reshape", Tensor(std::move(shape), std::move(v)), {t}, [t](const Tensor& o) {
      accumulate(t, o.grad(), 1.0);
    });
  }

  Tensor slice(const Tensor& v, std::size_t begin, std::size_t length) {
    if (v.rank() != 1 || begin + length > v.size())
      throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(begin + length) +
                       ") out of " + shape_string(v.shape()));
    std::vector<double> out(v.values().begin() + begin, v.values().begin() + begin + length);
    return record("slice", Tensor::vector(std::move(out)), {v},
                  [v, begin, length](const Tensor& o) {
                    if (!v.requires_grad()) return;
                    auto go = o.grad();
                    auto gv = v.mutable_grad();
                    for (std::size_t i = 0; i < length; ++i) gv[begin + i] += go[i];
                  });
  }

  // Entries of a vector at the given positions.
  Tensor gather(const Tensor& v, std::span<const std::size_t> index) {
    if (v.rank() != 1) throw ShapeError("gather expects a vector");
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= v.size()) throw ShapeError("gather index out of range");
      out[i] = v[index[i]];
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return record("gather", Tensor::vector(std::move(out)), {v}, [v, idx = std::move(idx)](const Tensor& o) {
      if (!v.requires_grad()) return;
      auto go = o.grad();
      auto gv = v.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) gv[idx[i]] += go[i];
    });
  }

  Tensor pick(const Tensor& v, std::size_t index) {
    if (index >= v.size()) throw ShapeError("pick index out of range");
    return record("pick", Tensor::scalar(v[index]), {v}, [v, index](const Tensor& o) {
      if (v.requires_grad()) v.mutable_grad()[index] += o.grad()[0];
    });
  }

  // out[index[i]] += v[i], out has `size` entries.
  Tensor scatter_add(const Tensor& v, std::span<const std::size_t> index, std::size_t size) {
    if (v.rank() != 1 || index.size() != v.size()) throw ShapeError("scatter_add index length");
    std::vector<double> out(size, 0.0);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= size) throw ShapeError("scatter_add target out of range");
      out[index[i]] += v[i];
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return record("scatter_add", Tensor::vector(std::move(out)), {v},
                  [v, idx = std::move(idx)](const Tensor& o) {
                    if (!v.requires_grad()) return;
                    auto go = o.grad();
                    auto gv = v.mutable_grad();
                    for (std::size_t i = 0; i < idx.size(); ++i) gv[i] += go[idx[i]];
                  });
  }

  // Sliding windows of `width` rows, flattened: [L, c] -> [L-width+1, width*c].
  // Composed with matmul this is a 1-D convolution.
  Tensor unfold(const Tensor& m, std::size_t width) {
    if (m.rank() != 2 || width == 0 || m.rows() < width)
      throw ShapeError("unfold width " + std::to_string(width) + " on " + shape_string(m.shape()));
    const std::size_t c = m.cols(), n = m.rows() - width + 1;
    std::vector<double> out(n * width * c);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(&m.values()[i * c], width * c, &out[i * width * c]);
    return record("unfold", Tensor::matrix(n, width * c, std::move(out)), {m},
                  [m, width, c, n](const Tensor& o) {
                    if (!m.requires_grad()) return;
                    auto go = o.grad();
                    auto gm = m.mutable_grad();
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < width * c; ++j) gm[i * c + j] += go[i * width * c + j];
                  });
  }

  // ---- dispatch by name ---------------------------------------------------

  Tensor apply(std::string_view name, std::span<const Tensor> in) {
    auto need = [&](std::size_t n) {
      if (in.size() != n)
        throw ShapeError(std::string(name) + " takes " + std::to_string(n) + " inputs");
    };
    if (name == "matmul") return need(2), matmul(in[0], in[1]);
    if (name == "add") return need(2), add(in[0], in[1]);
    if (name == "sub") return need(2), sub(in[0], in[1]);
    if (name == "mul") return need(2), mul(in[0], in[1]);
    if (name == "dot") return need(2), dot(in[0], in[1]);
    if (name == "add_bias") return need(2), add_bias(in[0], in[1]);
    if (name == "scale_by") return need(2), scale_by(in[0], in[1]);
    if (name == "sigmoid") return need(1), sigmoid(in[0]);
    if (name == "tanh") return need(1), tanh(in[0]);
    if (name == "exp") return need(1), exp(in[0]);
    if (name == "log") return need(1), log(in[0]);
    if (name == "square") return need(1), square(in[0]);
    if (name == "elu") return need(1), elu(in[0]);
    if (name == "leaky_relu") return need(1), leaky_relu(in[0]);
    if (name == "softmax") return need(1), softmax(in[0]);
    if (name == "log_softmax") return need(1), log_softmax(in[0]);
    if (name == "log_sigmoid") return need(1), log_sigmoid(in[0]);
    if (name == "sum") return need(1), sum(in[0]);
    if (name == "max_pool_rows") return need(1), max_pool_rows(in[0]);
    if (name == "one_minus") return need(1), one_minus(in[0]);
    if (name == "concat") return concat(in);
    if (name == "concat_rows") return concat_rows(in);
    throw Error("unknown op '" + std::string(name) + "'");
  }

  // ---- reverse pass -------------------------------------------------------

  void backward(const Tensor& loss) {
    if (consumed_) throw TapeError("tape already consumed");
    if (!loss.defined() || loss.size() != 1)
      throw TapeError("backward needs a scalar loss, got " +
                      (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    if (!loss.requires_grad() || records_.empty() || !records_.back().output.same(loss)) {
      bool found = false;
      for (const auto& r : records_) found = found || r.output.same(loss);
      if (!found) throw TapeError("loss was not produced on this tape");
    }
    loss.mutable_grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward(it->output);
    records_.clear();
    consumed_ = true;
  }

 private:
  struct Record {
    std::string_view name;
    Tensor output;
    std::function<void(const Tensor&)> backward;
  };

  static void accumulate(const Tensor& t, std::span<const double> g, double factor) {
    if (!t.requires_grad()) return;
    auto gt = t.mutable_grad();
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += factor * g[i];
  }

  [[noreturn]] static void mismatch(std::string_view op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  static void same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) mismatch(op, a, b);
  }

  template <typename F, typename DF>
  Tensor unary(std::string_view name, const Tensor& a, F f, DF df) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
    return record(name, Tensor(a.shape(), std::move(out)), {a}, [a, df](const Tensor& o) {
      if (!a.requires_grad()) return;
      auto go = o.grad();
      auto y = o.values();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * df(a[i], y[i]);
    });
  }

  template <typename Backward>
  Tensor record(std::string_view name, Tensor out, std::span<const Tensor> inputs,
                Backward&& backward) {
    for (double v : out.values())
      if (!std::isfinite(v)) throw NumericError(std::string(name) + " produced a non-finite value");
    if (!recording()) return out;
    if (consumed_) throw TapeError("tape already consumed");
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (!needs) return out;
    out.set_requires_grad(true);
    records_.push_back({name, out, std::forward<Backward>(backward)});
    return out;
  }
  template <typename Backward>
  Tensor record(std::string_view name, Tensor out, std::initializer_list<Tensor> inputs,
                Backward&& backward) {
    return record(name, std::move(out), std::span<const Tensor>(inputs.begin(), inputs.size()),
                  std::forward<Backward>(backward));
  }
  template <typename Backward>
  Tensor record(std::string_view name, Tensor out, const std::vector<Tensor>& inputs,
                Backward&& backward) {
    return record(name, std::move(out), std::span<const Tensor>(inputs),
                  std::forward<Backward>(backward));
  }

  Mode mode_;
  bool consumed_ = false;
  std::vector<Record> records_;
};

// ---- gradient checking -----------------------------------------------------

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

using LossFn = std::function<Tensor(Tape&)>;

// Max relative error between the tape gradient of `loss` and central finite
// differences, taken over every coordinate of every tensor in `wrt`. The
// tensors are perturbed in place and restored.
inline double grad_check(const LossFn& loss, std::span<Tensor> wrt, double eps = 1e-5) {
  auto evaluate = [&] {
    Tape tape(Tape::Mode::kInference);
    return loss(tape).item();
  };
  const double first = evaluate();
  const double second = evaluate();
  if (first != second) throw NumericError("grad_check: loss is not deterministic");

  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.mutable_grad();
    t.zero_grad();
  }
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  double worst = 0.0;
  for (auto& t : wrt) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

// Single-input form: f maps a leaf tensor to a scalar.
inline double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& point,
                         double eps = 1e-5) {
  Tensor x(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
  std::vector<Tensor> wrt{x};
  return grad_check([&](Tape& tape) { return f(tape, x); }, wrt, eps);
}

}  // namespace mwpgen
