#include "tipsfuse/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::ad {

// ---------------------------------------------------------------------------
// Tensor

const Matrix& Tensor::value() const {
  if (tape_ == nullptr) throw StateError("Tensor: use of an unbound tensor");
  return tape_->value_of(id_);
}

bool Tensor::requires_grad() const { return tape_ != nullptr && tape_->requires_grad_of(id_); }

double Tensor::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ShapeError("Tensor::item: expected 1x1, got " + v.shape_string());
  }
  return v[0];
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::push(const char* op, Matrix value, bool requires_grad, BackwardFn fn) {
  const std::size_t bad = first_non_finite(value);
  if (bad != value.size()) {
    throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(bad) +
                       " (row " + std::to_string(bad / std::max<std::size_t>(1, value.cols())) +
                       ", col " + std::to_string(bad % std::max<std::size_t>(1, value.cols())) +
                       ")");
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Matrix value) { return push("constant", std::move(value), false, {}); }

Tensor Tape::variable(Matrix value) { return push("variable", std::move(value), true, {}); }

Tensor Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Tensor(this, it->second);
  }
  Tensor t = push(p.name.c_str(), p.value, true, {});
  nodes_[t.id()].param = &p;
  param_nodes_.emplace(&p, t.id());
  return t;
}

Tensor Tape::frozen(const Parameter& p) { return push(p.name.c_str(), p.value, false, {}); }

Tensor Tape::record(const char* op, Matrix value, std::initializer_list<Tensor> inputs,
                    BackwardFn fn) {
  return record(op, std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Tensor Tape::record(const char* op, Matrix value, std::span<const Tensor> inputs,
                    BackwardFn fn) {
  bool needs_grad = false;
  for (const Tensor& t : inputs) {
    if (t.tape() != this) {
      throw StateError(std::string(op) + ": input recorded on a different tape");
    }
    needs_grad = needs_grad || requires_grad_of(t.id());
  }
  return push(op, std::move(value), needs_grad, std::move(fn));
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    if (!g.same_shape(n.value)) {
      throw ShapeError("gradient shape " + g.shape_string() + " for value " +
                       n.value.shape_string());
    }
    n.grad = g;
    return;
  }
  if (!g.same_shape(n.grad)) {
    throw ShapeError("gradient shape " + g.shape_string() + " for value " + n.grad.shape_string());
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::accumulate_scaled(std::size_t id, const Matrix& g, double s) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  if (!g.same_shape(n.grad)) {
    throw ShapeError("gradient shape " + g.shape_string() + " for value " + n.grad.shape_string());
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += s * g[i];
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) throw StateError("backward: already called on this tape");
  if (loss.tape() != this) throw StateError("backward: loss is not on this tape");
  const Matrix& lv = value_of(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + lv.shape_string());
  }
  backward_done_ = true;
  if (!requires_grad_of(loss.id())) return;
  nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

Matrix Tape::grad(const Tensor& t) const {
  const Node& n = nodes_.at(t.id());
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

GradMap Tape::parameter_grads() const {
  GradMap out;
  for (const auto& [p, id] : param_nodes_) {
    const Node& n = nodes_[id];
    out.emplace(p, n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad);
  }
  return out;
}

GradMap Tape::parameter_grads(const ParamList& params) const {
  GradMap out;
  for (const Parameter* p : params) {
    auto it = param_nodes_.find(p);
    if (it == param_nodes_.end() || nodes_[it->second].grad.empty()) {
      out.emplace(p, Matrix(p->value.rows(), p->value.cols()));
    } else {
      out.emplace(p, nodes_[it->second].grad);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

enum class Bcast { kSame, kScalar, kRow, kCol };

Bcast broadcast_kind(const char* op, const Matrix& a, const Matrix& b) {
  if (a.same_shape(b)) return Bcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::kCol;
  throw ShapeError(std::string(op) + ": cannot broadcast " + b.shape_string() + " onto " +
                   a.shape_string());
}

inline double bval(const Matrix& b, Bcast k, std::size_t r, std::size_t c) {
  switch (k) {
    case Bcast::kSame:
      return b(r, c);
    case Bcast::kScalar:
      return b[0];
    case Bcast::kRow:
      return b(0, c);
    case Bcast::kCol:
      return b(r, 0);
  }
  return 0.0;
}

// Sums g down to the broadcast operand's shape.
Matrix reduce_to(const Matrix& g, Bcast k, std::size_t rows, std::size_t cols) {
  if (k == Bcast::kSame) return g;
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) {
      switch (k) {
        case Bcast::kScalar:
          out[0] += g(r, c);
          break;
        case Bcast::kRow:
          out(0, c) += g(r, c);
          break;
        case Bcast::kCol:
          out(r, 0) += g(r, c);
          break;
        case Bcast::kSame:
          break;
      }
    }
  return out;
}

Tape& tape_of(const char* op, const Tensor& a) {
  if (!a.valid()) throw StateError(std::string(op) + ": unbound tensor");
  return *a.tape();
}

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D dfdx_from_xy) {
  Tape& tape = tape_of(op, a);
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return tape.record(op, std::move(y), {a}, [ia, dfdx_from_xy](Tape& t, std::size_t self) {
    if (!t.requires_grad_of(ia)) return;
    const Matrix& g = t.grad_of(self);
    const Matrix& xv = t.value_of(ia);
    const Matrix& yv = t.value_of(self);
    Matrix gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * dfdx_from_xy(xv[i], yv[i]);
    t.accumulate(ia, gx);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of("matmul", a);
  Matrix out = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.requires_grad_of(ia)) t.accumulate(ia, matmul_nt(g, t.value_of(ib)));
    if (t.requires_grad_of(ib)) t.accumulate(ib, matmul_tn(t.value_of(ia), g));
  });
}

namespace {

Tensor add_sub(const char* op, const Tensor& a, const Tensor& b, double sign) {
  Tape& tape = tape_of(op, a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Bcast k = broadcast_kind(op, av, bv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) + sign * bval(bv, k, r, c);
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t br = bv.rows(), bc = bv.cols();
  return tape.record(op, std::move(out), {a, b},
                     [ia, ib, k, br, bc, sign](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       t.accumulate(ia, g);
                       if (t.requires_grad_of(ib)) {
                         t.accumulate_scaled(ib, reduce_to(g, k, br, bc), sign);
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_sub("add", a, b, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_sub("sub", a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of("mul", a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Bcast k = broadcast_kind("mul", av, bv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) * bval(bv, k, r, c);
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t br = bv.rows(), bc = bv.cols();
  return tape.record("mul", std::move(out), {a, b}, [ia, ib, k, br, bc](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& x = t.value_of(ia);
    const Matrix& y = t.value_of(ib);
    if (t.requires_grad_of(ia)) {
      Matrix ga(g.rows(), g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g(r, c) * bval(y, k, r, c);
      t.accumulate(ia, ga);
    }
    if (t.requires_grad_of(ib)) {
      Matrix gx(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * x[i];
      t.accumulate(ib, reduce_to(gx, k, br, bc));
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& tape = tape_of("concat_rows", parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + p.value().shape_string() + " vs " +
                       std::to_string(cols) + " columns");
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t r0 = 0;
  for (const Tensor& p : parts) {
    const Matrix& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + r0 * cols);
    ids.push_back(p.id());
    offsets.push_back(r0);
    r0 += v.rows();
  }
  return tape.record("concat_rows", std::move(out), parts,
                     [ids, offsets, cols](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad_of(ids[k])) continue;
                         const std::size_t nr = t.value_of(ids[k]).rows();
                         Matrix gp(nr, cols);
                         std::copy(g.values().begin() + offsets[k] * cols,
                                   g.values().begin() + (offsets[k] + nr) * cols,
                                   gp.values().begin());
                         t.accumulate(ids[k], gp);
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& tape = tape_of("concat_cols", parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + p.value().shape_string() + " vs " +
                       std::to_string(rows) + " rows");
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t c0 = 0;
  for (const Tensor& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, c0 + c) = v(r, c);
    ids.push_back(p.id());
    offsets.push_back(c0);
    c0 += v.cols();
  }
  return tape.record("concat_cols", std::move(out), parts,
                     [ids, offsets](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad_of(ids[k])) continue;
                         const Matrix& v = t.value_of(ids[k]);
                         Matrix gp(v.rows(), v.cols());
                         for (std::size_t r = 0; r < v.rows(); ++r)
                           for (std::size_t c = 0; c < v.cols(); ++c)
                             gp(r, c) = g(r, offsets[k] + c);
                         t.accumulate(ids[k], gp);
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  Tape& tape = tape_of("transpose", a);
  const std::size_t ia = a.id();
  return tape.record("transpose", a.value().transposed(), {a}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad_of(self).transposed());
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  Tape& tape = tape_of("slice_rows", a);
  const Matrix& v = a.value();
  if (count == 0 || begin + count > v.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") of " + v.shape_string());
  }
  const std::size_t cols = v.cols();
  Matrix out(count, cols);
  std::copy(v.values().begin() + begin * cols, v.values().begin() + (begin + count) * cols,
            out.values().begin());
  const std::size_t ia = a.id();
  const std::size_t nrows = v.rows();
  return tape.record("slice_rows", std::move(out), {a},
                     [ia, begin, count, cols, nrows](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       Matrix ga(nrows, cols);
                       std::copy(g.values().begin(), g.values().end(),
                                 ga.values().begin() + begin * cols);
                       t.accumulate(ia, ga);
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  Tape& tape = tape_of("slice_cols", a);
  const Matrix& v = a.value();
  if (count == 0 || begin + count > v.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") of " + v.shape_string());
  }
  Matrix out(v.rows(), count);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = v(r, begin + c);
  const std::size_t ia = a.id();
  const std::size_t nrows = v.rows(), ncols = v.cols();
  return tape.record("slice_cols", std::move(out), {a},
                     [ia, begin, count, nrows, ncols](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       Matrix ga(nrows, ncols);
                       for (std::size_t r = 0; r < nrows; ++r)
                         for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) = g(r, c);
                       t.accumulate(ia, ga);
                     });
}

Tensor row_softmax(const Tensor& a) {
  Tape& tape = tape_of("row_softmax", a);
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    const double m = *std::max_element(xr.begin(), xr.end());
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      y(r, c) = std::exp(xr[c] - m);
      s += y(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) /= s;
  }
  const std::size_t ia = a.id();
  return tape.record("row_softmax", std::move(y), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& yv = t.value_of(self);
    Matrix gx(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * yv(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) = yv(r, c) * (g(r, c) - dot);
    }
    t.accumulate(ia, gx);
  });
}

Tensor selu(const Tensor& a) {
  return unary(
      "selu", a,
      [](double x) { return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x); },
      [](double x, double) {
        return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_clamped(const Tensor& a) {
  static constexpr double kFloor = 1e-12;
  return unary(
      "log", a, [](double x) { return std::log(std::max(x, kFloor)); },
      [](double x, double) { return x > kFloor ? 1.0 / x : 0.0; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor sum_all(const Tensor& a) {
  Tape& tape = tape_of("sum_all", a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return tape.record("sum_all", Matrix(1, 1, s), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.value_of(ia);
    t.accumulate(ia, Matrix(x.rows(), x.cols(), t.grad_of(self)[0]));
  });
}

Tensor mean_all(const Tensor& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / n);
}

Tensor l2_row_norms(const Tensor& a) {
  Tape& tape = tape_of("l2_row_norms", a);
  const Matrix& x = a.value();
  Matrix n(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    n(r, 0) = std::sqrt(s);
  }
  const std::size_t ia = a.id();
  return tape.record("l2_row_norms", std::move(n), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& xv = t.value_of(ia);
    const Matrix& nv = t.value_of(self);
    Matrix gx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      if (nv(r, 0) == 0.0) continue;
      for (std::size_t c = 0; c < xv.cols(); ++c) gx(r, c) = g(r, 0) * xv(r, c) / nv(r, 0);
    }
    t.accumulate(ia, gx);
  });
}

Tensor normalize_rows(const Tensor& a) {
  static constexpr double kMinNorm = 1e-12;
  Tape& tape = tape_of("normalize_rows", a);
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    norms[r] = std::sqrt(s);
    if (norms[r] < kMinNorm) continue;
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) / norms[r];
  }
  const std::size_t ia = a.id();
  return tape.record("normalize_rows", std::move(y), {a},
                     [ia, norms = std::move(norms)](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       const Matrix& yv = t.value_of(self);
                       Matrix gx(g.rows(), g.cols());
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         if (norms[r] < kMinNorm) continue;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * yv(r, c);
                         for (std::size_t c = 0; c < g.cols(); ++c)
                           gx(r, c) = (g(r, c) - yv(r, c) * dot) / norms[r];
                       }
                       t.accumulate(ia, gx);
                     });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  Tape& tape = tape_of("layer_norm_rows", a);
  const Matrix& x = a.value();
  const std::size_t n = x.cols();
  Matrix y(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) y(r, c) = (x(r, c) - mean) * inv_std[r];
  }
  const std::size_t ia = a.id();
  return tape.record("layer_norm_rows", std::move(y), {a},
                     [ia, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       const Matrix& yv = t.value_of(self);
                       const double nn = static_cast<double>(g.cols());
                       Matrix gx(g.rows(), g.cols());
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         double gmean = 0.0, gy = 0.0;
                         for (std::size_t c = 0; c < g.cols(); ++c) {
                           gmean += g(r, c);
                           gy += g(r, c) * yv(r, c);
                         }
                         gmean /= nn;
                         gy /= nn;
                         for (std::size_t c = 0; c < g.cols(); ++c)
                           gx(r, c) = inv_std[r] * (g(r, c) - gmean - yv(r, c) * gy);
                       }
                       t.accumulate(ia, gx);
                     });
}

}  // namespace tipsfuse::ad
