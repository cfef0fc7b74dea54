#include "crossrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace crossrec {

namespace {

std::size_t shape_product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void check_finite(std::span<const double> v, const char* op_name) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op_name);
    }
  }
}

// Row-major strides; broadcast dims get stride 0 after alignment.
std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op_name) {
  std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op_name) + ": cannot broadcast " + shape_str(a) +
                       " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` aligned to a broadcast output shape (0 where broadcast).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  auto in_st = contiguous_strides(in);
  std::size_t offset = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    st[offset + i] = in[i] == 1 && out[offset + i] != 1 ? 0 : in_st[i];
  }
  return st;
}

// Walks all output positions, exposing the flat offset into each operand.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  std::size_t total = shape_product(out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, oa, ob);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
      if (d == 0) return;
    }
    if (out.empty()) return;
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->values.assign(shape_product(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw ShapeError("from_values: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  check_finite(impl->values, "from_values");
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

double Tensor::value() const {
  if (size() != 1) throw ShapeError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return impl_->values[0];
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw NumericError("grad(): no gradient accumulated for this tensor");
  }
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != ndim()) throw ShapeError("at(): index rank mismatch");
  auto st = contiguous_strides(shape());
  std::size_t flat = 0, d = 0;
  for (std::size_t i : idx) {
    if (i >= shape()[d]) throw ShapeError("at(): index out of range");
    flat += i * st[d++];
  }
  return impl_->values[flat];
}

BoolMask BoolMask::all(Shape shape, bool value) {
  BoolMask m;
  m.allow.assign(shape_product(shape), value ? 1 : 0);
  m.shape = std::move(shape);
  return m;
}

BoolMask BoolMask::tiled(std::size_t batch) const {
  BoolMask out;
  out.shape = shape;
  out.shape.insert(out.shape.begin(), batch);
  out.allow.reserve(allow.size() * batch);
  for (std::size_t b = 0; b < batch; ++b) {
    out.allow.insert(out.allow.end(), allow.begin(), allow.end());
  }
  return out;
}

Tensor Tape::make_output(Shape shape, std::vector<double> values, bool requires_grad,
                         const char* op_name) {
  check_finite(values, op_name);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = record_ && requires_grad;
  return Tensor(std::move(impl));
}

void Tape::push(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& root) {
  if (!record_) throw NumericError("backward(): tape is not recording");
  if (root.size() != 1) {
    throw ShapeError("backward(): root must be scalar, got " + shape_str(root.shape()));
  }
  root.impl_->ensure_grad();
  root.impl_->grad[0] += 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape(), "add");
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_product(out_shape));
  auto av = a.values(), bv = b.values();
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] + bv[ib]; });
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = make_output(std::move(out_shape), std::move(out), rg, "add");
  if (record_ && rg) {
    auto ai = a.impl_, bi = b.impl_, ri = result.impl_;
    Shape oshape = result.shape();
    push([ai, bi, ri, sa, sb, oshape]() {
      if (ri->grad.empty()) return;
      if (ai->requires_grad) ai->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for_each_broadcast(oshape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        double g = ri->grad[o];
        if (ai->requires_grad) ai->grad[ia] += g;
        if (bi->requires_grad) bi->grad[ib] += g;
      });
    });
  }
  return result;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape(), "sub");
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_product(out_shape));
  auto av = a.values(), bv = b.values();
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] - bv[ib]; });
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = make_output(std::move(out_shape), std::move(out), rg, "sub");
  if (record_ && rg) {
    auto ai = a.impl_, bi = b.impl_, ri = result.impl_;
    Shape oshape = result.shape();
    push([ai, bi, ri, sa, sb, oshape]() {
      if (ri->grad.empty()) return;
      if (ai->requires_grad) ai->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for_each_broadcast(oshape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        double g = ri->grad[o];
        if (ai->requires_grad) ai->grad[ia] += g;
        if (bi->requires_grad) bi->grad[ib] -= g;
      });
    });
  }
  return result;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape(), "mul");
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_product(out_shape));
  auto av = a.values(), bv = b.values();
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] * bv[ib]; });
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = make_output(std::move(out_shape), std::move(out), rg, "mul");
  if (record_ && rg) {
    auto ai = a.impl_, bi = b.impl_, ri = result.impl_;
    Shape oshape = result.shape();
    push([ai, bi, ri, sa, sb, oshape]() {
      if (ri->grad.empty()) return;
      if (ai->requires_grad) ai->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for_each_broadcast(oshape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        double g = ri->grad[o];
        if (ai->requires_grad) ai->grad[ia] += g * bi->values[ib];
        if (bi->requires_grad) bi->grad[ib] += g * ai->values[ia];
      });
    });
  }
  return result;
}

Tensor Tape::scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  Tensor result = make_output(a.shape(), std::move(out), a.requires_grad(), "scale");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri, c]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += c * ri->grad[i];
    });
  }
  return result;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw ShapeError("matmul: operands must have >= 2 dims, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  std::size_t p = a.dim(a.ndim() - 2), q = a.dim(a.ndim() - 1);
  std::size_t q2 = b.dim(b.ndim() - 2), r = b.dim(b.ndim() - 1);
  if (q != q2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shapes(batch_a, batch_b, "matmul");
  auto sa = broadcast_strides(batch_a, batch);
  auto sb = broadcast_strides(batch_b, batch);
  std::size_t num_batches = shape_product(batch);
  std::size_t a_mat = p * q, b_mat = q * r, o_mat = p * r;

  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  std::vector<double> out(num_batches * o_mat, 0.0);

  auto av = a.values(), bv = b.values();
  for_each_broadcast(batch, sa, sb, [&](std::size_t ob, std::size_t iab, std::size_t ibb) {
    const double* A = av.data() + iab * a_mat;
    const double* B = bv.data() + ibb * b_mat;
    double* O = out.data() + ob * o_mat;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t l = 0; l < q; ++l) {
        double aval = A[i * q + l];
        const double* Brow = B + l * r;
        double* Orow = O + i * r;
        for (std::size_t j = 0; j < r; ++j) Orow[j] += aval * Brow[j];
      }
    }
  });

  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = make_output(std::move(out_shape), std::move(out), rg, "matmul");
  if (record_ && rg) {
    auto ai = a.impl_, bi = b.impl_, ri = result.impl_;
    push([ai, bi, ri, batch, sa, sb, p, q, r, a_mat, b_mat, o_mat]() {
      if (ri->grad.empty()) return;
      if (ai->requires_grad) ai->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for_each_broadcast(batch, sa, sb, [&](std::size_t ob, std::size_t iab, std::size_t ibb) {
        const double* G = ri->grad.data() + ob * o_mat;
        const double* A = ai->values.data() + iab * a_mat;
        const double* B = bi->values.data() + ibb * b_mat;
        if (ai->requires_grad) {
          double* dA = ai->grad.data() + iab * a_mat;
          // dA = G * B^T
          for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t l = 0; l < q; ++l) {
              double acc = 0.0;
              const double* Grow = G + i * r;
              const double* Brow = B + l * r;
              for (std::size_t j = 0; j < r; ++j) acc += Grow[j] * Brow[j];
              dA[i * q + l] += acc;
            }
          }
        }
        if (bi->requires_grad) {
          double* dB = bi->grad.data() + ibb * b_mat;
          // dB = A^T * G
          for (std::size_t i = 0; i < p; ++i) {
            const double* Grow = G + i * r;
            for (std::size_t l = 0; l < q; ++l) {
              double aval = A[i * q + l];
              double* dBrow = dB + l * r;
              for (std::size_t j = 0; j < r; ++j) dBrow[j] += aval * Grow[j];
            }
          }
        }
      });
    });
  }
  return result;
}

Tensor Tape::transpose(const Tensor& a, std::vector<std::size_t> perm) {
  if (perm.size() != a.ndim()) throw ShapeError("transpose: perm rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t d : perm) {
    if (d >= perm.size() || seen[d]) throw ShapeError("transpose: invalid permutation");
    seen[d] = true;
  }
  Shape out_shape(a.ndim());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.dim(perm[i]);
  auto in_strides = contiguous_strides(a.shape());
  std::vector<std::size_t> walk(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) walk[i] = in_strides[perm[i]];

  std::size_t total = a.size();
  std::vector<double> out(total);
  auto av = a.values();
  std::vector<std::size_t> idx(out_shape.size(), 0);
  std::size_t in_off = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    out[flat] = av[in_off];
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++idx[d];
      in_off += walk[d];
      if (idx[d] < out_shape[d]) break;
      in_off -= walk[d] * out_shape[d];
      idx[d] = 0;
    }
  }

  Tensor result = make_output(std::move(out_shape), std::move(out), a.requires_grad(), "transpose");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    Shape oshape = result.shape();
    push([ai, ri, walk, oshape, total]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      std::vector<std::size_t> idx(oshape.size(), 0);
      std::size_t in_off = 0;
      for (std::size_t flat = 0; flat < total; ++flat) {
        ai->grad[in_off] += ri->grad[flat];
        for (std::size_t d = oshape.size(); d-- > 0;) {
          ++idx[d];
          in_off += walk[d];
          if (idx[d] < oshape[d]) break;
          in_off -= walk[d] * oshape[d];
          idx[d] = 0;
        }
      }
    });
  }
  return result;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (shape_product(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor result = make_output(std::move(shape), std::move(out), a.requires_grad(), "reshape");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += ri->grad[i];
    });
  }
  return result;
}

Tensor Tape::slice_last(const Tensor& a, std::size_t start, std::size_t count) {
  std::size_t last = a.dim(a.ndim() - 1);
  if (start + count > last) {
    throw ShapeError("slice_last: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") exceeds last dim " + std::to_string(last));
  }
  std::size_t rows = a.size() / last;
  Shape out_shape = a.shape();
  out_shape.back() = count;
  std::vector<double> out(rows * count);
  auto av = a.values();
  for (std::size_t rrow = 0; rrow < rows; ++rrow) {
    for (std::size_t j = 0; j < count; ++j) out[rrow * count + j] = av[rrow * last + start + j];
  }
  Tensor result = make_output(std::move(out_shape), std::move(out), a.requires_grad(), "slice_last");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri, rows, count, last, start]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      for (std::size_t rrow = 0; rrow < rows; ++rrow) {
        for (std::size_t j = 0; j < count; ++j) {
          ai->grad[rrow * last + start + j] += ri->grad[rrow * count + j];
        }
      }
    });
  }
  return result;
}

Tensor Tape::rows(const Tensor& table, const std::vector<std::int64_t>& idx, Shape lead_shape) {
  if (table.ndim() != 2) throw ShapeError("rows: table must be 2-D, got " + shape_str(table.shape()));
  if (shape_product(lead_shape) != idx.size()) {
    throw ShapeError("rows: lead shape " + shape_str(lead_shape) + " does not match " +
                     std::to_string(idx.size()) + " indices");
  }
  std::size_t nrows = table.dim(0), cols = table.dim(1);
  for (std::int64_t i : idx) {
    if (i < -1 || i >= static_cast<std::int64_t>(nrows)) {
      throw NumericError("rows: index " + std::to_string(i) + " out of range for table with " +
                         std::to_string(nrows) + " rows");
    }
  }
  Shape out_shape = lead_shape;
  out_shape.push_back(cols);
  std::vector<double> out(idx.size() * cols, 0.0);
  auto tv = table.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= 0) {
      const double* src = tv.data() + static_cast<std::size_t>(idx[r]) * cols;
      std::copy(src, src + cols, out.data() + r * cols);
    }
  }
  Tensor result = make_output(std::move(out_shape), std::move(out), table.requires_grad(), "rows");
  if (record_ && table.requires_grad()) {
    auto ti = table.impl_, ri = result.impl_;
    push([ti, ri, idx, cols]() {
      if (ri->grad.empty()) return;
      ti->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0) continue;
        double* dst = ti->grad.data() + static_cast<std::size_t>(idx[r]) * cols;
        const double* src = ri->grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    });
  }
  return result;
}

Tensor Tape::sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor result = make_output({1}, {acc}, a.requires_grad(), "sum");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      double g = ri->grad[0];
      for (double& dv : ai->grad) dv += g;
    });
  }
  return result;
}

Tensor Tape::sum_leading(const Tensor& a) {
  if (a.ndim() < 1) throw ShapeError("sum_leading: needs at least 1 dim");
  std::size_t lead = a.dim(0);
  std::size_t rest = a.size() / std::max<std::size_t>(lead, 1);
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  std::vector<double> out(rest, 0.0);
  auto av = a.values();
  for (std::size_t b = 0; b < lead; ++b) {
    const double* src = av.data() + b * rest;
    for (std::size_t i = 0; i < rest; ++i) out[i] += src[i];
  }
  Tensor result = make_output(std::move(out_shape), std::move(out), a.requires_grad(), "sum_leading");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri, lead, rest]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      for (std::size_t b = 0; b < lead; ++b) {
        double* dst = ai->grad.data() + b * rest;
        for (std::size_t i = 0; i < rest; ++i) dst[i] += ri->grad[i];
      }
    });
  }
  return result;
}

Tensor Tape::softmax_rows(const Tensor& a, const BoolMask* mask) {
  if (a.ndim() < 1) throw ShapeError("softmax_rows: needs at least 1 dim");
  if (mask && mask->shape != a.shape()) {
    throw ShapeError("softmax_rows: mask shape " + shape_str(mask->shape) +
                     " does not match input " + shape_str(a.shape()));
  }
  std::size_t cols = a.dim(a.ndim() - 1);
  std::size_t nrows = a.size() / cols;
  std::vector<double> out(a.size(), 0.0);
  auto av = a.values();
  for (std::size_t r = 0; r < nrows; ++r) {
    const double* x = av.data() + r * cols;
    const std::uint8_t* m = mask ? mask->allow.data() + r * cols : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      if (!m || m[j]) mx = std::max(mx, x[j]);
    }
    if (!std::isfinite(mx)) continue;  // fully masked row stays all-zero
    double z = 0.0;
    double* y = out.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!m || m[j]) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
      }
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  Tensor result = make_output(a.shape(), std::move(out), a.requires_grad(), "softmax_rows");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri, nrows, cols]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      for (std::size_t r = 0; r < nrows; ++r) {
        const double* y = ri->values.data() + r * cols;
        const double* gy = ri->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
        double* gx = ai->grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return result;
}

Tensor Tape::log_softmax_rows(const Tensor& a) {
  std::size_t cols = a.dim(a.ndim() - 1);
  std::size_t nrows = a.size() / cols;
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t r = 0; r < nrows; ++r) {
    const double* x = av.data() + r * cols;
    double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    double lse = mx + std::log(z);
    double* y = out.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
  }
  Tensor result = make_output(a.shape(), std::move(out), a.requires_grad(), "log_softmax_rows");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri, nrows, cols]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      for (std::size_t r = 0; r < nrows; ++r) {
        const double* y = ri->values.data() + r * cols;
        const double* gy = ri->grad.data() + r * cols;
        double gsum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) gsum += gy[j];
        double* gx = ai->grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
      }
    });
  }
  return result;
}

Tensor Tape::layer_norm(const Tensor& a) {
  constexpr double kEps = 1e-6;
  std::size_t cols = a.dim(a.ndim() - 1);
  if (cols < 1) throw ShapeError("layer_norm: last dim must be >= 1");
  std::size_t nrows = a.size() / cols;
  std::vector<double> out(a.size());
  std::vector<double> inv_std(nrows);
  auto av = a.values();
  for (std::size_t r = 0; r < nrows; ++r) {
    const double* x = av.data() + r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(cols);
    double inv = 1.0 / std::sqrt(var + kEps);
    inv_std[r] = inv;
    double* y = out.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv;
  }
  Tensor result = make_output(a.shape(), std::move(out), a.requires_grad(), "layer_norm");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri, nrows, cols, inv_std]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      double n = static_cast<double>(cols);
      for (std::size_t r = 0; r < nrows; ++r) {
        const double* y = ri->values.data() + r * cols;
        const double* gy = ri->grad.data() + r * cols;
        double mean_gy = 0.0, mean_gy_y = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          mean_gy += gy[j];
          mean_gy_y += gy[j] * y[j];
        }
        mean_gy /= n;
        mean_gy_y /= n;
        double inv = inv_std[r];
        double* gx = ai->grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) {
          gx[j] += inv * (gy[j] - mean_gy - y[j] * mean_gy_y);
        }
      }
    });
  }
  return result;
}

Tensor Tape::silu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-av[i]));
    out[i] = av[i] * s;
  }
  Tensor result = make_output(a.shape(), std::move(out), a.requires_grad(), "silu");
  if (record_ && a.requires_grad()) {
    auto ai = a.impl_, ri = result.impl_;
    push([ai, ri]() {
      if (ri->grad.empty()) return;
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i) {
        double x = ai->values[i];
        double s = 1.0 / (1.0 + std::exp(-x));
        ai->grad[i] += ri->grad[i] * s * (1.0 + x * (1.0 - s));
      }
    });
  }
  return result;
}

Tensor Tape::masked_scores(const Tensor& q, const Tensor& k, const BoolMask& allow_nm,
                           const Tensor* bias, double scale, ScoreKind kind) {
  if (q.ndim() != 3) throw ShapeError("masked_scores: q must be (B x n x d), got " + shape_str(q.shape()));
  bool shared_k = k.ndim() == 2;
  if (!shared_k && k.ndim() != 3) {
    throw ShapeError("masked_scores: k must be (B x m x d) or (m x d), got " + shape_str(k.shape()));
  }
  std::size_t B = q.dim(0), n = q.dim(1), d = q.dim(2);
  std::size_t m = shared_k ? k.dim(0) : k.dim(1);
  std::size_t kd = shared_k ? k.dim(1) : k.dim(2);
  if (kd != d || (!shared_k && k.dim(0) != B)) {
    throw ShapeError("masked_scores: q " + shape_str(q.shape()) + " incompatible with k " +
                     shape_str(k.shape()));
  }
  if (allow_nm.shape != Shape{n, m}) {
    throw ShapeError("masked_scores: mask shape " + shape_str(allow_nm.shape) +
                     " does not match scores (" + std::to_string(n) + " x " + std::to_string(m) + ")");
  }
  if (bias) {
    if (bias->shape() != Shape{B, n, m}) {
      throw ShapeError("masked_scores: bias shape " + shape_str(bias->shape()) + " must be (B x n x m)");
    }
    if (bias->requires_grad()) throw NumericError("masked_scores: bias must be constant");
  }

  std::vector<double> out(B * n * m, 0.0);
  auto qv = q.values(), kv = k.values();
  const double* bv = bias ? bias->values().data() : nullptr;
  std::uint64_t evaluated = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* Q = qv.data() + b * n * d;
    const double* K = kv.data() + (shared_k ? 0 : b * m * d);
    double* O = out.data() + b * n * m;
    const double* Bz = bv ? bv + b * n * m : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* arow = allow_nm.allow.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        if (!arow[j]) continue;
        double acc = 0.0;
        const double* qr = Q + i * d;
        const double* kr = K + j * d;
        for (std::size_t l = 0; l < d; ++l) acc += qr[l] * kr[l];
        ++evaluated;
        if (Bz) acc += Bz[i * m + j];
        O[i * m + j] = acc * scale;
      }
    }
  }
  if (kind == ScoreKind::IntraAttention) {
    intra_score_ops_ += evaluated;
  } else {
    ddsr_score_ops_ += evaluated;
  }

  bool rg = q.requires_grad() || k.requires_grad();
  Tensor result = make_output({B, n, m}, std::move(out), rg, "masked_scores");
  if (record_ && rg) {
    auto qi = q.impl_, ki = k.impl_, ri = result.impl_;
    auto allow = allow_nm.allow;
    push([qi, ki, ri, allow, B, n, m, d, scale, shared_k]() {
      if (ri->grad.empty()) return;
      if (qi->requires_grad) qi->ensure_grad();
      if (ki->requires_grad) ki->ensure_grad();
      for (std::size_t b = 0; b < B; ++b) {
        const double* G = ri->grad.data() + b * n * m;
        const double* Q = qi->values.data() + b * n * d;
        const double* K = ki->values.data() + (shared_k ? 0 : b * m * d);
        double* dQ = qi->requires_grad ? qi->grad.data() + b * n * d : nullptr;
        double* dK = ki->requires_grad ? ki->grad.data() + (shared_k ? 0 : b * m * d) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint8_t* arow = allow.data() + i * m;
          for (std::size_t j = 0; j < m; ++j) {
            if (!arow[j]) continue;
            double g = G[i * m + j] * scale;
            if (g == 0.0) continue;
            const double* qr = Q + i * d;
            const double* kr = K + j * d;
            if (dQ) {
              double* dqr = dQ + i * d;
              for (std::size_t l = 0; l < d; ++l) dqr[l] += g * kr[l];
            }
            if (dK) {
              double* dkr = dK + j * d;
              for (std::size_t l = 0; l < d; ++l) dkr[l] += g * qr[l];
            }
          }
        }
      }
    });
  }
  return result;
}

}  // namespace crossrec
