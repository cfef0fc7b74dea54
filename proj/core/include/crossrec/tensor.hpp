#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crossrec/errors.hpp"

namespace crossrec {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};
}  // namespace detail

// Dense row-major double tensor. Value semantics over a shared buffer:
// copies alias the same storage. Values are written once at construction
// (by a tape op or factory); the only later mutations are gradient
// accumulation during backward and explicit parameter updates through
// mutable_values() between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t size() const { return impl_->size(); }

  bool requires_grad() const { return impl_->requires_grad; }

  double value() const;  // scalar tensors only
  std::span<const double> values() const { return impl_->values; }
  std::span<double> mutable_values() { return impl_->values; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Convenience element access for tests and small fixtures.
  double at(std::initializer_list<std::size_t> idx) const;

  bool same_buffer(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Boolean mask with the same shape as the tensor it applies to.
struct BoolMask {
  Shape shape;
  std::vector<std::uint8_t> allow;

  static BoolMask all(Shape shape, bool value = true);
  bool at(std::size_t flat) const { return allow[flat] != 0; }
  // Tile an (n x m) mask across a leading batch axis.
  BoolMask tiled(std::size_t batch) const;
};

enum class ScoreKind { IntraAttention, Ddsr };

// Reverse-mode tape. Ops compute eagerly and, when recording, push a
// backward closure; backward() replays the closures in reverse order, which
// is a reverse topological order because ops are recorded in execution
// order. Single-threaded; independent tapes may live on separate threads.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a, std::vector<std::size_t> perm);
  Tensor reshape(const Tensor& a, Shape shape);
  Tensor slice_last(const Tensor& a, std::size_t start, std::size_t count);
  // Gather rows of a (rows x cols) table; index -1 yields a zero row.
  // Output shape is lead_shape + {cols}, prod(lead_shape) == idx.size().
  Tensor rows(const Tensor& table, const std::vector<std::int64_t>& idx,
              Shape lead_shape);
  Tensor sum(const Tensor& a);          // scalar
  Tensor sum_leading(const Tensor& a);  // reduce axis 0
  Tensor softmax_rows(const Tensor& a, const BoolMask* mask = nullptr);
  Tensor log_softmax_rows(const Tensor& a);
  Tensor layer_norm(const Tensor& a);
  Tensor silu(const Tensor& a);

  // Scaled dot-product scores with structural masking. q is (B x n x d);
  // k is (B x m x d) or shared (m x d); bias, when given, is a constant
  // (B x n x m). Only allowed pairs are evaluated; each evaluated pair
  // bumps the per-kind score counter. Disallowed entries are exactly 0 and
  // must be excluded again by the downstream softmax mask.
  Tensor masked_scores(const Tensor& q, const Tensor& k, const BoolMask& allow_nm,
                       const Tensor* bias, double scale, ScoreKind kind);

  void backward(const Tensor& root);

  bool recording() const { return record_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  std::uint64_t score_ops(ScoreKind kind) const {
    return kind == ScoreKind::IntraAttention ? intra_score_ops_ : ddsr_score_ops_;
  }
  void reset_score_ops() { intra_score_ops_ = ddsr_score_ops_ = 0; }

 private:
  Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad,
                     const char* op_name);
  void push(std::function<void()> backward_fn);

  bool record_;
  std::vector<std::function<void()>> nodes_;
  std::uint64_t intra_score_ops_ = 0;
  std::uint64_t ddsr_score_ops_ = 0;
};

}  // namespace crossrec
