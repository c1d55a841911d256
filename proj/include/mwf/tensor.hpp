#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwf/rng.hpp"

namespace mwf {

// Thrown by operators on invalid input shapes; the message names the operator
// and the offending dimensions.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;    // empty until first written in a backward pass
  bool requires_grad = false;  // leaf parameter flag
  uint64_t tape_id = 0;        // id of the tape whose graph produced this value
};

// Dense real tensor with shared-value semantics: copies alias the same
// storage, which is what lets tape closures see parameter updates-in-place
// and gradient accumulation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  // Leading extent and the product of the remaining ones; rank-1 tensors are
  // treated as a single row.
  int rows() const;
  int cols() const;
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double> values() const { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  double* grad() { return impl_->grad.data(); }
  const double* grad() const { return impl_->grad.data(); }
  void ensure_grad();
  void zero_grad();

  double item() const;
  double at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
  double at(int r, int c) const;
  void set(int64_t i, double v) { impl_->data[static_cast<size_t>(i)] = v; }

  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Operators executed while a tape is active (and touching
// at least one tracked tensor) record a closure that propagates the output
// gradient to the inputs. backward() replays the closures in reverse.
//
// Single-threaded by contract: one tape per training step, owned by the loop
// that created it. Forward passes with no active tape are pure and safe to
// run concurrently over different scenes.
class Tape {
 public:
  Tape();
  ~Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t node_count() const { return nodes_.size(); }
  uint64_t id() const { return id_; }

  // Seeds d(loss)/d(loss) = seed and accumulates into .grad of every tensor
  // on this tape's graph. Rejects non-scalar losses.
  void backward(const Tensor& loss, double seed = 1.0);

 private:
  std::vector<std::function<void()>> nodes_;
  uint64_t id_;
};

Tape* active_tape();

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// RAII recording suppression; forward values inside the scope are constants.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

bool tracked(const Tensor& t);
std::string shape_str(const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Forward operators. Each checks shapes, computes the value, and when a tape
// is active records the reverse-mode closure.
// ---------------------------------------------------------------------------

// b may match a's shape, be a rank-1 row vector of length cols(a), or a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise; b may also be a scalar tensor.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);
// x:[R,I] w:[I,O] b:[O]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gelu(const Tensor& x);
Tensor abs_elem(const Tensor& x);
Tensor square_elem(const Tensor& x);
// Elementwise Huber penalty of a residual: 0.5 x^2 for |x| <= delta, else
// delta(|x| - 0.5 delta).
Tensor huber_elem(const Tensor& x, double delta);

// Row-wise softmax. When col_valid is given, invalid columns get weight
// exactly zero and take no part in the normalization.
Tensor softmax_rows(const Tensor& x, const std::vector<uint8_t>* col_valid = nullptr);
// Normalizes each row to zero mean / unit variance (biased), then applies the
// learnable gain and bias (both rank-1 of length cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int begin, int count);
Tensor slice_cols(const Tensor& x, int begin, int count);
// out[i] = table[idx[i]]; scatter-add on the way back.
Tensor gather_rows(const Tensor& table, const std::vector<int>& idx);

// 1-D convolution over rows (time) with full channel mixing.
// x:[L,Cin] w:[kernel*Cin,Cout] b:[Cout]; zero padding `pad` on both ends.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel,
              int stride, int pad);
// Nearest-neighbor row upsampling by 2: out[i] = x[i/2].
Tensor upsample_rows_x2(const Tensor& x, int target_rows);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [R,C] -> [1,C]
Tensor max_rows(const Tensor& x);   // [R,C] -> [1,C], subgradient to first argmax
// Row i scaled by row_scale[i] (constants).
Tensor scale_rows(const Tensor& x, const std::vector<double>& row_scale);

// Inverted dropout: scales kept entries by 1/(1-rate). Identity when not
// training or rate == 0.
Tensor dropout(const Tensor& x, double rate, RngState& rng, bool training);

// -logits[target] + logsumexp(logits) over a size-K tensor.
Tensor cross_entropy_with_index(const Tensor& logits, int target_index);

// Value copy that is cut from the graph.
Tensor detach(const Tensor& x);

bool all_finite(const Tensor& x);

}  // namespace mwf
