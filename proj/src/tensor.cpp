#include "mwf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace mwf {

namespace {

thread_local Tape* tls_tape = nullptr;
std::atomic<uint64_t> g_tape_counter{0};

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e < 0) throw ShapeError("tensor: negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

// True if gradient should be accumulated into t during backward.
bool wants_grad(const Tensor& t) {
  return t.requires_grad() || t.impl()->tape_id != 0;
}

void accum(const Tensor& t, const std::vector<double>& contribution) {
  Tensor mut = t;
  mut.ensure_grad();
  double* g = mut.grad();
  for (size_t i = 0; i < contribution.size(); ++i) g[i] += contribution[i];
}

// Raw row-major GEMM: C (m x n) += op(A) * op(B), op controlled by the
// transpose flags. A is (ta ? k x m : m x k), B is (tb ? n x k : k x n).
void gemm_accum(bool ta, bool tb, int m, int n, int k, const double* A,
                const double* B, double* C) {
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      double* c = C + static_cast<int64_t>(i) * n;
      const double* a = A + static_cast<int64_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        double av = a[p];
        const double* b = B + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) c[j] += av * b[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const double* a = A + static_cast<int64_t>(i) * k;
      double* c = C + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* b = B + static_cast<int64_t>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += a[p] * b[p];
        c[j] += s;
      }
    }
  } else if (ta && !tb) {
    for (int p = 0; p < k; ++p) {
      const double* a = A + static_cast<int64_t>(p) * m;
      const double* b = B + static_cast<int64_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        double av = a[i];
        double* c = C + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) c[j] += av * b[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* c = C + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += A[static_cast<int64_t>(p) * m + i] *
                                         B[static_cast<int64_t>(j) * k + p];
        c[j] += s;
      }
    }
  }
}

void maybe_record(Tensor& out, std::function<void()> fn) {
  Tape* tp = tls_tape;
  out.impl()->tape_id = tp->id();
  tp->record(std::move(fn));
}

bool taping(std::initializer_list<Tensor> ins) {
  if (!tls_tape) return false;
  for (const Tensor& t : ins)
    if (tracked(t)) return true;
  return false;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                    bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

int Tensor::rows() const {
  if (impl_->shape.empty()) return 1;
  if (impl_->shape.size() == 1) return 1;
  return impl_->shape[0];
}

int Tensor::cols() const {
  int r = rows();
  return r == 0 ? 0 : static_cast<int>(size() / r);
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item: tensor has shape " + shape_str(impl_->shape) +
                     ", expected a single element");
  return impl_->data[0];
}

double Tensor::at(int r, int c) const {
  return impl_->data[static_cast<size_t>(r) * static_cast<size_t>(cols()) +
                     static_cast<size_t>(c)];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : id_(++g_tape_counter) {}

void Tape::backward(const Tensor& loss, double seed) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  Tensor l = loss;
  l.ensure_grad();
  l.grad()[0] += seed;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tape* active_tape() { return tls_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(tls_tape) { tls_tape = &tape; }
TapeScope::~TapeScope() { tls_tape = prev_; }

NoGradScope::NoGradScope() : prev_(tls_tape) { tls_tape = nullptr; }
NoGradScope::~NoGradScope() { tls_tape = prev_; }

bool tracked(const Tensor& t) {
  if (!t.defined()) return false;
  if (t.requires_grad()) return true;
  return tls_tape && t.impl()->tape_id == tls_tape->id();
}

// ---------------------------------------------------------------------------
// Elementwise / broadcast arithmetic
// ---------------------------------------------------------------------------

namespace {
enum class BcKind { Same, RowVec, Scalar };

BcKind broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return BcKind::Same;
  if (b.size() == 1) return BcKind::Scalar;
  if (b.rank() == 1 && b.size() == a.cols()) return BcKind::RowVec;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) +
                   " onto " + shape_str(a.shape()));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  BcKind kind = broadcast_kind("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t n = a.size();
  int cols = a.cols();
  switch (kind) {
    case BcKind::Same:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case BcKind::Scalar:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[0];
      break;
    case BcKind::RowVec:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % cols];
      break;
  }
  if (taping({a, b})) {
    maybe_record(out, [a, b, out, kind, cols]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      int64_t n = out.size();
      if (wants_grad(a)) {
        Tensor ma = a;
        ma.ensure_grad();
        double* ga = ma.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        Tensor mb = b;
        mb.ensure_grad();
        double* gb = mb.grad();
        switch (kind) {
          case BcKind::Same:
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            break;
          case BcKind::Scalar:
            for (int64_t i = 0; i < n; ++i) gb[0] += g[i];
            break;
          case BcKind::RowVec:
            for (int64_t i = 0; i < n; ++i) gb[i % cols] += g[i];
            break;
        }
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  BcKind kind = broadcast_kind("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t n = a.size();
  int cols = a.cols();
  switch (kind) {
    case BcKind::Same:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case BcKind::Scalar:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[0];
      break;
    case BcKind::RowVec:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i % cols];
      break;
  }
  if (taping({a, b})) {
    maybe_record(out, [a, b, out, kind, cols]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      int64_t n = out.size();
      if (wants_grad(a)) {
        Tensor ma = a;
        ma.ensure_grad();
        double* ga = ma.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        Tensor mb = b;
        mb.ensure_grad();
        double* gb = mb.grad();
        switch (kind) {
          case BcKind::Same:
            for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            break;
          case BcKind::Scalar:
            for (int64_t i = 0; i < n; ++i) gb[0] -= g[i];
            break;
          case BcKind::RowVec:
            for (int64_t i = 0; i < n; ++i) gb[i % cols] -= g[i];
            break;
        }
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && b.size() != 1)
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not match");
  bool scalar_b = b.size() == 1 && a.size() != 1;
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * (scalar_b ? pb[0] : pb[i]);
  if (taping({a, b})) {
    maybe_record(out, [a, b, out, scalar_b]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      int64_t n = out.size();
      if (wants_grad(a)) {
        Tensor ma = a;
        ma.ensure_grad();
        double* ga = ma.grad();
        const double* pb = b.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * (scalar_b ? pb[0] : pb[i]);
      }
      if (wants_grad(b)) {
        Tensor mb = b;
        mb.ensure_grad();
        double* gb = mb.grad();
        const double* pa = a.data();
        if (scalar_b) {
          for (int64_t i = 0; i < n; ++i) gb[0] += g[i] * pa[i];
        } else {
          for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * c;
  if (taping({a})) {
    maybe_record(out, [a, out, c]() {
      if (!out.has_grad() || !wants_grad(a)) return;
      Tensor ma = a;
      ma.ensure_grad();
      double* ga = ma.grad();
      const double* g = out.grad();
      for (int64_t i = 0; i < out.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + c;
  if (taping({a})) {
    maybe_record(out, [a, out]() {
      if (!out.has_grad() || !wants_grad(a)) return;
      Tensor ma = a;
      ma.ensure_grad();
      double* ga = ma.grad();
      const double* g = out.grad();
      for (int64_t i = 0; i < out.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul / linear
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 tensors, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  int m = trans_a ? a.dim(1) : a.dim(0);
  int ka = trans_a ? a.dim(0) : a.dim(1);
  int kb = trans_b ? b.dim(1) : b.dim(0);
  int n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                     (trans_b ? "^T" : ""));
  Tensor out = Tensor::zeros({m, n});
  gemm_accum(trans_a, trans_b, m, n, ka, a.data(), b.data(), out.data());
  if (taping({a, b})) {
    maybe_record(out, [a, b, out, trans_a, trans_b, m, n, ka]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      if (wants_grad(a)) {
        Tensor ma = a;
        ma.ensure_grad();
        // dA = dC B^T (layouts depend on the transpose flags)
        if (!trans_a) {
          gemm_accum(false, !trans_b, m, ka, n, g, b.data(), ma.grad());
        } else {
          // A is stored k x m: dA^T = B dC^T -> dA(stored) = op(B) * g^T
          gemm_accum(trans_b, true, ka, m, n, b.data(), g, ma.grad());
        }
      }
      if (wants_grad(b)) {
        Tensor mb = b;
        mb.ensure_grad();
        if (!trans_b) {
          gemm_accum(!trans_a, false, ka, n, m, a.data(), g, mb.grad());
        } else {
          // B stored n x k: dB(stored) = g^T * op(A)
          gemm_accum(true, trans_a, n, ka, m, g, a.data(), mb.grad());
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i)
    po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * M_SQRT1_2));
  if (taping({x})) {
    maybe_record(out, [x, out]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      const double* px = x.data();
      const double inv_sqrt_2pi = 0.3989422804014327;
      for (int64_t i = 0; i < out.size(); ++i) {
        double cdf = 0.5 * (1.0 + std::erf(px[i] * M_SQRT1_2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * px[i] * px[i]);
        gx[i] += g[i] * (cdf + px[i] * pdf);
      }
    });
  }
  return out;
}

Tensor abs_elem(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = std::abs(px[i]);
  if (taping({x})) {
    maybe_record(out, [x, out]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      const double* px = x.data();
      for (int64_t i = 0; i < out.size(); ++i)
        gx[i] += g[i] * (px[i] > 0 ? 1.0 : (px[i] < 0 ? -1.0 : 0.0));
    });
  }
  return out;
}

Tensor square_elem(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] * px[i];
  if (taping({x})) {
    maybe_record(out, [x, out]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      const double* px = x.data();
      for (int64_t i = 0; i < out.size(); ++i) gx[i] += g[i] * 2.0 * px[i];
    });
  }
  return out;
}

Tensor huber_elem(const Tensor& x, double delta) {
  if (delta <= 0) throw std::invalid_argument("huber_elem: delta must be positive");
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    double a = std::abs(px[i]);
    po[i] = a <= delta ? 0.5 * px[i] * px[i] : delta * (a - 0.5 * delta);
  }
  if (taping({x})) {
    maybe_record(out, [x, out, delta]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      const double* px = x.data();
      for (int64_t i = 0; i < out.size(); ++i)
        gx[i] += g[i] * std::clamp(px[i], -delta, delta);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& x, const std::vector<uint8_t>* col_valid) {
  int r = x.rows(), c = x.cols();
  if (col_valid && static_cast<int>(col_valid->size()) != c)
    throw ShapeError("softmax_rows: validity mask length " +
                     std::to_string(col_valid->size()) + " != cols " +
                     std::to_string(c));
  std::vector<uint8_t> valid = col_valid ? *col_valid
                                         : std::vector<uint8_t>(static_cast<size_t>(c), 1);
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int i = 0; i < r; ++i) {
    const double* row = px + static_cast<int64_t>(i) * c;
    double* orow = po + static_cast<int64_t>(i) * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (valid[static_cast<size_t>(j)] && row[j] > mx) mx = row[j];
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      if (valid[static_cast<size_t>(j)]) {
        orow[j] = std::exp(row[j] - mx);
        s += orow[j];
      } else {
        orow[j] = 0.0;
      }
    }
    for (int j = 0; j < c; ++j) orow[j] /= s;
  }
  if (taping({x})) {
    maybe_record(out, [x, out, valid, r, c]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      const double* y = out.data();
      for (int i = 0; i < r; ++i) {
        const double* grow = g + static_cast<int64_t>(i) * c;
        const double* yrow = y + static_cast<int64_t>(i) * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j)
          if (valid[static_cast<size_t>(j)]) dot += grow[j] * yrow[j];
        double* gxrow = gx + static_cast<int64_t>(i) * c;
        for (int j = 0; j < c; ++j)
          if (valid[static_cast<size_t>(j)]) gxrow[j] += (grow[j] - dot) * yrow[j];
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  int r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c)
    throw ShapeError("layer_norm: gain/bias sizes " + std::to_string(gain.size()) +
                     "/" + std::to_string(bias.size()) + " != cols " +
                     std::to_string(c));
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(static_cast<size_t>(x.size()));
  std::vector<double> inv_std(static_cast<size_t>(r));
  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (int i = 0; i < r; ++i) {
    const double* row = px + static_cast<int64_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= c;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < c; ++j) {
      double xh = (row[j] - mean) * inv;
      xhat[static_cast<size_t>(i) * c + j] = xh;
      po[static_cast<int64_t>(i) * c + j] = xh * pg[j] + pb[j];
    }
  }
  if (taping({x, gain, bias})) {
    maybe_record(out, [x, gain, bias, out, xhat = std::move(xhat),
                       inv_std = std::move(inv_std), r, c]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const double* pg = gain.data();
      if (wants_grad(gain)) {
        Tensor mg = gain;
        mg.ensure_grad();
        double* gg = mg.grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gg[j] += g[static_cast<int64_t>(i) * c + j] * xhat[static_cast<size_t>(i) * c + j];
      }
      if (wants_grad(bias)) {
        Tensor mb = bias;
        mb.ensure_grad();
        double* gb = mb.grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gb[j] += g[static_cast<int64_t>(i) * c + j];
      }
      if (wants_grad(x)) {
        Tensor mx = x;
        mx.ensure_grad();
        double* gx = mx.grad();
        for (int i = 0; i < r; ++i) {
          const double* grow = g + static_cast<int64_t>(i) * c;
          const double* xh = xhat.data() + static_cast<size_t>(i) * c;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int j = 0; j < c; ++j) {
            double dxh = grow[j] * pg[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
          }
          double inv = inv_std[static_cast<size_t>(i)];
          for (int j = 0; j < c; ++j) {
            double dxh = grow[j] * pg[j];
            gx[static_cast<int64_t>(i) * c + j] +=
                inv * (dxh - sum_dxhat / c - xh[j] * sum_dxhat_xhat / c);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  int c = parts[0].cols();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch, " + shape_str(p.shape()) +
                       " vs expected width " + std::to_string(c));
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, c});
  double* po = out.data();
  int64_t off = 0;
  for (const Tensor& p : parts) {
    std::memcpy(po + off, p.data(), static_cast<size_t>(p.size()) * sizeof(double));
    off += p.size();
  }
  bool track = false;
  if (tls_tape)
    for (const Tensor& p : parts)
      if (tracked(p)) track = true;
  if (track) {
    maybe_record(out, [parts, out]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      int64_t off = 0;
      for (const Tensor& p : parts) {
        if (wants_grad(p)) {
          Tensor mp = p;
          mp.ensure_grad();
          double* gp = mp.grad();
          for (int64_t i = 0; i < p.size(); ++i) gp[i] += g[off + i];
        }
        off += p.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  int r = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != r)
      throw ShapeError("concat_cols: row mismatch, " + shape_str(p.shape()) +
                       " vs expected rows " + std::to_string(r));
    total += p.cols();
  }
  Tensor out = Tensor::zeros({r, total});
  double* po = out.data();
  int col_off = 0;
  for (const Tensor& p : parts) {
    int pc = p.cols();
    const double* pp = p.data();
    for (int i = 0; i < r; ++i)
      std::memcpy(po + static_cast<int64_t>(i) * total + col_off,
                  pp + static_cast<int64_t>(i) * pc,
                  static_cast<size_t>(pc) * sizeof(double));
    col_off += pc;
  }
  bool track = false;
  if (tls_tape)
    for (const Tensor& p : parts)
      if (tracked(p)) track = true;
  if (track) {
    maybe_record(out, [parts, out, r, total]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      int col_off = 0;
      for (const Tensor& p : parts) {
        int pc = p.cols();
        if (wants_grad(p)) {
          Tensor mp = p;
          mp.ensure_grad();
          double* gp = mp.grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j)
              gp[static_cast<int64_t>(i) * pc + j] +=
                  g[static_cast<int64_t>(i) * total + col_off + j];
        }
        col_off += pc;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int begin, int count) {
  int r = x.rows(), c = x.cols();
  if (begin < 0 || count < 0 || begin + count > r)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " +
                     std::to_string(r) + " rows");
  Tensor out = Tensor::zeros({count, c});
  std::memcpy(out.data(), x.data() + static_cast<int64_t>(begin) * c,
              static_cast<size_t>(count) * c * sizeof(double));
  if (taping({x})) {
    maybe_record(out, [x, out, begin, c]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad() + static_cast<int64_t>(begin) * c;
      const double* g = out.grad();
      for (int64_t i = 0; i < out.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int begin, int count) {
  int r = x.rows(), c = x.cols();
  if (begin < 0 || count < 0 || begin + count > c)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " +
                     std::to_string(c) + " cols");
  Tensor out = Tensor::zeros({r, count});
  double* po = out.data();
  const double* px = x.data();
  for (int i = 0; i < r; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * count,
                px + static_cast<int64_t>(i) * c + begin,
                static_cast<size_t>(count) * sizeof(double));
  if (taping({x})) {
    maybe_record(out, [x, out, begin, count, r, c]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < count; ++j)
          gx[static_cast<int64_t>(i) * c + begin + j] +=
              g[static_cast<int64_t>(i) * count + j];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& idx) {
  int r = table.rows(), c = table.cols();
  for (int i : idx)
    if (i < 0 || i >= r)
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " +
                       std::to_string(r) + " rows");
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), c});
  double* po = out.data();
  const double* pt = table.data();
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(po + static_cast<int64_t>(i) * c,
                pt + static_cast<int64_t>(idx[i]) * c,
                static_cast<size_t>(c) * sizeof(double));
  if (taping({table})) {
    maybe_record(out, [table, out, idx, c]() {
      if (!out.has_grad() || !wants_grad(table)) return;
      Tensor mt = table;
      mt.ensure_grad();
      double* gt = mt.grad();
      const double* g = out.grad();
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < c; ++j)
          gt[static_cast<int64_t>(idx[i]) * c + j] +=
              g[static_cast<int64_t>(i) * c + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temporal convolution / upsampling
// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel,
              int stride, int pad) {
  int L = x.rows(), cin = x.cols();
  if (w.rows() != kernel * cin)
    throw ShapeError("conv1d: weight rows " + std::to_string(w.rows()) +
                     " != kernel*cin " + std::to_string(kernel * cin));
  int cout = w.cols();
  if (b.size() != cout)
    throw ShapeError("conv1d: bias size " + std::to_string(b.size()) +
                     " != cout " + std::to_string(cout));
  if (L < 1) throw ShapeError("conv1d: empty input");
  int lout = (L + 2 * pad - kernel) / stride + 1;
  if (lout < 1) throw ShapeError("conv1d: output would be empty for L=" + std::to_string(L));
  Tensor out = Tensor::zeros({lout, cout});
  double* po = out.data();
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  for (int j = 0; j < lout; ++j) {
    double* orow = po + static_cast<int64_t>(j) * cout;
    for (int o = 0; o < cout; ++o) orow[o] = pb[o];
    for (int u = 0; u < kernel; ++u) {
      int r = j * stride + u - pad;
      if (r < 0 || r >= L) continue;
      const double* xrow = px + static_cast<int64_t>(r) * cin;
      for (int ci = 0; ci < cin; ++ci) {
        double xv = xrow[ci];
        const double* wrow = pw + static_cast<int64_t>(u * cin + ci) * cout;
        for (int o = 0; o < cout; ++o) orow[o] += xv * wrow[o];
      }
    }
  }
  if (taping({x, w, b})) {
    maybe_record(out, [x, w, b, out, kernel, stride, pad, L, cin, cout, lout]() {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      if (wants_grad(b)) {
        Tensor mb = b;
        mb.ensure_grad();
        double* gb = mb.grad();
        for (int j = 0; j < lout; ++j)
          for (int o = 0; o < cout; ++o) gb[o] += g[static_cast<int64_t>(j) * cout + o];
      }
      Tensor mx = x, mw = w;
      bool gx_wanted = wants_grad(x), gw_wanted = wants_grad(w);
      if (gx_wanted) mx.ensure_grad();
      if (gw_wanted) mw.ensure_grad();
      if (!gx_wanted && !gw_wanted) return;
      const double* px = x.data();
      const double* pw = w.data();
      for (int j = 0; j < lout; ++j) {
        const double* grow = g + static_cast<int64_t>(j) * cout;
        for (int u = 0; u < kernel; ++u) {
          int r = j * stride + u - pad;
          if (r < 0 || r >= L) continue;
          for (int ci = 0; ci < cin; ++ci) {
            const double* wrow = pw + static_cast<int64_t>(u * cin + ci) * cout;
            if (gx_wanted) {
              double s = 0.0;
              for (int o = 0; o < cout; ++o) s += grow[o] * wrow[o];
              mx.grad()[static_cast<int64_t>(r) * cin + ci] += s;
            }
            if (gw_wanted) {
              double xv = px[static_cast<int64_t>(r) * cin + ci];
              double* gwrow = mw.grad() + static_cast<int64_t>(u * cin + ci) * cout;
              for (int o = 0; o < cout; ++o) gwrow[o] += xv * grow[o];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor upsample_rows_x2(const Tensor& x, int target_rows) {
  int L = x.rows(), c = x.cols();
  if ((target_rows + 1) / 2 != L)
    throw ShapeError("upsample_rows_x2: cannot map " + std::to_string(L) +
                     " rows onto " + std::to_string(target_rows));
  Tensor out = Tensor::zeros({target_rows, c});
  double* po = out.data();
  const double* px = x.data();
  for (int i = 0; i < target_rows; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * c,
                px + static_cast<int64_t>(i / 2) * c,
                static_cast<size_t>(c) * sizeof(double));
  if (taping({x})) {
    maybe_record(out, [x, out, target_rows, c]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      for (int i = 0; i < target_rows; ++i)
        for (int j = 0; j < c; ++j)
          gx[static_cast<int64_t>(i / 2) * c + j] += g[static_cast<int64_t>(i) * c + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  const double* px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) s += px[i];
  Tensor out = Tensor::scalar(s);
  if (taping({x})) {
    maybe_record(out, [x, out]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      double g = out.grad()[0];
      for (int64_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) return Tensor::scalar(0.0);
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mean_rows(const Tensor& x) {
  int r = x.rows(), c = x.cols();
  if (r == 0) throw ShapeError("mean_rows: empty input");
  Tensor out = Tensor::zeros({1, c});
  double* po = out.data();
  const double* px = x.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) po[j] += px[static_cast<int64_t>(i) * c + j];
  for (int j = 0; j < c; ++j) po[j] /= r;
  if (taping({x})) {
    maybe_record(out, [x, out, r, c]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gx[static_cast<int64_t>(i) * c + j] += g[j] / r;
    });
  }
  return out;
}

Tensor max_rows(const Tensor& x) {
  int r = x.rows(), c = x.cols();
  if (r == 0) throw ShapeError("max_rows: empty input");
  Tensor out = Tensor::zeros({1, c});
  std::vector<int> argmax(static_cast<size_t>(c), 0);
  double* po = out.data();
  const double* px = x.data();
  for (int j = 0; j < c; ++j) {
    double best = px[j];
    int bi = 0;
    for (int i = 1; i < r; ++i) {
      double v = px[static_cast<int64_t>(i) * c + j];
      if (v > best) {
        best = v;
        bi = i;
      }
    }
    po[j] = best;
    argmax[static_cast<size_t>(j)] = bi;
  }
  if (taping({x})) {
    maybe_record(out, [x, out, argmax = std::move(argmax), c]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      for (int j = 0; j < c; ++j)
        gx[static_cast<int64_t>(argmax[static_cast<size_t>(j)]) * c + j] += g[j];
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& row_scale) {
  int r = x.rows(), c = x.cols();
  if (static_cast<int>(row_scale.size()) != r)
    throw ShapeError("scale_rows: scale length " + std::to_string(row_scale.size()) +
                     " != rows " + std::to_string(r));
  Tensor out = Tensor::zeros(x.shape());
  double* po = out.data();
  const double* px = x.data();
  for (int i = 0; i < r; ++i) {
    double s = row_scale[static_cast<size_t>(i)];
    for (int j = 0; j < c; ++j)
      po[static_cast<int64_t>(i) * c + j] = px[static_cast<int64_t>(i) * c + j] * s;
  }
  if (taping({x})) {
    maybe_record(out, [x, out, row_scale, r, c]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i) {
        double s = row_scale[static_cast<size_t>(i)];
        for (int j = 0; j < c; ++j)
          gx[static_cast<int64_t>(i) * c + j] += g[static_cast<int64_t>(i) * c + j] * s;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& x, double rate, RngState& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;  // evaluation mode is the identity
  double keep = 1.0 - rate;
  double inv_keep = 1.0 / keep;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<uint8_t> mask(static_cast<size_t>(x.size()));
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    bool keep_it = rng.uniform() >= rate;
    mask[static_cast<size_t>(i)] = keep_it ? 1 : 0;
    po[i] = keep_it ? px[i] * inv_keep : 0.0;
  }
  if (taping({x})) {
    maybe_record(out, [x, out, mask = std::move(mask), inv_keep]() {
      if (!out.has_grad() || !wants_grad(x)) return;
      Tensor mx = x;
      mx.ensure_grad();
      double* gx = mx.grad();
      const double* g = out.grad();
      for (int64_t i = 0; i < out.size(); ++i)
        if (mask[static_cast<size_t>(i)]) gx[i] += g[i] * inv_keep;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classification loss
// ---------------------------------------------------------------------------

Tensor cross_entropy_with_index(const Tensor& logits, int target_index) {
  int64_t k = logits.size();
  if (target_index < 0 || target_index >= k)
    throw std::out_of_range("cross_entropy_with_index: target " +
                            std::to_string(target_index) + " out of " +
                            std::to_string(k) + " classes");
  const double* p = logits.data();
  double mx = p[0];
  for (int64_t i = 1; i < k; ++i) mx = std::max(mx, p[i]);
  double s = 0.0;
  for (int64_t i = 0; i < k; ++i) s += std::exp(p[i] - mx);
  double lse = mx + std::log(s);
  Tensor out = Tensor::scalar(lse - p[target_index]);
  if (taping({logits})) {
    maybe_record(out, [logits, out, target_index, lse]() {
      if (!out.has_grad() || !wants_grad(logits)) return;
      Tensor ml = logits;
      ml.ensure_grad();
      double* gl = ml.grad();
      const double* p = logits.data();
      double g = out.grad()[0];
      for (int64_t i = 0; i < logits.size(); ++i) {
        double soft = std::exp(p[i] - lse);
        gl[i] += g * (soft - (i == target_index ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), x.values());
}

bool all_finite(const Tensor& x) {
  const double* p = x.data();
  for (int64_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace mwf
