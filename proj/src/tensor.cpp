#include "ub/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ub/error.hpp"

namespace ub {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : d_(std::make_shared<detail::TensorData>()) {
  for (std::size_t dim : shape) {
    if (dim == 0) throw ShapeError("tensor dimensions must be positive");
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

std::span<const double> Tensor::grad() const {
  if (d_->grad.empty()) {
    throw ContractError("tensor has no gradient; run backward() first");
  }
  return d_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() { d_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() requires a single-element tensor, got shape " +
                        shape_str(shape()));
  }
  return d_->values[0];
}

Tensor Tensor::clone() const {
  Tensor out(d_->shape, d_->values, d_->requires_grad);
  return out;
}

// ---------------------------------------------------------------------------
// Tape machinery
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoTapeScope::NoTapeScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = prev_; }

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void record_node(std::function<void()> backward) {
  if (g_active_tape == nullptr) {
    throw ContractError("record_node called with no active tape");
  }
  g_active_tape->record(std::move(backward));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() loss is not on the tape");
  }
  Tensor seed = loss;  // handle copy
  auto g = seed.grad_mut();
  g[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

using DataPtr = std::shared_ptr<detail::TensorData>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Accumulates `src` into the grad buffer of `dst` if dst requires grad.
void accumulate(const DataPtr& dst, const std::vector<double>& src) {
  if (!dst->requires_grad) return;
  if (dst->grad.empty()) dst->grad.assign(dst->values.size(), 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) dst->grad[i] += src[i];
}

bool upstream_empty(const DataPtr& out) { return out->grad.empty(); }

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor result(a.shape(), std::move(out));
  if (grad_enabled({&a, &b})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), bd = b.data(), od = result.data();
    record_node([ad, bd, od] {
      if (upstream_empty(od)) return;
      accumulate(ad, od->grad);
      accumulate(bd, od->grad);
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor result(a.shape(), std::move(out));
  if (grad_enabled({&a, &b})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), bd = b.data(), od = result.data();
    record_node([ad, bd, od] {
      if (upstream_empty(od)) return;
      accumulate(ad, od->grad);
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          bd->grad[i] -= od->grad[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor result(a.shape(), std::move(out));
  if (grad_enabled({&a, &b})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), bd = b.data(), od = result.data();
    record_node([ad, bd, od] {
      if (upstream_empty(od)) return;
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          ad->grad[i] += od->grad[i] * bd->values[i];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          bd->grad[i] += od->grad[i] * ad->values[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  Tensor result(a.shape(), std::move(out));
  if (grad_enabled({&a})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), od = result.data();
    record_node([ad, od, s] {
      if (upstream_empty(od) || !ad->requires_grad) return;
      if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
      for (std::size_t i = 0; i < od->grad.size(); ++i)
        ad->grad[i] += od->grad[i] * s;
    });
  }
  return result;
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] > 0.0 ? av[i] : 0.0;
  Tensor result(a.shape(), std::move(out));
  if (grad_enabled({&a})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), od = result.data();
    record_node([ad, od] {
      if (upstream_empty(od) || !ad->requires_grad) return;
      if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
      for (std::size_t i = 0; i < od->grad.size(); ++i)
        if (ad->values[i] > 0.0) ad->grad[i] += od->grad[i];
    });
  }
  return result;
}

Tensor sign(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
  Tensor result(a.shape(), std::move(out));
  if (grad_enabled({&a})) {
    // Zero gradient everywhere: the node contributes nothing on replay.
    result.set_requires_grad(true);
    record_node([] {});
  }
  return result;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) throw DomainError("clamp: lo must be < hi");
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(std::max(av[i], lo), hi);
  Tensor result(a.shape(), std::move(out));
  if (grad_enabled({&a})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), od = result.data();
    record_node([ad, od, lo, hi] {
      if (upstream_empty(od) || !ad->requires_grad) return;
      if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        const double v = ad->values[i];
        if (v >= lo && v <= hi) ad->grad[i] += od->grad[i];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor result(std::move(shape), std::move(out));
  if (grad_enabled({&a})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), od = result.data();
    record_node([ad, od] {
      if (upstream_empty(od)) return;
      accumulate(ad, od->grad);
    });
  }
  return result;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor result = Tensor::scalar(total);
  if (grad_enabled({&a})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), od = result.data();
    record_node([ad, od] {
      if (upstream_empty(od) || !ad->requires_grad) return;
      if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
      const double up = od->grad[0];
      for (double& g : ad->grad) g += up;
    });
  }
  return result;
}

Tensor add_rowvec(const Tensor& x, const Tensor& row) {
  if (x.shape().size() != 2 || row.shape().size() != 1 ||
      x.shape()[1] != row.shape()[0]) {
    throw ShapeError("add_rowvec: need [n,d] + [d], got " +
                     shape_str(x.shape()) + " + " + shape_str(row.shape()));
  }
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(x.numel());
  auto xv = x.values(), rv = row.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + rv[j];
  Tensor result(x.shape(), std::move(out));
  if (grad_enabled({&x, &row})) {
    result.set_requires_grad(true);
    DataPtr xd = x.data(), rd = row.data(), od = result.data();
    record_node([xd, rd, od, n, d] {
      if (upstream_empty(od)) return;
      accumulate(xd, od->grad);
      if (rd->requires_grad) {
        if (rd->grad.empty()) rd->grad.assign(rd->values.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            rd->grad[j] += od->grad[i * d + j];
      }
    });
  }
  return result;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.shape().size() != 4 || bias.shape().size() != 1 ||
      x.shape()[1] != bias.shape()[0]) {
    throw ShapeError("add_channel_bias: need [n,c,h,w] + [c], got " +
                     shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  }
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  std::vector<double> out(x.numel());
  auto xv = x.values(), bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) out[base + p] = xv[base + p] + bv[ch];
    }
  Tensor result(x.shape(), std::move(out));
  if (grad_enabled({&x, &bias})) {
    result.set_requires_grad(true);
    DataPtr xd = x.data(), bd = bias.data(), od = result.data();
    record_node([xd, bd, od, n, c, hw] {
      if (upstream_empty(od)) return;
      accumulate(xd, od->grad);
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p)
              bd->grad[ch] += od->grad[base + p];
          }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// matmul / conv2d
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aik * bv[kk * n + j];
    }
  Tensor result(Shape{m, n}, std::move(out));
  if (grad_enabled({&a, &b})) {
    result.set_requires_grad(true);
    DataPtr ad = a.data(), bd = b.data(), od = result.data();
    record_node([ad, bd, od, m, k, n] {
      if (upstream_empty(od)) return;
      const auto& dc = od->grad;
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double up = dc[i * n + j];
            for (std::size_t kk = 0; kk < k; ++kk)
              ad->grad[i * k + kk] += up * bd->values[kk * n + j];
          }
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
        // dB = A^T * dC
        for (std::size_t kk = 0; kk < k; ++kk)
          for (std::size_t i = 0; i < m; ++i) {
            const double aik = ad->values[i * k + kk];
            for (std::size_t j = 0; j < n; ++j)
              bd->grad[kk * n + j] += aik * dc[i * n + j];
          }
      }
    });
  }
  return result;
}

namespace {
struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, oh, ow;
  int stride, padding;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel, int stride,
                       int padding) {
  if (input.shape().size() != 4 || kernel.shape().size() != 4) {
    throw ShapeError("conv2d: need input [n,c,h,w] and kernel [o,c,kh,kw]");
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  ConvGeom g;
  g.n = input.shape()[0];
  g.c = input.shape()[1];
  g.h = input.shape()[2];
  g.w = input.shape()[3];
  g.o = kernel.shape()[0];
  g.kh = kernel.shape()[2];
  g.kw = kernel.shape()[3];
  g.stride = stride;
  g.padding = padding;
  if (kernel.shape()[1] != g.c) {
    throw ShapeError("conv2d: kernel channels " +
                     std::to_string(kernel.shape()[1]) +
                     " do not match input channels " + std::to_string(g.c));
  }
  const std::size_t ph = g.h + 2 * static_cast<std::size_t>(padding);
  const std::size_t pw = g.w + 2 * static_cast<std::size_t>(padding);
  if (g.kh > ph || g.kw > pw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.oh = (ph - g.kh) / static_cast<std::size_t>(stride) + 1;
  g.ow = (pw - g.kw) / static_cast<std::size_t>(stride) + 1;
  return g;
}
}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride,
              int padding) {
  const ConvGeom g = conv_geometry(input, kernel, stride, padding);
  std::vector<double> out(g.n * g.o * g.oh * g.ow, 0.0);
  auto xv = input.values(), kv = kernel.values();
  auto x_at = [&](std::size_t b, std::size_t ch, long y, long x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(g.h) ||
        x >= static_cast<long>(g.w))
      return 0.0;
    return xv[((b * g.c + ch) * g.h + static_cast<std::size_t>(y)) * g.w +
              static_cast<std::size_t>(x)];
  };
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t oc = 0; oc < g.o; ++oc)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          double acc = 0.0;
          const long y0 = static_cast<long>(oy) * g.stride - g.padding;
          const long x0 = static_cast<long>(ox) * g.stride - g.padding;
          for (std::size_t ch = 0; ch < g.c; ++ch)
            for (std::size_t ky = 0; ky < g.kh; ++ky)
              for (std::size_t kx = 0; kx < g.kw; ++kx)
                acc += x_at(b, ch, y0 + static_cast<long>(ky),
                            x0 + static_cast<long>(kx)) *
                       kv[((oc * g.c + ch) * g.kh + ky) * g.kw + kx];
          out[((b * g.o + oc) * g.oh + oy) * g.ow + ox] = acc;
        }
  Tensor result(Shape{g.n, g.o, g.oh, g.ow}, std::move(out));
  if (grad_enabled({&input, &kernel})) {
    result.set_requires_grad(true);
    DataPtr xd = input.data(), kd = kernel.data(), od = result.data();
    record_node([xd, kd, od, g] {
      if (upstream_empty(od)) return;
      const auto& up = od->grad;
      const bool want_dx = xd->requires_grad;
      const bool want_dk = kd->requires_grad;
      if (want_dx && xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      if (want_dk && kd->grad.empty()) kd->grad.assign(kd->values.size(), 0.0);
      for (std::size_t b = 0; b < g.n; ++b)
        for (std::size_t oc = 0; oc < g.o; ++oc)
          for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const double u = up[((b * g.o + oc) * g.oh + oy) * g.ow + ox];
              if (u == 0.0) continue;
              const long y0 = static_cast<long>(oy) * g.stride - g.padding;
              const long x0 = static_cast<long>(ox) * g.stride - g.padding;
              for (std::size_t ch = 0; ch < g.c; ++ch)
                for (std::size_t ky = 0; ky < g.kh; ++ky)
                  for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const long y = y0 + static_cast<long>(ky);
                    const long x = x0 + static_cast<long>(kx);
                    if (y < 0 || x < 0 || y >= static_cast<long>(g.h) ||
                        x >= static_cast<long>(g.w))
                      continue;
                    const std::size_t xi =
                        ((b * g.c + ch) * g.h + static_cast<std::size_t>(y)) *
                            g.w +
                        static_cast<std::size_t>(x);
                    const std::size_t ki =
                        ((oc * g.c + ch) * g.kh + ky) * g.kw + kx;
                    if (want_dx) xd->grad[xi] += u * kd->values[ki];
                    if (want_dk) kd->grad[ki] += u * xd->values[xi];
                  }
            }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

std::vector<double> softmax_rows(const Tensor& logits) {
  if (logits.shape().size() != 2) {
    throw ShapeError("softmax_rows: need [n,C] logits");
  }
  const std::size_t n = logits.shape()[0], C = logits.shape()[1];
  std::vector<double> probs(n * C);
  auto lv = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = lv[i * C];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, lv[i * C + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      probs[i * C + j] = std::exp(lv[i * C + j] - mx);
      z += probs[i * C + j];
    }
    for (std::size_t j = 0; j < C; ++j) probs[i * C + j] /= z;
  }
  return probs;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels) {
  if (logits.shape().size() != 2) {
    throw ShapeError("softmax_cross_entropy: need [n,C] logits");
  }
  const std::size_t n = logits.shape()[0], C = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw DomainError("softmax_cross_entropy: label " + std::to_string(y) +
                        " outside [0," + std::to_string(C) + ")");
    }
  }
  std::vector<double> probs = softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // -log p[label]; p is strictly positive after max-subtraction.
    loss -= std::log(probs[i * C + static_cast<std::size_t>(labels[i])]);
  }
  loss /= static_cast<double>(n);
  Tensor result = Tensor::scalar(loss);
  if (grad_enabled({&logits})) {
    result.set_requires_grad(true);
    DataPtr ld = logits.data(), od = result.data();
    record_node([ld, od, probs, labels, n, C] {
      if (upstream_empty(od) || !ld->requires_grad) return;
      if (ld->grad.empty()) ld->grad.assign(ld->values.size(), 0.0);
      const double up = od->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < C; ++j) {
          double g = probs[i * C + j];
          if (j == static_cast<std::size_t>(labels[i])) g -= 1.0;
          ld->grad[i * C + j] += up * g;
        }
    });
  }
  return result;
}

Tensor kl_divergence(const Tensor& student_logits, const Tensor& teacher_logits,
                     double temperature) {
  if (temperature <= 0.0) {
    throw DomainError("kl_divergence: temperature must be positive");
  }
  if (teacher_logits.requires_grad()) {
    throw ContractError("kl_divergence: teacher logits must be constant");
  }
  require_same_shape(student_logits, teacher_logits, "kl_divergence");
  if (student_logits.shape().size() != 2) {
    throw ShapeError("kl_divergence: need [n,C] logits");
  }
  const std::size_t n = student_logits.shape()[0];
  const std::size_t C = student_logits.shape()[1];
  std::vector<double> p, q;
  {
    NoTapeScope guard;
    Tensor ss = scale(student_logits, 1.0 / temperature);
    Tensor ts = scale(teacher_logits, 1.0 / temperature);
    p = softmax_rows(ss);
    q = softmax_rows(ts);
  }
  double total = 0.0;
  std::vector<double> u(n * C);  // log p - log q, reused by backward
  for (std::size_t i = 0; i < n * C; ++i) {
    u[i] = std::log(p[i]) - std::log(q[i]);
    total += p[i] * u[i];
  }
  total /= static_cast<double>(n);
  Tensor result = Tensor::scalar(total);
  if (grad_enabled({&student_logits})) {
    result.set_requires_grad(true);
    DataPtr sd = student_logits.data(), od = result.data();
    record_node([sd, od, p, u, n, C, temperature] {
      if (upstream_empty(od) || !sd->requires_grad) return;
      if (sd->grad.empty()) sd->grad.assign(sd->values.size(), 0.0);
      const double up = od->grad[0] / (static_cast<double>(n) * temperature);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < C; ++j) dot += p[i * C + j] * u[i * C + j];
        for (std::size_t j = 0; j < C; ++j)
          sd->grad[i * C + j] += up * p[i * C + j] * (u[i * C + j] - dot);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps) {
  if (eps <= 0.0) throw DomainError("finite_diff_check: eps must be positive");
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tape tape;
  std::vector<double> analytic;
  {
    TapeScope scope(tape);
    Tensor out = f(probe);
    if (out.numel() != 1) {
      throw ContractError("finite_diff_check: f must return a scalar");
    }
    tape.backward(out);
    analytic.assign(probe.grad().begin(), probe.grad().end());
  }
  double max_rel = 0.0;
  Tensor work = x.clone();
  auto wv = work.values_mut();
  for (std::size_t i = 0; i < work.numel(); ++i) {
    const double original = wv[i];
    wv[i] = original + eps;
    const double fp = f(work).item();
    wv[i] = original - eps;
    const double fm = f(work).item();
    wv[i] = original;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_check: non-finite function value");
    }
    const double fd = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
  }
  return max_rel;
}

}  // namespace ub
