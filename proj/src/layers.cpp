#include "ub/layers.hpp"

#include <cmath>

#include "ub/error.hpp"
#include "ub/rng.hpp"

namespace ub {

namespace {

using DataPtr = std::shared_ptr<detail::TensorData>;

void capture_rows(CaptureSink* sink, int norm_index,
                  const std::vector<double>& pre_affine,
                  const std::vector<double>& post_affine, std::size_t rows,
                  std::size_t dim) {
  if (sink == nullptr || sink->map == nullptr) return;
  const std::vector<double>& src = sink->post_affine ? post_affine : pre_affine;
  auto& bucket = (*sink->map)[norm_index];
  bucket.reserve(bucket.size() + rows);
  for (std::size_t i = 0; i < rows; ++i) {
    bucket.emplace_back(src.begin() + static_cast<long>(i * dim),
                        src.begin() + static_cast<long>((i + 1) * dim));
  }
}

// Capture for [n,c,h,w] activations: one channel-count vector per spatial
// position per sample.
void capture_channel_vectors(CaptureSink* sink, int norm_index,
                             const std::vector<double>& pre_affine,
                             const std::vector<double>& post_affine,
                             std::size_t n, std::size_t c, std::size_t h,
                             std::size_t w) {
  if (sink == nullptr || sink->map == nullptr) return;
  const std::vector<double>& src = sink->post_affine ? post_affine : pre_affine;
  auto& bucket = (*sink->map)[norm_index];
  bucket.reserve(bucket.size() + n * h * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::vector<double> vec(c);
        for (std::size_t ch = 0; ch < c; ++ch)
          vec[ch] = src[((i * c + ch) * h + y) * w + x];
        bucket.push_back(std::move(vec));
      }
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear / Conv / activations
// ---------------------------------------------------------------------------

LinearLayer::LinearLayer(Tensor weight_in, Tensor bias_in)
    : weight(std::move(weight_in)), bias(std::move(bias_in)) {
  if (weight.shape().size() != 2 || bias.shape().size() != 1 ||
      weight.shape()[1] != bias.shape()[0]) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) +
                     " incompatible with bias " + shape_str(bias.shape()));
  }
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Tensor LinearLayer::forward(const Tensor& x, Mode, CaptureSink*) {
  return add_rowvec(matmul(x, weight), bias);
}

void LinearLayer::collect_params(std::vector<Tensor>& out) const {
  out.push_back(weight);
  out.push_back(bias);
}

std::unique_ptr<Layer> LinearLayer::clone() const {
  return std::make_unique<LinearLayer>(weight.clone(), bias.clone());
}

Conv2dLayer::Conv2dLayer(Tensor kernel_in, Tensor bias_in, int stride_in,
                         int padding_in)
    : kernel(std::move(kernel_in)),
      bias(std::move(bias_in)),
      stride(stride_in),
      padding(padding_in) {
  if (kernel.shape().size() != 4 || bias.shape().size() != 1 ||
      kernel.shape()[0] != bias.shape()[0]) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) +
                     " incompatible with bias " + shape_str(bias.shape()));
  }
  kernel.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Tensor Conv2dLayer::forward(const Tensor& x, Mode, CaptureSink*) {
  return add_channel_bias(conv2d(x, kernel, stride, padding), bias);
}

void Conv2dLayer::collect_params(std::vector<Tensor>& out) const {
  out.push_back(kernel);
  out.push_back(bias);
}

std::unique_ptr<Layer> Conv2dLayer::clone() const {
  return std::make_unique<Conv2dLayer>(kernel.clone(), bias.clone(), stride,
                                       padding);
}

Tensor ReluLayer::forward(const Tensor& x, Mode, CaptureSink*) {
  return relu(x);
}

std::unique_ptr<Layer> ReluLayer::clone() const {
  return std::make_unique<ReluLayer>();
}

Tensor FlattenLayer::forward(const Tensor& x, Mode, CaptureSink*) {
  if (x.shape().size() < 2) {
    throw ShapeError("flatten: need a batched tensor, got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0];
  return reshape(x, Shape{n, x.numel() / n});
}

std::unique_ptr<Layer> FlattenLayer::clone() const {
  return std::make_unique<FlattenLayer>();
}

// ---------------------------------------------------------------------------
// BatchNorm1d
// ---------------------------------------------------------------------------

BatchNorm1dLayer::BatchNorm1dLayer(std::size_t features, int norm_index_in,
                                   double epsilon_in, double momentum_in)
    : gamma(Tensor::full({features}, 1.0, true)),
      beta(Tensor::zeros({features}, true)),
      running_mean(Tensor::zeros({features})),
      running_var(Tensor::full({features}, 1.0)),
      norm_index(norm_index_in),
      epsilon(epsilon_in),
      momentum(momentum_in) {
  if (epsilon <= 0.0) throw DomainError("batch_norm: epsilon must be positive");
  if (momentum <= 0.0 || momentum > 1.0) {
    throw DomainError("batch_norm: momentum must be in (0,1]");
  }
}

Tensor BatchNorm1dLayer::forward(const Tensor& x, Mode mode,
                                 CaptureSink* sink) {
  if (x.shape().size() != 2 || x.shape()[1] != gamma.shape()[0]) {
    throw ShapeError("batch_norm1d: expected [n," +
                     std::to_string(gamma.shape()[0]) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();

  std::vector<double> mean(d), invstd(d);
  if (mode == Mode::Train) {
    if (n < 2) {
      throw ContractError("batch_norm1d: train mode needs a batch of >= 2");
    }
    std::vector<double> var(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += xv[i * d + j];
      m /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = xv[i * d + j] - m;
        v += c * c;
      }
      v /= static_cast<double>(n);  // biased variance
      mean[j] = m;
      var[j] = v;
      invstd[j] = 1.0 / std::sqrt(v + epsilon);
    }
    auto rm = running_mean.values_mut();
    auto rv = running_var.values_mut();
    for (std::size_t j = 0; j < d; ++j) {
      rm[j] = (1.0 - momentum) * rm[j] + momentum * mean[j];
      rv[j] = (1.0 - momentum) * rv[j] + momentum * var[j];
    }
  } else {
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] = rm[j];
      invstd[j] = 1.0 / std::sqrt(rv[j] + epsilon);
    }
  }

  std::vector<double> xhat(n * d), out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[i * d + j] - mean[j]) * invstd[j];
      xhat[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  capture_rows(sink, norm_index, xhat, out, n, d);

  Tensor result(x.shape(), std::move(out));
  if (grad_enabled({&x, &gamma, &beta})) {
    result.set_requires_grad(true);
    DataPtr xd = x.data(), gd = gamma.data(), bd = beta.data(),
            od = result.data();
    const bool train = mode == Mode::Train;
    record_node([xd, gd, bd, od, xhat, invstd, n, d, train] {
      if (od->grad.empty()) return;
      const auto& up = od->grad;
      if (gd->requires_grad) {
        if (gd->grad.empty()) gd->grad.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            gd->grad[j] += up[i * d + j] * xhat[i * d + j];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) bd->grad[j] += up[i * d + j];
      }
      if (!xd->requires_grad) return;
      if (xd->grad.empty()) xd->grad.assign(n * d, 0.0);
      if (!train) {
        // Running statistics are constants: the map is affine in x.
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            xd->grad[i * d + j] += up[i * d + j] * gd->values[j] * invstd[j];
        return;
      }
      for (std::size_t j = 0; j < d; ++j) {
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dh = up[i * d + j] * gd->values[j];
          sum_dh += dh;
          sum_dh_h += dh * xhat[i * d + j];
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double dh = up[i * d + j] * gd->values[j];
          xd->grad[i * d + j] +=
              invstd[j] * inv_n *
              (static_cast<double>(n) * dh - sum_dh -
               xhat[i * d + j] * sum_dh_h);
        }
      }
    });
  }
  return result;
}

void BatchNorm1dLayer::collect_params(std::vector<Tensor>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

void BatchNorm1dLayer::collect_buffers(std::vector<Tensor>& out) const {
  out.push_back(running_mean);
  out.push_back(running_var);
}

std::unique_ptr<Layer> BatchNorm1dLayer::clone() const {
  auto copy = std::make_unique<BatchNorm1dLayer>(gamma.shape()[0], norm_index,
                                                 epsilon, momentum);
  copy->gamma = gamma.clone();
  copy->beta = beta.clone();
  copy->running_mean = running_mean.clone();
  copy->running_var = running_var.clone();
  return copy;
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

BatchNorm2dLayer::BatchNorm2dLayer(std::size_t channels, int norm_index_in,
                                   double epsilon_in, double momentum_in)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)),
      norm_index(norm_index_in),
      epsilon(epsilon_in),
      momentum(momentum_in) {
  if (epsilon <= 0.0) throw DomainError("batch_norm: epsilon must be positive");
  if (momentum <= 0.0 || momentum > 1.0) {
    throw DomainError("batch_norm: momentum must be in (0,1]");
  }
}

Tensor BatchNorm2dLayer::forward(const Tensor& x, Mode mode,
                                 CaptureSink* sink) {
  if (x.shape().size() != 4 || x.shape()[1] != gamma.shape()[0]) {
    throw ShapeError("batch_norm2d: expected [n," +
                     std::to_string(gamma.shape()[0]) + ",h,w], got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const std::size_t h = x.shape()[2], w = x.shape()[3];
  const std::size_t hw = h * w;
  const std::size_t m = n * hw;  // elements pooled per channel
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();

  std::vector<double> mean(c), invstd(c);
  if (mode == Mode::Train) {
    if (n < 2) {
      throw ContractError("batch_norm2d: train mode needs a batch of >= 2");
    }
    std::vector<double> var(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) mu += xv[base + p];
      }
      mu /= static_cast<double>(m);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const double d = xv[base + p] - mu;
          v += d * d;
        }
      }
      v /= static_cast<double>(m);
      mean[ch] = mu;
      var[ch] = v;
      invstd[ch] = 1.0 / std::sqrt(v + epsilon);
    }
    auto rm = running_mean.values_mut();
    auto rv = running_var.values_mut();
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean[ch];
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var[ch];
    }
  } else {
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      invstd[ch] = 1.0 / std::sqrt(rv[ch] + epsilon);
    }
  }

  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const double hh = (xv[base + p] - mean[ch]) * invstd[ch];
        xhat[base + p] = hh;
        out[base + p] = gv[ch] * hh + bv[ch];
      }
    }
  capture_channel_vectors(sink, norm_index, xhat, out, n, c, h, w);

  Tensor result(x.shape(), std::move(out));
  if (grad_enabled({&x, &gamma, &beta})) {
    result.set_requires_grad(true);
    DataPtr xd = x.data(), gd = gamma.data(), bd = beta.data(),
            od = result.data();
    const bool train = mode == Mode::Train;
    record_node([xd, gd, bd, od, xhat, invstd, n, c, hw, m, train] {
      if (od->grad.empty()) return;
      const auto& up = od->grad;
      if (gd->requires_grad) {
        if (gd->grad.empty()) gd->grad.assign(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p)
              gd->grad[ch] += up[base + p] * xhat[base + p];
          }
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) bd->grad[ch] += up[base + p];
          }
      }
      if (!xd->requires_grad) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      if (!train) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p)
              xd->grad[base + p] +=
                  up[base + p] * gd->values[ch] * invstd[ch];
          }
        return;
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t base = (i * c + ch) * hw;
          for (std::size_t p = 0; p < hw; ++p) {
            const double dh = up[base + p] * gd->values[ch];
            sum_dh += dh;
            sum_dh_h += dh * xhat[base + p];
          }
        }
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t base = (i * c + ch) * hw;
          for (std::size_t p = 0; p < hw; ++p) {
            const double dh = up[base + p] * gd->values[ch];
            xd->grad[base + p] +=
                invstd[ch] * inv_m *
                (static_cast<double>(m) * dh - sum_dh -
                 xhat[base + p] * sum_dh_h);
          }
        }
      }
    });
  }
  return result;
}

void BatchNorm2dLayer::collect_params(std::vector<Tensor>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

void BatchNorm2dLayer::collect_buffers(std::vector<Tensor>& out) const {
  out.push_back(running_mean);
  out.push_back(running_var);
}

std::unique_ptr<Layer> BatchNorm2dLayer::clone() const {
  auto copy = std::make_unique<BatchNorm2dLayer>(gamma.shape()[0], norm_index,
                                                 epsilon, momentum);
  copy->gamma = gamma.clone();
  copy->beta = beta.clone();
  copy->running_mean = running_mean.clone();
  copy->running_var = running_var.clone();
  return copy;
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

LayerNormLayer::LayerNormLayer(std::size_t features, int norm_index_in,
                               double epsilon_in)
    : gamma(Tensor::full({features}, 1.0, true)),
      beta(Tensor::zeros({features}, true)),
      norm_index(norm_index_in),
      epsilon(epsilon_in) {
  if (epsilon <= 0.0) throw DomainError("layer_norm: epsilon must be positive");
}

Tensor LayerNormLayer::forward(const Tensor& x, Mode, CaptureSink* sink) {
  if (x.shape().size() != 2 || x.shape()[1] != gamma.shape()[0]) {
    throw ShapeError("layer_norm: expected [n," +
                     std::to_string(gamma.shape()[0]) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (d < 2) throw ContractError("layer_norm: needs >= 2 features per sample");
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();

  std::vector<double> invstd(n), xhat(n * d), out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += xv[i * d + j];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - m;
      v += c * c;
    }
    v /= static_cast<double>(d);
    invstd[i] = 1.0 / std::sqrt(v + epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[i * d + j] - m) * invstd[i];
      xhat[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  }
  capture_rows(sink, norm_index, xhat, out, n, d);

  Tensor result(x.shape(), std::move(out));
  if (grad_enabled({&x, &gamma, &beta})) {
    result.set_requires_grad(true);
    DataPtr xd = x.data(), gd = gamma.data(), bd = beta.data(),
            od = result.data();
    record_node([xd, gd, bd, od, xhat, invstd, n, d] {
      if (od->grad.empty()) return;
      const auto& up = od->grad;
      if (gd->requires_grad) {
        if (gd->grad.empty()) gd->grad.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            gd->grad[j] += up[i * d + j] * xhat[i * d + j];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) bd->grad[j] += up[i * d + j];
      }
      if (!xd->requires_grad) return;
      if (xd->grad.empty()) xd->grad.assign(n * d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = up[i * d + j] * gd->values[j];
          sum_dh += dh;
          sum_dh_h += dh * xhat[i * d + j];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = up[i * d + j] * gd->values[j];
          xd->grad[i * d + j] +=
              invstd[i] * inv_d *
              (static_cast<double>(d) * dh - sum_dh -
               xhat[i * d + j] * sum_dh_h);
        }
      }
    });
  }
  return result;
}

void LayerNormLayer::collect_params(std::vector<Tensor>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

std::unique_ptr<Layer> LayerNormLayer::clone() const {
  auto copy = std::make_unique<LayerNormLayer>(gamma.shape()[0], norm_index,
                                               epsilon);
  copy->gamma = gamma.clone();
  copy->beta = beta.clone();
  return copy;
}

Tensor batch_norm_forward(BatchNorm1dLayer& state, const Tensor& x, Mode mode) {
  return state.forward(x, mode, nullptr);
}

Tensor layer_norm_forward(const Tensor& gamma, const Tensor& beta,
                          const Tensor& x, double epsilon) {
  LayerNormLayer tmp(gamma.shape()[0], 0, epsilon);
  tmp.gamma = gamma;
  tmp.beta = beta;
  return tmp.forward(x, Mode::Eval, nullptr);
}

// ---------------------------------------------------------------------------
// InstrumentedModel
// ---------------------------------------------------------------------------

InstrumentedModel::InstrumentedModel(
    ModelArch arch, std::vector<std::unique_ptr<Layer>> layers)
    : arch_(std::move(arch)), layers_(std::move(layers)) {}

Tensor InstrumentedModel::forward(const Tensor& x, Mode mode, bool capture,
                                  std::size_t tape_from_layer) {
  Shape expected = arch_.input_shape;
  expected.insert(expected.begin(), x.shape().empty() ? 0 : x.shape()[0]);
  if (x.shape() != expected) {
    throw ShapeError("model " + arch_.name + ": expected input " +
                     shape_str(expected) + ", got " + shape_str(x.shape()));
  }
  CaptureSink sink{&captured_, arch_.norm.capture_post_affine};
  CaptureSink* sink_ptr = capture ? &sink : nullptr;
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i < tape_from_layer) {
      // Frozen prefix: fixed feature extractor, off the tape, running stats
      // untouched.
      NoTapeScope guard;
      h = layers_[i]->forward(h, Mode::Eval, sink_ptr);
    } else {
      h = layers_[i]->forward(h, mode, sink_ptr);
    }
  }
  return h;
}

std::vector<Tensor> InstrumentedModel::params() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) layer->collect_params(out);
  return out;
}

std::vector<Tensor> InstrumentedModel::buffers() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) layer->collect_buffers(out);
  return out;
}

std::size_t InstrumentedModel::param_scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params()) total += p.numel();
  return total;
}

std::size_t InstrumentedModel::norm_layer_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) count += layer->is_norm() ? 1 : 0;
  return count;
}

std::size_t InstrumentedModel::norm_layer_position(std::size_t j) const {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->is_norm() && ++seen == j) return i;
  }
  throw DomainError("model has no normalization layer #" + std::to_string(j));
}

InstrumentedModel InstrumentedModel::clone() const {
  std::vector<std::unique_ptr<Layer>> copies;
  copies.reserve(layers_.size());
  for (const auto& layer : layers_) copies.push_back(layer->clone());
  InstrumentedModel out(arch_, std::move(copies));
  out.lineage = lineage;
  return out;
}

// ---------------------------------------------------------------------------
// Architectures / init / freeze
// ---------------------------------------------------------------------------

namespace {

void validate_arch(const ModelArch& arch) {
  if (arch.classes < 2) throw DomainError("arch: needs >= 2 classes");
  if (arch.hidden.size() < 3) {
    throw DomainError(
        "arch: needs >= 3 hidden blocks so every model has >= 3 "
        "normalization layers");
  }
  for (std::size_t hdim : arch.hidden) {
    if (hdim < 2) throw DomainError("arch: hidden widths must be >= 2");
  }
}

Tensor draw_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

ModelArch make_mlp_bn_arch(std::size_t input_dim,
                           std::vector<std::size_t> hidden,
                           std::size_t classes) {
  ModelArch arch{"mlp_bn", {input_dim}, std::move(hidden), classes, {}};
  validate_arch(arch);
  return arch;
}

ModelArch make_mlp_ln_arch(std::size_t input_dim,
                           std::vector<std::size_t> hidden,
                           std::size_t classes) {
  ModelArch arch{"mlp_ln", {input_dim}, std::move(hidden), classes, {}};
  validate_arch(arch);
  return arch;
}

ModelArch make_cnn_bn_arch(Shape input_chw, std::vector<std::size_t> channels,
                           std::size_t classes) {
  if (input_chw.size() != 3) {
    throw DomainError("cnn arch: input shape must be {c,h,w}");
  }
  ModelArch arch{"cnn_bn", std::move(input_chw), std::move(channels), classes,
                 {}};
  validate_arch(arch);
  return arch;
}

InstrumentedModel init_params(const ModelArch& arch, std::uint64_t seed) {
  validate_arch(arch);
  Rng rng(seed_for(seed, "init"));
  std::vector<std::unique_ptr<Layer>> layers;
  int norm_index = 0;

  if (arch.name == "mlp_bn" || arch.name == "mlp_ln") {
    if (arch.input_shape.size() != 1) {
      throw DomainError("mlp arch: input shape must be {d}");
    }
    std::size_t prev = arch.input_shape[0];
    for (std::size_t width : arch.hidden) {
      layers.push_back(std::make_unique<LinearLayer>(
          draw_uniform(rng, {prev, width}, prev), Tensor::zeros({width}, true)));
      ++norm_index;
      if (arch.name == "mlp_bn") {
        layers.push_back(std::make_unique<BatchNorm1dLayer>(
            width, norm_index, arch.norm.epsilon, arch.norm.momentum));
      } else {
        layers.push_back(std::make_unique<LayerNormLayer>(width, norm_index,
                                                          arch.norm.epsilon));
      }
      layers.push_back(std::make_unique<ReluLayer>());
      prev = width;
    }
    layers.push_back(std::make_unique<LinearLayer>(
        draw_uniform(rng, {prev, arch.classes}, prev),
        Tensor::zeros({arch.classes}, true)));
  } else if (arch.name == "cnn_bn") {
    if (arch.input_shape.size() != 3) {
      throw DomainError("cnn arch: input shape must be {c,h,w}");
    }
    std::size_t prev_c = arch.input_shape[0];
    std::size_t h = arch.input_shape[1], w = arch.input_shape[2];
    for (std::size_t b = 0; b < arch.hidden.size(); ++b) {
      const std::size_t out_c = arch.hidden[b];
      const int stride = b == 0 ? 1 : 2;
      layers.push_back(std::make_unique<Conv2dLayer>(
          draw_uniform(rng, {out_c, prev_c, 3, 3}, prev_c * 9),
          Tensor::zeros({out_c}, true), stride, 1));
      ++norm_index;
      layers.push_back(std::make_unique<BatchNorm2dLayer>(
          out_c, norm_index, arch.norm.epsilon, arch.norm.momentum));
      layers.push_back(std::make_unique<ReluLayer>());
      h = (h + 2 - 3) / static_cast<std::size_t>(stride) + 1;
      w = (w + 2 - 3) / static_cast<std::size_t>(stride) + 1;
      if (h == 0 || w == 0) {
        throw DomainError("cnn arch: input too small for the block stack");
      }
      prev_c = out_c;
    }
    layers.push_back(std::make_unique<FlattenLayer>());
    layers.push_back(std::make_unique<LinearLayer>(
        draw_uniform(rng, {prev_c * h * w, arch.classes}, prev_c * h * w),
        Tensor::zeros({arch.classes}, true)));
  } else {
    throw DomainError("unknown architecture: " + arch.name);
  }

  InstrumentedModel model(arch, std::move(layers));
  model.lineage["init"] = seed;
  return model;
}

TrainableMask freeze_prefix(const InstrumentedModel& model, std::size_t k) {
  const std::size_t L = model.norm_layer_count();
  if (k < 1 || k > L + 1) {
    throw DomainError("freeze_prefix: k must be in [1," + std::to_string(L + 1) +
                      "], got " + std::to_string(k));
  }
  std::size_t cut;
  if (k == 1) {
    cut = 0;
  } else if (k == L + 1) {
    cut = model.layer_count();
  } else {
    // Block k starts right after norm layer k-1.
    cut = model.norm_layer_position(k - 1) + 1;
  }
  TrainableMask mask;
  mask.first_trainable_layer = cut;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    std::vector<Tensor> layer_params;
    model.layer(i).collect_params(layer_params);
    for (std::size_t p = 0; p < layer_params.size(); ++p) {
      mask.per_tensor.push_back(i >= cut ? 1 : 0);
    }
  }
  return mask;
}

}  // namespace ub
