#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ub/tensor.hpp"

namespace ub {

enum class Mode { Train, Eval };

// captured[l] holds the post-normalization feature vectors recorded at the
// l-th normalization layer (1-based, forward order). For conv feature maps
// every spatial position of every sample contributes one channel-count
// vector, ordered sample-major then row-major over positions.
using CaptureMap = std::map<int, std::vector<std::vector<double>>>;

struct CaptureSink {
  CaptureMap* map = nullptr;
  bool post_affine = false;  // default: pre-affine normalized activations
};

struct NormSettings {
  double epsilon = 1e-5;
  double momentum = 0.1;
  bool capture_post_affine = false;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) = 0;
  virtual void collect_params(std::vector<Tensor>& out) const {}
  virtual void collect_buffers(std::vector<Tensor>& out) const {}
  virtual bool is_norm() const { return false; }
  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class LinearLayer : public Layer {
 public:
  LinearLayer(Tensor weight, Tensor bias);
  Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) override;
  void collect_params(std::vector<Tensor>& out) const override;
  std::string kind() const override { return "linear"; }
  std::unique_ptr<Layer> clone() const override;

  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(Tensor kernel, Tensor bias, int stride, int padding);
  Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) override;
  void collect_params(std::vector<Tensor>& out) const override;
  std::string kind() const override { return "conv2d"; }
  std::unique_ptr<Layer> clone() const override;

  Tensor kernel;  // [out_c, in_c, kh, kw]
  Tensor bias;    // [out_c]
  int stride;
  int padding;
};

class ReluLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) override;
  std::string kind() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override;
};

class FlattenLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) override;
  std::string kind() const override { return "flatten"; }
  std::unique_ptr<Layer> clone() const override;
};

// Normalizes each feature over the batch. Train mode uses batch statistics
// (biased variance, divisor n) and updates the running stats with momentum;
// eval mode uses the running stats. Requires n >= 2 in train mode.
class BatchNorm1dLayer : public Layer {
 public:
  BatchNorm1dLayer(std::size_t features, int norm_index, double epsilon,
                   double momentum);
  Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) override;
  void collect_params(std::vector<Tensor>& out) const override;
  void collect_buffers(std::vector<Tensor>& out) const override;
  bool is_norm() const override { return true; }
  std::string kind() const override { return "batch_norm1d"; }
  std::unique_ptr<Layer> clone() const override;

  Tensor gamma, beta;
  Tensor running_mean, running_var;
  int norm_index;
  double epsilon;
  double momentum;
};

// Per-channel batch norm over [n,c,h,w]; statistics pool batch and spatial
// positions.
class BatchNorm2dLayer : public Layer {
 public:
  BatchNorm2dLayer(std::size_t channels, int norm_index, double epsilon,
                   double momentum);
  Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) override;
  void collect_params(std::vector<Tensor>& out) const override;
  void collect_buffers(std::vector<Tensor>& out) const override;
  bool is_norm() const override { return true; }
  std::string kind() const override { return "batch_norm2d"; }
  std::unique_ptr<Layer> clone() const override;

  Tensor gamma, beta;
  Tensor running_mean, running_var;
  int norm_index;
  double epsilon;
  double momentum;
};

// Normalizes all features within each sample (biased variance, divisor d).
// Requires d >= 2.
class LayerNormLayer : public Layer {
 public:
  LayerNormLayer(std::size_t features, int norm_index, double epsilon);
  Tensor forward(const Tensor& x, Mode mode, CaptureSink* sink) override;
  void collect_params(std::vector<Tensor>& out) const override;
  bool is_norm() const override { return true; }
  std::string kind() const override { return "layer_norm"; }
  std::unique_ptr<Layer> clone() const override;

  Tensor gamma, beta;
  int norm_index;
  double epsilon;
};

// Free functions mirroring the layer math for standalone use and tests.
Tensor batch_norm_forward(BatchNorm1dLayer& state, const Tensor& x, Mode mode);
Tensor layer_norm_forward(const Tensor& gamma, const Tensor& beta,
                          const Tensor& x, double epsilon);

struct ModelArch {
  std::string name;                 // mlp_bn | cnn_bn | mlp_ln
  Shape input_shape;                // per-sample shape: {d} or {c,h,w}
  std::vector<std::size_t> hidden;  // mlp widths / cnn channels, >= 3 entries
  std::size_t classes = 0;
  NormSettings norm;
};

// Layered classifier whose normalization layers can record their
// post-normalization features.
class InstrumentedModel {
 public:
  InstrumentedModel(ModelArch arch,
                    std::vector<std::unique_ptr<Layer>> layers);

  // Runs the layer stack. When capture is true every normalization layer
  // appends its normalized feature vectors to captured(). Layers with index
  // < tape_from_layer run tape-free in eval mode (the frozen prefix of
  // partial fine-tuning).
  Tensor forward(const Tensor& x, Mode mode, bool capture = false,
                 std::size_t tape_from_layer = 0);

  const CaptureMap& captured() const { return captured_; }
  void clear_capture() { captured_.clear(); }

  std::vector<Tensor> params() const;
  std::vector<Tensor> buffers() const;
  std::size_t param_scalar_count() const;

  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  // Number of normalization layers L.
  std::size_t norm_layer_count() const;
  // Layer-list index of the j-th (1-based) normalization layer.
  std::size_t norm_layer_position(std::size_t j) const;

  const ModelArch& arch() const { return arch_; }

  InstrumentedModel clone() const;

  // Seed lineage: which purpose-split seeds produced this model.
  std::map<std::string, std::uint64_t> lineage;

 private:
  ModelArch arch_;
  std::vector<std::unique_ptr<Layer>> layers_;
  CaptureMap captured_;
};

// Deterministic initialization: weights uniform in +-sqrt(6/fan_in), biases
// zero, gamma 1, beta 0. Identical (arch, seed) gives bit-identical
// parameters.
InstrumentedModel init_params(const ModelArch& arch, std::uint64_t seed);

// Trainable-parameter mask produced by freeze_prefix.
struct TrainableMask {
  // Aligned with InstrumentedModel::params(); nonzero = optimizer may update.
  std::vector<std::uint8_t> per_tensor;
  // Layers before this index form the frozen prefix and run tape-free.
  std::size_t first_trainable_layer = 0;

  bool tensor_trainable(std::size_t i) const {
    return per_tensor.empty() || per_tensor[i] != 0;
  }
};

// Freezes everything before the k-th normalization layer's block. Blocks are
// delimited by normalization layers: block k starts right after norm layer
// k-1, so k=1 trains everything and k=L+1 freezes everything (a step on a
// fully frozen model is a no-op).
TrainableMask freeze_prefix(const InstrumentedModel& model, std::size_t k);

ModelArch make_mlp_bn_arch(std::size_t input_dim,
                           std::vector<std::size_t> hidden,
                           std::size_t classes);
ModelArch make_mlp_ln_arch(std::size_t input_dim,
                           std::vector<std::size_t> hidden,
                           std::size_t classes);
ModelArch make_cnn_bn_arch(Shape input_chw, std::vector<std::size_t> channels,
                           std::size_t classes);

}  // namespace ub
