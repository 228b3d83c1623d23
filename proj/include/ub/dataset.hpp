#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ub/tensor.hpp"

namespace ub {

// Immutable labeled dataset. Inputs are 64-bit floats in [0,1], stored
// row-major as N x sample_shape.
struct LabeledDataset {
  Shape sample_shape;
  std::vector<double> inputs;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }

  // Gathers the given sample indices into a batch tensor [k, sample_shape...].
  Tensor gather(const std::vector<std::size_t>& indices) const;
  std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const;

  // Content fingerprint (inputs, labels, shape); order-sensitive.
  std::uint64_t digest() const;
};

// Deterministic Gaussian class blobs. Centers depend only on (seed,
// center_scale, dim, classes); the noise of sample i of class c depends only
// on (seed, c, index_offset + i), so two specs that differ in index_offset
// draw disjoint samples around identical centers. sigma holds either one
// shared value or one per class.
struct SyntheticBlobSpec {
  std::size_t classes = 0;
  std::size_t per_class_n = 0;
  std::size_t dim = 0;
  double center_scale = 0.5;
  std::vector<double> sigma{0.1};
  std::uint64_t seed = 0;
  std::size_t index_offset = 0;
};

LabeledDataset make_blobs(const SyntheticBlobSpec& spec);

// IDX image/label pair (big-endian magic 0x00000803 / 0x00000801). Pixels
// are scaled to [0,1] by /255; sample shape is {1, rows, cols}.
LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path);

// Writes the dataset as an IDX pair, quantizing values to round(v*255).
// Byte-valued datasets (anything previously loaded from IDX) round-trip
// bit-exactly.
void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path);

// Retain/forget x train/test quadrants for one forget class.
struct ClassSplitDataset {
  LabeledDataset retain_train, retain_test, forget_train, forget_test;
  int forget_class = -1;
};

// Exact partition by label; original index order is preserved within each
// part.
ClassSplitDataset split_retain_forget(const LabeledDataset& train,
                                      const LabeledDataset& test,
                                      int forget_class);

// Batches covering a permutation of 0..n-1. The permutation is a pure
// function of (seed, epoch); shuffle=false yields the identity order.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n,
                                                 std::size_t batch_size,
                                                 std::uint64_t seed,
                                                 std::uint64_t epoch,
                                                 bool shuffle = true);

// Concatenation preserving order (a first). Shapes and class counts must
// agree.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

}  // namespace ub
