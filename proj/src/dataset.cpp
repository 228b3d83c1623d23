#include "ub/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ub/error.hpp"
#include "ub/rng.hpp"

namespace ub {

Tensor LabeledDataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t k = indices.size();
  const std::size_t m = sample_numel();
  std::vector<double> out(k * m);
  for (std::size_t i = 0; i < k; ++i) {
    if (indices[i] >= size()) {
      throw DomainError("gather: index " + std::to_string(indices[i]) +
                        " out of range");
    }
    std::copy_n(inputs.begin() + static_cast<long>(indices[i] * m), m,
                out.begin() + static_cast<long>(i * m));
  }
  Shape shape = sample_shape;
  shape.insert(shape.begin(), k);
  return Tensor(std::move(shape), std::move(out));
}

std::vector<int> LabeledDataset::gather_labels(
    const std::vector<std::size_t>& indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

std::uint64_t LabeledDataset::digest() const {
  std::string bytes;
  bytes.reserve(inputs.size() * 8 + labels.size() * 4 + 16);
  auto push = [&bytes](const void* p, std::size_t n) {
    bytes.append(static_cast<const char*>(p), n);
  };
  for (std::size_t d : sample_shape) push(&d, sizeof(d));
  for (double v : inputs) push(&v, sizeof(v));
  for (int l : labels) push(&l, sizeof(l));
  push(&classes, sizeof(classes));
  return fnv1a64(bytes);
}

// ---------------------------------------------------------------------------
// Blobs
// ---------------------------------------------------------------------------

LabeledDataset make_blobs(const SyntheticBlobSpec& spec) {
  if (spec.classes < 1 || spec.per_class_n < 1 || spec.dim < 1) {
    throw DomainError("make_blobs: classes, per_class_n and dim must be >= 1");
  }
  if (spec.sigma.empty() ||
      (spec.sigma.size() != 1 && spec.sigma.size() != spec.classes)) {
    throw DomainError("make_blobs: sigma needs 1 or classes entries");
  }
  for (double s : spec.sigma) {
    if (s < 0.0) throw DomainError("make_blobs: sigma must be >= 0");
  }

  // Centers: one draw sequence, independent of per_class_n / index_offset.
  std::vector<std::vector<double>> centers(spec.classes,
                                           std::vector<double>(spec.dim));
  Rng center_rng(seed_for(spec.seed, "blob-centers"));
  for (auto& center : centers)
    for (double& coord : center)
      coord = 0.5 + spec.center_scale * center_rng.uniform(-0.5, 0.5);
  for (std::size_t a = 0; a < spec.classes; ++a)
    for (std::size_t b = a + 1; b < spec.classes; ++b)
      if (centers[a] == centers[b])
        throw DomainError("make_blobs: degenerate duplicate centers");

  LabeledDataset ds;
  ds.sample_shape = {spec.dim};
  ds.classes = spec.classes;
  ds.inputs.reserve(spec.classes * spec.per_class_n * spec.dim);
  ds.labels.reserve(spec.classes * spec.per_class_n);
  const std::uint64_t sample_base = seed_for(spec.seed, "blob-samples");
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double sigma = spec.sigma.size() == 1 ? spec.sigma[0] : spec.sigma[c];
    for (std::size_t i = 0; i < spec.per_class_n; ++i) {
      const std::uint64_t idx =
          static_cast<std::uint64_t>(spec.index_offset + i);
      Rng rng(sample_base ^ (0x9e3779b97f4a7c15ULL * (c + 1)) ^
              (0xd1b54a32d192ed03ULL * (idx + 1)));
      for (std::size_t j = 0; j < spec.dim; ++j) {
        const double v = centers[c][j] + sigma * rng.normal();
        ds.inputs.push_back(std::min(std::max(v, 0.0), 1.0));
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path,
                          std::size_t offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(path + ": truncated at offset " + std::to_string(offset));
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path);

  const std::uint32_t img_magic = read_u32_be(img, images_path, 0);
  if (img_magic != kImagesMagic) {
    throw FormatError(images_path + ": bad magic at offset 0 (expected " +
                      std::to_string(kImagesMagic) + ", got " +
                      std::to_string(img_magic) + ")");
  }
  const std::uint32_t count = read_u32_be(img, images_path, 4);
  const std::uint32_t rows = read_u32_be(img, images_path, 8);
  const std::uint32_t cols = read_u32_be(img, images_path, 12);
  if (count == 0) throw FormatError(images_path + ": empty item count at offset 4");
  if (rows == 0 || cols == 0) {
    throw FormatError(images_path + ": zero image dimensions at offset 8");
  }

  const std::uint32_t lab_magic = read_u32_be(lab, labels_path, 0);
  if (lab_magic != kLabelsMagic) {
    throw FormatError(labels_path + ": bad magic at offset 0 (expected " +
                      std::to_string(kLabelsMagic) + ", got " +
                      std::to_string(lab_magic) + ")");
  }
  const std::uint32_t lab_count = read_u32_be(lab, labels_path, 4);
  if (lab_count != count) {
    throw FormatError(labels_path + ": label count " +
                      std::to_string(lab_count) + " does not match image count " +
                      std::to_string(count));
  }

  const std::size_t pixels = std::size_t{rows} * cols;
  std::vector<unsigned char> buf(pixels);
  LabeledDataset ds;
  ds.sample_shape = {1, rows, cols};
  ds.inputs.reserve(std::size_t{count} * pixels);
  ds.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()),
                  static_cast<std::streamsize>(pixels))) {
      throw FormatError(images_path + ": truncated at offset " +
                        std::to_string(16 + std::size_t{i} * pixels));
    }
    for (unsigned char px : buf) ds.inputs.push_back(px / 255.0);
  }
  if (img.peek() != std::ifstream::traits_type::eof()) {
    throw FormatError(images_path + ": trailing bytes after offset " +
                      std::to_string(16 + std::size_t{count} * pixels));
  }
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    char c;
    if (!lab.get(c)) {
      throw FormatError(labels_path + ": truncated at offset " +
                        std::to_string(8 + i));
    }
    const int label = static_cast<unsigned char>(c);
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  if (lab.peek() != std::ifstream::traits_type::eof()) {
    throw FormatError(labels_path + ": trailing bytes after offset " +
                      std::to_string(8 + std::size_t{count}));
  }
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  if (ds.size() == 0) throw DomainError("save_idx: empty dataset");
  std::uint32_t rows, cols;
  if (ds.sample_shape.size() == 3 && ds.sample_shape[0] == 1) {
    rows = static_cast<std::uint32_t>(ds.sample_shape[1]);
    cols = static_cast<std::uint32_t>(ds.sample_shape[2]);
  } else if (ds.sample_shape.size() == 2) {
    rows = static_cast<std::uint32_t>(ds.sample_shape[0]);
    cols = static_cast<std::uint32_t>(ds.sample_shape[1]);
  } else if (ds.sample_shape.size() == 1) {
    rows = 1;
    cols = static_cast<std::uint32_t>(ds.sample_shape[0]);
  } else {
    throw DomainError("save_idx: sample shape " + shape_str(ds.sample_shape) +
                      " is not single-channel image-like");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path + " for writing");
  write_u32_be(img, kImagesMagic);
  write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
  write_u32_be(img, rows);
  write_u32_be(img, cols);
  for (double v : ds.inputs) {
    const double q = std::min(std::max(v, 0.0), 1.0) * 255.0;
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(q))));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path + " for writing");
  write_u32_be(lab, kLabelsMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) {
    if (l < 0 || l > 255) throw DomainError("save_idx: label out of byte range");
    lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  }
}

// ---------------------------------------------------------------------------
// Split / batching / concat
// ---------------------------------------------------------------------------

namespace {
LabeledDataset filter_by_label(const LabeledDataset& src, int label,
                               bool keep_matching) {
  LabeledDataset out;
  out.sample_shape = src.sample_shape;
  out.classes = src.classes;
  const std::size_t m = src.sample_numel();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if ((src.labels[i] == label) == keep_matching) {
      out.inputs.insert(out.inputs.end(),
                        src.inputs.begin() + static_cast<long>(i * m),
                        src.inputs.begin() + static_cast<long>((i + 1) * m));
      out.labels.push_back(src.labels[i]);
    }
  }
  return out;
}
}  // namespace

ClassSplitDataset split_retain_forget(const LabeledDataset& train,
                                      const LabeledDataset& test,
                                      int forget_class) {
  if (forget_class < 0 ||
      static_cast<std::size_t>(forget_class) >= train.classes) {
    throw DomainError("split_retain_forget: forget class " +
                      std::to_string(forget_class) + " outside [0," +
                      std::to_string(train.classes) + ")");
  }
  if (train.classes != test.classes ||
      train.sample_shape != test.sample_shape) {
    throw DomainError("split_retain_forget: train/test schema mismatch");
  }
  ClassSplitDataset split;
  split.forget_class = forget_class;
  split.retain_train = filter_by_label(train, forget_class, false);
  split.forget_train = filter_by_label(train, forget_class, true);
  split.retain_test = filter_by_label(test, forget_class, false);
  split.forget_test = filter_by_label(test, forget_class, true);
  return split;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n,
                                                 std::size_t batch_size,
                                                 std::uint64_t seed,
                                                 std::uint64_t epoch,
                                                 bool shuffle) {
  if (batch_size < 1) throw DomainError("batch_iter: batch_size must be >= 1");
  std::vector<std::size_t> order;
  if (shuffle) {
    Rng rng(seed_for(seed, "shuffle", epoch));
    order = rng.permutation(n);
  } else {
    order.resize(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, n);
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.sample_shape != b.sample_shape || a.classes != b.classes) {
    throw DomainError("concat: dataset schema mismatch");
  }
  LabeledDataset out = a;
  out.inputs.insert(out.inputs.end(), b.inputs.begin(), b.inputs.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

}  // namespace ub
