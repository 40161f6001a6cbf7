#include "pacbayes/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "pacbayes/errors.hpp"
#include "pacbayes/rng.hpp"

namespace pacbayes {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw IoError("truncated header in " + path.string(), bytes.size());
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << "0x" << std::hex;
  s.width(8);
  s.fill('0');
  s << v;
  return s.str();
}

void check_magic(std::uint32_t actual, std::uint32_t expected, const std::filesystem::path& path) {
  if (actual != expected) {
    throw FormatError("bad IDX magic in " + path.string() + ": expected " + hex32(expected) +
                      ", got " + hex32(actual));
  }
}

std::uint8_t to_byte(double v) {
  if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
    throw ArgumentError("pixel value not an integer in [0, 255]");
  }
  return static_cast<std::uint8_t>(v);
}

// Per-class row indices of `ds` in ascending order.
std::vector<std::vector<std::size_t>> rows_by_class(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  return by_class;
}

// Partial Fisher-Yates: the first m entries become a uniform sample without
// replacement.
void partial_shuffle(std::vector<std::size_t>& v, std::size_t m, Rng& rng) {
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + uniform_index(rng, v.size() - i);
    std::swap(v[i], v[j]);
  }
}

}  // namespace

void LabeledDataset::validate() const {
  if (labels.empty()) throw ArgumentError("dataset is empty");
  if (features.cols() == 0) throw ArgumentError("dataset has zero feature dimension");
  if (num_classes < 2) throw ArgumentError("dataset needs at least 2 classes");
  if (features.rows() != labels.size()) {
    throw ArgumentError("feature rows (" + std::to_string(features.rows()) +
                        ") do not match label count (" + std::to_string(labels.size()) + ")");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ArgumentError("label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
  }
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

LabeledDataset LabeledDataset::select(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.features = Matrix(indices.size(), dim());
  out.labels.reserve(indices.size());
  out.num_classes = num_classes;
  out.name = name;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = features.row(indices[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ArgumentError("synthetic data needs at least 2 classes");
  if (dim == 0 || samples_per_class == 0) throw ArgumentError("synthetic counts must be positive");
  if (dim < static_cast<std::size_t>(num_classes)) {
    throw ArgumentError("synthetic dim must be at least the class count (centres on axes)");
  }
  if (!(cluster_separation > 0.0)) throw ArgumentError("cluster_separation must be positive");
  if (!(noise_std >= 0.0)) throw ArgumentError("noise_std must be nonnegative");
}

LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  check_magic(read_be32(img, 0, images_path), kIdxImagesMagic, images_path);
  const std::uint32_t n_images = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);

  check_magic(read_be32(lab, 0, labels_path), kIdxLabelsMagic, labels_path);
  const std::uint32_t n_labels = read_be32(lab, 4, labels_path);

  if (n_images != n_labels) {
    throw ConsistencyError("image count " + std::to_string(n_images) +
                           " does not match label count " + std::to_string(n_labels));
  }
  if (n_images == 0) throw FormatError("IDX files contain no samples");

  const std::size_t d = std::size_t{rows} * cols;
  const std::size_t img_need = 16 + std::size_t{n_images} * d;
  if (img.size() < img_need) {
    throw IoError("truncated image data in " + images_path.string() + ": need " +
                      std::to_string(img_need) + " bytes",
                  img.size());
  }
  const std::size_t lab_need = 8 + std::size_t{n_labels};
  if (lab.size() < lab_need) {
    throw IoError("truncated label data in " + labels_path.string() + ": need " +
                      std::to_string(lab_need) + " bytes",
                  lab.size());
  }

  LabeledDataset ds;
  ds.name = "mnist";
  ds.num_classes = 10;
  ds.features = Matrix(n_images, d);
  auto values = ds.features.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = img[16 + i];
  ds.labels.resize(n_labels);
  for (std::size_t i = 0; i < n_labels; ++i) {
    const std::uint8_t y = lab[8 + i];
    if (y >= 10) {
      throw FormatError("label byte " + std::to_string(y) + " >= 10 at offset " +
                        std::to_string(8 + i) + " in " + labels_path.string());
    }
    ds.labels[i] = y;
  }
  ds.validate();
  return ds;
}

LabeledDataset load_cifar10_bin(std::span<const std::filesystem::path> paths) {
  std::vector<std::uint8_t> all;
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecordBytes != 0) {
      throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                        " is not a multiple of " + std::to_string(kCifarRecordBytes));
    }
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
      if (bytes[off] >= 10) {
        throw FormatError(path.string() + ": label byte " + std::to_string(bytes[off]) +
                          " >= 10 at offset " + std::to_string(off));
      }
    }
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  const std::size_t n = all.size() / kCifarRecordBytes;
  if (n == 0) throw FormatError("CIFAR-10 files contain no records");

  LabeledDataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.features = Matrix(n, kCifarPixels);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = all.data() + i * kCifarRecordBytes;
    ds.labels[i] = rec[0];
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < kCifarPixels; ++j) row[j] = rec[1 + j];
  }
  return ds;
}

std::vector<std::uint8_t> encode_idx_images(const LabeledDataset& ds, std::uint32_t rows,
                                            std::uint32_t cols) {
  if (std::size_t{rows} * cols != ds.dim()) throw ArgumentError("rows * cols must equal dim");
  std::vector<std::uint8_t> out;
  out.reserve(16 + ds.features.size());
  append_be32(out, kIdxImagesMagic);
  append_be32(out, static_cast<std::uint32_t>(ds.size()));
  append_be32(out, rows);
  append_be32(out, cols);
  for (double v : ds.features.values()) out.push_back(to_byte(v));
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const LabeledDataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + ds.size());
  append_be32(out, kIdxLabelsMagic);
  append_be32(out, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) out.push_back(static_cast<std::uint8_t>(y));
  return out;
}

std::vector<std::uint8_t> encode_cifar10(const LabeledDataset& ds) {
  if (ds.dim() != kCifarPixels) throw ArgumentError("CIFAR-10 records need 3072 features");
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * kCifarRecordBytes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (double v : ds.features.row(i)) out.push_back(to_byte(v));
  }
  return out;
}

LabeledDataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t k = static_cast<std::size_t>(spec.num_classes);
  const double offset = spec.cluster_separation / std::sqrt(2.0);

  LabeledDataset ds;
  ds.name = "synthetic";
  ds.num_classes = spec.num_classes;
  ds.features = Matrix(k * spec.samples_per_class, spec.dim);
  ds.labels.resize(k * spec.samples_per_class);

  Rng rng(spec.seed);
  NormalSampler normal;
  std::size_t i = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++i) {
      auto row = ds.features.row(i);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        const double centre = (j == c) ? offset : 0.0;
        row[j] = centre + (spec.noise_std > 0.0 ? spec.noise_std * normal(rng) : 0.0);
      }
      ds.labels[i] = static_cast<int>(c);
    }
  }
  return ds;
}

ScalarStats scalar_stats(const LabeledDataset& ds) {
  const auto v = ds.features.values();
  if (v.size() < 2) throw ArgumentError("normalization needs at least 2 entries");
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return {mean, std::max(stddev, kStdFloor)};
}

LabeledDataset apply_normalization(const LabeledDataset& ds, const ScalarStats& stats) {
  LabeledDataset out = ds;
  for (double& x : out.features.values()) x = (x - stats.mean) / stats.stddev;
  return out;
}

LabeledDataset normalize(const LabeledDataset& ds) { return apply_normalization(ds, scalar_stats(ds)); }

LabelRandomization randomize_labels_tracked(const LabeledDataset& ds, double r, std::uint64_t seed) {
  if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("randomization fraction must be in [0, 1]");
  LabelRandomization out{ds, {}};
  Rng rng(seed);
  const auto k = static_cast<std::uint64_t>(ds.num_classes);
  for (auto& members : rows_by_class(ds)) {
    const auto m = static_cast<std::size_t>(std::llround(r * static_cast<double>(members.size())));
    partial_shuffle(members, m, rng);
    for (std::size_t i = 0; i < m; ++i) {
      out.data.labels[members[i]] = static_cast<int>(uniform_index(rng, k));
      out.redrawn.push_back(members[i]);
    }
  }
  std::sort(out.redrawn.begin(), out.redrawn.end());
  return out;
}

LabeledDataset randomize_labels(const LabeledDataset& ds, double r, std::uint64_t seed) {
  return randomize_labels_tracked(ds, r, seed).data;
}

namespace {

// Chooses `per_class` rows of every class, returning (chosen, rest) per class.
std::vector<std::vector<std::size_t>> choose_balanced(const LabeledDataset& ds,
                                                      std::size_t per_class, Rng& rng) {
  auto by_class = rows_by_class(ds);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < per_class) {
      throw ArgumentError("class " + std::to_string(c) + " has " +
                          std::to_string(by_class[c].size()) + " rows, need " +
                          std::to_string(per_class));
    }
    partial_shuffle(by_class[c], per_class, rng);
  }
  return by_class;
}

}  // namespace

LabeledDataset balanced_subsample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed) {
  return balanced_split(ds, n, 0, seed).train;
}

DatasetSplit balanced_split(const LabeledDataset& ds, std::size_t n_train, std::size_t n_test,
                            std::uint64_t seed) {
  const auto k = static_cast<std::size_t>(ds.num_classes);
  if (k == 0 || n_train % k != 0 || n_test % k != 0) {
    throw ArgumentError("sample sizes must be divisible by the class count " + std::to_string(k));
  }
  const std::size_t train_pc = n_train / k;
  const std::size_t test_pc = n_test / k;
  Rng rng(seed);
  const auto by_class = choose_balanced(ds, train_pc + test_pc, rng);

  std::vector<std::size_t> train_idx, test_idx;
  for (const auto& members : by_class) {
    std::vector<std::size_t> tr(members.begin(), members.begin() + static_cast<long>(train_pc));
    std::vector<std::size_t> te(members.begin() + static_cast<long>(train_pc),
                                members.begin() + static_cast<long>(train_pc + test_pc));
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    train_idx.insert(train_idx.end(), tr.begin(), tr.end());
    test_idx.insert(test_idx.end(), te.begin(), te.end());
  }
  return {ds.select(train_idx), ds.select(test_idx)};
}

}  // namespace pacbayes
