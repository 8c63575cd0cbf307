#include "noisyforge/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "noisyforge/error.hpp"
#include "noisyforge/rng.hpp"

namespace noisyforge {
namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::size_t channel_count(const Tensor& t) { return t.rank() >= 2 ? t.dim(1) : 1; }

void check_labels(const std::vector<int>& labels, std::size_t num_classes, const std::string& origin) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw FormatError(origin + ": label " + std::to_string(labels[i]) + " at item " + std::to_string(i) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.dim(0);
  Shape shape = parts.front().shape();
  shape[0] = rows;
  std::vector<float> values;
  values.reserve(shape_numel(shape));
  for (const auto& p : parts) values.insert(values.end(), p.data().begin(), p.data().end());
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace

Shape Dataset::sample_shape() const {
  const auto& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

Tensor Dataset::gather_images(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw UsageError("gather_images: no indices");
  const std::size_t per = images.numel() / images.dim(0);
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<float> values(indices.size() * per);
  auto src = images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw UsageError("gather_images: index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per, values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor(std::move(shape), std::move(values));
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

NormalizationStats compute_channel_stats(const Tensor& raw) {
  const std::size_t n = raw.dim(0), c = channel_count(raw);
  const std::size_t inner = raw.numel() / (n * c);
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  auto v = raw.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* p = v.data() + (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) sum[ch] += p[i];
    }
  const double count = static_cast<double>(n * inner);
  NormalizationStats stats;
  stats.mean.resize(c);
  stats.stddev.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) stats.mean[ch] = sum[ch] / count;
  // Second pass around the mean keeps the variance accurate.
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* p = v.data() + (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = p[i] - stats.mean[ch];
        sq[ch] += d * d;
      }
    }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double sd = std::sqrt(sq[ch] / count);
    stats.stddev[ch] = sd > 0.0 ? sd : 1.0;
  }
  return stats;
}

void apply_normalization(Tensor& images, const NormalizationStats& stats) {
  const std::size_t n = images.dim(0), c = channel_count(images);
  if (stats.mean.size() != c || stats.stddev.size() != c) {
    throw DimensionError("normalization stats for " + std::to_string(stats.mean.size()) + " channels applied to " +
                         shape_string(images.shape()));
  }
  const std::size_t inner = images.numel() / (n * c);
  auto v = images.mutable_data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = v.data() + (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i)
        p[i] = static_cast<float>((static_cast<double>(p[i]) - stats.mean[ch]) / stats.stddev[ch]);
    }
}

std::string crc32_hex(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisiteError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

RawImages parse_cifar10_records(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    const std::size_t complete = bytes.size() / kCifarRecord * kCifarRecord;
    throw FormatError(origin + ": length " + std::to_string(bytes.size()) + " is not a multiple of 3073; truncated record at byte offset " +
                      std::to_string(complete));
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  RawImages raw{Tensor({n, 3, 32, 32}), std::vector<int>(n)};
  auto px = raw.images.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t offset = i * kCifarRecord;
    const std::uint8_t label = bytes[offset];
    if (label > 9) {
      throw FormatError(origin + ": label byte " + std::to_string(label) + " > 9 at byte offset " + std::to_string(offset));
    }
    raw.labels[i] = label;
    for (std::size_t j = 0; j < kCifarPixels; ++j)
      px[i * kCifarPixels + j] = static_cast<float>(bytes[offset + 1 + j]) / 255.0f;
  }
  return raw;
}

std::pair<Dataset, Dataset> load_cifar10_binary(const std::filesystem::path& dir) {
  std::vector<Tensor> train_parts;
  Dataset train, test;
  train.num_classes = test.num_classes = 10;
  train.split = Split::kTrain;
  test.split = Split::kTest;
  train.source = test.source = "cifar10:" + dir.string();
  for (int b = 1; b <= 5; ++b) {
    const auto path = dir / ("data_batch_" + std::to_string(b) + ".bin");
    const auto bytes = read_file_bytes(path);
    auto raw = parse_cifar10_records(bytes, path.string());
    train_parts.push_back(raw.images);
    train.labels.insert(train.labels.end(), raw.labels.begin(), raw.labels.end());
    train.source_hashes.push_back(crc32_hex(bytes));
  }
  train.images = concat_rows(train_parts);
  const auto test_path = dir / "test_batch.bin";
  const auto test_bytes = read_file_bytes(test_path);
  auto raw_test = parse_cifar10_records(test_bytes, test_path.string());
  test.images = raw_test.images;
  test.labels = std::move(raw_test.labels);
  test.source_hashes.push_back(crc32_hex(test_bytes));

  train.normalization = compute_channel_stats(train.images);
  test.normalization = train.normalization;
  apply_normalization(train.images, train.normalization);
  apply_normalization(test.images, train.normalization);
  return {std::move(train), std::move(test)};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t num_classes,
                 const NormalizationStats* stats, Split split) {
  const auto img = read_file_bytes(images);
  const auto lab = read_file_bytes(labels);
  if (img.size() < 16 || read_be32(img, 0) != 0x00000803) {
    throw FormatError(images.string() + ": not an IDX image file (magic 0x00000803 expected)");
  }
  if (lab.size() < 8 || read_be32(lab, 0) != 0x00000801) {
    throw FormatError(labels.string() + ": not an IDX label file (magic 0x00000801 expected)");
  }
  const std::size_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  if (n != n_labels) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images.string() + ": empty IDX image set");
  if (img.size() != 16 + n * rows * cols) {
    throw FormatError(images.string() + ": expected " + std::to_string(16 + n * rows * cols) + " bytes, found " +
                      std::to_string(img.size()));
  }
  if (lab.size() != 8 + n) {
    throw FormatError(labels.string() + ": expected " + std::to_string(8 + n) + " bytes, found " +
                      std::to_string(lab.size()));
  }
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.source = "idx:" + images.string();
  ds.source_hashes = {crc32_hex(img), crc32_hex(lab)};
  ds.images = Tensor({n, 1, rows, cols});
  auto px = ds.images.mutable_data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = lab[8 + i];
  check_labels(ds.labels, num_classes, labels.string());
  ds.normalization = stats ? *stats : compute_channel_stats(ds.images);
  apply_normalization(ds.images, ds.normalization);
  return ds;
}

std::pair<Dataset, Dataset> synthetic_blobs(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                                            double separation, std::uint64_t seed) {
  if (!(separation > 0.0)) throw UsageError("synthetic_blobs: separation must be positive");
  if (num_classes == 0 || n_per_class == 0 || dim == 0) {
    throw UsageError("synthetic_blobs: num_classes, n_per_class and dim must be positive");
  }
  RngStream centers_rng(seed, RngPath{Purpose::kData, 0, 0, 0, 0});
  double half_width =
      separation * std::max(1.0, std::pow(static_cast<double>(num_classes), 1.0 / static_cast<double>(dim)));
  std::vector<std::vector<double>> centers;
  int failures = 0;
  while (centers.size() < num_classes) {
    std::vector<double> c(dim);
    for (auto& v : c) v = (2.0 * centers_rng.next_uniform() - 1.0) * half_width;
    const bool far = std::all_of(centers.begin(), centers.end(), [&](const auto& o) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) d2 += (c[j] - o[j]) * (c[j] - o[j]);
      return std::sqrt(d2) >= separation;
    });
    if (far) {
      centers.push_back(std::move(c));
    } else if (++failures % 1000 == 0) {
      half_width *= 1.5;
    }
  }

  auto make = [&](Split split, std::uint64_t stream_id) {
    Dataset ds;
    ds.num_classes = num_classes;
    ds.split = split;
    ds.source = "synthetic_blobs";
    const std::size_t n = num_classes * n_per_class;
    std::vector<float> values(n * dim);
    ds.labels.resize(n);
    RngStream rng(seed, RngPath{Purpose::kData, stream_id, 0, 0, 0});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cls = i % num_classes;
      ds.labels[i] = static_cast<int>(cls);
      for (std::size_t j = 0; j < dim; ++j)
        values[i * dim + j] = static_cast<float>(centers[cls][j] + normal_draw(rng));
    }
    ds.images = Tensor({n, dim}, std::move(values));
    return ds;
  };
  Dataset train = make(Split::kTrain, 1);
  Dataset test = make(Split::kTest, 2);
  train.normalization = compute_channel_stats(train.images);
  test.normalization = train.normalization;
  apply_normalization(train.images, train.normalization);
  apply_normalization(test.images, train.normalization);
  return {std::move(train), std::move(test)};
}

Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n < ds.num_classes) {
    throw UsageError("subsample: n=" + std::to_string(n) + " is smaller than the " + std::to_string(ds.num_classes) +
                     " classes");
  }
  if (n > ds.size()) {
    throw UsageError("subsample: n=" + std::to_string(n) + " exceeds dataset size " + std::to_string(ds.size()));
  }
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  // Largest-remainder apportionment of n over the class counts.
  const std::size_t total = ds.size();
  std::vector<std::size_t> quota(ds.num_classes);
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, class)
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    const std::size_t scaled = n * by_class[c].size();
    quota[c] = scaled / total;
    assigned += quota[c];
    remainders.emplace_back(scaled % total, c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];

  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    RngStream rng(seed, RngPath{Purpose::kSubsample, c, 0, 0, 0});
    // Partial Fisher-Yates: the first quota[c] slots become the sample.
    for (std::size_t i = 0; i < quota[c] && i < idx.size(); ++i) {
      const std::size_t j = i + rng.next_below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(quota[c], idx.size())));
  }
  std::sort(chosen.begin(), chosen.end());

  Dataset out;
  out.images = ds.gather_images(chosen);
  out.labels = ds.gather_labels(chosen);
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  out.normalization = ds.normalization;
  out.source = ds.source + "|subsample(" + std::to_string(n) + ")";
  out.source_hashes = ds.source_hashes;
  return out;
}

void restandardize(Dataset& train, Dataset& test) {
  const auto undo = [](Dataset& ds) {
    if (ds.normalization.mean.empty()) return;  // raw pixels, nothing to undo
    const std::size_t n = ds.images.dim(0), c = channel_count(ds.images);
    const std::size_t inner = ds.images.numel() / (n * c);
    auto v = ds.images.mutable_data();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        float* p = v.data() + (s * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i)
          p[i] = static_cast<float>(p[i] * ds.normalization.stddev[ch] + ds.normalization.mean[ch]);
      }
  };
  undo(train);
  undo(test);
  train.normalization = compute_channel_stats(train.images);
  test.normalization = train.normalization;
  apply_normalization(train.images, train.normalization);
  apply_normalization(test.images, train.normalization);
}

}  // namespace noisyforge
