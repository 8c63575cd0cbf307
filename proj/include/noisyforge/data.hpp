#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "noisyforge/tensor.hpp"

namespace noisyforge {

enum class Split { kTrain, kTest };

// Per-channel statistics of the raw [0, 1] pixels of a training split. Axis 1
// of the image tensor is the channel axis; for flat [N x D] data every
// feature is its own channel.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Dataset {
  Tensor images;  // [N x C x H x W] or [N x D], normalized
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Split split = Split::kTrain;
  NormalizationStats normalization;
  std::string source;
  std::vector<std::string> source_hashes;  // CRC32 of each input file

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  Tensor gather_images(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

// Statistics over all samples; channels with zero spread get stddev 1.
NormalizationStats compute_channel_stats(const Tensor& raw);
void apply_normalization(Tensor& images, const NormalizationStats& stats);

// Raw CIFAR-10 binary records: 1 label byte then 3072 channel-planar pixel
// bytes. Pixels are scaled to [0, 1] but not normalized.
struct RawImages {
  Tensor images;
  std::vector<int> labels;
};
RawImages parse_cifar10_records(std::span<const std::uint8_t> bytes, const std::string& origin);

// Reads data_batch_1..5.bin and test_batch.bin from `dir`. Both splits are
// normalized with the training split's statistics.
std::pair<Dataset, Dataset> load_cifar10_binary(const std::filesystem::path& dir);

// IDX (MNIST layout) image and label files. When `stats` is null the set is
// normalized with its own statistics.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes = 10, const NormalizationStats* stats = nullptr,
                 Split split = Split::kTrain);

// Gaussian blobs with unit variance around seeded centers whose pairwise
// distance is at least `separation`. Samples are [N x dim].
std::pair<Dataset, Dataset> synthetic_blobs(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                                            double separation, std::uint64_t seed);

// Class-stratified deterministic subset of `n` samples. Classes receive
// n * count / N samples each, with the remainder going to the largest
// fractional parts.
Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed);

// Recomputes normalization from `train` (e.g. after subsampling) and applies
// it to both splits.
void restandardize(Dataset& train, Dataset& test);

std::string crc32_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace noisyforge
