#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aelab/tensor.hpp"

namespace aelab {

// Labeled image collection in the raw pixel domain [0, 255]. Images are
// (3, rows, cols) row-major doubles, stored flat and index-aligned with
// labels.
struct DatasetSplit {
  std::string name;
  std::string source;  // "cifar10-binary" or "synthetic"
  int num_classes = 0;
  std::array<int, 3> image_shape{0, 0, 0};  // channels, rows, cols
  std::vector<double> images;               // count * 3 * rows * cols
  std::vector<int> labels;

  int count() const { return static_cast<int>(labels.size()); }
  std::int64_t image_size() const {
    return static_cast<std::int64_t>(image_shape[0]) * image_shape[1] * image_shape[2];
  }
  std::span<const double> image(int i) const;
  Tensor image_tensor(int i, bool requires_grad = false) const;
  // (count,3,rows,cols) tensor for a contiguous index range
  Tensor batch_tensor(int begin, int end) const;

  void validate() const;
  // content id over shape, labels and pixel bytes
  std::string id() const;

  // prefix slice (used to carve an attack subset out of a test split)
  DatasetSplit prefix(int n, const std::string& new_name) const;
};

struct DatasetSplits {
  DatasetSplit train;
  DatasetSplit test;
};

// --- CIFAR-10 binary format --------------------------------------------------
// One record is 1 label byte followed by 3072 pixel bytes (3 channels x 1024,
// channel-major, rows of 32). data_batch_1..5.bin hold the train split,
// test_batch.bin the test split.

struct Cifar10Options {
  std::optional<int> subsample_per_split;  // stratified by class
  std::optional<int> downscale_to;         // bilinear, square target
  std::uint64_t seed = 0;
};

DatasetSplits ingest_cifar10(const std::string& dir, const Cifar10Options& opts);

// Byte-level codec, exposed for round-trip tests and re-encoding.
DatasetSplit decode_cifar10_records(const std::vector<unsigned char>& bytes,
                                    const std::string& split_name);
std::vector<unsigned char> encode_cifar10_records(const DatasetSplit& split);

// --- synthetic fallback -------------------------------------------------------

struct SyntheticConfig {
  int num_classes = 10;
  int per_class_train = 150;
  int per_class_test = 50;
  int image_size = 16;
  // difficulty knobs: class signal amplitude vs. per-image noise
  double signal_amplitude = 48.0;
  double noise_sigma = 26.0;
  int max_shift = 2;  // circular shift of the class pattern, in pixels
  std::uint64_t seed = 0;
};

DatasetSplits make_synthetic(const SyntheticConfig& cfg);

// Nearest-centroid probe used as the "learnable signal" check: fits class
// means on train and scores test accuracy. This is a linear classifier.
double linear_probe_accuracy(const DatasetSplit& train, const DatasetSplit& test);

// stratified, seeded subsample (keeps exactly n images, class-balanced)
DatasetSplit stratified_subsample(const DatasetSplit& in, int n, std::uint64_t seed);

DatasetSplit bilinear_downscale(const DatasetSplit& in, int target_size);

// --- container file (.aeds) --------------------------------------------------

void save_dataset(const DatasetSplit& split, const std::string& path);
DatasetSplit load_dataset(const std::string& path);

}  // namespace aelab
