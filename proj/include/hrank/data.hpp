#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hrank/graph.hpp"
#include "hrank/tensor.hpp"

namespace hrank {

enum class DatasetKind { cifar10, synthetic };
enum class CifarSplit { train, test };

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Per-channel CIFAR-10 normalization: x = (byte / 255 - mean) / std.
inline constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifarStd{0.2023, 0.1994, 0.2010};

double normalize_cifar_pixel(std::uint8_t byte, std::size_t channel);
double denormalize_cifar_pixel(double value, std::size_t channel);  // back to [0, 1]

/// Labeled image collection. Read-only once built; batches are materialized
/// on demand as normalized double tensors.
class DatasetSource {
 public:
  static DatasetSource from_cifar_records(std::vector<std::uint8_t> records);
  static DatasetSource from_images(ImageDims dims, std::size_t num_classes,
                                   std::vector<double> pixels, std::vector<int> labels,
                                   std::uint64_t seed);

  DatasetKind kind() const { return kind_; }
  std::size_t size() const { return labels_.size(); }
  const ImageDims& image_dims() const { return dims_; }
  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }

  int label(std::size_t i) const { return labels_.at(i); }
  std::vector<int> labels(std::span<const std::size_t> indices) const;
  Tensor4 batch(std::span<const std::size_t> indices) const;
  Tensor4 all() const;

  /// Original 3073-byte record (cifar10 sources only).
  std::span<const std::uint8_t> raw_record(std::size_t i) const;

  DatasetSource subset(std::span<const std::size_t> indices) const;

 private:
  DatasetKind kind_ = DatasetKind::synthetic;
  ImageDims dims_;
  std::size_t num_classes_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<int> labels_;
  std::vector<std::uint8_t> records_;  // cifar10
  std::vector<double> pixels_;         // synthetic
};

/// Parses any whole number of CIFAR-10 binary records from one file.
DatasetSource read_cifar10_file(const std::filesystem::path& file);

/// Opens the standard directory layout (data_batch_1..5.bin, test_batch.bin),
/// requiring 10000 records per file.
DatasetSource open_cifar10(const std::filesystem::path& dir, CifarSplit split = CifarSplit::train);

/// Concatenated raw records, byte-identical to the parsed input.
std::vector<std::uint8_t> serialize_cifar10(const DatasetSource& src);

struct SyntheticOptions {
  std::size_t num_classes = 10;
  std::size_t n = 1000;
  ImageDims dims{3, 32, 32};
  std::uint64_t seed = 0;
  double margin = 3.0;  // blob amplitude relative to unit pixel noise
  double noise = 1.0;
  std::size_t jitter = 0;  // max blob displacement in pixels
};

/// Class-conditional Gaussian blob images: class c has a fixed blob position
/// and color; each sample adds independent pixel noise (and optional jitter).
DatasetSource synthetic(const SyntheticOptions& opts);

/// g distinct indices drawn uniformly without replacement.
std::vector<std::size_t> sample(const DatasetSource& src, std::size_t g, std::uint64_t seed);

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> indices,
                                                   std::size_t batch_size);

}  // namespace hrank
