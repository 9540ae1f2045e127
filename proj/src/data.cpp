#include "hrank/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "hrank/error.hpp"
#include "hrank/model_io.hpp"

namespace hrank {

double normalize_cifar_pixel(std::uint8_t byte, std::size_t channel) {
  return (static_cast<double>(byte) / 255.0 - kCifarMean[channel]) / kCifarStd[channel];
}

double denormalize_cifar_pixel(double value, std::size_t channel) {
  return value * kCifarStd[channel] + kCifarMean[channel];
}

DatasetSource DatasetSource::from_cifar_records(std::vector<std::uint8_t> records) {
  if (records.size() % kCifarRecordBytes != 0) {
    throw FormatError("cifar10 payload of " + std::to_string(records.size()) +
                      " bytes is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  DatasetSource src;
  src.kind_ = DatasetKind::cifar10;
  src.dims_ = {3, 32, 32};
  src.num_classes_ = 10;
  const std::size_t n = records.size() / kCifarRecordBytes;
  src.labels_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = records[i * kCifarRecordBytes];
    if (label > 9) {
      throw FormatError("cifar10 record " + std::to_string(i) + " has label " +
                        std::to_string(label));
    }
    src.labels_[i] = label;
  }
  src.records_ = std::move(records);
  return src;
}

DatasetSource DatasetSource::from_images(ImageDims dims, std::size_t num_classes,
                                         std::vector<double> pixels, std::vector<int> labels,
                                         std::uint64_t seed) {
  if (pixels.size() != labels.size() * dims.count()) {
    throw ConfigError("pixel buffer does not match " + std::to_string(labels.size()) + " images");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ConfigError("label " + std::to_string(l) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
  DatasetSource src;
  src.kind_ = DatasetKind::synthetic;
  src.dims_ = dims;
  src.num_classes_ = num_classes;
  src.seed_ = seed;
  src.labels_ = std::move(labels);
  src.pixels_ = std::move(pixels);
  return src;
}

std::vector<int> DatasetSource::labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(label(i));
  return out;
}

Tensor4 DatasetSource::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = dims_.count();
  Tensor4 out({indices.size(), dims_.c, dims_.h, dims_.w});
  double* dst = out.data().data();
  for (auto idx : indices) {
    if (idx >= size()) throw DataError("image index " + std::to_string(idx) + " out of range");
    if (kind_ == DatasetKind::cifar10) {
      const std::uint8_t* rec = records_.data() + idx * kCifarRecordBytes + 1;
      for (std::size_t k = 0; k < per; ++k) dst[k] = normalize_cifar_pixel(rec[k], k / 1024);
    } else {
      std::copy_n(pixels_.data() + idx * per, per, dst);
    }
    dst += per;
  }
  return out;
}

Tensor4 DatasetSource::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return batch(idx);
}

std::span<const std::uint8_t> DatasetSource::raw_record(std::size_t i) const {
  if (kind_ != DatasetKind::cifar10) throw UsageError("raw records exist only for cifar10 sources");
  return std::span<const std::uint8_t>(records_).subspan(i * kCifarRecordBytes, kCifarRecordBytes);
}

DatasetSource DatasetSource::subset(std::span<const std::size_t> indices) const {
  DatasetSource out;
  out.kind_ = kind_;
  out.dims_ = dims_;
  out.num_classes_ = num_classes_;
  out.seed_ = seed_;
  const std::size_t per = dims_.count();
  for (auto i : indices) {
    if (i >= size()) throw DataError("subset index " + std::to_string(i) + " out of range");
    out.labels_.push_back(labels_[i]);
    if (kind_ == DatasetKind::cifar10) {
      auto rec = raw_record(i);
      out.records_.insert(out.records_.end(), rec.begin(), rec.end());
    } else {
      out.pixels_.insert(out.pixels_.end(), pixels_.begin() + static_cast<std::ptrdiff_t>(i * per),
                         pixels_.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    }
  }
  return out;
}

DatasetSource read_cifar10_file(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw FormatError("missing cifar10 file " + file.string());
  auto bytes = read_file_bytes(file);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError(file.string() + ": " + std::to_string(bytes.size()) +
                      " bytes is not a whole number of " + std::to_string(kCifarRecordBytes) +
                      "-byte records");
  }
  return DatasetSource::from_cifar_records(std::move(bytes));
}

DatasetSource open_cifar10(const std::filesystem::path& dir, CifarSplit split) {
  std::vector<std::string> names;
  if (split == CifarSplit::train) {
    for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    names.push_back("test_batch.bin");
  }
  constexpr std::size_t expected = kCifarRecordBytes * kCifarRecordsPerFile;
  std::vector<std::uint8_t> all;
  all.reserve(expected * names.size());
  for (const auto& name : names) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) {
      throw FormatError(path.string() + ": missing, expected " + std::to_string(expected) +
                        " bytes");
    }
    const auto size = std::filesystem::file_size(path);
    if (size != expected) {
      throw FormatError(path.string() + ": " + std::to_string(size) + " bytes, expected " +
                        std::to_string(expected));
    }
    auto bytes = read_file_bytes(path);
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  return DatasetSource::from_cifar_records(std::move(all));
}

std::vector<std::uint8_t> serialize_cifar10(const DatasetSource& src) {
  std::vector<std::uint8_t> out;
  out.reserve(src.size() * kCifarRecordBytes);
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto rec = src.raw_record(i);
    out.insert(out.end(), rec.begin(), rec.end());
  }
  return out;
}

DatasetSource synthetic(const SyntheticOptions& o) {
  if (o.dims.c == 0 || o.dims.h == 0 || o.dims.w == 0) {
    throw ConfigError("synthetic image dims must be positive");
  }
  if (o.num_classes == 0 || o.n < o.num_classes) {
    throw ConfigError("synthetic dataset needs n >= num_classes >= 1");
  }
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Class prototypes: a blob on a ring around the image center with a
  // class-specific color.
  const double cy = (static_cast<double>(o.dims.h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(o.dims.w) - 1.0) / 2.0;
  const double radius = 0.3 * static_cast<double>(std::min(o.dims.h, o.dims.w));
  const double sigma = std::max(1.0, 0.12 * static_cast<double>(std::min(o.dims.h, o.dims.w)));
  struct Proto {
    double y, x;
    std::vector<double> color;
  };
  std::vector<Proto> protos;
  for (std::size_t c = 0; c < o.num_classes; ++c) {
    const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(o.num_classes);
    Proto p{cy + radius * std::sin(angle), cx + radius * std::cos(angle), {}};
    double norm = 0.0;
    for (std::size_t ch = 0; ch < o.dims.c; ++ch) {
      p.color.push_back(normal(rng));
      norm += p.color.back() * p.color.back();
    }
    norm = std::sqrt(norm);
    for (auto& v : p.color) v /= (norm > 0 ? norm : 1.0);
    protos.push_back(std::move(p));
  }

  std::vector<int> labels(o.n);
  for (std::size_t i = 0; i < o.n; ++i) labels[i] = static_cast<int>(i % o.num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<int> shift(-static_cast<int>(o.jitter), static_cast<int>(o.jitter));
  const std::size_t per = o.dims.count();
  std::vector<double> pixels(o.n * per);
  for (std::size_t i = 0; i < o.n; ++i) {
    const Proto& p = protos[static_cast<std::size_t>(labels[i])];
    const double dy = o.jitter ? shift(rng) : 0;
    const double dx = o.jitter ? shift(rng) : 0;
    double* img = pixels.data() + i * per;
    for (std::size_t ch = 0; ch < o.dims.c; ++ch) {
      for (std::size_t y = 0; y < o.dims.h; ++y) {
        for (std::size_t x = 0; x < o.dims.w; ++x) {
          const double ry = static_cast<double>(y) - p.y - dy;
          const double rx = static_cast<double>(x) - p.x - dx;
          const double blob = std::exp(-(ry * ry + rx * rx) / (2.0 * sigma * sigma));
          img[(ch * o.dims.h + y) * o.dims.w + x] = o.margin * p.color[ch] * blob + o.noise * normal(rng);
        }
      }
    }
  }
  return DatasetSource::from_images(o.dims, o.num_classes, std::move(pixels), std::move(labels),
                                    o.seed);
}

std::vector<std::size_t> sample(const DatasetSource& src, std::size_t g, std::uint64_t seed) {
  if (g > src.size()) {
    throw DataError("cannot sample " + std::to_string(g) + " images from a source of " +
                    std::to_string(src.size()));
  }
  std::vector<std::size_t> idx(src.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < g; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(g);
  return idx;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> indices,
                                                   std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < indices.size(); i += batch_size) {
    const std::size_t end = std::min(indices.size(), i + batch_size);
    out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                     indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace hrank
