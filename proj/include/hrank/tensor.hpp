#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hrank {

/// Extents of a 4-D activation block: images x channels x rows x cols.
struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t count() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::size_t image() const { return c * h * w; }
  std::string str() const;
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense row-major (image, channel, row, col) tensor of doubles. This is the
/// carrier for input batches and every intermediate feature map.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  Tensor4(Shape4 shape, std::vector<double> data);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  /// The h*w map of one channel for one image.
  std::span<double> plane(std::size_t n, std::size_t c);
  std::span<const double> plane(std::size_t n, std::size_t c) const;

  std::span<const double> image(std::size_t n) const;

  bool all_finite() const;

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

/// A bank of n_out square 3-D filters (n_in x k x k) with an optional bias.
class FilterTensor {
 public:
  FilterTensor() = default;
  FilterTensor(std::size_t n_out, std::size_t n_in, std::size_t kernel, bool with_bias);
  FilterTensor(std::size_t n_out, std::size_t n_in, std::size_t kernel, std::vector<double> weights,
               std::vector<double> bias);

  std::size_t n_out() const { return n_out_; }
  std::size_t n_in() const { return n_in_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t filter_size() const { return n_in_ * kernel_ * kernel_; }
  bool has_bias() const { return !bias_.empty(); }

  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> bias() { return bias_; }
  std::span<const double> bias() const { return bias_; }

  /// All weights of output filter j, laid out (in, row, col).
  std::span<double> filter(std::size_t j);
  std::span<const double> filter(std::size_t j) const;

  double& at(std::size_t o, std::size_t i, std::size_t r, std::size_t c) {
    return weights_[((o * n_in_ + i) * kernel_ + r) * kernel_ + c];
  }
  double at(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const {
    return weights_[((o * n_in_ + i) * kernel_ + r) * kernel_ + c];
  }

  friend bool operator==(const FilterTensor&, const FilterTensor&) = default;

 private:
  std::size_t n_out_ = 0;
  std::size_t n_in_ = 0;
  std::size_t kernel_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

struct PoolGeometry {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
  friend bool operator==(const PoolGeometry&, const PoolGeometry&) = default;
};

/// Inference-mode batch normalization: y = scale * (x - mean) / sqrt(var + eps) + shift.
struct BatchNormParams {
  std::vector<double> scale;
  std::vector<double> shift;
  std::vector<double> mean;
  std::vector<double> var;
  double eps = 1e-5;

  static BatchNormParams identity(std::size_t channels, double eps = 1e-5);
  std::size_t channels() const { return scale.size(); }
  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

/// Fully connected layer, weights stored (out, in) row-major.
struct DenseParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

namespace kernels {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

// Cross-correlation (no kernel flip).
Tensor4 conv2d_forward(const Tensor4& input, const FilterTensor& filters, ConvGeometry geom);

struct ConvGrads {
  Tensor4 input;
  std::vector<double> weights;
  std::vector<double> bias;  // empty when the filters carry no bias
};
ConvGrads conv2d_backward(const Tensor4& input, const FilterTensor& filters, ConvGeometry geom,
                          const Tensor4& upstream);

Tensor4 relu_forward(const Tensor4& input);
Tensor4 relu_backward(const Tensor4& input, const Tensor4& upstream);

Tensor4 maxpool_forward(const Tensor4& input, PoolGeometry geom);
Tensor4 maxpool_backward(const Tensor4& input, PoolGeometry geom, const Tensor4& upstream);
inline Tensor4 maxpool2x2_forward(const Tensor4& input) { return maxpool_forward(input, {2, 2, 0}); }

// Windowed average without padding.
Tensor4 avgpool_forward(const Tensor4& input, PoolGeometry geom);
Tensor4 avgpool_backward(const Tensor4& input, PoolGeometry geom, const Tensor4& upstream);
Tensor4 avgpool_global_forward(const Tensor4& input);
Tensor4 avgpool_global_backward(const Tensor4& input, const Tensor4& upstream);

Tensor4 batchnorm_forward(const Tensor4& input, const BatchNormParams& bn);
struct BatchNormGrads {
  Tensor4 input;
  std::vector<double> scale;
  std::vector<double> shift;
};
BatchNormGrads batchnorm_backward(const Tensor4& input, const BatchNormParams& bn,
                                  const Tensor4& upstream);

// Input is flattened per image; the result has shape (n, out, 1, 1).
Tensor4 dense_forward(const Tensor4& input, const DenseParams& dense);
struct DenseGrads {
  Tensor4 input;
  std::vector<double> weights;
  std::vector<double> bias;
};
DenseGrads dense_backward(const Tensor4& input, const DenseParams& dense, const Tensor4& upstream);

Tensor4 add_forward(const Tensor4& a, const Tensor4& b);

Tensor4 concat_channels(std::span<const Tensor4> inputs);
std::vector<Tensor4> concat_backward(std::span<const std::size_t> channel_counts,
                                     const Tensor4& upstream);

// Parameter-free residual shortcut: spatial subsampling by `stride` and
// `pad_channels` zero channels added on each side of the channel axis.
Tensor4 downsample_forward(const Tensor4& input, std::size_t stride, std::size_t pad_channels);
Tensor4 downsample_backward(const Shape4& input_shape, std::size_t stride,
                            std::size_t pad_channels, const Tensor4& upstream);

}  // namespace kernels
}  // namespace hrank
