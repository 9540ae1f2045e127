#include "hrank/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "hrank/error.hpp"

namespace hrank {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void require_same(const Shape4& a, const Shape4& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": " + a.str() + " vs " + b.str());
  }
}

}  // namespace

std::string Shape4::str() const {
  std::ostringstream os;
  os << '(' << n << 'x' << c << 'x' << h << 'x' << w << ')';
  return os.str();
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.count(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.count()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

std::span<double> Tensor4::plane(std::size_t n, std::size_t c) {
  return std::span<double>(data_).subspan((n * shape_.c + c) * shape_.plane(), shape_.plane());
}

std::span<const double> Tensor4::plane(std::size_t n, std::size_t c) const {
  return std::span<const double>(data_).subspan((n * shape_.c + c) * shape_.plane(),
                                                shape_.plane());
}

std::span<const double> Tensor4::image(std::size_t n) const {
  return std::span<const double>(data_).subspan(n * shape_.image(), shape_.image());
}

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

FilterTensor::FilterTensor(std::size_t n_out, std::size_t n_in, std::size_t kernel, bool with_bias)
    : FilterTensor(n_out, n_in, kernel, std::vector<double>(n_out * n_in * kernel * kernel, 0.0),
                   with_bias ? std::vector<double>(n_out, 0.0) : std::vector<double>{}) {}

FilterTensor::FilterTensor(std::size_t n_out, std::size_t n_in, std::size_t kernel,
                           std::vector<double> weights, std::vector<double> bias)
    : n_out_(n_out), n_in_(n_in), kernel_(kernel), weights_(std::move(weights)),
      bias_(std::move(bias)) {
  if (n_out_ == 0 || n_in_ == 0 || kernel_ == 0) {
    throw ShapeError("filter bank needs n_out, n_in and kernel >= 1");
  }
  if (weights_.size() != n_out_ * n_in_ * kernel_ * kernel_) {
    throw ShapeError("filter weights length " + std::to_string(weights_.size()) +
                     " does not match (" + std::to_string(n_out_) + "x" + std::to_string(n_in_) +
                     "x" + std::to_string(kernel_) + "x" + std::to_string(kernel_) + ")");
  }
  if (!bias_.empty() && bias_.size() != n_out_) {
    throw ShapeError("filter bias length " + std::to_string(bias_.size()) + " != n_out " +
                     std::to_string(n_out_));
  }
}

std::span<double> FilterTensor::filter(std::size_t j) {
  return std::span<double>(weights_).subspan(j * filter_size(), filter_size());
}

std::span<const double> FilterTensor::filter(std::size_t j) const {
  return std::span<const double>(weights_).subspan(j * filter_size(), filter_size());
}

BatchNormParams BatchNormParams::identity(std::size_t channels, double eps) {
  BatchNormParams bn;
  bn.scale.assign(channels, 1.0);
  bn.shift.assign(channels, 0.0);
  bn.mean.assign(channels, 0.0);
  bn.var.assign(channels, 1.0);
  bn.eps = eps;
  return bn;
}

namespace kernels {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ShapeError("window " + std::to_string(kernel) + " larger than padded extent " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

// Unfold one image into a (c*k*k) x (ho*wo) matrix.
void im2col(std::span<const double> image, const Shape4& s, std::size_t k, ConvGeometry g,
            std::size_t ho, std::size_t wo, std::span<double> col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.c; ++c) {
    const double* plane = image.data() + c * s.plane();
    for (std::size_t kr = 0; kr < k; ++kr) {
      for (std::size_t kc = 0; kc < k; ++kc, ++row) {
        double* out = col.data() + row * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + kr) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) {
            std::fill_n(out + y * wo, wo, 0.0);
            continue;
          }
          for (std::size_t x = 0; x < wo; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kc) - pad;
            out[y * wo + x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w))
                                  ? 0.0
                                  : plane[iy * static_cast<std::ptrdiff_t>(s.w) + ix];
          }
        }
      }
    }
  }
}

void col2im(std::span<const double> col, const Shape4& s, std::size_t k, ConvGeometry g,
            std::size_t ho, std::size_t wo, std::span<double> image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.c; ++c) {
    double* plane = image.data() + c * s.plane();
    for (std::size_t kr = 0; kr < k; ++kr) {
      for (std::size_t kc = 0; kc < k; ++kc, ++row) {
        const double* in = col.data() + row * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + kr) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t x = 0; x < wo; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kc) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            plane[iy * static_cast<std::ptrdiff_t>(s.w) + ix] += in[y * wo + x];
          }
        }
      }
    }
  }
}

bool is_pointwise(const FilterTensor& f, ConvGeometry g) {
  return f.kernel() == 1 && g.stride == 1 && g.padding == 0;
}

Shape4 conv_output_shape(const Shape4& in, const FilterTensor& f, ConvGeometry g) {
  if (in.c != f.n_in()) {
    throw ShapeError("conv2d input " + in.str() + " has " + std::to_string(in.c) +
                     " channels but filters " + "(" + std::to_string(f.n_out()) + "x" +
                     std::to_string(f.n_in()) + "x" + std::to_string(f.kernel()) + "x" +
                     std::to_string(f.kernel()) + ") expect " + std::to_string(f.n_in()));
  }
  return {in.n, f.n_out(), conv_output_extent(in.h, f.kernel(), g.stride, g.padding),
          conv_output_extent(in.w, f.kernel(), g.stride, g.padding)};
}

}  // namespace

Tensor4 conv2d_forward(const Tensor4& input, const FilterTensor& filters, ConvGeometry geom) {
  const Shape4& s = input.shape();
  const Shape4 os = conv_output_shape(s, filters, geom);
  Tensor4 out(os);
  const std::size_t k = filters.kernel();
  const std::size_t rows = filters.filter_size();
  const std::size_t cols = os.plane();
  ConstRowMap w(filters.weights().data(), static_cast<Eigen::Index>(filters.n_out()),
                static_cast<Eigen::Index>(rows));
  std::vector<double> col;
  if (!is_pointwise(filters, geom)) col.resize(rows * cols);
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* src = input.image(n).data();
    if (!col.empty()) {
      im2col(input.image(n), s, k, geom, os.h, os.w, col);
      src = col.data();
    }
    ConstRowMap x(src, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    RowMap y(out.data().data() + n * os.image(), static_cast<Eigen::Index>(os.c),
             static_cast<Eigen::Index>(cols));
    y.noalias() = w * x;
    if (filters.has_bias()) {
      for (std::size_t o = 0; o < os.c; ++o) y.row(static_cast<Eigen::Index>(o)).array() += filters.bias()[o];
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor4& input, const FilterTensor& filters, ConvGeometry geom,
                          const Tensor4& upstream) {
  const Shape4& s = input.shape();
  const Shape4 os = conv_output_shape(s, filters, geom);
  require_same(upstream.shape(), os, "conv2d upstream gradient");
  const std::size_t k = filters.kernel();
  const std::size_t rows = filters.filter_size();
  const std::size_t cols = os.plane();
  const auto out_c = static_cast<Eigen::Index>(filters.n_out());

  ConvGrads grads{Tensor4(s), std::vector<double>(filters.weights().size(), 0.0),
                  std::vector<double>(filters.has_bias() ? filters.n_out() : 0, 0.0)};
  ConstRowMap w(filters.weights().data(), out_c, static_cast<Eigen::Index>(rows));
  RowMap dw(grads.weights.data(), out_c, static_cast<Eigen::Index>(rows));
  const bool pointwise = is_pointwise(filters, geom);
  std::vector<double> col(pointwise ? 0 : rows * cols);
  std::vector<double> dcol(pointwise ? 0 : rows * cols);

  for (std::size_t n = 0; n < s.n; ++n) {
    ConstRowMap dy(upstream.image(n).data(), out_c, static_cast<Eigen::Index>(cols));
    const double* src = input.image(n).data();
    if (!pointwise) {
      im2col(input.image(n), s, k, geom, os.h, os.w, col);
      src = col.data();
    }
    ConstRowMap x(src, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    dw.noalias() += dy * x.transpose();
    if (!grads.bias.empty()) {
      for (Eigen::Index o = 0; o < out_c; ++o) grads.bias[static_cast<std::size_t>(o)] += dy.row(o).sum();
    }
    std::span<double> dimage = grads.input.data().subspan(n * s.image(), s.image());
    if (pointwise) {
      RowMap dx(dimage.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      dx.noalias() = w.transpose() * dy;
    } else {
      RowMap dc(dcol.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      dc.noalias() = w.transpose() * dy;
      col2im(dcol, s, k, geom, os.h, os.w, dimage);
    }
  }
  return grads;
}

Tensor4 relu_forward(const Tensor4& input) {
  Tensor4 out(input.shape());
  std::transform(input.data().begin(), input.data().end(), out.data().begin(),
                 [](double v) { return v > 0.0 ? v : 0.0; });
  return out;
}

Tensor4 relu_backward(const Tensor4& input, const Tensor4& upstream) {
  require_same(input.shape(), upstream.shape(), "relu upstream gradient");
  Tensor4 out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out.data()[i] = input.data()[i] > 0.0 ? upstream.data()[i] : 0.0;
  }
  return out;
}

namespace {

Shape4 pool_output_shape(const Shape4& s, PoolGeometry g) {
  if (g.padding * 2 > g.kernel) throw ShapeError("pool padding exceeds half the window");
  return {s.n, s.c, conv_output_extent(s.h, g.kernel, g.stride, g.padding),
          conv_output_extent(s.w, g.kernel, g.stride, g.padding)};
}

// Flat index (within the plane) of the window maximum; first maximum in
// row-major scan order wins ties.
template <typename Fn>
void for_each_max(const Tensor4& input, PoolGeometry g, const Shape4& os, Fn&& fn) {
  const Shape4& s = input.shape();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto plane = input.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          bool found = false;
          for (std::size_t kr = 0; kr < g.kernel; ++kr) {
            const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + kr) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t kc = 0; kc < g.kernel; ++kc) {
              const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kc) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const auto idx = static_cast<std::size_t>(iy) * s.w + static_cast<std::size_t>(ix);
              if (!found || plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
                found = true;
              }
            }
          }
          fn(n, c, y * os.w + x, best_idx, best);
        }
      }
    }
  }
}

}  // namespace

Tensor4 maxpool_forward(const Tensor4& input, PoolGeometry geom) {
  const Shape4 os = pool_output_shape(input.shape(), geom);
  Tensor4 out(os);
  for_each_max(input, geom, os, [&](std::size_t n, std::size_t c, std::size_t o, std::size_t,
                                    double v) { out.plane(n, c)[o] = v; });
  return out;
}

Tensor4 maxpool_backward(const Tensor4& input, PoolGeometry geom, const Tensor4& upstream) {
  const Shape4 os = pool_output_shape(input.shape(), geom);
  require_same(upstream.shape(), os, "maxpool upstream gradient");
  Tensor4 grad(input.shape());
  for_each_max(input, geom, os, [&](std::size_t n, std::size_t c, std::size_t o, std::size_t arg,
                                    double) { grad.plane(n, c)[arg] += upstream.plane(n, c)[o]; });
  return grad;
}

Tensor4 avgpool_forward(const Tensor4& input, PoolGeometry geom) {
  if (geom.padding != 0) throw ShapeError("avgpool does not support padding");
  const Shape4& s = input.shape();
  const Shape4 os = pool_output_shape(s, geom);
  Tensor4 out(os);
  const double inv = 1.0 / static_cast<double>(geom.kernel * geom.kernel);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto in = input.plane(n, c);
      auto o = out.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          double acc = 0.0;
          for (std::size_t kr = 0; kr < geom.kernel; ++kr) {
            for (std::size_t kc = 0; kc < geom.kernel; ++kc) {
              acc += in[(y * geom.stride + kr) * s.w + x * geom.stride + kc];
            }
          }
          o[y * os.w + x] = acc * inv;
        }
      }
    }
  }
  return out;
}

Tensor4 avgpool_backward(const Tensor4& input, PoolGeometry geom, const Tensor4& upstream) {
  if (geom.padding != 0) throw ShapeError("avgpool does not support padding");
  const Shape4& s = input.shape();
  const Shape4 os = pool_output_shape(s, geom);
  require_same(upstream.shape(), os, "avgpool upstream gradient");
  Tensor4 grad(s);
  const double inv = 1.0 / static_cast<double>(geom.kernel * geom.kernel);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto g = grad.plane(n, c);
      auto up = upstream.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          const double v = up[y * os.w + x] * inv;
          for (std::size_t kr = 0; kr < geom.kernel; ++kr) {
            for (std::size_t kc = 0; kc < geom.kernel; ++kc) {
              g[(y * geom.stride + kr) * s.w + x * geom.stride + kc] += v;
            }
          }
        }
      }
    }
  }
  return grad;
}

Tensor4 avgpool_global_forward(const Tensor4& input) {
  const Shape4& s = input.shape();
  Tensor4 out({s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto p = input.plane(n, c);
      double acc = 0.0;
      for (double v : p) acc += v;
      out.at(n, c, 0, 0) = acc / static_cast<double>(s.plane());
    }
  }
  return out;
}

Tensor4 avgpool_global_backward(const Tensor4& input, const Tensor4& upstream) {
  const Shape4& s = input.shape();
  require_same(upstream.shape(), Shape4{s.n, s.c, 1, 1}, "global avgpool upstream gradient");
  Tensor4 grad(s);
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto g = grad.plane(n, c);
      std::fill(g.begin(), g.end(), upstream.at(n, c, 0, 0) * inv);
    }
  }
  return grad;
}

namespace {

void check_bn(const Shape4& s, const BatchNormParams& bn) {
  const std::size_t c = bn.channels();
  if (bn.shift.size() != c || bn.mean.size() != c || bn.var.size() != c) {
    throw ShapeError("batchnorm parameter vectors differ in length");
  }
  if (s.c != c) {
    throw ShapeError("batchnorm over " + std::to_string(c) + " channels applied to input " +
                     s.str());
  }
}

}  // namespace

Tensor4 batchnorm_forward(const Tensor4& input, const BatchNormParams& bn) {
  const Shape4& s = input.shape();
  check_bn(s, bn);
  Tensor4 out(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    const double a = bn.scale[c] / std::sqrt(bn.var[c] + bn.eps);
    const double b = bn.shift[c] - a * bn.mean[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      auto in = input.plane(n, c);
      auto o = out.plane(n, c);
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = a * in[i] + b;
    }
  }
  return out;
}

BatchNormGrads batchnorm_backward(const Tensor4& input, const BatchNormParams& bn,
                                  const Tensor4& upstream) {
  const Shape4& s = input.shape();
  check_bn(s, bn);
  require_same(upstream.shape(), s, "batchnorm upstream gradient");
  BatchNormGrads grads{Tensor4(s), std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  for (std::size_t c = 0; c < s.c; ++c) {
    const double inv_std = 1.0 / std::sqrt(bn.var[c] + bn.eps);
    const double a = bn.scale[c] * inv_std;
    double dscale = 0.0;
    double dshift = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto in = input.plane(n, c);
      auto up = upstream.plane(n, c);
      auto g = grads.input.plane(n, c);
      for (std::size_t i = 0; i < in.size(); ++i) {
        g[i] = a * up[i];
        dscale += up[i] * (in[i] - bn.mean[c]) * inv_std;
        dshift += up[i];
      }
    }
    grads.scale[c] = dscale;
    grads.shift[c] = dshift;
  }
  return grads;
}

namespace {

void check_dense(const Shape4& s, const DenseParams& d) {
  if (d.weights.size() != d.in * d.out || (!d.bias.empty() && d.bias.size() != d.out)) {
    throw ShapeError("dense parameters do not match (" + std::to_string(d.out) + "x" +
                     std::to_string(d.in) + ")");
  }
  if (s.image() != d.in) {
    throw ShapeError("dense layer expects " + std::to_string(d.in) +
                     " inputs per image, got input " + s.str());
  }
}

}  // namespace

Tensor4 dense_forward(const Tensor4& input, const DenseParams& dense) {
  const Shape4& s = input.shape();
  check_dense(s, dense);
  Tensor4 out({s.n, dense.out, 1, 1});
  ConstRowMap x(input.data().data(), static_cast<Eigen::Index>(s.n),
                static_cast<Eigen::Index>(dense.in));
  ConstRowMap w(dense.weights.data(), static_cast<Eigen::Index>(dense.out),
                static_cast<Eigen::Index>(dense.in));
  RowMap y(out.data().data(), static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(dense.out));
  y.noalias() = x * w.transpose();
  if (!dense.bias.empty()) {
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t o = 0; o < dense.out; ++o) out.at(n, o, 0, 0) += dense.bias[o];
    }
  }
  return out;
}

DenseGrads dense_backward(const Tensor4& input, const DenseParams& dense, const Tensor4& upstream) {
  const Shape4& s = input.shape();
  check_dense(s, dense);
  require_same(upstream.shape(), Shape4{s.n, dense.out, 1, 1}, "dense upstream gradient");
  DenseGrads grads{Tensor4(s), std::vector<double>(dense.weights.size(), 0.0),
                   std::vector<double>(dense.bias.size(), 0.0)};
  const auto n = static_cast<Eigen::Index>(s.n);
  const auto in = static_cast<Eigen::Index>(dense.in);
  const auto out = static_cast<Eigen::Index>(dense.out);
  ConstRowMap x(input.data().data(), n, in);
  ConstRowMap w(dense.weights.data(), out, in);
  ConstRowMap dy(upstream.data().data(), n, out);
  RowMap dx(grads.input.data().data(), n, in);
  RowMap dw(grads.weights.data(), out, in);
  dx.noalias() = dy * w;
  dw.noalias() = dy.transpose() * x;
  if (!grads.bias.empty()) {
    for (Eigen::Index o = 0; o < out; ++o) grads.bias[static_cast<std::size_t>(o)] = dy.col(o).sum();
  }
  return grads;
}

Tensor4 add_forward(const Tensor4& a, const Tensor4& b) {
  require_same(a.shape(), b.shape(), "add operands");
  Tensor4 out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Tensor4 concat_channels(std::span<const Tensor4> inputs) {
  if (inputs.empty()) throw ShapeError("concat of zero tensors");
  const Shape4& first = inputs.front().shape();
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    const Shape4& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat operands " + first.str() + " vs " + s.str());
    }
    channels += s.c;
  }
  Tensor4 out({first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    double* dst = out.data().data() + n * out.shape().image();
    for (const auto& t : inputs) {
      auto img = t.image(n);
      dst = std::copy(img.begin(), img.end(), dst);
    }
  }
  return out;
}

std::vector<Tensor4> concat_backward(std::span<const std::size_t> channel_counts,
                                     const Tensor4& upstream) {
  const Shape4& s = upstream.shape();
  std::size_t total = 0;
  for (auto c : channel_counts) total += c;
  if (total != s.c) {
    throw ShapeError("concat gradient has " + std::to_string(s.c) + " channels, operands sum to " +
                     std::to_string(total));
  }
  std::vector<Tensor4> grads;
  grads.reserve(channel_counts.size());
  for (auto c : channel_counts) grads.emplace_back(Shape4{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* src = upstream.image(n).data();
    for (auto& g : grads) {
      const std::size_t len = g.shape().image();
      std::copy_n(src, len, g.data().data() + n * len);
      src += len;
    }
  }
  return grads;
}

Tensor4 downsample_forward(const Tensor4& input, std::size_t stride, std::size_t pad_channels) {
  if (stride == 0) throw ShapeError("downsample stride must be positive");
  const Shape4& s = input.shape();
  const Shape4 os{s.n, s.c + 2 * pad_channels, (s.h + stride - 1) / stride,
                  (s.w + stride - 1) / stride};
  Tensor4 out(os);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          out.at(n, c + pad_channels, y, x) = input.at(n, c, y * stride, x * stride);
        }
      }
    }
  }
  return out;
}

Tensor4 downsample_backward(const Shape4& input_shape, std::size_t stride,
                            std::size_t pad_channels, const Tensor4& upstream) {
  const Shape4& s = input_shape;
  const Shape4 os{s.n, s.c + 2 * pad_channels, (s.h + stride - 1) / stride,
                  (s.w + stride - 1) / stride};
  require_same(upstream.shape(), os, "downsample upstream gradient");
  Tensor4 grad(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          grad.at(n, c, y * stride, x * stride) = upstream.at(n, c + pad_channels, y, x);
        }
      }
    }
  }
  return grad;
}

}  // namespace kernels
}  // namespace hrank
