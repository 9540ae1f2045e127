#include "gradcheck.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "hrank/graph.hpp"
#include "hrank/presets.hpp"
#include "hrank/tensor.hpp"
#include "oracles.hpp"

namespace oracle {

using namespace hrank;
namespace k = hrank::kernels;

namespace {

using Vec = std::vector<double>;

double weighted_sum(const Tensor4& y, const Tensor4& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
  return s;
}

Vec to_vec(const Tensor4& t) { return t.vec(); }

// Values well apart from each other and from zero, so that ReLU kinks and
// max-pool ties stay outside the finite-difference step.
Tensor4 spaced_tensor(Shape4 s, std::mt19937_64& rng) {
  Tensor4 t(s);
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  // +step, -step, +2 step, -2 step, ...: distinct and at least step from zero.
  const double step = 1.0 / static_cast<double>(t.size() / 2 + 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::size_t k = perm[i];
    t.data()[i] = (k % 2 == 0 ? 1.0 : -1.0) * static_cast<double>(k / 2 + 1) * step;
  }
  return t;
}

class Recorder {
 public:
  void add(const std::string& name, std::span<const double> analytic, std::span<const double> numeric) {
    auto& g = checks_[name];
    g.name = name;
    ++g.cases;
    g.worst = std::max(g.worst, relative_error(analytic, numeric));
  }
  std::vector<GradCheck> result() const {
    std::vector<GradCheck> out;
    for (const auto& [_, g] : checks_) out.push_back(g);
    return out;
  }

 private:
  std::map<std::string, GradCheck> checks_;
};

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void check_conv(Recorder& rec, std::mt19937_64& rng) {
  const std::size_t kk = pick(rng, 1, 3);
  const ConvGeometry g{pick(rng, 1, 2), pick(rng, 0, kk / 2 + 1)};
  const Shape4 xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, kk + 1, 6), pick(rng, kk + 1, 6)};
  FilterTensor f(pick(rng, 1, 3), xs.c, kk, true);
  for (auto& w : f.weights()) w = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (auto& b : f.bias()) b = std::uniform_real_distribution<double>(-1, 1)(rng);
  const Tensor4 x = random_tensor(xs, rng);
  const Tensor4 y0 = k::conv2d_forward(x, f, g);
  const Tensor4 r = random_tensor(y0.shape(), rng);
  const auto grads = k::conv2d_backward(x, f, g, r);

  rec.add("conv2d/input", grads.input.data(), numeric_gradient([&](const Vec& v) {
            return weighted_sum(k::conv2d_forward(Tensor4(xs, v), f, g), r);
          }, to_vec(x)));
  rec.add("conv2d/weights", grads.weights, numeric_gradient([&](const Vec& v) {
            FilterTensor ff(f.n_out(), f.n_in(), kk, v, Vec(f.bias().begin(), f.bias().end()));
            return weighted_sum(k::conv2d_forward(x, ff, g), r);
          }, Vec(f.weights().begin(), f.weights().end())));
  rec.add("conv2d/bias", grads.bias, numeric_gradient([&](const Vec& v) {
            FilterTensor ff(f.n_out(), f.n_in(), kk, Vec(f.weights().begin(), f.weights().end()), v);
            return weighted_sum(k::conv2d_forward(x, ff, g), r);
          }, Vec(f.bias().begin(), f.bias().end())));
}

void check_pointwise(Recorder& rec, std::mt19937_64& rng) {
  const Shape4 xs{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 2, 6), pick(rng, 2, 6)};
  const Tensor4 x = spaced_tensor(xs, rng);

  {
    const Tensor4 r = random_tensor(xs, rng);
    rec.add("relu/input", k::relu_backward(x, r).data(), numeric_gradient([&](const Vec& v) {
              return weighted_sum(k::relu_forward(Tensor4(xs, v)), r);
            }, to_vec(x)));
  }
  {
    const Tensor4 r = random_tensor(k::avgpool_global_forward(x).shape(), rng);
    rec.add("avgpool_global/input", k::avgpool_global_backward(x, r).data(),
            numeric_gradient([&](const Vec& v) {
              return weighted_sum(k::avgpool_global_forward(Tensor4(xs, v)), r);
            }, to_vec(x)));
  }
  {
    const Tensor4 b = random_tensor(xs, rng);
    const Tensor4 r = random_tensor(xs, rng);
    const Tensor4 up = r;
    // d/da and d/db of sum((a + b) * r) are both r.
    rec.add("add/a", up.data(), numeric_gradient([&](const Vec& v) {
              return weighted_sum(k::add_forward(Tensor4(xs, v), b), r);
            }, to_vec(x)));
    rec.add("add/b", up.data(), numeric_gradient([&](const Vec& v) {
              return weighted_sum(k::add_forward(x, Tensor4(xs, v)), r);
            }, to_vec(b)));
  }
}

void check_pools(Recorder& rec, std::mt19937_64& rng) {
  const std::vector<PoolGeometry> geoms{{2, 2, 0}, {3, 1, 1}, {3, 2, 1}};
  const PoolGeometry mg = geoms[pick(rng, 0, geoms.size() - 1)];
  const Shape4 xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 3, 7), pick(rng, 3, 7)};
  const Tensor4 x = spaced_tensor(xs, rng);
  {
    const Tensor4 r = random_tensor(k::maxpool_forward(x, mg).shape(), rng);
    rec.add("maxpool/input", k::maxpool_backward(x, mg, r).data(), numeric_gradient([&](const Vec& v) {
              return weighted_sum(k::maxpool_forward(Tensor4(xs, v), mg), r);
            }, to_vec(x)));
  }
  {
    const PoolGeometry ag{2, 2, 0};
    const Tensor4 r = random_tensor(k::avgpool_forward(x, ag).shape(), rng);
    rec.add("avgpool/input", k::avgpool_backward(x, ag, r).data(), numeric_gradient([&](const Vec& v) {
              return weighted_sum(k::avgpool_forward(Tensor4(xs, v), ag), r);
            }, to_vec(x)));
  }
}

void check_batchnorm(Recorder& rec, std::mt19937_64& rng) {
  const Shape4 xs{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)};
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_real_distribution<double> pos(0.2, 2.0);
  BatchNormParams bn;
  for (std::size_t c = 0; c < xs.c; ++c) {
    bn.scale.push_back(u(rng));
    bn.shift.push_back(u(rng));
    bn.mean.push_back(u(rng));
    bn.var.push_back(pos(rng));
  }
  const Tensor4 x = random_tensor(xs, rng);
  const Tensor4 r = random_tensor(xs, rng);
  const auto g = k::batchnorm_backward(x, bn, r);
  rec.add("batchnorm/input", g.input.data(), numeric_gradient([&](const Vec& v) {
            return weighted_sum(k::batchnorm_forward(Tensor4(xs, v), bn), r);
          }, to_vec(x)));
  rec.add("batchnorm/scale", g.scale, numeric_gradient([&](const Vec& v) {
            BatchNormParams b = bn;
            b.scale = v;
            return weighted_sum(k::batchnorm_forward(x, b), r);
          }, bn.scale));
  rec.add("batchnorm/shift", g.shift, numeric_gradient([&](const Vec& v) {
            BatchNormParams b = bn;
            b.shift = v;
            return weighted_sum(k::batchnorm_forward(x, b), r);
          }, bn.shift));
}

void check_dense(Recorder& rec, std::mt19937_64& rng) {
  const Shape4 xs{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 3)};
  DenseParams d;
  d.in = xs.image();
  d.out = pick(rng, 1, 5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t i = 0; i < d.in * d.out; ++i) d.weights.push_back(u(rng));
  for (std::size_t i = 0; i < d.out; ++i) d.bias.push_back(u(rng));
  const Tensor4 x = random_tensor(xs, rng);
  const Tensor4 r = random_tensor({xs.n, d.out, 1, 1}, rng);
  const auto g = k::dense_backward(x, d, r);
  rec.add("dense/input", g.input.data(), numeric_gradient([&](const Vec& v) {
            return weighted_sum(k::dense_forward(Tensor4(xs, v), d), r);
          }, to_vec(x)));
  rec.add("dense/weights", g.weights, numeric_gradient([&](const Vec& v) {
            DenseParams dd = d;
            dd.weights = v;
            return weighted_sum(k::dense_forward(x, dd), r);
          }, d.weights));
  rec.add("dense/bias", g.bias, numeric_gradient([&](const Vec& v) {
            DenseParams dd = d;
            dd.bias = v;
            return weighted_sum(k::dense_forward(x, dd), r);
          }, d.bias));
}

void check_concat_downsample(Recorder& rec, std::mt19937_64& rng) {
  const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 5), w = pick(rng, 1, 5);
  std::vector<Tensor4> parts;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0, m = pick(rng, 1, 3); i < m; ++i) {
    counts.push_back(pick(rng, 1, 3));
    parts.push_back(random_tensor({n, counts.back(), h, w}, rng));
  }
  const Tensor4 y = k::concat_channels(parts);
  const Tensor4 r = random_tensor(y.shape(), rng);
  const auto g = k::concat_backward(counts, r);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    rec.add("concat/input", g[i].data(), numeric_gradient([&](const Vec& v) {
              auto p = parts;
              p[i] = Tensor4(parts[i].shape(), v);
              return weighted_sum(k::concat_channels(p), r);
            }, to_vec(parts[i])));
  }

  const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 2);
  const Tensor4 x = random_tensor({n, pick(rng, 1, 3), h + 1, w + 1}, rng);
  const Tensor4 rd = random_tensor(k::downsample_forward(x, stride, pad).shape(), rng);
  rec.add("downsample/input", k::downsample_backward(x.shape(), stride, pad, rd).data(),
          numeric_gradient([&](const Vec& v) {
            return weighted_sum(k::downsample_forward(Tensor4(x.shape(), v), stride, pad), rd);
          }, to_vec(x)));
}

// Whole-graph backward on a small residual-free network with every node kind
// that carries parameters.
void check_graph(Recorder& rec, std::mt19937_64& rng) {
  TinyPlainOptions o;
  o.input = {2, 6, 6};
  o.widths = {3, 4};
  o.num_classes = 3;
  o.seed = rng();
  NetworkGraph net = build_tiny_plain(o);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::uniform_real_distribution<double> pos(0.5, 1.5);
  for (const auto& n : net.nodes()) {
    if (n.kind != LayerKind::batchnorm) continue;
    auto& bn = net.node(n.id).bn();
    for (std::size_t c = 0; c < bn.channels(); ++c) {
      bn.scale[c] = pos(rng);
      bn.shift[c] = u(rng);
      bn.mean[c] = u(rng);
      bn.var[c] = pos(rng);
    }
  }
  const Tensor4 x = random_tensor({2, 2, 6, 6}, rng);
  const Tensor4 r = random_tensor({2, 3, 1, 1}, rng);
  const auto tape = forward_train(net, x);
  const auto grads = backward(net, tape, r);
  rec.add("graph/input", grads.input.data(), numeric_gradient([&](const Vec& v) {
            return weighted_sum(forward(net, Tensor4(x.shape(), v)).logits, r);
          }, to_vec(x), 1e-6));
  for (int id : net.conv_ids()) {
    const auto& f = net.node(id).conv().filters;
    rec.add("graph/conv_weights", grads.nodes[static_cast<std::size_t>(id)].weights,
            numeric_gradient([&](const Vec& v) {
              NetworkGraph m = net;
              auto& ff = m.node(id).conv().filters;
              std::copy(v.begin(), v.end(), ff.weights().begin());
              return weighted_sum(forward(m, x).logits, r);
            }, Vec(f.weights().begin(), f.weights().end()), 1e-6));
  }
}

}  // namespace

std::vector<GradCheck> run_gradient_checks(std::size_t cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Recorder rec;
  for (std::size_t i = 0; i < cases; ++i) {
    check_conv(rec, rng);
    check_pointwise(rec, rng);
    check_pools(rec, rng);
    check_batchnorm(rec, rng);
    check_dense(rec, rng);
    check_concat_downsample(rec, rng);
    check_graph(rec, rng);
  }
  return rec.result();
}

}  // namespace oracle
