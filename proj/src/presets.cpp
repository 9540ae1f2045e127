#include "hrank/presets.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hrank/error.hpp"

namespace hrank {

namespace {

class Builder {
 public:
  Builder(NetworkGraph& net, const PresetOptions& opts) : net_(net), opts_(opts), rng_(opts.seed) {}

  std::size_t ch(std::size_t c) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(c) * opts_.width)));
  }

  FilterTensor filters(std::size_t out, std::size_t in, std::size_t k, bool bias) {
    FilterTensor f(out, in, k, bias);
    if (opts_.init_weights) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in * k * k)));
      for (double& w : f.weights()) w = dist(rng_);
    }
    return f;
  }

  DenseParams dense(std::size_t in, std::size_t out) {
    DenseParams d{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
    if (opts_.init_weights) {
      std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(in)));
      for (double& w : d.weights) w = dist(rng_);
    }
    return d;
  }

  // conv -> BN -> ReLU; returns the ReLU id.
  int conv_bn_relu(const std::string& name, int input, std::size_t in, std::size_t out,
                   std::size_t k, std::size_t stride, bool bias, bool prunable) {
    const int c = net_.add_conv(name, input, filters(out, in, k, bias), {stride, k / 2}, prunable);
    const int b = net_.add_batchnorm(name + ".bn", c, BatchNormParams::identity(out));
    return net_.add_relu(name + ".relu", b);
  }

  NetworkGraph& net_;
  const PresetOptions& opts_;
  std::mt19937_64 rng_;
};

NetworkGraph vgg16_cifar(std::size_t classes, const PresetOptions& opts) {
  NetworkGraph net({3, 32, 32}, classes);
  Builder b(net, opts);
  const std::vector<int> cfg{64, 64, -1, 128, 128, -1, 256, 256, 256, -1,
                             512, 512, 512, -1, 512, 512, 512};
  int x = net.add_input();
  std::size_t in = 3;
  int conv = 0;
  for (std::size_t i = 0; i < cfg.size(); ++i) {
    if (cfg[i] < 0) continue;
    const std::size_t out = b.ch(static_cast<std::size_t>(cfg[i]));
    const std::string name = "features.conv" + std::to_string(++conv);
    net.begin_block(name, StructureKind::plain);
    x = b.conv_bn_relu(name, x, in, out, 3, 1, true, true);
    if (i + 1 < cfg.size() && cfg[i + 1] < 0) x = net.add_maxpool(name + ".pool", x, {2, 2, 0});
    net.end_block();
    in = out;
  }
  x = net.add_avgpool("features.avgpool", x, {2, 2, 0});
  const std::size_t hidden = b.ch(512);
  x = net.add_dense("classifier.linear1", x, b.dense(in, hidden));
  x = net.add_batchnorm("classifier.norm1", x, BatchNormParams::identity(hidden));
  x = net.add_relu("classifier.relu1", x);
  x = net.add_dense("classifier.linear2", x, b.dense(hidden, classes));
  net.add_output(x);
  return net;
}

struct InceptionCfg {
  const char* name;
  std::size_t n1, n3red, n3, n5red, n5, pool;
};

NetworkGraph googlenet_cifar(std::size_t classes, const PresetOptions& opts) {
  NetworkGraph net({3, 32, 32}, classes);
  Builder b(net, opts);
  int x = net.add_input();
  net.begin_block("pre_layers", StructureKind::plain);
  std::size_t in = b.ch(192);
  x = b.conv_bn_relu("pre_layers.conv", x, 3, in, 3, 1, true, true);
  net.end_block();

  const std::vector<InceptionCfg> cfg{
      {"a3", 64, 96, 128, 16, 32, 32},     {"b3", 128, 128, 192, 32, 96, 64},
      {"a4", 192, 96, 208, 16, 48, 64},    {"b4", 160, 112, 224, 24, 64, 64},
      {"c4", 128, 128, 256, 24, 64, 64},   {"d4", 112, 144, 288, 32, 64, 64},
      {"e4", 256, 160, 320, 32, 128, 128}, {"a5", 256, 160, 320, 32, 128, 128},
      {"b5", 384, 192, 384, 48, 128, 128},
  };
  for (const auto& c : cfg) {
    const std::string p = std::string("inception_") + c.name;
    net.begin_block(p, StructureKind::inception);
    const std::size_t n1 = b.ch(c.n1), n3r = b.ch(c.n3red), n3 = b.ch(c.n3);
    const std::size_t n5r = b.ch(c.n5red), n5 = b.ch(c.n5), np = b.ch(c.pool);
    const int b1 = b.conv_bn_relu(p + ".branch1x1", x, in, n1, 1, 1, true, true);
    int b2 = b.conv_bn_relu(p + ".branch3x3.reduce", x, in, n3r, 1, 1, true, false);
    b2 = b.conv_bn_relu(p + ".branch3x3.conv", b2, n3r, n3, 3, 1, true, true);
    int b3 = b.conv_bn_relu(p + ".branch5x5.reduce", x, in, n5r, 1, 1, true, false);
    b3 = b.conv_bn_relu(p + ".branch5x5.conv1", b3, n5r, n5, 3, 1, true, true);
    b3 = b.conv_bn_relu(p + ".branch5x5.conv2", b3, n5, n5, 3, 1, true, true);
    int b4 = net.add_maxpool(p + ".branch_pool.pool", x, {3, 1, 1});
    b4 = b.conv_bn_relu(p + ".branch_pool.conv", b4, in, np, 1, 1, true, true);
    x = net.add_concat(p + ".concat", {b1, b2, b3, b4});
    net.end_block();
    in = n1 + n3 + n5 + np;
    if (c.name == std::string("b3") || c.name == std::string("e4")) {
      x = net.add_maxpool(std::string("maxpool_after_") + c.name, x, {3, 2, 1});
    }
  }
  x = net.add_global_avgpool("avgpool", x);
  x = net.add_dense("linear", x, b.dense(in, classes));
  net.add_output(x);
  return net;
}

NetworkGraph resnet_cifar(std::size_t depth, std::size_t classes, const PresetOptions& opts) {
  const std::size_t n = (depth - 2) / 6;
  NetworkGraph net({3, 32, 32}, classes);
  Builder b(net, opts);
  // Residual branches start scaled down so activations stay bounded over depth.
  const double branch_scale = 1.0 / std::sqrt(static_cast<double>(3 * n));
  int x = net.add_input();
  const std::size_t base = b.ch(16);
  net.begin_block("stem", StructureKind::plain);
  x = b.conv_bn_relu("conv1", x, 3, base, 3, 1, false, false);
  net.end_block();
  std::size_t in = base;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t planes = base << stage;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t stride = (stage > 0 && i == 0) ? 2 : 1;
      const std::string p = "layer" + std::to_string(stage + 1) + "." + std::to_string(i);
      net.begin_block(p, StructureKind::residual);
      int y = b.conv_bn_relu(p + ".conv1", x, in, planes, 3, stride, false, true);
      BatchNormParams branch_bn = BatchNormParams::identity(planes);
      if (opts.init_weights) std::fill(branch_bn.scale.begin(), branch_bn.scale.end(), branch_scale);
      y = net.add_conv(p + ".conv2", y, b.filters(planes, planes, 3, false), {1, 1}, false);
      y = net.add_batchnorm(p + ".conv2.bn", y, branch_bn);
      int shortcut = x;
      if (stride != 1 || in != planes) {
        shortcut = net.add_downsample(p + ".shortcut", x, {stride, (planes - in) / 2});
      }
      y = net.add_add(p + ".add", y, shortcut);
      x = net.add_relu(p + ".relu", y);
      net.end_block();
      in = planes;
    }
  }
  x = net.add_global_avgpool("avgpool", x);
  x = net.add_dense("linear", x, b.dense(in, classes));
  net.add_output(x);
  return net;
}

NetworkGraph densenet40(std::size_t classes, const PresetOptions& opts) {
  constexpr std::size_t layers_per_block = 12;
  NetworkGraph net({3, 32, 32}, classes);
  Builder b(net, opts);
  const std::size_t growth = b.ch(12);
  int x = net.add_input();
  std::size_t in = b.ch(24);
  net.begin_block("stem", StructureKind::plain);
  x = net.add_conv("conv1", x, b.filters(in, 3, 3, false), {1, 1}, true);
  net.end_block();
  for (std::size_t blk = 0; blk < 3; ++blk) {
    const std::string bp = "dense" + std::to_string(blk + 1);
    net.begin_block(bp, StructureKind::dense);
    for (std::size_t i = 0; i < layers_per_block; ++i) {
      const std::string p = bp + "." + std::to_string(i);
      int y = net.add_batchnorm(p + ".bn", x, BatchNormParams::identity(in));
      y = net.add_relu(p + ".relu", y);
      y = net.add_conv(p + ".conv", y, b.filters(growth, in, 3, false), {1, 1}, true);
      x = net.add_concat(p + ".concat", {x, y});
      in += growth;
    }
    net.end_block();
    if (blk < 2) {
      const std::string tp = "trans" + std::to_string(blk + 1);
      net.begin_block(tp, StructureKind::plain);
      int y = net.add_batchnorm(tp + ".bn", x, BatchNormParams::identity(in));
      y = net.add_relu(tp + ".relu", y);
      y = net.add_conv(tp + ".conv", y, b.filters(in, in, 1, false), {1, 0}, true);
      x = net.add_avgpool(tp + ".pool", y, {2, 2, 0});
      net.end_block();
    }
  }
  x = net.add_batchnorm("bn", x, BatchNormParams::identity(in));
  x = net.add_relu("relu", x);
  x = net.add_global_avgpool("avgpool", x);
  x = net.add_dense("fc", x, b.dense(in, classes));
  net.add_output(x);
  return net;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"vgg16_cifar", "googlenet_cifar", "resnet56",
                                              "resnet110",   "densenet40",      "tiny_plain"};
  return names;
}

NetworkGraph build_preset(const std::string& name, std::size_t num_classes,
                          const PresetOptions& opts) {
  if (!(opts.width > 0.0)) throw ConfigError("preset width must be positive");
  NetworkGraph net;
  if (name == "vgg16_cifar") {
    net = vgg16_cifar(num_classes, opts);
  } else if (name == "googlenet_cifar") {
    net = googlenet_cifar(num_classes, opts);
  } else if (name == "resnet56") {
    net = resnet_cifar(56, num_classes, opts);
  } else if (name == "resnet110") {
    net = resnet_cifar(110, num_classes, opts);
  } else if (name == "densenet40") {
    net = densenet40(num_classes, opts);
  } else if (name == "tiny_plain") {
    TinyPlainOptions t;
    t.num_classes = num_classes;
    t.seed = opts.seed;
    for (auto& w : t.widths) {
      w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) * opts.width)));
    }
    net = build_tiny_plain(t);
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  net.validate();
  return net;
}

NetworkGraph build_tiny_plain(const TinyPlainOptions& opts) {
  if (opts.widths.empty()) throw ConfigError("tiny_plain needs at least one conv stage");
  NetworkGraph net(opts.input, opts.num_classes);
  PresetOptions popts;
  popts.seed = opts.seed;
  Builder b(net, popts);
  int x = net.add_input();
  std::size_t in = opts.input.c;
  for (std::size_t i = 0; i < opts.widths.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    net.begin_block(name, StructureKind::plain);
    const std::size_t out = opts.widths[i];
    x = net.add_conv(name, x, b.filters(out, in, 3, true), {1, 1}, true);
    if (opts.batchnorm) x = net.add_batchnorm(name + ".bn", x, BatchNormParams::identity(out));
    x = net.add_relu(name + ".relu", x);
    if (i + 1 < opts.widths.size()) x = net.add_maxpool(name + ".pool", x, {2, 2, 0});
    net.end_block();
    in = out;
  }
  x = net.add_global_avgpool("avgpool", x);
  x = net.add_dense("fc", x, b.dense(in, opts.num_classes));
  net.add_output(x);
  net.validate();
  return net;
}

}  // namespace hrank
