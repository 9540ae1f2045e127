#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrank/graph.hpp"

namespace hrank {

struct PresetOptions {
  double width = 1.0;          // channel multiplier for desk-scale variants
  std::uint64_t seed = 0;      // weight initialization seed
  bool init_weights = true;    // false leaves all weights zero (structure-only use)
};

/// Names accepted by build_preset.
const std::vector<std::string>& preset_names();

/// CIFAR-sized reference architectures:
///   vgg16_cifar      13 conv (BN, ReLU) + 512-512-classes head
///   googlenet_cifar  192-channel stem + 9 inception modules, 5x5 branch as two 3x3
///   resnet56/110     basic blocks 16/32/64, parameter-free zero-pad shortcuts;
///                    branch-final BN scale starts at 1/sqrt(blocks)
///   densenet40       3 dense blocks of 12 BN-ReLU-conv layers, growth 12
///   tiny_plain       three conv stages, used for desk-scale experiments
/// Throws ConfigError for unknown names.
NetworkGraph build_preset(const std::string& name, std::size_t num_classes,
                          const PresetOptions& opts = {});

struct TinyPlainOptions {
  ImageDims input{3, 16, 16};
  std::vector<std::size_t> widths{16, 32, 32};
  std::size_t num_classes = 10;
  bool batchnorm = true;
  std::uint64_t seed = 0;
};

/// conv-BN-ReLU stages with 2x2 max pooling after each but the last, then a
/// global average pool and a dense classifier. Every conv is prunable.
NetworkGraph build_tiny_plain(const TinyPlainOptions& opts);

}  // namespace hrank
