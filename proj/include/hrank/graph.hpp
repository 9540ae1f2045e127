#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hrank/tensor.hpp"

namespace hrank {

enum class LayerKind {
  input,
  conv,
  relu,
  maxpool,
  avgpool,
  batchnorm,
  dense,
  add,
  concat,
  downsample,
  output,
};

enum class StructureKind { plain, inception, residual, dense };

const char* to_string(LayerKind kind);
const char* to_string(StructureKind kind);
LayerKind layer_kind_from_string(const std::string& s);
StructureKind structure_kind_from_string(const std::string& s);

struct ConvLayer {
  FilterTensor filters;
  ConvGeometry geom;
  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct PoolLayer {
  PoolGeometry geom;
  bool global = false;  // avgpool only: reduce every plane to 1x1
  friend bool operator==(const PoolLayer&, const PoolLayer&) = default;
};

struct DownsampleLayer {
  std::size_t stride = 2;
  std::size_t pad_channels = 0;
  friend bool operator==(const DownsampleLayer&, const DownsampleLayer&) = default;
};

using LayerParams =
    std::variant<std::monostate, ConvLayer, PoolLayer, BatchNormParams, DenseParams, DownsampleLayer>;

struct LayerNode {
  int id = 0;
  LayerKind kind = LayerKind::input;
  std::string name;
  std::vector<int> inputs;
  bool prunable = false;
  int block = -1;  // index into NetworkGraph::blocks(), -1 when outside any block
  LayerParams params;

  ConvLayer& conv() { return std::get<ConvLayer>(params); }
  const ConvLayer& conv() const { return std::get<ConvLayer>(params); }
  BatchNormParams& bn() { return std::get<BatchNormParams>(params); }
  const BatchNormParams& bn() const { return std::get<BatchNormParams>(params); }
  DenseParams& dense() { return std::get<DenseParams>(params); }
  const DenseParams& dense() const { return std::get<DenseParams>(params); }
  const PoolLayer& pool() const { return std::get<PoolLayer>(params); }
  const DownsampleLayer& downsample() const { return std::get<DownsampleLayer>(params); }

  friend bool operator==(const LayerNode&, const LayerNode&) = default;
};

struct Block {
  std::string name;
  StructureKind kind = StructureKind::plain;
  friend bool operator==(const Block&, const Block&) = default;
};

/// Per-image input extent (channels, rows, cols).
struct ImageDims {
  std::size_t c = 3;
  std::size_t h = 32;
  std::size_t w = 32;
  std::size_t count() const { return c * h * w; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

/// Ordered layer DAG. Node ids equal their position, so every edge points
/// backwards and the node list is a topological order by construction.
class NetworkGraph {
 public:
  NetworkGraph() = default;
  NetworkGraph(ImageDims input, std::size_t num_classes);

  int begin_block(std::string name, StructureKind kind);
  void end_block() { current_block_ = -1; }

  int add_input();
  int add_conv(std::string name, int input, FilterTensor filters, ConvGeometry geom,
               bool prunable);
  int add_batchnorm(std::string name, int input, BatchNormParams bn);
  int add_relu(std::string name, int input);
  int add_maxpool(std::string name, int input, PoolGeometry geom);
  int add_avgpool(std::string name, int input, PoolGeometry geom);
  int add_global_avgpool(std::string name, int input);
  int add_dense(std::string name, int input, DenseParams dense);
  int add_add(std::string name, int a, int b);
  int add_concat(std::string name, std::vector<int> inputs);
  int add_downsample(std::string name, int input, DownsampleLayer ds);
  int add_output(int input);

  /// Appends a node verbatim (used by deserialization and surgery).
  int append(LayerNode node);
  void set_blocks(std::vector<Block> blocks) { blocks_ = std::move(blocks); }

  const std::vector<LayerNode>& nodes() const { return nodes_; }
  const LayerNode& node(int id) const;
  LayerNode& node(int id);
  const std::vector<Block>& blocks() const { return blocks_; }
  const ImageDims& input_dims() const { return input_; }
  std::size_t num_classes() const { return num_classes_; }

  int input_id() const;
  int output_id() const;
  std::vector<int> conv_ids() const;
  std::vector<int> prunable_ids() const;
  std::size_t conv_count() const { return conv_ids().size(); }
  std::vector<std::vector<int>> consumers() const;

  /// Checks the structural invariants and throws ConfigError on violation.
  void validate() const;

  friend bool operator==(const NetworkGraph&, const NetworkGraph&) = default;

 private:
  int push(LayerNode node);

  ImageDims input_;
  std::size_t num_classes_ = 0;
  std::vector<LayerNode> nodes_;
  std::vector<Block> blocks_;
  int current_block_ = -1;
};

/// Output shape of every node for a batch of n images.
std::vector<Shape4> infer_shapes(const NetworkGraph& net, std::size_t n = 1);
/// Same, for an input extent other than the one the network was built for.
std::vector<Shape4> infer_shapes(const NetworkGraph& net, std::size_t n, const ImageDims& input);

/// Where a conv layer's feature map is observed: straight out of the
/// convolution, or after the BN and ReLU that directly follow it.
enum class CapturePoint { post_block, post_conv };
const char* to_string(CapturePoint p);
CapturePoint capture_point_from_string(const std::string& s);

/// Node whose output is reported as the feature map of `conv_id`.
int capture_node(const NetworkGraph& net, int conv_id, CapturePoint point);

struct ForwardResult {
  Tensor4 logits;                    // (n, num_classes, 1, 1)
  std::map<int, Tensor4> captured;  // keyed by conv id
};

ForwardResult forward(const NetworkGraph& net, const Tensor4& batch,
                      const std::set<int>& capture = {},
                      CapturePoint point = CapturePoint::post_block);

/// Activations of a forward pass kept for backpropagation.
class ForwardTape {
 public:
  bool recorded() const { return !activations_.empty(); }
  const Tensor4& logits() const;
  const Tensor4& activation(int id) const;

 private:
  friend ForwardTape forward_train(const NetworkGraph& net, const Tensor4& batch);
  std::vector<Tensor4> activations_;
};

ForwardTape forward_train(const NetworkGraph& net, const Tensor4& batch);

/// Parameter gradients for one node; which fields are filled depends on
/// the node kind (conv: weights/bias, batchnorm: scale/shift, dense: weights/bias).
struct NodeGrads {
  std::vector<double> weights;
  std::vector<double> bias;
  std::vector<double> scale;
  std::vector<double> shift;
  friend bool operator==(const NodeGrads&, const NodeGrads&) = default;
};

struct GraphGrads {
  std::vector<NodeGrads> nodes;  // indexed by node id
  Tensor4 input;
};

/// Backpropagates dL/dlogits through the recorded pass. Batchnorm runs in
/// inference mode, so its statistics are treated as constants.
GraphGrads backward(const NetworkGraph& net, const ForwardTape& tape, const Tensor4& dlogits);

}  // namespace hrank
