#include "hrank/graph.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "hrank/error.hpp"

namespace hrank {

namespace {

constexpr std::array<std::pair<LayerKind, const char*>, 11> kLayerKindNames{{
    {LayerKind::input, "input"},
    {LayerKind::conv, "conv"},
    {LayerKind::relu, "relu"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool, "avgpool"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::dense, "dense"},
    {LayerKind::add, "add"},
    {LayerKind::concat, "concat"},
    {LayerKind::downsample, "downsample"},
    {LayerKind::output, "output"},
}};

constexpr std::array<std::pair<StructureKind, const char*>, 4> kStructureNames{{
    {StructureKind::plain, "plain"},
    {StructureKind::inception, "inception"},
    {StructureKind::residual, "residual"},
    {StructureKind::dense, "dense"},
}};

}  // namespace

const char* to_string(LayerKind kind) {
  for (const auto& [k, name] : kLayerKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

const char* to_string(StructureKind kind) {
  for (const auto& [k, name] : kStructureNames) {
    if (k == kind) return name;
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (const auto& [k, name] : kLayerKindNames) {
    if (s == name) return k;
  }
  throw FormatError("unknown layer kind '" + s + "'");
}

StructureKind structure_kind_from_string(const std::string& s) {
  for (const auto& [k, name] : kStructureNames) {
    if (s == name) return k;
  }
  throw FormatError("unknown structure kind '" + s + "'");
}

const char* to_string(CapturePoint p) {
  return p == CapturePoint::post_block ? "post_block" : "post_conv";
}

CapturePoint capture_point_from_string(const std::string& s) {
  if (s == "post_block") return CapturePoint::post_block;
  if (s == "post_conv") return CapturePoint::post_conv;
  throw UsageError("capture point must be post_block or post_conv, got '" + s + "'");
}

NetworkGraph::NetworkGraph(ImageDims input, std::size_t num_classes)
    : input_(input), num_classes_(num_classes) {
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
}

int NetworkGraph::begin_block(std::string name, StructureKind kind) {
  blocks_.push_back({std::move(name), kind});
  current_block_ = static_cast<int>(blocks_.size()) - 1;
  return current_block_;
}

int NetworkGraph::push(LayerNode node) {
  node.id = static_cast<int>(nodes_.size());
  node.block = current_block_;
  if (node.prunable && node.kind != LayerKind::conv) {
    throw ConfigError("node '" + node.name + "' is flagged prunable but is not a conv layer");
  }
  for (int in : node.inputs) {
    if (in < 0 || in >= node.id) {
      throw ConfigError("node '" + node.name + "' references input " + std::to_string(in) +
                        " that does not precede it");
    }
  }
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

int NetworkGraph::append(LayerNode node) {
  const int block = node.block;
  const int id = push(std::move(node));
  nodes_.back().block = block;
  return id;
}

int NetworkGraph::add_input() {
  return push({0, LayerKind::input, "input", {}, false, -1, std::monostate{}});
}

int NetworkGraph::add_conv(std::string name, int input, FilterTensor filters, ConvGeometry geom,
                           bool prunable) {
  return push({0, LayerKind::conv, std::move(name), {input}, prunable, -1,
               ConvLayer{std::move(filters), geom}});
}

int NetworkGraph::add_batchnorm(std::string name, int input, BatchNormParams bn) {
  return push({0, LayerKind::batchnorm, std::move(name), {input}, false, -1, std::move(bn)});
}

int NetworkGraph::add_relu(std::string name, int input) {
  return push({0, LayerKind::relu, std::move(name), {input}, false, -1, std::monostate{}});
}

int NetworkGraph::add_maxpool(std::string name, int input, PoolGeometry geom) {
  return push({0, LayerKind::maxpool, std::move(name), {input}, false, -1, PoolLayer{geom, false}});
}

int NetworkGraph::add_avgpool(std::string name, int input, PoolGeometry geom) {
  return push({0, LayerKind::avgpool, std::move(name), {input}, false, -1, PoolLayer{geom, false}});
}

int NetworkGraph::add_global_avgpool(std::string name, int input) {
  return push({0, LayerKind::avgpool, std::move(name), {input}, false, -1, PoolLayer{{}, true}});
}

int NetworkGraph::add_dense(std::string name, int input, DenseParams dense) {
  return push({0, LayerKind::dense, std::move(name), {input}, false, -1, std::move(dense)});
}

int NetworkGraph::add_add(std::string name, int a, int b) {
  return push({0, LayerKind::add, std::move(name), {a, b}, false, -1, std::monostate{}});
}

int NetworkGraph::add_concat(std::string name, std::vector<int> inputs) {
  return push({0, LayerKind::concat, std::move(name), std::move(inputs), false, -1,
               std::monostate{}});
}

int NetworkGraph::add_downsample(std::string name, int input, DownsampleLayer ds) {
  return push({0, LayerKind::downsample, std::move(name), {input}, false, -1, ds});
}

int NetworkGraph::add_output(int input) {
  return push({0, LayerKind::output, "output", {input}, false, -1, std::monostate{}});
}

const LayerNode& NetworkGraph::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw UsageError("no layer with id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

LayerNode& NetworkGraph::node(int id) {
  return const_cast<LayerNode&>(std::as_const(*this).node(id));
}

int NetworkGraph::input_id() const {
  if (nodes_.empty() || nodes_.front().kind != LayerKind::input) {
    throw ConfigError("graph has no input node");
  }
  return 0;
}

int NetworkGraph::output_id() const {
  if (nodes_.empty() || nodes_.back().kind != LayerKind::output) {
    throw ConfigError("graph has no output node");
  }
  return nodes_.back().id;
}

std::vector<int> NetworkGraph::conv_ids() const {
  std::vector<int> ids;
  for (const auto& n : nodes_) {
    if (n.kind == LayerKind::conv) ids.push_back(n.id);
  }
  return ids;
}

std::vector<int> NetworkGraph::prunable_ids() const {
  std::vector<int> ids;
  for (const auto& n : nodes_) {
    if (n.prunable) ids.push_back(n.id);
  }
  return ids;
}

std::vector<std::vector<int>> NetworkGraph::consumers() const {
  std::vector<std::vector<int>> out(nodes_.size());
  for (const auto& n : nodes_) {
    for (int in : n.inputs) out[static_cast<std::size_t>(in)].push_back(n.id);
  }
  return out;
}

namespace {

bool params_match(const LayerNode& n) {
  switch (n.kind) {
    case LayerKind::conv: return std::holds_alternative<ConvLayer>(n.params);
    case LayerKind::maxpool:
    case LayerKind::avgpool: return std::holds_alternative<PoolLayer>(n.params);
    case LayerKind::batchnorm: return std::holds_alternative<BatchNormParams>(n.params);
    case LayerKind::dense: return std::holds_alternative<DenseParams>(n.params);
    case LayerKind::downsample: return std::holds_alternative<DownsampleLayer>(n.params);
    default: return std::holds_alternative<std::monostate>(n.params);
  }
}

bool arity_ok(const LayerNode& n) {
  switch (n.kind) {
    case LayerKind::input: return n.inputs.empty();
    case LayerKind::add: return n.inputs.size() == 2;
    case LayerKind::concat: return !n.inputs.empty();
    default: return n.inputs.size() == 1;
  }
}

bool channel_passthrough(LayerKind k) {
  return k == LayerKind::batchnorm || k == LayerKind::relu || k == LayerKind::maxpool ||
         k == LayerKind::avgpool || k == LayerKind::concat || k == LayerKind::downsample;
}

// True when the output channels of `start` can reach an add node without
// passing through a conv or dense layer.
bool reaches_add(const std::vector<LayerNode>& nodes, const std::vector<std::vector<int>>& cons,
                 int start) {
  std::vector<int> stack{start};
  std::vector<bool> seen(nodes.size(), false);
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int c : cons[static_cast<std::size_t>(id)]) {
      if (seen[static_cast<std::size_t>(c)]) continue;
      seen[static_cast<std::size_t>(c)] = true;
      const LayerKind k = nodes[static_cast<std::size_t>(c)].kind;
      if (k == LayerKind::add) return true;
      if (channel_passthrough(k)) stack.push_back(c);
    }
  }
  return false;
}

// True when a 1x1 conv feeds (through BN/ReLU only) a conv with a larger kernel.
bool pointwise_feeds_spatial(const std::vector<LayerNode>& nodes,
                             const std::vector<std::vector<int>>& cons, int start) {
  std::vector<int> stack{start};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int c : cons[static_cast<std::size_t>(id)]) {
      const LayerNode& n = nodes[static_cast<std::size_t>(c)];
      if (n.kind == LayerKind::conv && n.conv().filters.kernel() > 1) return true;
      if (n.kind == LayerKind::batchnorm || n.kind == LayerKind::relu) stack.push_back(c);
    }
  }
  return false;
}

}  // namespace

void NetworkGraph::validate() const {
  if (nodes_.empty()) throw ConfigError("empty graph");
  input_id();
  output_id();
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const LayerNode& n = nodes_[i];
    const std::string where = "node " + std::to_string(n.id) + " ('" + n.name + "')";
    if (n.id != static_cast<int>(i)) throw ConfigError(where + " is out of order");
    if (n.kind == LayerKind::input) ++inputs;
    if (n.kind == LayerKind::output) ++outputs;
    if (!arity_ok(n)) throw ConfigError(where + " has the wrong number of inputs");
    if (!params_match(n)) throw ConfigError(where + " carries parameters of the wrong kind");
    for (int in : n.inputs) {
      if (in < 0 || in >= n.id) throw ConfigError(where + " breaks topological order");
    }
    if (n.block >= static_cast<int>(blocks_.size())) {
      throw ConfigError(where + " refers to unknown block " + std::to_string(n.block));
    }
    if (n.prunable && n.kind != LayerKind::conv) {
      throw ConfigError(where + " is flagged prunable but is not a conv layer");
    }
  }
  if (inputs != 1 || outputs != 1) throw ConfigError("graph needs exactly one input and one output");

  const auto cons = consumers();
  for (const LayerNode& n : nodes_) {
    if (!n.prunable) continue;
    const std::string where = "conv " + std::to_string(n.id) + " ('" + n.name + "')";
    if (reaches_add(nodes_, cons, n.id)) {
      throw ConfigError(where + " feeds a residual add and must not be prunable");
    }
    if (n.block >= 0 && blocks_[static_cast<std::size_t>(n.block)].kind == StructureKind::inception &&
        n.conv().filters.kernel() == 1 && pointwise_feeds_spatial(nodes_, cons, n.id)) {
      throw ConfigError(where + " is a 1x1 reduction feeding a larger conv and must not be prunable");
    }
  }
  infer_shapes(*this, 1);
}

std::vector<Shape4> infer_shapes(const NetworkGraph& net, std::size_t n) {
  return infer_shapes(net, n, net.input_dims());
}

std::vector<Shape4> infer_shapes(const NetworkGraph& net, std::size_t n, const ImageDims& input) {
  std::vector<Shape4> shapes;
  shapes.reserve(net.nodes().size());
  for (const LayerNode& node : net.nodes()) {
    auto in = [&](std::size_t i) { return shapes[static_cast<std::size_t>(node.inputs[i])]; };
    Shape4 s;
    switch (node.kind) {
      case LayerKind::input: {
        s = {n, input.c, input.h, input.w};
        break;
      }
      case LayerKind::conv: {
        const Shape4 x = in(0);
        const auto& c = node.conv();
        if (x.c != c.filters.n_in()) {
          throw ShapeError("conv '" + node.name + "' expects " + std::to_string(c.filters.n_in()) +
                           " input channels, receives " + x.str());
        }
        s = {n, c.filters.n_out(),
             kernels::conv_output_extent(x.h, c.filters.kernel(), c.geom.stride, c.geom.padding),
             kernels::conv_output_extent(x.w, c.filters.kernel(), c.geom.stride, c.geom.padding)};
        break;
      }
      case LayerKind::batchnorm: {
        s = in(0);
        if (s.c != node.bn().channels()) {
          throw ShapeError("batchnorm '" + node.name + "' has " +
                           std::to_string(node.bn().channels()) + " channels, receives " + s.str());
        }
        break;
      }
      case LayerKind::relu:
      case LayerKind::output: s = in(0); break;
      case LayerKind::maxpool:
      case LayerKind::avgpool: {
        const Shape4 x = in(0);
        const PoolLayer& p = node.pool();
        if (p.global) {
          s = {n, x.c, 1, 1};
        } else {
          s = {n, x.c, kernels::conv_output_extent(x.h, p.geom.kernel, p.geom.stride, p.geom.padding),
               kernels::conv_output_extent(x.w, p.geom.kernel, p.geom.stride, p.geom.padding)};
        }
        break;
      }
      case LayerKind::dense: {
        const Shape4 x = in(0);
        if (x.image() != node.dense().in) {
          throw ShapeError("dense '" + node.name + "' expects " + std::to_string(node.dense().in) +
                           " inputs, receives " + x.str());
        }
        s = {n, node.dense().out, 1, 1};
        break;
      }
      case LayerKind::add: {
        if (!(in(0) == in(1))) {
          throw ShapeError("add '" + node.name + "' operands " + in(0).str() + " vs " + in(1).str());
        }
        s = in(0);
        break;
      }
      case LayerKind::concat: {
        s = in(0);
        s.c = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const Shape4 x = in(i);
          if (x.h != s.h || x.w != s.w) {
            throw ShapeError("concat '" + node.name + "' operands differ spatially: " + x.str());
          }
          s.c += x.c;
        }
        break;
      }
      case LayerKind::downsample: {
        const Shape4 x = in(0);
        const auto& d = node.downsample();
        s = {n, x.c + 2 * d.pad_channels, (x.h + d.stride - 1) / d.stride,
             (x.w + d.stride - 1) / d.stride};
        break;
      }
    }
    shapes.push_back(s);
  }
  const Shape4& out = shapes.back();
  if (out.image() != net.num_classes()) {
    throw ShapeError("network emits " + std::to_string(out.image()) + " values per image, expected " +
                     std::to_string(net.num_classes()) + " classes");
  }
  return shapes;
}

int capture_node(const NetworkGraph& net, int conv_id, CapturePoint point) {
  const LayerNode& conv = net.node(conv_id);
  if (conv.kind != LayerKind::conv) {
    throw UsageError("layer " + std::to_string(conv_id) + " ('" + conv.name +
                     "') is not a conv layer");
  }
  if (point == CapturePoint::post_conv) return conv_id;
  const auto cons = net.consumers();
  int at = conv_id;
  for (LayerKind next : {LayerKind::batchnorm, LayerKind::relu}) {
    const auto& c = cons[static_cast<std::size_t>(at)];
    if (c.size() == 1 && net.node(c.front()).kind == next) at = c.front();
  }
  return at;
}

namespace {

Tensor4 eval_node(const LayerNode& node, const std::vector<const Tensor4*>& ins) {
  switch (node.kind) {
    case LayerKind::input: break;
    case LayerKind::conv: return kernels::conv2d_forward(*ins[0], node.conv().filters, node.conv().geom);
    case LayerKind::relu: return kernels::relu_forward(*ins[0]);
    case LayerKind::maxpool: return kernels::maxpool_forward(*ins[0], node.pool().geom);
    case LayerKind::avgpool:
      return node.pool().global ? kernels::avgpool_global_forward(*ins[0])
                                : kernels::avgpool_forward(*ins[0], node.pool().geom);
    case LayerKind::batchnorm: return kernels::batchnorm_forward(*ins[0], node.bn());
    case LayerKind::dense: return kernels::dense_forward(*ins[0], node.dense());
    case LayerKind::add: return kernels::add_forward(*ins[0], *ins[1]);
    case LayerKind::concat: {
      std::vector<Tensor4> parts;
      parts.reserve(ins.size());
      for (const Tensor4* t : ins) parts.push_back(*t);
      return kernels::concat_channels(parts);
    }
    case LayerKind::downsample:
      return kernels::downsample_forward(*ins[0], node.downsample().stride,
                                         node.downsample().pad_channels);
    case LayerKind::output: {
      const Shape4& s = ins[0]->shape();
      return Tensor4({s.n, s.image(), 1, 1}, ins[0]->vec());
    }
  }
  throw StateError("input node cannot be evaluated");
}

void check_batch(const NetworkGraph& net, const Tensor4& batch) {
  const ImageDims& d = net.input_dims();
  const Shape4& s = batch.shape();
  if (s.c != d.c || s.h != d.h || s.w != d.w) {
    throw ShapeError("batch " + s.str() + " does not match network input (" + std::to_string(d.c) +
                     "x" + std::to_string(d.h) + "x" + std::to_string(d.w) + ")");
  }
}

}  // namespace

ForwardResult forward(const NetworkGraph& net, const Tensor4& batch, const std::set<int>& capture,
                      CapturePoint point) {
  check_batch(net, batch);
  const auto& nodes = net.nodes();
  std::map<int, std::vector<int>> capture_at;  // capture node -> conv ids
  for (int id : capture) capture_at[capture_node(net, id, point)].push_back(id);

  std::vector<std::size_t> last_use(nodes.size(), 0);
  for (const auto& n : nodes) {
    for (int in : n.inputs) last_use[static_cast<std::size_t>(in)] = static_cast<std::size_t>(n.id);
  }

  ForwardResult result;
  std::vector<Tensor4> acts(nodes.size());
  for (const auto& n : nodes) {
    const auto id = static_cast<std::size_t>(n.id);
    if (n.kind == LayerKind::input) {
      acts[id] = batch;
    } else {
      std::vector<const Tensor4*> ins;
      for (int in : n.inputs) ins.push_back(&acts[static_cast<std::size_t>(in)]);
      acts[id] = eval_node(n, ins);
      for (int in : n.inputs) {
        if (last_use[static_cast<std::size_t>(in)] == id) acts[static_cast<std::size_t>(in)] = Tensor4();
      }
    }
    if (auto it = capture_at.find(n.id); it != capture_at.end()) {
      for (int conv : it->second) result.captured[conv] = acts[id];
    }
  }
  result.logits = std::move(acts.back());
  return result;
}

const Tensor4& ForwardTape::logits() const {
  if (!recorded()) throw StateError("no forward pass has been recorded");
  return activations_.back();
}

const Tensor4& ForwardTape::activation(int id) const {
  if (!recorded()) throw StateError("no forward pass has been recorded");
  return activations_.at(static_cast<std::size_t>(id));
}

ForwardTape forward_train(const NetworkGraph& net, const Tensor4& batch) {
  check_batch(net, batch);
  ForwardTape tape;
  const auto& nodes = net.nodes();
  tape.activations_.resize(nodes.size());
  for (const auto& n : nodes) {
    const auto id = static_cast<std::size_t>(n.id);
    if (n.kind == LayerKind::input) {
      tape.activations_[id] = batch;
      continue;
    }
    std::vector<const Tensor4*> ins;
    for (int in : n.inputs) ins.push_back(&tape.activations_[static_cast<std::size_t>(in)]);
    tape.activations_[id] = eval_node(n, ins);
  }
  return tape;
}

GraphGrads backward(const NetworkGraph& net, const ForwardTape& tape, const Tensor4& dlogits) {
  if (!tape.recorded()) throw StateError("backward called without a recorded forward pass");
  const auto& nodes = net.nodes();
  if (!(dlogits.shape() == tape.logits().shape())) {
    throw ShapeError("logit gradient " + dlogits.shape().str() + " vs logits " +
                     tape.logits().shape().str());
  }
  GraphGrads grads;
  grads.nodes.resize(nodes.size());
  std::vector<Tensor4> dact(nodes.size());
  dact.back() = dlogits;

  auto accumulate = [&](int id, Tensor4 g) {
    Tensor4& slot = dact[static_cast<std::size_t>(id)];
    if (slot.size() == 0) {
      slot = std::move(g);
    } else {
      for (std::size_t i = 0; i < slot.size(); ++i) slot.data()[i] += g.data()[i];
    }
  };

  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const LayerNode& n = *it;
    const auto id = static_cast<std::size_t>(n.id);
    if (dact[id].size() == 0 || n.kind == LayerKind::input) continue;
    const Tensor4 up = std::move(dact[id]);
    auto x = [&](std::size_t i) -> const Tensor4& { return tape.activation(n.inputs[i]); };
    NodeGrads& pg = grads.nodes[id];
    switch (n.kind) {
      case LayerKind::input: break;
      case LayerKind::conv: {
        auto g = kernels::conv2d_backward(x(0), n.conv().filters, n.conv().geom, up);
        pg.weights = std::move(g.weights);
        pg.bias = std::move(g.bias);
        accumulate(n.inputs[0], std::move(g.input));
        break;
      }
      case LayerKind::relu: accumulate(n.inputs[0], kernels::relu_backward(x(0), up)); break;
      case LayerKind::maxpool:
        accumulate(n.inputs[0], kernels::maxpool_backward(x(0), n.pool().geom, up));
        break;
      case LayerKind::avgpool:
        accumulate(n.inputs[0], n.pool().global ? kernels::avgpool_global_backward(x(0), up)
                                                : kernels::avgpool_backward(x(0), n.pool().geom, up));
        break;
      case LayerKind::batchnorm: {
        auto g = kernels::batchnorm_backward(x(0), n.bn(), up);
        pg.scale = std::move(g.scale);
        pg.shift = std::move(g.shift);
        accumulate(n.inputs[0], std::move(g.input));
        break;
      }
      case LayerKind::dense: {
        auto g = kernels::dense_backward(x(0), n.dense(), up);
        pg.weights = std::move(g.weights);
        pg.bias = std::move(g.bias);
        accumulate(n.inputs[0], std::move(g.input));
        break;
      }
      case LayerKind::add:
        accumulate(n.inputs[0], up);
        accumulate(n.inputs[1], up);
        break;
      case LayerKind::concat: {
        std::vector<std::size_t> counts;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) counts.push_back(x(i).shape().c);
        auto parts = kernels::concat_backward(counts, up);
        for (std::size_t i = 0; i < parts.size(); ++i) accumulate(n.inputs[i], std::move(parts[i]));
        break;
      }
      case LayerKind::downsample:
        accumulate(n.inputs[0], kernels::downsample_backward(x(0).shape(), n.downsample().stride,
                                                             n.downsample().pad_channels, up));
        break;
      case LayerKind::output:
        accumulate(n.inputs[0], Tensor4(x(0).shape(), up.vec()));
        break;
    }
  }
  grads.input = std::move(dact.front());
  return grads;
}

}  // namespace hrank
