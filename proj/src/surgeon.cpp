#include "hrank/surgeon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "hrank/error.hpp"
#include "hrank/model_io.hpp"

namespace hrank {

namespace {

using Channels = std::vector<std::size_t>;

Channels all_channels(std::size_t c) {
  Channels out(c);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const Channels& keep) {
  std::vector<T> out;
  out.reserve(keep.size());
  for (auto j : keep) out.push_back(v[j]);
  return out;
}

FilterTensor slice_filters(const FilterTensor& f, const Channels& out_keep, const Channels& in_keep) {
  const std::size_t k2 = f.kernel() * f.kernel();
  std::vector<double> w;
  w.reserve(out_keep.size() * in_keep.size() * k2);
  for (auto o : out_keep) {
    for (auto i : in_keep) {
      const double* src = &f.weights()[(o * f.n_in() + i) * k2];
      w.insert(w.end(), src, src + k2);
    }
  }
  std::vector<double> b;
  if (f.has_bias()) {
    for (auto o : out_keep) b.push_back(f.bias()[o]);
  }
  return FilterTensor(out_keep.size(), in_keep.size(), f.kernel(), std::move(w), std::move(b));
}

std::string describe(const LayerNode& n) {
  return "layer " + std::to_string(n.id) + " ('" + n.name + "')";
}

}  // namespace

NetworkGraph apply_plan(const NetworkGraph& net, const PruningPlan& plan) {
  plan.check_invariants();
  if (!plan.provenance.model_fingerprint.empty() &&
      plan.provenance.model_fingerprint != model_fingerprint(net)) {
    throw ConsistencyError("plan was made for model " +
                           plan.provenance.model_fingerprint.substr(0, 12) +
                           ", not for the one given");
  }
  for (const auto& l : plan.layers) {
    if (l.layer_id < 0 || l.layer_id >= static_cast<int>(net.nodes().size())) {
      throw ConsistencyError("plan names layer " + std::to_string(l.layer_id) + " which does not exist");
    }
    const LayerNode& n = net.node(l.layer_id);
    if (n.kind != LayerKind::conv || !n.prunable) {
      throw PlanError(describe(n) + " is not a prunable conv layer");
    }
    if (n.conv().filters.n_out() != l.n_filters) {
      throw ConsistencyError(describe(n) + " has " + std::to_string(n.conv().filters.n_out()) +
                             " filters, plan expects " + std::to_string(l.n_filters));
    }
  }

  const auto shapes = infer_shapes(net, 1);
  NetworkGraph out = net;
  std::vector<Channels> kept(net.nodes().size());
  for (const LayerNode& src : net.nodes()) {
    const auto id = static_cast<std::size_t>(src.id);
    LayerNode& dst = out.node(src.id);
    auto in_kept = [&](std::size_t i) -> const Channels& {
      return kept[static_cast<std::size_t>(src.inputs[i])];
    };
    switch (src.kind) {
      case LayerKind::input: kept[id] = all_channels(shapes[id].c); break;
      case LayerKind::conv: {
        const LayerPlan* lp = plan.find(src.id);
        kept[id] = lp ? lp->keep : all_channels(src.conv().filters.n_out());
        const Channels& ik = in_kept(0);
        if (lp || ik.size() != src.conv().filters.n_in()) {
          dst.conv().filters = slice_filters(src.conv().filters, kept[id], ik);
        }
        break;
      }
      case LayerKind::batchnorm: {
        kept[id] = in_kept(0);
        const BatchNormParams& bn = src.bn();
        if (kept[id].size() != bn.channels()) {
          BatchNormParams s;
          s.scale = gather(bn.scale, kept[id]);
          s.shift = gather(bn.shift, kept[id]);
          s.mean = gather(bn.mean, kept[id]);
          s.var = gather(bn.var, kept[id]);
          s.eps = bn.eps;
          dst.params = std::move(s);
        }
        break;
      }
      case LayerKind::relu:
      case LayerKind::maxpool:
      case LayerKind::avgpool:
      case LayerKind::output: kept[id] = in_kept(0); break;
      case LayerKind::add: {
        if (in_kept(0) != in_kept(1)) {
          throw PlanError("add " + describe(src) +
                          " would combine operands with different surviving channels");
        }
        kept[id] = in_kept(0);
        break;
      }
      case LayerKind::concat: {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < src.inputs.size(); ++i) {
          for (auto c : in_kept(i)) kept[id].push_back(offset + c);
          offset += shapes[static_cast<std::size_t>(src.inputs[i])].c;
        }
        break;
      }
      case LayerKind::downsample: {
        const std::size_t c_in = shapes[static_cast<std::size_t>(src.inputs[0])].c;
        if (in_kept(0).size() != c_in) {
          throw PlanError("shortcut " + describe(src) + " receives pruned channels");
        }
        kept[id] = all_channels(shapes[id].c);
        break;
      }
      case LayerKind::dense: {
        const Channels& ik = in_kept(0);
        const Shape4& xs = shapes[static_cast<std::size_t>(src.inputs[0])];
        kept[id] = all_channels(src.dense().out);
        if (ik.size() == xs.c) break;
        const DenseParams& d = src.dense();
        const std::size_t plane = xs.plane();
        DenseParams s;
        s.in = ik.size() * plane;
        s.out = d.out;
        s.bias = d.bias;
        s.weights.reserve(s.in * s.out);
        for (std::size_t o = 0; o < d.out; ++o) {
          for (auto c : ik) {
            const double* row = &d.weights[o * d.in + c * plane];
            s.weights.insert(s.weights.end(), row, row + plane);
          }
        }
        dst.params = std::move(s);
        break;
      }
    }
  }
  if (kept.back().size() != net.num_classes()) {
    throw PlanError("plan removes output classes");
  }
  try {
    out.validate();
  } catch (const ConfigError& e) {
    throw PlanError(std::string("pruned network is malformed: ") + e.what());
  }
  return out;
}

ComplexityReport count_complexity(const NetworkGraph& net, const ComplexityOptions& opts) {
  return count_complexity(net, net.input_dims(), opts);
}

ComplexityReport count_complexity(const NetworkGraph& net, const ImageDims& input,
                                  const ComplexityOptions& opts) {
  const auto shapes = infer_shapes(net, 1, input);
  ComplexityReport r;
  r.input = input;
  r.bn_params_counted = opts.count_bn_params;
  for (const LayerNode& n : net.nodes()) {
    LayerComplexity lc{n.id, n.name, n.kind, 0, 0};
    const Shape4& s = shapes[static_cast<std::size_t>(n.id)];
    switch (n.kind) {
      case LayerKind::conv: {
        const FilterTensor& f = n.conv().filters;
        lc.flops = static_cast<std::uint64_t>(s.plane() * f.n_out() * f.filter_size());
        lc.params = static_cast<std::uint64_t>(f.weights().size() + f.bias().size());
        break;
      }
      case LayerKind::dense:
        lc.flops = static_cast<std::uint64_t>(n.dense().in * n.dense().out);
        lc.params = static_cast<std::uint64_t>(n.dense().weights.size() + n.dense().bias.size());
        break;
      case LayerKind::batchnorm:
        if (opts.count_bn_params) lc.params = 2 * static_cast<std::uint64_t>(n.bn().channels());
        break;
      default: break;
    }
    if (lc.flops == 0 && lc.params == 0) continue;
    r.total_flops += lc.flops;
    r.total_params += lc.params;
    r.layers.push_back(std::move(lc));
  }
  return r;
}

namespace {

double percent_removed(std::uint64_t before, std::uint64_t after, const char* what) {
  if (before == 0) throw NumericError(std::string("cannot compute reduction: zero ") + what + " before pruning");
  const double pr = (1.0 - static_cast<double>(after) / static_cast<double>(before)) * 100.0;
  return std::round(pr * 10.0) / 10.0;
}

}  // namespace

ReductionReport reduction_report(const ComplexityReport& before, const ComplexityReport& after) {
  ReductionReport r;
  r.flops_before = before.total_flops;
  r.flops_after = after.total_flops;
  r.params_before = before.total_params;
  r.params_after = after.total_params;
  r.flops_pr = percent_removed(before.total_flops, after.total_flops, "FLOPs");
  r.params_pr = percent_removed(before.total_params, after.total_params, "parameters");
  return r;
}

std::string ReductionReport::str() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "FLOPs %.2fM -> %.2fM (PR %.1f%%)\nparams %.2fM -> %.2fM (PR %.1f%%)\n",
                static_cast<double>(flops_before) / 1e6, static_cast<double>(flops_after) / 1e6,
                flops_pr, static_cast<double>(params_before) / 1e6,
                static_cast<double>(params_after) / 1e6, params_pr);
  return buf;
}

}  // namespace hrank
