#include "hrank/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "hrank/error.hpp"
#include "hrank/fingerprint.hpp"

namespace hrank {

static_assert(std::endian::native == std::endian::little,
              "model files store little-endian doubles; big-endian hosts need byte swapping");

namespace {

using json = nlohmann::ordered_json;

constexpr std::string_view kModelMagic = "HRANKMDL";
constexpr std::size_t kDigestSize = 32;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

struct Slot {
  std::string name;
  std::span<double> data;
};

// Parameter tensors of a node in their on-disk order.
std::vector<Slot> slots(LayerNode& n) {
  std::vector<Slot> s;
  switch (n.kind) {
    case LayerKind::conv: {
      auto& f = n.conv().filters;
      s.push_back({"weight", f.weights()});
      if (f.has_bias()) s.push_back({"bias", f.bias()});
      break;
    }
    case LayerKind::batchnorm: {
      auto& bn = n.bn();
      s.push_back({"scale", bn.scale});
      s.push_back({"shift", bn.shift});
      s.push_back({"mean", bn.mean});
      s.push_back({"var", bn.var});
      break;
    }
    case LayerKind::dense: {
      auto& d = n.dense();
      s.push_back({"weight", d.weights});
      if (!d.bias.empty()) s.push_back({"bias", d.bias});
      break;
    }
    default: break;
  }
  return s;
}

json node_meta(const LayerNode& n) {
  json m = json::object();
  switch (n.kind) {
    case LayerKind::conv: {
      const auto& c = n.conv();
      m["n_out"] = c.filters.n_out();
      m["n_in"] = c.filters.n_in();
      m["kernel"] = c.filters.kernel();
      m["stride"] = c.geom.stride;
      m["padding"] = c.geom.padding;
      m["bias"] = c.filters.has_bias();
      break;
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      const auto& p = n.pool();
      m["kernel"] = p.geom.kernel;
      m["stride"] = p.geom.stride;
      m["padding"] = p.geom.padding;
      m["global"] = p.global;
      break;
    }
    case LayerKind::batchnorm:
      m["channels"] = n.bn().channels();
      m["eps"] = n.bn().eps;
      break;
    case LayerKind::dense:
      m["in"] = n.dense().in;
      m["out"] = n.dense().out;
      m["bias"] = !n.dense().bias.empty();
      break;
    case LayerKind::downsample:
      m["stride"] = n.downsample().stride;
      m["pad_channels"] = n.downsample().pad_channels;
      break;
    default: break;
  }
  return m;
}

LayerParams params_from_meta(LayerKind kind, const json& m) {
  auto z = [&](const char* key) { return m.at(key).get<std::size_t>(); };
  switch (kind) {
    case LayerKind::conv:
      return ConvLayer{FilterTensor(z("n_out"), z("n_in"), z("kernel"), m.at("bias").get<bool>()),
                       {z("stride"), z("padding")}};
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return PoolLayer{{z("kernel"), z("stride"), z("padding")}, m.at("global").get<bool>()};
    case LayerKind::batchnorm: {
      const std::size_t c = z("channels");
      return BatchNormParams{std::vector<double>(c), std::vector<double>(c), std::vector<double>(c),
                             std::vector<double>(c), m.at("eps").get<double>()};
    }
    case LayerKind::dense: {
      const std::size_t in = z("in"), out = z("out");
      return DenseParams{in, out, std::vector<double>(in * out),
                         std::vector<double>(m.at("bias").get<bool>() ? out : 0)};
    }
    case LayerKind::downsample: return DownsampleLayer{z("stride"), z("pad_channels")};
    default: return std::monostate{};
  }
}

}  // namespace

std::vector<std::uint8_t> frame_blob(std::string_view magic, std::string_view header,
                                     std::span<const double> payload) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 + 8 + header.size() + payload.size() * 8 + kDigestSize);
  out.insert(out.end(), magic.begin(), magic.end());
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  const auto* p = reinterpret_cast<const std::uint8_t*>(payload.data());
  out.insert(out.end(), p, p + payload.size() * sizeof(double));
  std::array<std::uint8_t, kDigestSize> digest{};
  sha256(out, digest);
  out.insert(out.end(), digest.begin(), digest.end());
  return out;
}

UnframedBlob unframe_blob(std::span<const std::uint8_t> bytes, std::string_view magic) {
  constexpr std::size_t prefix = 8 + 4 + 8;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), magic.data(), 8) != 0) {
    throw FormatError("magic: expected '" + std::string(magic) + "'");
  }
  if (bytes.size() < prefix + kDigestSize) throw FormatError("header: file too short");
  const auto version = get<std::uint32_t>(bytes, 8);
  if (version != kFormatVersion) {
    throw FormatError("version: unsupported format version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - prefix - kDigestSize) {
    throw FormatError("header: declared length " + std::to_string(header_len) +
                      " exceeds file size");
  }
  UnframedBlob blob;
  blob.header.assign(reinterpret_cast<const char*>(bytes.data() + prefix), header_len);
  const std::size_t payload_begin = prefix + header_len;
  const std::size_t payload_end = bytes.size() - kDigestSize;
  blob.payload = bytes.subspan(payload_begin, payload_end - payload_begin);
  std::array<std::uint8_t, kDigestSize> digest{};
  sha256(bytes.first(payload_end), digest);
  blob.checksum_ok = std::memcmp(digest.data(), bytes.data() + payload_end, kDigestSize) == 0;
  return blob;
}

void read_doubles(std::span<const std::uint8_t> payload, std::size_t offset, std::span<double> out) {
  std::memcpy(out.data(), payload.data() + offset * sizeof(double), out.size() * sizeof(double));
}

std::vector<std::uint8_t> serialize_model(const NetworkGraph& net) {
  NetworkGraph copy = net;  // slots() hands out mutable spans
  json header;
  header["format"] = "hrank-model";
  header["input"] = {net.input_dims().c, net.input_dims().h, net.input_dims().w};
  header["num_classes"] = net.num_classes();
  header["blocks"] = json::array();
  for (const auto& b : net.blocks()) {
    header["blocks"].push_back({{"name", b.name}, {"kind", to_string(b.kind)}});
  }
  header["nodes"] = json::array();
  std::vector<double> payload;
  for (std::size_t id = 0; id < copy.nodes().size(); ++id) {
    LayerNode& n = copy.node(static_cast<int>(id));
    json jn;
    jn["id"] = n.id;
    jn["kind"] = to_string(n.kind);
    jn["name"] = n.name;
    jn["inputs"] = n.inputs;
    jn["prunable"] = n.prunable;
    jn["block"] = n.block;
    jn["meta"] = node_meta(n);
    jn["tensors"] = json::array();
    for (const auto& s : slots(n)) {
      jn["tensors"].push_back({{"name", s.name}, {"count", s.data.size()}});
      payload.insert(payload.end(), s.data.begin(), s.data.end());
    }
    header["nodes"].push_back(std::move(jn));
  }
  return frame_blob(kModelMagic, header.dump(), payload);
}

NetworkGraph deserialize_model(std::span<const std::uint8_t> bytes) {
  UnframedBlob blob = unframe_blob(bytes, kModelMagic);
  json header;
  try {
    header = json::parse(blob.header);
  } catch (const json::exception& e) {
    throw FormatError(std::string("header: ") + e.what());
  }

  NetworkGraph net;
  try {
    if (header.at("format") != "hrank-model") throw FormatError("header: not a model file");
    const auto& in = header.at("input");
    net = NetworkGraph({in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(),
                        in.at(2).get<std::size_t>()},
                       header.at("num_classes").get<std::size_t>());
    std::vector<Block> blocks;
    for (const auto& b : header.at("blocks")) {
      blocks.push_back({b.at("name").get<std::string>(),
                        structure_kind_from_string(b.at("kind").get<std::string>())});
    }
    net.set_blocks(std::move(blocks));

    const std::size_t available = blob.payload.size() / sizeof(double);
    if (blob.payload.size() % sizeof(double) != 0) {
      throw FormatError("payload: " + std::to_string(blob.payload.size()) +
                        " bytes is not a whole number of doubles");
    }
    std::size_t offset = 0;
    for (const auto& jn : header.at("nodes")) {
      LayerNode n;
      n.kind = layer_kind_from_string(jn.at("kind").get<std::string>());
      n.name = jn.at("name").get<std::string>();
      n.inputs = jn.at("inputs").get<std::vector<int>>();
      n.prunable = jn.at("prunable").get<bool>();
      n.block = jn.at("block").get<int>();
      n.params = params_from_meta(n.kind, jn.at("meta"));
      auto declared = jn.at("tensors");
      auto ss = slots(n);
      if (declared.size() != ss.size()) {
        throw FormatError("nodes: node '" + n.name + "' declares " +
                          std::to_string(declared.size()) + " tensors, expected " +
                          std::to_string(ss.size()));
      }
      for (std::size_t i = 0; i < ss.size(); ++i) {
        const auto count = declared[i].at("count").get<std::size_t>();
        if (declared[i].at("name") != ss[i].name || count != ss[i].data.size()) {
          throw FormatError("nodes: node '" + n.name + "' tensor '" + ss[i].name +
                            "' does not match its metadata");
        }
        if (count > available - offset) {
          throw FormatError("payload: node '" + n.name + "' tensor '" + ss[i].name + "' needs " +
                            std::to_string(count) + " values but only " +
                            std::to_string(available - offset) + " remain");
        }
        read_doubles(blob.payload, offset, ss[i].data);
        offset += count;
      }
      if (jn.at("id").get<int>() != static_cast<int>(net.nodes().size())) {
        throw FormatError("nodes: node ids are not sequential at '" + n.name + "'");
      }
      net.append(std::move(n));
    }
    if (offset != available) {
      throw FormatError("payload: " + std::to_string(available - offset) +
                        " trailing values not claimed by any node");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("nodes: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("nodes: ") + e.what());
  }
  if (!blob.checksum_ok) throw FormatError("checksum: file digest does not match its contents");
  try {
    net.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("graph: ") + e.what());
  }
  return net;
}

void save_model(const NetworkGraph& net, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_model(net));
}

NetworkGraph load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file_bytes(path));
}

std::string model_fingerprint(const NetworkGraph& net) { return sha256_hex(serialize_model(net)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span<const std::uint8_t>(
                             reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace hrank
