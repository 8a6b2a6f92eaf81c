#include "lcp/bundle.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "lcp/errors.h"

namespace lcp {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& path, const char* manifest) {
  if (fs::is_directory(path)) return path / manifest;
  return path;
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot write " + file.string());
  out << text;
}

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

std::vector<char> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open blob " + file.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

std::vector<double> read_f32_blob(const fs::path& file) {
  const auto bytes = read_bytes(file);
  if (bytes.size() % 4 != 0) throw FormatError("blob " + file.string() + " is not a whole number of float32");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t raw;
    std::memcpy(&raw, bytes.data() + 4 * i, 4);
    out[i] = static_cast<double>(std::bit_cast<float>(byteswap_if_big(raw)));
  }
  return out;
}

void write_f32_blob(const fs::path& file, std::span<const double> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto raw = byteswap_if_big(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    std::memcpy(bytes.data() + 4 * i, &raw, 4);
  }
  write_text(file, bytes);
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": field '" + key + "': " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

void check_header(const json& j, const char* format, const fs::path& file) {
  if (!j.is_object()) throw FormatError(file.string() + ": top level must be an object");
  if (get_field<std::string>(j, "format", file.string()) != format) {
    throw FormatError(file.string() + ": format is not '" + format + "'");
  }
  if (get_field<int>(j, "version", file.string()) != kBundleVersion) {
    throw FormatError(file.string() + ": unsupported version");
  }
}

LayerDesc parse_layer(const json& j) {
  LayerDesc d;
  if (!j.is_object()) throw FormatError("model.json: layer entry must be an object");
  d.id = get_field<std::string>(j, "id", "model.json layer");
  const std::string where = "layer '" + d.id + "'";
  const auto kind = parse_kind(get_field<std::string>(j, "kind", where));
  if (!kind) throw FormatError(where + ": unknown kind '" + j.at("kind").get<std::string>() + "'");
  d.kind = *kind;
  d.inputs = get_or<std::vector<std::string>>(j, "inputs", {}, where);
  switch (d.kind) {
    case LayerKind::kInput: {
      const auto shape = get_field<std::vector<std::size_t>>(j, "shape", where);
      if (shape.size() != 3) throw ShapeError(where + ": input shape must be [C, H, W]");
      d.channels = shape[0];
      d.height = shape[1];
      d.width = shape[2];
      break;
    }
    case LayerKind::kConv2d: {
      const auto kernel = get_field<std::vector<std::size_t>>(j, "kernel", where);
      if (kernel.size() != 2) throw FormatError(where + ": kernel must be [kh, kw]");
      d.kernel_h = kernel[0];
      d.kernel_w = kernel[1];
      d.stride = get_or<std::size_t>(j, "stride", 1, where);
      d.padding = get_or<std::size_t>(j, "padding", 0, where);
      d.in_channels = get_field<std::size_t>(j, "in_channels", where);
      d.out_channels = get_field<std::size_t>(j, "out_channels", where);
      d.bias = get_or<bool>(j, "bias", false, where);
      d.prunable = get_or<bool>(j, "prunable", true, where);
      break;
    }
    case LayerKind::kDense:
      d.in_channels = get_field<std::size_t>(j, "in_features", where);
      d.out_channels = get_field<std::size_t>(j, "out_features", where);
      d.bias = get_or<bool>(j, "bias", true, where);
      d.prunable = get_or<bool>(j, "prunable", false, where);
      break;
    case LayerKind::kBatchNorm:
      d.epsilon = get_or<double>(j, "epsilon", 1e-5, where);
      d.momentum = get_or<double>(j, "momentum", 0.1, where);
      break;
    default:
      break;
  }
  return d;
}

json layer_to_json(const LayerDesc& d) {
  json j;
  j["id"] = d.id;
  j["kind"] = std::string(kind_name(d.kind));
  j["inputs"] = d.inputs;
  switch (d.kind) {
    case LayerKind::kInput:
      j["shape"] = {d.channels, d.height, d.width};
      break;
    case LayerKind::kConv2d:
      j["kernel"] = {d.kernel_h, d.kernel_w};
      j["stride"] = d.stride;
      j["padding"] = d.padding;
      j["in_channels"] = d.in_channels;
      j["out_channels"] = d.out_channels;
      j["bias"] = d.bias;
      j["prunable"] = d.prunable;
      break;
    case LayerKind::kDense:
      j["in_features"] = d.in_channels;
      j["out_features"] = d.out_channels;
      j["bias"] = d.bias;
      j["prunable"] = d.prunable;
      break;
    case LayerKind::kBatchNorm:
      j["epsilon"] = d.epsilon;
      j["momentum"] = d.momentum;
      break;
    default:
      break;
  }
  return j;
}

}  // namespace

NetworkGraph load_model(const fs::path& path) {
  const fs::path file = resolve(path, "model.json");
  const fs::path dir = file.parent_path();
  const json j = read_json(file);
  check_header(j, "lcp-model", file);

  std::vector<LayerDesc> layers;
  for (const json& lj : get_field<json>(j, "layers", file.string())) layers.push_back(parse_layer(lj));

  NetworkGraph::TensorMap tensors;
  for (const json& tj : get_field<json>(j, "tensors", file.string())) {
    const auto name = get_field<std::string>(tj, "name", "tensor manifest");
    const std::string where = "tensor '" + name + "'";
    const auto layer = name.substr(0, name.find('.'));
    if (get_field<std::string>(tj, "dtype", where) != "float32") {
      throw FormatError(where + ": only float32 blobs are supported");
    }
    const auto shape = get_field<std::vector<std::size_t>>(tj, "shape", where);
    auto values = read_f32_blob(dir / get_field<std::string>(tj, "file", where));
    if (values.size() != shape_product(shape)) {
      throw ShapeError("layer '" + layer + "': blob for " + name + " has " +
                       std::to_string(values.size()) + " elements, manifest shape needs " +
                       std::to_string(shape_product(shape)));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw FormatError("layer '" + layer + "': " + name + " has non-finite values");
    }
    if (!tensors.emplace(name, Tensor(shape, std::move(values))).second) {
      throw FormatError(where + ": listed twice");
    }
  }
  return NetworkGraph::create(std::move(layers), std::move(tensors));
}

void save_model(const NetworkGraph& graph, const fs::path& dir) {
  fs::create_directories(dir);
  json j;
  j["format"] = "lcp-model";
  j["version"] = kBundleVersion;
  j["layers"] = json::array();
  for (const LayerDesc& d : graph.layers()) j["layers"].push_back(layer_to_json(d));
  j["tensors"] = json::array();
  for (const auto& [name, t] : graph.tensors()) {
    const std::string file = name + ".bin";
    j["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "float32"}, {"file", file}});
    write_f32_blob(dir / file, t.values());
  }
  write_text(dir / "model.json", j.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& path) {
  const fs::path file = resolve(path, "data.json");
  const fs::path dir = file.parent_path();
  const json j = read_json(file);
  check_header(j, "lcp-dataset", file);
  const std::string where = file.string();
  const auto num_classes = get_field<std::size_t>(j, "num_classes", where);

  const json& ij = get_field<json>(j, "inputs", where);
  const auto shape = get_field<std::vector<std::size_t>>(ij, "shape", where + " inputs");
  if (shape.size() != 4) throw ShapeError(where + ": inputs must be [N, C, H, W]");
  if (get_field<std::string>(ij, "dtype", where) != "float32") throw FormatError(where + ": inputs must be float32");
  auto values = read_f32_blob(dir / get_field<std::string>(ij, "file", where));
  if (values.size() != shape_product(shape)) {
    throw ShapeError(where + ": inputs blob has " + std::to_string(values.size()) +
                     " elements, shape needs " + std::to_string(shape_product(shape)));
  }

  const json& lj = get_field<json>(j, "labels", where);
  if (get_field<std::string>(lj, "dtype", where) != "int32") throw FormatError(where + ": labels must be int32");
  const auto bytes = read_bytes(dir / get_field<std::string>(lj, "file", where));
  if (bytes.size() != shape[0] * 4) throw ShapeError(where + ": labels blob length does not match N");
  std::vector<std::int32_t> labels(shape[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::uint32_t raw;
    std::memcpy(&raw, bytes.data() + 4 * i, 4);
    labels[i] = static_cast<std::int32_t>(byteswap_if_big(raw));
  }
  Dataset data{Tensor(shape, std::move(values)), std::move(labels)};
  validate_batch(data, num_classes);
  return data;
}

void save_dataset(const Dataset& data, std::size_t num_classes, const fs::path& dir) {
  validate_batch(data, num_classes);
  fs::create_directories(dir);
  json j;
  j["format"] = "lcp-dataset";
  j["version"] = kBundleVersion;
  j["num_classes"] = num_classes;
  j["inputs"] = {{"file", "inputs.bin"}, {"dtype", "float32"}, {"shape", data.inputs.shape()}};
  j["labels"] = {{"file", "labels.bin"}, {"dtype", "int32"}, {"shape", {data.size()}}};
  write_f32_blob(dir / "inputs.bin", data.inputs.values());
  std::string bytes(data.size() * 4, '\0');
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto raw = byteswap_if_big(static_cast<std::uint32_t>(data.labels[i]));
    std::memcpy(bytes.data() + 4 * i, &raw, 4);
  }
  write_text(dir / "labels.bin", bytes);
  write_text(dir / "data.json", j.dump(2) + "\n");
}

}  // namespace lcp
