#include "lcp/artifacts.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lcp/errors.h"

namespace lcp {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key, const char* what) {
  if (!j.is_object() || !j.contains(key)) {
    throw FormatError(std::string(what) + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": bad field '" + key + "': " + e.what());
  }
}

void check_header(const json& j, const char* format) {
  if (field<std::string>(j, "format", format) != format) {
    throw FormatError(std::string("expected format '") + format + "'");
  }
  if (field<int>(j, "version", format) != kArtifactVersion) {
    throw FormatError(std::string(format) + ": unsupported version");
  }
}

json fitness_value(double f) {
  if (std::isfinite(f)) return f;
  return nullptr;  // +inf has no JSON literal
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json to_json(const ConstraintSpec& spec) {
  return {{"resource", std::string(resource_name(spec.resource))},
          {"target", spec.target},
          {"fractional", spec.fractional},
          {"zeta", spec.zeta}};
}

ConstraintSpec constraint_from_json(const json& j) {
  ConstraintSpec spec;
  const auto name = field<std::string>(j, "resource", "constraint");
  const auto r = parse_resource(name);
  if (!r) throw FormatError("constraint: unknown resource '" + name + "'");
  spec.resource = *r;
  spec.target = field<double>(j, "target", "constraint");
  if (j.contains("fractional")) spec.fractional = field<bool>(j, "fractional", "constraint");
  if (j.contains("zeta")) spec.zeta = field<double>(j, "zeta", "constraint");
  return spec;
}

json to_json(const CostReport& report) {
  json per_layer = json::object();
  for (const auto& [id, v] : report.per_layer) per_layer[id] = v;
  return {{"total", report.total}, {"per_layer", per_layer}};
}

json to_json(const EvalResult& r) {
  return {{"loss", r.loss}, {"accuracy", r.accuracy}, {"correct", r.correct}, {"count", r.count}};
}

json mask_to_json(const NetworkGraph& graph, const PruneMask& z, const ConstraintSpec& spec) {
  if (z.size() != graph.num_filters()) throw MaskError("mask length does not match the graph");
  std::string bits(z.size(), '0');
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (z.kept(j)) bits[j] = '1';
  }
  json layers = json::array();
  const auto alive = alive_per_layer(graph, z);
  for (std::size_t l = 0; l < alive.size(); ++l) {
    const PrunableLayer& pl = graph.prunable_layers()[l];
    layers.push_back({{"id", graph.layer(pl.node).id}, {"width", pl.width}, {"kept", alive[l]}});
  }
  return {{"format", "lcp-mask"},
          {"version", kArtifactVersion},
          {"num_filters", z.size()},
          {"bits", bits},
          {"partition_hash", partition_hash(build_filter_groups(graph))},
          {"constraint", to_json(spec)},
          {"layers", layers}};
}

PruneMask mask_from_json(const json& j, const NetworkGraph& graph) {
  check_header(j, "lcp-mask");
  const auto bits = field<std::string>(j, "bits", "mask");
  const auto k = field<std::size_t>(j, "num_filters", "mask");
  if (bits.size() != k || k != graph.num_filters()) {
    throw FormatError("mask has " + std::to_string(bits.size()) + " bits; graph has " +
                      std::to_string(graph.num_filters()) + " filters");
  }
  const auto hash = field<std::string>(j, "partition_hash", "mask");
  const FilterGroupPartition groups = build_filter_groups(graph);
  if (hash != partition_hash(groups)) {
    throw FormatError("mask partition hash " + hash + " does not match the graph");
  }
  PruneMask z = PruneMask::all_ones(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (bits[i] != '0' && bits[i] != '1') throw FormatError("mask bits must be '0' or '1'");
    z.keep[i] = bits[i] == '1';
  }
  try {
    check_mask(graph, groups, z);
  } catch (const MaskError& e) {
    throw FormatError(std::string("invalid mask: ") + e.what());
  }
  return z;
}

json beta_to_json(const NetworkGraph& graph, const SearchResult& result) {
  json layers = json::array();
  for (const PrunableLayer& pl : graph.prunable_layers()) layers.push_back(graph.layer(pl.node).id);
  json initial = json::array();
  for (double f : result.trace.initial_fitness) initial.push_back(fitness_value(f));
  return {{"format", "lcp-beta"},
          {"version", kArtifactVersion},
          {"layers", layers},
          {"beta", result.beta},
          {"fitness", fitness_value(result.fitness)},
          {"zero_beta_fitness", fitness_value(result.trace.zero_beta_fitness)},
          {"initial_fitness", initial},
          {"evaluations", result.trace.evaluations}};
}

BetaVector beta_from_json(const json& j, const NetworkGraph& graph) {
  check_header(j, "lcp-beta");
  auto beta = field<BetaVector>(j, "beta", "beta");
  if (beta.size() != graph.num_prunable_layers()) {
    throw FormatError("beta has " + std::to_string(beta.size()) + " entries; graph has " +
                      std::to_string(graph.num_prunable_layers()) + " prunable layers");
  }
  return beta;
}

std::string trace_csv(const SearchTrace& trace) {
  std::ostringstream out;
  out << "iteration,fitness,best,alpha\n";
  for (const TraceRecord& r : trace.records) {
    out << r.iteration << ',' << format_double(r.fitness) << ',' << format_double(r.best) << ','
        << format_double(r.alpha) << '\n';
  }
  return out.str();
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace lcp
