#pragma once
// JSON and CSV artifacts written by the CLI. All writers are deterministic:
// sorted keys, shortest round-trip doubles, "\n" line endings.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "lcp/cost.h"
#include "lcp/engine.h"
#include "lcp/evolution.h"
#include "lcp/graph.h"

namespace lcp {

inline constexpr int kArtifactVersion = 1;

nlohmann::json to_json(const ConstraintSpec& spec);
ConstraintSpec constraint_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CostReport& report);
nlohmann::json to_json(const EvalResult& result);

// mask.json: K as a bit string ('1' = keep), the partition hash of the graph
// it was computed on, and the constraint that produced it.
nlohmann::json mask_to_json(const NetworkGraph& graph, const PruneMask& z,
                            const ConstraintSpec& spec);
// Throws FormatError if the mask does not belong to graph (length or
// partition hash mismatch) or is malformed.
PruneMask mask_from_json(const nlohmann::json& j, const NetworkGraph& graph);

nlohmann::json beta_to_json(const NetworkGraph& graph, const SearchResult& result);
BetaVector beta_from_json(const nlohmann::json& j, const NetworkGraph& graph);

// iteration,fitness,best,alpha
std::string trace_csv(const SearchTrace& trace);

// Shortest representation that parses back to the same double.
std::string format_double(double v);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace lcp
