#pragma once
// Prune, tune, tighten: the end-to-end loop, Pareto sweeps, and evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcp/cost.h"
#include "lcp/dataset.h"
#include "lcp/engine.h"
#include "lcp/evolution.h"
#include "lcp/metrics.h"
#include "lcp/pruners.h"

namespace lcp {

enum class Policy { kUniform, kNaive, kLcp, kSingleFilter, kLayerSchedule };

std::string_view policy_name(Policy p);
std::optional<Policy> parse_policy(std::string_view name);

struct PipelineConfig {
  std::filesystem::path model_path;
  std::filesystem::path train_path;
  std::filesystem::path eval_path;
  Policy policy = Policy::kLcp;
  MetricKind metric = MetricKind::kL2Sq;
  ConstraintSpec constraint;
  // Intermediate targets in the constraint's units, ending at its target.
  // Empty means one-shot.
  std::vector<double> schedule;
  FloorPolicy floor;
  TuneConfig tune;  // run after every step
  EAConfig ea;
  std::size_t single_filter_interval = 0;
  std::size_t single_filter_gradient_batch = 256;
  LayerSchedule layer_schedule;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::size_t workers = 1;
  // Sweep axes.
  std::vector<double> levels;
  std::vector<Policy> policies;
  std::vector<std::uint64_t> seeds;
};

// Relative paths resolve against base_dir. Unknown keys are format errors.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const PipelineConfig& cfg);

struct ParetoPoint {
  double level = 0.0;  // requested target as given
  Policy policy = Policy::kNaive;
  std::uint64_t seed = 0;
  Resource resource = Resource::kMacs;
  double zeta = 0.0;
  std::int64_t achieved_macs = 0;
  std::int64_t achieved_params = 0;
  EvalResult pre_tune;
  EvalResult post_tune;
  // |loss change| of the step's mask on the seeded fitness batch.
  double fitness_delta = 0.0;
  double wall_seconds = 0.0;  // not covered by determinism

  std::int64_t achieved(Resource r) const {
    return r == Resource::kMacs ? achieved_macs : achieved_params;
  }
};

struct PipelineResult {
  NetworkGraph graph;
  PruneMask mask;  // over the input graph's filters
  std::vector<ParetoPoint> steps;
  std::vector<PruneMask> step_masks;  // over the graph entering each step
  std::optional<SearchResult> search;  // last lcp step
};

struct MaskSelection {
  PruneMask mask;
  Batch fitness_batch;  // seeded per step; also used for taylor1 gradients
  std::optional<SearchResult> search;  // lcp
  std::optional<NetworkGraph> tuned;   // single_filter: weights after short tunes
};

// Runs the configured policy once against an absolute budget zeta.
MaskSelection select_mask(const NetworkGraph& graph, const Dataset& train,
                          const PipelineConfig& cfg, double zeta, std::size_t step = 0);

// Absolute budgets for every schedule step, validated against the graph.
std::vector<double> resolve_schedule(const NetworkGraph& graph, const PipelineConfig& cfg);

using StepCallback = std::function<void(std::size_t step, const ParetoPoint&,
                                        const NetworkGraph& before, const PruneMask&)>;

// Errors keep their type and gain a "step i:" prefix.
PipelineResult run_pipeline(const NetworkGraph& graph, const Dataset& train, const Dataset& eval,
                            const PipelineConfig& cfg, const StepCallback& on_step = {});

struct SweepCell {
  double level = 0.0;
  Policy policy = Policy::kNaive;
  std::uint64_t seed = 0;
  std::optional<ParetoPoint> point;
  std::optional<PruneMask> mask;
  std::optional<BetaVector> beta;
  std::string error;
};

struct SweepResult {
  Resource resource = Resource::kMacs;
  std::vector<SweepCell> cells;  // levels, then policies, then seeds
};

// One-shot pipeline per (level, policy, seed) on up to cfg.workers threads.
// A failing cell becomes an error row.
SweepResult sweep(const NetworkGraph& graph, const Dataset& train, const Dataset& eval,
                  const PipelineConfig& cfg);

inline constexpr const char* kSweepCsvHeader = "# lcp-sweep v1";

// Data rows, then one summary row (mean and sample std) per (level, policy).
std::string sweep_csv(const SweepResult& result);
std::string sweep_timing_csv(const SweepResult& result);

// One row per unlocked filter group: the group metric against the measured
// loss change of removing the group alone. Rows are keyed by the group's
// first filter; taylor1 gradients come from the same batch.
struct DiagnosticRow {
  std::size_t filter_id = 0;
  std::string layer_id;
  double metric = 0.0;
  double measured_delta = 0.0;
};

std::vector<DiagnosticRow> diagnostics(const NetworkGraph& graph, const Batch& batch,
                                       MetricKind kind);
// filter_id,layer_id,metric,measured_delta
std::string diagnostics_csv(const std::vector<DiagnosticRow>& rows);

nlohmann::json to_json(const ParetoPoint& p);

nlohmann::json eval_report(const NetworkGraph& graph, const Dataset& data,
                           const PruneMask* mask = nullptr);

}  // namespace lcp
