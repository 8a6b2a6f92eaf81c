#include "lcp/pipeline.h"

#include <array>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lcp/artifacts.h"
#include "lcp/errors.h"
#include "lcp/parallel.h"

namespace lcp {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Policy, std::string_view>, 5> kPolicyNames{{
    {Policy::kUniform, "uniform"},
    {Policy::kNaive, "naive"},
    {Policy::kLcp, "lcp"},
    {Policy::kSingleFilter, "single_filter"},
    {Policy::kLayerSchedule, "layer_schedule"},
}};

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw FormatError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + "." + key + ": " + e.what());
  }
}

Policy policy_from(const std::string& name) {
  const auto p = parse_policy(name);
  if (!p) throw FormatError("unknown policy '" + name + "'");
  return *p;
}

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void check_compatible(const NetworkGraph& graph, const Dataset& data, const char* what) {
  validate_batch(data, graph.num_classes());
  if (data.sample_shape() != graph.out_shape(graph.input_node())) {
    throw ShapeError(std::string(what) + " samples do not match the model input shape");
  }
}

std::string csv_escape(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out + "\"";
}

struct StepOutcome {
  ParetoPoint point;
  PruneMask mask;
  NetworkGraph tuned;
  std::optional<SearchResult> search;
};

StepOutcome run_step(const NetworkGraph& current, const Dataset& train, const Dataset& eval,
                     const PipelineConfig& cfg, std::size_t step, double zeta) {
  const auto t0 = std::chrono::steady_clock::now();
  MaskSelection sel = select_mask(current, train, cfg, zeta, step);
  TuneConfig tune = cfg.tune;
  tune.seed = derive_seed(cfg.seed, 2 * step + 1);

  const NetworkGraph pruned = apply_mask(sel.tuned ? *sel.tuned : current, sel.mask);
  ParetoPoint p;
  p.level = cfg.constraint.target;
  p.policy = cfg.policy;
  p.seed = cfg.seed;
  p.resource = cfg.constraint.resource;
  p.zeta = zeta;
  p.achieved_macs = full_cost(pruned, Resource::kMacs);
  p.achieved_params = full_cost(pruned, Resource::kParams);
  if (static_cast<double>(p.achieved(p.resource)) > zeta) {
    throw std::logic_error("policy emitted a mask above its budget");
  }
  p.fitness_delta = std::abs(forward_loss(current, sel.fitness_batch) -
                             forward_loss(pruned, sel.fitness_batch));
  p.pre_tune = evaluate(pruned, eval);
  NetworkGraph tuned = tune.epochs > 0 ? finetune(pruned, train, tune) : pruned;
  p.post_tune = evaluate(tuned, eval);
  p.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(p), std::move(sel.mask), std::move(tuned), std::move(sel.search)};
}

}  // namespace

MaskSelection select_mask(const NetworkGraph& current, const Dataset& train,
                          const PipelineConfig& cfg, double zeta, std::size_t step) {
  const ConstraintSpec spec{cfg.constraint.resource, zeta, false, zeta};
  EAConfig ea = cfg.ea;
  ea.seed = derive_seed(cfg.seed, 2 * step);
  ea.workers = cfg.workers;
  TuneConfig tune = cfg.tune;
  tune.seed = derive_seed(cfg.seed, 2 * step + 1);

  MaskSelection out;
  out.fitness_batch = fitness_batch(train, ea);
  GradientSet grads;
  if (cfg.metric == MetricKind::kTaylor1) grads = backward(current, out.fitness_batch).gradients;
  const MetricVector m = compute_metrics(current, cfg.metric, &grads);

  switch (cfg.policy) {
    case Policy::kUniform:
      out.mask = uniform_prune_to(current, m, spec, cfg.floor);
      break;
    case Policy::kNaive:
      out.mask = naive_prune(current, m.groups, m.per_group, spec, cfg.floor);
      break;
    case Policy::kLcp:
      out.search = search_beta(current, m, spec, cfg.floor, ea, out.fitness_batch);
      out.mask = out.search->mask;
      break;
    case Policy::kSingleFilter: {
      SingleFilterConfig sf;
      sf.metric = cfg.metric;
      sf.tune = tune;
      sf.tune.epochs = 1;
      sf.tune_interval = cfg.single_filter_interval;
      sf.gradient_batch = cfg.single_filter_gradient_batch;
      sf.seed = ea.seed;
      GreedyResult r = single_filter_greedy(current, train, spec, sf, cfg.floor);
      out.mask = std::move(r.mask);
      out.tuned = std::move(r.graph);
      break;
    }
    case Policy::kLayerSchedule:
      out.mask = layer_scheduled_prune(current, m, cfg.layer_schedule, cfg.floor);
      if (!satisfies(current, out.mask, spec)) {
        const auto c = CostModel(current).total(out.mask, spec.resource);
        throw InfeasibleError("layer schedule costs " + std::to_string(c) + " > " +
                                  format_double(zeta),
                              static_cast<double>(c));
      }
      break;
  }
  return out;
}

std::string_view policy_name(Policy p) {
  for (const auto& [k, name] : kPolicyNames) {
    if (k == p) return name;
  }
  return "?";
}

std::optional<Policy> parse_policy(std::string_view name) {
  for (const auto& [k, n] : kPolicyNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j,
                 {"model", "train", "eval", "policy", "metric", "constraint", "schedule", "floor",
                  "tune", "ea", "single_filter", "layer_schedule", "seed", "out_dir", "workers",
                  "sweep"},
                 "config");
  PipelineConfig cfg;
  std::string s;
  auto path = [&](const char* key, std::filesystem::path& out) {
    if (!j.contains(key)) return;
    read(j, key, s, "config");
    out = resolve_path(base_dir, s);
  };
  path("model", cfg.model_path);
  path("train", cfg.train_path);
  path("eval", cfg.eval_path);
  path("out_dir", cfg.out_dir);
  if (j.contains("policy")) {
    read(j, "policy", s, "config");
    cfg.policy = policy_from(s);
  }
  if (j.contains("metric")) {
    read(j, "metric", s, "config");
    const auto m = parse_metric(s);
    if (!m) throw FormatError("unknown metric '" + s + "'");
    cfg.metric = *m;
  }
  if (j.contains("constraint")) {
    reject_unknown(j["constraint"], {"resource", "target", "fractional"}, "constraint");
    cfg.constraint = constraint_from_json(j["constraint"]);
  }
  read(j, "schedule", cfg.schedule, "config");
  read(j, "floor", cfg.floor.fraction, "config");
  read(j, "seed", cfg.seed, "config");
  read(j, "workers", cfg.workers, "config");
  read(j, "layer_schedule", cfg.layer_schedule.keep, "config");
  if (j.contains("tune")) {
    const json& t = j["tune"];
    reject_unknown(t, {"learning_rate", "drop_factor", "drop_epochs", "momentum", "nesterov",
                       "epochs", "batch_size"},
                   "tune");
    read(t, "learning_rate", cfg.tune.learning_rate, "tune");
    read(t, "drop_factor", cfg.tune.drop_factor, "tune");
    read(t, "drop_epochs", cfg.tune.drop_epochs, "tune");
    read(t, "momentum", cfg.tune.momentum, "tune");
    read(t, "nesterov", cfg.tune.nesterov, "tune");
    read(t, "epochs", cfg.tune.epochs, "tune");
    read(t, "batch_size", cfg.tune.batch_size, "tune");
  }
  if (j.contains("ea")) {
    const json& e = j["ea"];
    reject_unknown(e, {"pool_size", "iterations", "tournament_size", "mutation_count",
                       "alpha_schedule", "fitness_batch_size"},
                   "ea");
    read(e, "pool_size", cfg.ea.pool_size, "ea");
    read(e, "iterations", cfg.ea.iterations, "ea");
    read(e, "tournament_size", cfg.ea.tournament_size, "ea");
    read(e, "mutation_count", cfg.ea.mutation_count, "ea");
    read(e, "fitness_batch_size", cfg.ea.fitness_batch_size, "ea");
    if (e.contains("alpha_schedule")) {
      read(e, "alpha_schedule", s, "ea");
      if (s == "decreasing") cfg.ea.alpha_schedule = AlphaSchedule::kDecreasing;
      else if (s == "increasing") cfg.ea.alpha_schedule = AlphaSchedule::kIncreasing;
      else throw FormatError("ea.alpha_schedule must be 'decreasing' or 'increasing'");
    }
  }
  if (j.contains("single_filter")) {
    const json& f = j["single_filter"];
    reject_unknown(f, {"tune_interval", "gradient_batch"}, "single_filter");
    read(f, "tune_interval", cfg.single_filter_interval, "single_filter");
    read(f, "gradient_batch", cfg.single_filter_gradient_batch, "single_filter");
  }
  if (j.contains("sweep")) {
    const json& w = j["sweep"];
    reject_unknown(w, {"levels", "policies", "seeds"}, "sweep");
    read(w, "levels", cfg.levels, "sweep");
    read(w, "seeds", cfg.seeds, "sweep");
    std::vector<std::string> names;
    read(w, "policies", names, "sweep");
    for (const auto& n : names) cfg.policies.push_back(policy_from(n));
  }
  return cfg;
}

json to_json(const PipelineConfig& cfg) {
  json policies = json::array();
  for (Policy p : cfg.policies) policies.push_back(std::string(policy_name(p)));
  json constraint = to_json(cfg.constraint);
  constraint.erase("zeta");
  return {
      {"model", cfg.model_path.string()},
      {"train", cfg.train_path.string()},
      {"eval", cfg.eval_path.string()},
      {"policy", std::string(policy_name(cfg.policy))},
      {"metric", std::string(metric_name(cfg.metric))},
      {"constraint", constraint},
      {"schedule", cfg.schedule},
      {"floor", cfg.floor.fraction},
      {"tune",
       {{"learning_rate", cfg.tune.learning_rate},
        {"drop_factor", cfg.tune.drop_factor},
        {"drop_epochs", cfg.tune.drop_epochs},
        {"momentum", cfg.tune.momentum},
        {"nesterov", cfg.tune.nesterov},
        {"epochs", cfg.tune.epochs},
        {"batch_size", cfg.tune.batch_size}}},
      {"ea",
       {{"pool_size", cfg.ea.pool_size},
        {"iterations", cfg.ea.iterations},
        {"tournament_size", cfg.ea.tournament_size},
        {"mutation_count", cfg.ea.mutation_count},
        {"alpha_schedule",
         cfg.ea.alpha_schedule == AlphaSchedule::kDecreasing ? "decreasing" : "increasing"},
        {"fitness_batch_size", cfg.ea.fitness_batch_size}}},
      {"single_filter",
       {{"tune_interval", cfg.single_filter_interval},
        {"gradient_batch", cfg.single_filter_gradient_batch}}},
      {"layer_schedule", cfg.layer_schedule.keep},
      {"seed", cfg.seed},
      {"sweep", {{"levels", cfg.levels}, {"policies", policies}, {"seeds", cfg.seeds}}},
  };
}

std::vector<double> resolve_schedule(const NetworkGraph& graph, const PipelineConfig& cfg) {
  const double full = static_cast<double>(full_cost(graph, cfg.constraint.resource));
  const double scale = cfg.constraint.fractional ? full : 1.0;
  std::vector<double> steps = cfg.schedule.empty() ? std::vector<double>{cfg.constraint.target}
                                                   : cfg.schedule;
  if (steps.back() != cfg.constraint.target) {
    throw FormatError("schedule must end at the constraint target " +
                      format_double(cfg.constraint.target));
  }
  std::vector<double> zetas;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double z = steps[i] * scale;
    if (!(z > 0.0) || z > full) {
      throw FormatError("schedule entry " + format_double(steps[i]) + " outside (0, " +
                        format_double(cfg.constraint.fractional ? 1.0 : full) + "]");
    }
    if (i > 0 && !(steps[i] < steps[i - 1])) {
      throw FormatError("schedule must be strictly decreasing");
    }
    zetas.push_back(z);
  }
  return zetas;
}

PipelineResult run_pipeline(const NetworkGraph& graph, const Dataset& train, const Dataset& eval,
                            const PipelineConfig& cfg, const StepCallback& on_step) {
  validate(cfg.tune);
  check_compatible(graph, train, "training");
  check_compatible(graph, eval, "evaluation");
  const std::vector<double> zetas = resolve_schedule(graph, cfg);

  PipelineResult result{graph, PruneMask::all_ones(graph.num_filters()), {}, {}, std::nullopt};
  std::vector<std::size_t> origin(graph.num_filters());
  std::iota(origin.begin(), origin.end(), 0);

  for (std::size_t i = 0; i < zetas.size(); ++i) {
    const std::string where = "step " + std::to_string(i) + ": ";
    std::optional<StepOutcome> out;
    try {
      out = run_step(result.graph, train, eval, cfg, i, zetas[i]);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(where + e.what(), e.minimum_cost());
    } catch (const DivergenceError& e) {
      throw DivergenceError(where + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
    if (on_step) on_step(i, out->point, result.graph, out->mask);

    std::vector<std::size_t> next;
    for (std::size_t j = 0; j < out->mask.size(); ++j) {
      if (out->mask.kept(j)) next.push_back(origin[j]);
    }
    origin = std::move(next);
    result.steps.push_back(out->point);
    result.step_masks.push_back(out->mask);
    if (out->search) result.search = std::move(out->search);
    result.graph = std::move(out->tuned);
  }

  result.mask.keep.assign(graph.num_filters(), 0);
  for (std::size_t j : origin) result.mask.keep[j] = 1;
  return result;
}

SweepResult sweep(const NetworkGraph& graph, const Dataset& train, const Dataset& eval,
                  const PipelineConfig& cfg) {
  if (cfg.levels.empty() || cfg.policies.empty() || cfg.seeds.empty()) {
    throw FormatError("sweep needs at least one level, policy and seed");
  }
  SweepResult result;
  result.resource = cfg.constraint.resource;
  for (double level : cfg.levels) {
    for (Policy p : cfg.policies) {
      for (std::uint64_t s : cfg.seeds) result.cells.push_back({level, p, s, {}, {}, {}, {}});
    }
  }
  parallel_for(result.cells.size(), cfg.workers, [&](std::size_t c) {
    SweepCell& cell = result.cells[c];
    PipelineConfig cell_cfg = cfg;
    cell_cfg.policy = cell.policy;
    cell_cfg.constraint.target = cell.level;
    cell_cfg.schedule.clear();
    cell_cfg.seed = cell.seed;
    cell_cfg.workers = 1;
    try {
      PipelineResult r = run_pipeline(graph, train, eval, cell_cfg);
      cell.point = r.steps.back();
      cell.mask = std::move(r.mask);
      if (r.search) cell.beta = r.search->beta;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });
  return result;
}

std::string sweep_csv(const SweepResult& result) {
  std::ostringstream out;
  out << kSweepCsvHeader << '\n'
      << "kind,level,policy,seed,n,resource,zeta,achieved_macs,achieved_params,pre_loss,"
         "pre_accuracy,post_loss,post_accuracy,fitness_delta,pre_loss_std,pre_accuracy_std,"
         "post_loss_std,post_accuracy_std,fitness_delta_std,error\n";
  const std::string resource(resource_name(result.resource));
  const std::string no_values(8, ',');
  const std::string no_std(5, ',');

  for (const SweepCell& c : result.cells) {
    const std::string head =
        format_double(c.level) + ',' + std::string(policy_name(c.policy)) + ',' + std::to_string(c.seed);
    if (!c.point) {
      out << "error," << head << ",0," << resource << no_values << no_std << ','
          << csv_escape(c.error) << '\n';
      continue;
    }
    const ParetoPoint& p = *c.point;
    out << "data," << head << ",1," << resource << ',' << format_double(p.zeta) << ','
        << p.achieved_macs << ',' << p.achieved_params << ',' << format_double(p.pre_tune.loss)
        << ',' << format_double(p.pre_tune.accuracy) << ',' << format_double(p.post_tune.loss)
        << ',' << format_double(p.post_tune.accuracy) << ',' << format_double(p.fitness_delta)
        << no_std << ",\n";
  }

  // Summary rows in first-appearance order of (level, policy).
  std::vector<std::pair<double, Policy>> keys;
  for (const SweepCell& c : result.cells) {
    const std::pair<double, Policy> k{c.level, c.policy};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& [level, policy] : keys) {
    std::vector<const ParetoPoint*> pts;
    for (const SweepCell& c : result.cells) {
      if (c.level == level && c.policy == policy && c.point) pts.push_back(&*c.point);
    }
    out << "summary," << format_double(level) << ',' << policy_name(policy) << ",," << pts.size()
        << ',' << resource;
    if (pts.empty()) {
      out << no_values << no_std << ",\n";
      continue;
    }
    auto column = [&](auto get) {
      std::vector<double> v;
      for (const ParetoPoint* p : pts) v.push_back(static_cast<double>(get(*p)));
      return v;
    };
    auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    auto sample_std = [&](const std::vector<double>& v) {
      if (v.size() < 2) return 0.0;
      const double m = mean(v);
      double ss = 0.0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    const auto zeta = column([](const ParetoPoint& p) { return p.zeta; });
    const auto am = column([](const ParetoPoint& p) { return p.achieved_macs; });
    const auto ap = column([](const ParetoPoint& p) { return p.achieved_params; });
    const std::array<std::vector<double>, 5> stats{
        column([](const ParetoPoint& p) { return p.pre_tune.loss; }),
        column([](const ParetoPoint& p) { return p.pre_tune.accuracy; }),
        column([](const ParetoPoint& p) { return p.post_tune.loss; }),
        column([](const ParetoPoint& p) { return p.post_tune.accuracy; }),
        column([](const ParetoPoint& p) { return p.fitness_delta; }),
    };
    out << ',' << format_double(mean(zeta)) << ',' << format_double(mean(am)) << ','
        << format_double(mean(ap));
    for (const auto& s : stats) out << ',' << format_double(mean(s));
    for (const auto& s : stats) out << ',' << format_double(sample_std(s));
    out << ",\n";
  }
  return out.str();
}

std::string sweep_timing_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "level,policy,seed,wall_seconds\n";
  for (const SweepCell& c : result.cells) {
    out << format_double(c.level) << ',' << policy_name(c.policy) << ',' << c.seed << ','
        << (c.point ? format_double(c.point->wall_seconds) : "") << '\n';
  }
  return out.str();
}

std::vector<DiagnosticRow> diagnostics(const NetworkGraph& graph, const Batch& batch,
                                       MetricKind kind) {
  check_compatible(graph, batch, "diagnostic");
  GradientSet grads;
  if (kind == MetricKind::kTaylor1) grads = backward(graph, batch).gradients;
  const MetricVector m = compute_metrics(graph, kind, &grads);
  const std::vector<double> deltas = single_filter_deltas(graph, batch);
  std::vector<DiagnosticRow> rows;
  std::size_t k = 0;
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    if (m.groups.locked[g]) continue;
    const std::size_t j = m.groups.groups[g].front();
    rows.push_back({j, graph.layer(graph.prunable_layers()[graph.filter_layer(j)].node).id,
                    m.per_group[g], deltas.at(k++)});
  }
  return rows;
}

std::string diagnostics_csv(const std::vector<DiagnosticRow>& rows) {
  std::ostringstream out;
  out << "filter_id,layer_id,metric,measured_delta\n";
  for (const DiagnosticRow& r : rows) {
    out << r.filter_id << ',' << r.layer_id << ',' << format_double(r.metric) << ','
        << format_double(r.measured_delta) << '\n';
  }
  return out.str();
}

json to_json(const ParetoPoint& p) {
  return {{"level", p.level},
          {"policy", std::string(policy_name(p.policy))},
          {"seed", p.seed},
          {"resource", std::string(resource_name(p.resource))},
          {"zeta", p.zeta},
          {"achieved_macs", p.achieved_macs},
          {"achieved_params", p.achieved_params},
          {"pre_tune", to_json(p.pre_tune)},
          {"post_tune", to_json(p.post_tune)},
          {"fitness_delta", p.fitness_delta}};
}

json eval_report(const NetworkGraph& graph, const Dataset& data, const PruneMask* mask) {
  check_compatible(graph, data, "evaluation");
  const PruneMask z = mask ? *mask : PruneMask::all_ones(graph.num_filters());
  check_mask(graph, build_filter_groups(graph), z);
  json report = to_json(evaluate(graph, data, &z));
  const CostModel model(graph);
  report["macs"] = to_json(model.report(z, Resource::kMacs));
  report["params"] = to_json(model.report(z, Resource::kParams));
  report["num_filters"] = z.size();
  report["kept_filters"] = z.size() - z.num_pruned();
  return report;
}

}  // namespace lcp
