#include "cli.h"

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lcp/artifacts.h"
#include "lcp/bundle.h"
#include "lcp/desknet.h"
#include "lcp/errors.h"
#include "lcp/pipeline.h"

namespace lcp::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> workers;

  std::string model, train, eval, data, mask, beta;
  std::string policy, metric, resource;
  std::optional<double> target;
  bool absolute = false;
  std::vector<double> schedule;
  std::optional<double> floor;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> pool, iterations, tournament, mutations, fitness_batch;
  std::string alpha_schedule;
  std::vector<double> levels;
  std::vector<std::string> policies;
  std::vector<std::uint64_t> seeds;
  std::size_t samples = 512;
};

void add_model_options(CLI::App* sub, Options& o) {
  sub->add_option("--model", o.model, "Model bundle directory or model.json");
  sub->add_option("--train", o.train, "Training dataset bundle");
}

void add_constraint_options(CLI::App* sub, Options& o) {
  sub->add_option("--resource", o.resource, "macs or params");
  sub->add_option("--target", o.target, "Budget; a fraction of the unpruned cost unless --absolute");
  sub->add_flag("--absolute", o.absolute, "Treat --target as an absolute count");
  sub->add_option("--floor", o.floor, "Minimum kept fraction per layer");
  sub->add_option("--metric", o.metric, "l1, l2sq or taylor1");
}

void add_ea_options(CLI::App* sub, Options& o) {
  sub->add_option("--pool", o.pool, "Candidate pool size");
  sub->add_option("--iterations", o.iterations, "Evolution iterations");
  sub->add_option("--tournament", o.tournament, "Tournament sample size");
  sub->add_option("--mutations", o.mutations, "Coordinates perturbed per mutation");
  sub->add_option("--fitness-batch", o.fitness_batch, "Samples in the fitness batch");
  sub->add_option("--alpha-schedule", o.alpha_schedule, "decreasing or increasing");
}

void add_tune_options(CLI::App* sub, Options& o) {
  sub->add_option("--epochs", o.epochs, "Fine-tuning epochs per step");
  sub->add_option("--lr", o.lr, "Fine-tuning learning rate");
}

PipelineConfig load_config(const Options& o) {
  PipelineConfig cfg;
  if (!o.config.empty()) {
    const fs::path path(o.config);
    cfg = pipeline_config_from_json(read_json(path), path.parent_path());
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.workers) cfg.workers = *o.workers;
  if (!o.model.empty()) cfg.model_path = o.model;
  if (!o.train.empty()) cfg.train_path = o.train;
  if (!o.eval.empty()) cfg.eval_path = o.eval;
  if (!o.policy.empty()) {
    const auto p = parse_policy(o.policy);
    if (!p) throw FormatError("unknown policy '" + o.policy + "'");
    cfg.policy = *p;
  }
  if (!o.metric.empty()) {
    const auto m = parse_metric(o.metric);
    if (!m) throw FormatError("unknown metric '" + o.metric + "'");
    cfg.metric = *m;
  }
  if (!o.resource.empty()) {
    const auto r = parse_resource(o.resource);
    if (!r) throw FormatError("unknown resource '" + o.resource + "'");
    cfg.constraint.resource = *r;
  }
  if (o.target) cfg.constraint.target = *o.target;
  if (o.absolute) cfg.constraint.fractional = false;
  if (!o.schedule.empty()) cfg.schedule = o.schedule;
  if (o.floor) cfg.floor.fraction = *o.floor;
  if (o.epochs) cfg.tune.epochs = *o.epochs;
  if (o.lr) cfg.tune.learning_rate = *o.lr;
  if (o.pool) cfg.ea.pool_size = *o.pool;
  if (o.iterations) cfg.ea.iterations = *o.iterations;
  if (o.tournament) cfg.ea.tournament_size = *o.tournament;
  if (o.mutations) cfg.ea.mutation_count = *o.mutations;
  if (o.fitness_batch) cfg.ea.fitness_batch_size = *o.fitness_batch;
  if (o.alpha_schedule == "decreasing") cfg.ea.alpha_schedule = AlphaSchedule::kDecreasing;
  else if (o.alpha_schedule == "increasing") cfg.ea.alpha_schedule = AlphaSchedule::kIncreasing;
  else if (!o.alpha_schedule.empty()) throw FormatError("unknown alpha schedule '" + o.alpha_schedule + "'");
  if (!o.levels.empty()) cfg.levels = o.levels;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.policies.empty()) {
    cfg.policies.clear();
    for (const auto& name : o.policies) {
      const auto p = parse_policy(name);
      if (!p) throw FormatError("unknown policy '" + name + "'");
      cfg.policies.push_back(*p);
    }
  }
  return cfg;
}

const fs::path& require(const fs::path& p, const char* what) {
  if (p.empty()) throw FormatError(std::string("missing ") + what + " path");
  return p;
}

fs::path out_dir(const PipelineConfig& cfg) { return cfg.out_dir.empty() ? fs::path(".") : cfg.out_dir; }

ConstraintSpec resolved_constraint(const NetworkGraph& graph, const PipelineConfig& cfg) {
  try {
    return resolve(graph, cfg.constraint);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("constraint: ") + e.what());
  }
}

int cmd_prune(const PipelineConfig& cfg) {
  const NetworkGraph graph = load_model(require(cfg.model_path, "model"));
  const Dataset train = load_dataset(require(cfg.train_path, "train"));
  const Dataset eval = cfg.eval_path.empty() ? train : load_dataset(cfg.eval_path);
  const fs::path dir = out_dir(cfg);
  write_json(dir / "config.json", to_json(cfg));

  const auto zetas = resolve_schedule(graph, cfg);
  auto on_step = [&](std::size_t i, const ParetoPoint& p, const NetworkGraph& before, const PruneMask& z) {
    ConstraintSpec spec{cfg.constraint.resource, zetas[i], false, zetas[i]};
    write_json(dir / ("step_" + std::to_string(i) + ".json"),
               {{"point", to_json(p)}, {"mask", mask_to_json(before, z, spec)}});
    std::cerr << "step " << i << ": " << resource_name(p.resource) << ' ' << p.achieved(p.resource)
              << " <= " << format_double(p.zeta) << ", accuracy " << p.pre_tune.accuracy << " -> "
              << p.post_tune.accuracy << '\n';
  };
  const PipelineResult r = run_pipeline(graph, train, eval, cfg, on_step);

  save_model(r.graph, dir / "model");
  write_json(dir / "mask.json", mask_to_json(graph, r.mask, resolved_constraint(graph, cfg)));
  json steps = json::array();
  for (const ParetoPoint& p : r.steps) steps.push_back(to_json(p));
  write_json(dir / "report.json", {{"steps", steps}, {"final", eval_report(r.graph, eval)}});
  if (r.search) {
    write_json(dir / "beta.json", beta_to_json(graph, *r.search));
    write_text(dir / "trace.csv", trace_csv(r.search->trace));
  }
  return kExitOk;
}

int cmd_sweep(const PipelineConfig& cfg) {
  const NetworkGraph graph = load_model(require(cfg.model_path, "model"));
  const Dataset train = load_dataset(require(cfg.train_path, "train"));
  const Dataset eval = cfg.eval_path.empty() ? train : load_dataset(cfg.eval_path);
  const fs::path dir = out_dir(cfg);
  const SweepResult r = sweep(graph, train, eval, cfg);
  write_text(dir / "sweep.csv", sweep_csv(r));
  write_text(dir / "sweep_timing.csv", sweep_timing_csv(r));
  std::size_t failed = 0;
  for (const SweepCell& c : r.cells) {
    const std::string stem = format_double(c.level) + "_" + std::string(policy_name(c.policy)) +
                             "_" + std::to_string(c.seed);
    if (!c.mask) {
      ++failed;
      continue;
    }
    ConstraintSpec spec = cfg.constraint;
    spec.target = c.level;
    write_json(dir / "masks" / (stem + ".json"), mask_to_json(graph, *c.mask, resolve(graph, spec)));
    if (c.beta) {
      json layers = json::array();
      for (const PrunableLayer& pl : graph.prunable_layers()) layers.push_back(graph.layer(pl.node).id);
      write_json(dir / "betas" / (stem + ".json"), {{"layers", layers}, {"beta", *c.beta}});
    }
  }
  std::cerr << r.cells.size() - failed << " of " << r.cells.size() << " cells succeeded\n";
  return kExitOk;
}

int cmd_search_beta(const PipelineConfig& cfg) {
  const NetworkGraph graph = load_model(require(cfg.model_path, "model"));
  const Dataset train = load_dataset(require(cfg.train_path, "train"));
  const ConstraintSpec spec = resolved_constraint(graph, cfg);
  EAConfig ea = cfg.ea;
  ea.seed = cfg.seed;
  ea.workers = cfg.workers;
  const Batch fb = fitness_batch(train, ea);
  GradientSet grads;
  if (cfg.metric == MetricKind::kTaylor1) grads = backward(graph, fb).gradients;
  const MetricVector m = compute_metrics(graph, cfg.metric, &grads);
  const SearchResult r = search_beta(graph, m, spec, cfg.floor, ea, fb);
  const fs::path dir = out_dir(cfg);
  write_json(dir / "beta.json", beta_to_json(graph, r));
  write_json(dir / "mask.json", mask_to_json(graph, r.mask, spec));
  write_text(dir / "trace.csv", trace_csv(r.trace));
  std::cerr << "best fitness " << format_double(r.fitness) << " (beta = 0: "
            << format_double(r.trace.zero_beta_fitness) << ")\n";
  return kExitOk;
}

int cmd_eval(const PipelineConfig& cfg, const Options& o) {
  const NetworkGraph graph = load_model(require(cfg.model_path, "model"));
  const fs::path data_path = !o.data.empty() ? fs::path(o.data) : cfg.eval_path;
  const Dataset data = load_dataset(require(data_path, "data"));
  std::optional<PruneMask> mask;
  if (!o.mask.empty()) mask = mask_from_json(read_json(o.mask), graph);
  const json report = eval_report(graph, data, mask ? &*mask : nullptr);
  if (cfg.out_dir.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_json(cfg.out_dir / "eval.json", report);
  }
  return kExitOk;
}

int cmd_diagnostics(const PipelineConfig& cfg, const Options& o) {
  const NetworkGraph graph = load_model(require(cfg.model_path, "model"));
  const fs::path data_path = !o.data.empty() ? fs::path(o.data) : cfg.train_path;
  const Dataset data = load_dataset(require(data_path, "data"));
  const Batch batch = sample_batch(data, o.samples, cfg.seed);
  const std::string csv = diagnostics_csv(diagnostics(graph, batch, cfg.metric));
  if (cfg.out_dir.empty()) {
    std::cout << csv;
  } else {
    write_text(cfg.out_dir / "diagnostics.csv", csv);
  }
  return kExitOk;
}

int cmd_export_mask(const PipelineConfig& cfg, const Options& o) {
  const NetworkGraph graph = load_model(require(cfg.model_path, "model"));
  const ConstraintSpec spec = resolved_constraint(graph, cfg);
  PruneMask z;
  if (!o.beta.empty()) {
    // Naive pruning under the given offsets; needs no data unless the
    // metric uses gradients.
    const BetaVector beta = beta_from_json(read_json(o.beta), graph);
    GradientSet grads;
    if (cfg.metric == MetricKind::kTaylor1) {
      EAConfig ea = cfg.ea;
      ea.seed = cfg.seed;
      grads = backward(graph, fitness_batch(load_dataset(require(cfg.train_path, "train")), ea)).gradients;
    }
    const MetricVector m = compute_metrics(graph, cfg.metric, &grads);
    z = naive_prune(graph, m.groups, compensated_scores(graph, m, beta), spec, cfg.floor);
  } else {
    const Dataset train = load_dataset(require(cfg.train_path, "train"));
    z = select_mask(graph, train, cfg, spec.zeta).mask;
  }
  const json j = mask_to_json(graph, z, spec);
  if (cfg.out_dir.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(cfg.out_dir / "mask.json", j);
  }
  return kExitOk;
}

int cmd_desknet(const PipelineConfig& cfg) {
  const desknet::Reference ref = desknet::train_reference(cfg.seed);
  desknet::save_reference(ref, out_dir(cfg));
  std::cerr << "desk net: train accuracy " << ref.train_eval.accuracy << ", test accuracy "
            << ref.test_eval.accuracy << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Resource-constrained filter pruning with layer compensation", "lcp"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "Pipeline config JSON");
  app.add_option("--seed", o.seed, "Root seed");
  app.add_option("--out-dir", o.out_dir, "Output directory");
  app.add_option("--workers", o.workers, "Concurrent evaluations");

  auto* prune = app.add_subcommand("prune", "Prune, fine-tune and tighten along a schedule");
  add_model_options(prune, o);
  add_constraint_options(prune, o);
  add_ea_options(prune, o);
  add_tune_options(prune, o);
  prune->add_option("--eval", o.eval, "Evaluation dataset bundle");
  prune->add_option("--policy", o.policy, "uniform, naive, lcp, single_filter or layer_schedule");
  prune->add_option("--schedule", o.schedule, "Intermediate targets ending at --target");

  auto* sweep_cmd = app.add_subcommand("sweep", "Pareto sweep over levels, policies and seeds");
  add_model_options(sweep_cmd, o);
  add_constraint_options(sweep_cmd, o);
  add_ea_options(sweep_cmd, o);
  add_tune_options(sweep_cmd, o);
  sweep_cmd->add_option("--eval", o.eval, "Evaluation dataset bundle");
  sweep_cmd->add_option("--levels", o.levels, "Constraint levels");
  sweep_cmd->add_option("--policies", o.policies, "Policies");
  sweep_cmd->add_option("--seeds", o.seeds, "Seeds");

  auto* search = app.add_subcommand("search-beta", "Evolve per-layer compensation offsets");
  add_model_options(search, o);
  add_constraint_options(search, o);
  add_ea_options(search, o);

  auto* eval_cmd = app.add_subcommand("eval", "Loss, accuracy and cost of a model under a mask");
  eval_cmd->add_option("--model", o.model, "Model bundle");
  eval_cmd->add_option("--data", o.data, "Dataset bundle");
  eval_cmd->add_option("--mask", o.mask, "mask.json");

  auto* diag = app.add_subcommand("diagnostics", "Group metric against measured loss change");
  diag->add_option("--model", o.model, "Model bundle");
  diag->add_option("--data", o.data, "Dataset bundle");
  diag->add_option("--metric", o.metric, "l1, l2sq or taylor1");
  diag->add_option("--samples", o.samples, "Batch size sampled from the dataset");

  auto* export_cmd = app.add_subcommand("export-mask", "Compute a one-shot mask and write mask.json");
  add_model_options(export_cmd, o);
  add_constraint_options(export_cmd, o);
  add_ea_options(export_cmd, o);
  export_cmd->add_option("--policy", o.policy, "Policy");
  export_cmd->add_option("--beta", o.beta, "beta.json; prune naively under these offsets");

  auto* desk = app.add_subcommand("desknet", "Train and write the reference desk net and data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    const PipelineConfig cfg = load_config(o);
    if (*prune) return cmd_prune(cfg);
    if (*sweep_cmd) return cmd_sweep(cfg);
    if (*search) return cmd_search_beta(cfg);
    if (*eval_cmd) return cmd_eval(cfg, o);
    if (*diag) return cmd_diagnostics(cfg, o);
    if (*export_cmd) return cmd_export_mask(cfg, o);
    if (*desk) return cmd_desknet(cfg);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace lcp::cli
