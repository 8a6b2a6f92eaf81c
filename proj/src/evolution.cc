#include "lcp/evolution.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lcp/engine.h"
#include "lcp/errors.h"
#include "lcp/parallel.h"

namespace lcp {

std::size_t EAConfig::resolved_mutation_count(std::size_t num_layers) const {
  if (mutation_count > 0) return mutation_count;
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(num_layers) - 1e-9)));
}

double EAConfig::alpha(std::size_t iteration) const {
  if (iterations == 0) return 1.0;
  const double t = static_cast<double>(iteration) / static_cast<double>(iterations);
  return alpha_schedule == AlphaSchedule::kDecreasing ? 1.0 - t : t;
}

void validate(const EAConfig& cfg, std::size_t num_layers) {
  if (cfg.tournament_size < 1 || cfg.pool_size < cfg.tournament_size) {
    throw std::invalid_argument("EA config needs pool_size >= tournament_size >= 1");
  }
  const std::size_t d = cfg.resolved_mutation_count(num_layers);
  if (d < 1 || d > num_layers) throw std::invalid_argument("mutation count must be in [1, L]");
  if (cfg.fitness_batch_size == 0) throw std::invalid_argument("fitness_batch_size must be positive");
}

Batch fitness_batch(const Dataset& train, const EAConfig& cfg) {
  return sample_batch(train, cfg.fitness_batch_size, cfg.seed ^ 0x5eedba7c4ULL);
}

FitnessFunction::FitnessFunction(const NetworkGraph& graph, const MetricVector& metrics,
                                 const ConstraintSpec& spec, const FloorPolicy& floor,
                                 Batch batch)
    : graph_(graph),
      metrics_(metrics),
      spec_(spec),
      floor_(floor),
      batch_(std::move(batch)),
      base_loss_(forward_loss(graph, batch_)) {
  if (!spec_.resolved()) throw std::invalid_argument("fitness: constraint must be resolved");
}

PruneMask FitnessFunction::mask_for(const BetaVector& beta) const {
  const auto scores = compensated_scores(graph_, metrics_, beta);
  return naive_prune(graph_, metrics_.groups, scores, spec_, floor_);
}

double FitnessFunction::operator()(const BetaVector& beta) const {
  PruneMask z;
  try {
    z = mask_for(beta);
  } catch (const InfeasibleError&) {
    return kInfeasibleFitness;
  }
  // The physically pruned graph gives the masked loss to rounding and is
  // cheaper to run.
  return std::abs(base_loss_ - forward_loss(apply_mask(graph_, z), batch_));
}

double fitness(const NetworkGraph& graph, const MetricVector& metrics, const BetaVector& beta,
               const ConstraintSpec& spec, const FloorPolicy& floor, const Batch& batch) {
  return FitnessFunction(graph, metrics, spec, floor, batch)(beta);
}

namespace {

double standard_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return n01(rng);
}

}  // namespace

std::deque<Candidate> init_pool(const FitnessFunction& fit, const MetricVector& metrics,
                                const EAConfig& cfg, std::mt19937_64& rng) {
  const std::size_t num_layers = metrics.sigma.size();
  std::deque<Candidate> pool(cfg.pool_size);
  for (std::size_t i = 0; i < cfg.pool_size; ++i) {
    pool[i].birth = i;
    pool[i].beta.assign(num_layers, 0.0);
    if (i == 0) continue;
    for (std::size_t l = 0; l < num_layers; ++l) {
      pool[i].beta[l] = std::max(metrics.sigma[l], kSigmaFloor) * standard_normal(rng);
    }
  }
  parallel_for(pool.size(), cfg.workers, [&](std::size_t i) { pool[i].fitness = fit(pool[i].beta); });
  return pool;
}

BetaVector mutate(const BetaVector& parent, double alpha, const MetricVector& metrics,
                  std::size_t d, std::mt19937_64& rng) {
  const std::size_t num_layers = parent.size();
  if (d < 1 || d > num_layers) throw std::invalid_argument("mutation count must be in [1, L]");
  std::vector<std::size_t> idx(num_layers);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < d; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_layers - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  BetaVector child = parent;
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t l = idx[i];
    child[l] += alpha * std::max(metrics.sigma[l], kSigmaFloor) * standard_normal(rng);
  }
  return child;
}

SearchResult search_beta(const NetworkGraph& graph, const MetricVector& metrics,
                         const ConstraintSpec& spec, const FloorPolicy& floor,
                         const EAConfig& cfg, const Batch& batch) {
  const std::size_t num_layers = graph.num_prunable_layers();
  validate(cfg, num_layers);
  const std::size_t d = cfg.resolved_mutation_count(num_layers);
  const FitnessFunction fit(graph, metrics, spec, floor, batch);
  std::mt19937_64 rng(cfg.seed);

  std::deque<Candidate> pool = init_pool(fit, metrics, cfg, rng);
  SearchResult result;
  result.trace.zero_beta_fitness = pool.front().fitness;
  std::size_t best = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    result.trace.initial_fitness.push_back(pool[i].fitness);
    if (pool[i].fitness < pool[best].fitness) best = i;
  }
  result.beta = pool[best].beta;
  result.fitness = pool[best].fitness;
  result.trace.evaluations = pool.size();

  std::vector<std::size_t> slots(pool.size());
  std::size_t next_birth = pool.size();
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    std::iota(slots.begin(), slots.end(), 0);
    for (std::size_t i = 0; i < cfg.tournament_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, slots.size() - 1);
      std::swap(slots[i], slots[pick(rng)]);
    }
    std::size_t parent = slots[0];
    for (std::size_t i = 1; i < cfg.tournament_size; ++i) {
      const Candidate& c = pool[slots[i]];
      const Candidate& p = pool[parent];
      if (c.fitness < p.fitness || (c.fitness == p.fitness && c.birth < p.birth)) parent = slots[i];
    }

    const double alpha = cfg.alpha(t);
    Candidate child;
    child.beta = mutate(pool[parent].beta, alpha, metrics, d, rng);
    child.fitness = fit(child.beta);
    child.birth = next_birth++;
    ++result.trace.evaluations;
    if (child.fitness < result.fitness) {
      result.fitness = child.fitness;
      result.beta = child.beta;
    }
    result.trace.records.push_back({t, child.fitness, result.fitness, alpha});
    pool.pop_front();
    pool.push_back(std::move(child));
  }

  if (std::isinf(result.fitness)) {
    // Reports the floor-limited minimum via the beta = 0 mask.
    fit.mask_for(BetaVector(num_layers, 0.0));
  }
  result.mask = fit.mask_for(result.beta);
  return result;
}

}  // namespace lcp
