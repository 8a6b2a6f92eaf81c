#pragma once
// Layer compensation: per-layer score offsets beta learned by regularized
// (aging) evolution so that global greedy pruning over M_j + beta_l(j)
// minimizes the measured loss change.

#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <vector>

#include "lcp/cost.h"
#include "lcp/dataset.h"
#include "lcp/metrics.h"
#include "lcp/pruners.h"

namespace lcp {

using BetaVector = std::vector<double>;

inline constexpr double kInfeasibleFitness = std::numeric_limits<double>::infinity();

// Noise scale used for layers whose metric spread is zero.
inline constexpr double kSigmaFloor = 1e-12;

enum class AlphaSchedule {
  kDecreasing,  // alpha = 1 - t / T
  kIncreasing,  // alpha = t / T
};

struct EAConfig {
  std::size_t pool_size = 64;
  std::size_t iterations = 336;
  std::size_t tournament_size = 16;
  std::size_t mutation_count = 0;  // d; 0 means ceil(0.1 * L)
  AlphaSchedule alpha_schedule = AlphaSchedule::kDecreasing;
  std::size_t fitness_batch_size = 3000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;  // concurrent evaluations of the initial pool

  std::size_t resolved_mutation_count(std::size_t num_layers) const;
  double alpha(std::size_t iteration) const;
};

void validate(const EAConfig& cfg, std::size_t num_layers);

// The fixed batch a search evaluates every candidate on.
Batch fitness_batch(const Dataset& train, const EAConfig& cfg);

// Loss change of the naive mask under compensated scores, evaluated on a
// fixed batch. Infeasible offsets score kInfeasibleFitness.
class FitnessFunction {
 public:
  FitnessFunction(const NetworkGraph& graph, const MetricVector& metrics,
                  const ConstraintSpec& spec, const FloorPolicy& floor, Batch batch);

  double operator()(const BetaVector& beta) const;
  // Throws InfeasibleError if beta cannot meet the constraint.
  PruneMask mask_for(const BetaVector& beta) const;
  double base_loss() const { return base_loss_; }
  const Batch& batch() const { return batch_; }

 private:
  const NetworkGraph& graph_;
  const MetricVector& metrics_;
  ConstraintSpec spec_;
  FloorPolicy floor_;
  Batch batch_;
  double base_loss_;
};

double fitness(const NetworkGraph& graph, const MetricVector& metrics, const BetaVector& beta,
               const ConstraintSpec& spec, const FloorPolicy& floor, const Batch& batch);

struct Candidate {
  BetaVector beta;
  double fitness = kInfeasibleFitness;
  std::size_t birth = 0;  // creation index; smaller is older
};

// pool_size candidates with beta_l ~ N(0, sigma_l); candidate 0 is beta = 0.
std::deque<Candidate> init_pool(const FitnessFunction& fit, const MetricVector& metrics,
                                const EAConfig& cfg, std::mt19937_64& rng);

// Copies parent and perturbs a uniformly chosen d-subset of coordinates by
// N(0, alpha * sigma_l).
BetaVector mutate(const BetaVector& parent, double alpha, const MetricVector& metrics,
                  std::size_t d, std::mt19937_64& rng);

struct TraceRecord {
  std::size_t iteration = 0;
  double fitness = 0.0;  // the new candidate
  double best = 0.0;     // best seen so far, initial pool included
  double alpha = 0.0;
};

struct SearchTrace {
  std::vector<double> initial_fitness;  // pool evaluations, birth order
  std::vector<TraceRecord> records;     // one per iteration
  double zero_beta_fitness = kInfeasibleFitness;
  std::size_t evaluations = 0;
};

struct SearchResult {
  BetaVector beta;
  PruneMask mask;
  double fitness = kInfeasibleFitness;
  SearchTrace trace;
};

// Regularized evolution: sample a tournament, mutate its fittest member,
// retire the oldest. Returns the best candidate ever evaluated. Throws
// InfeasibleError if no candidate meets the constraint.
SearchResult search_beta(const NetworkGraph& graph, const MetricVector& metrics,
                         const ConstraintSpec& spec, const FloorPolicy& floor,
                         const EAConfig& cfg, const Batch& batch);

}  // namespace lcp
