#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cylwalk/cylinder.hpp"
#include "cylwalk/harmonic.hpp"
#include "cylwalk/paths.hpp"

namespace cylwalk {

// One draw from the maximal coupling of two probability rows on the same
// level: matched with probability 1 - TV, otherwise independent draws from
// the normalized residuals. Returns the packed torus targets.
std::pair<int, int> maximal_coupling_draw(const HittingMeasure& a,
                                          const HittingMeasure& b,
                                          std::mt19937_64& g);

struct CoupleResult {
    bool coupled = false;
    int meet_level = 0;       // first level where the copies coincide
    std::vector<int> path_a;  // torus coordinate per level, start..target
    std::vector<int> path_b;
};

// Two copies of the window-avoiding conditioned walk climb level by level;
// at each level the next-crossing laws of the pair are coupled maximally
// and the copies run together once they match. Crossing rows are solved
// once per level and shared across replays.
class HProcessCoupler {
public:
    HProcessCoupler(const CylinderConfig& cfg, const PathWindow& w, int start_level,
                    int target_level = 0, const SolveOptions& opts = {});

    const std::vector<int>& live_starts() const { return live_; }
    // Connected complement slices on levels start..-1; the exponent of the
    // per-level failure bound.
    int connected_levels() const { return connected_; }
    const HittingMeasure& row(int level, int torus) const;

    CoupleResult run(int torus_a, int torus_b, std::mt19937_64& g) const;

private:
    CylinderConfig cfg_;
    int start_ = 0;
    int target_ = 0;
    std::vector<std::vector<HittingMeasure>> rows_;
    std::vector<int> live_;
    int connected_ = 0;
};

// Convenience single-shot form.
CoupleResult couple_hprocesses(const CylinderConfig& cfg, const PathWindow& w,
                               int start_level, int torus_a, int torus_b,
                               std::mt19937_64& g, const SolveOptions& opts = {});

// ---------------------------------------------------------------------------
// Pair of weighted growing chains driven by common proposals: each step both
// chains draw the same candidate crossing shape and the same uniform; a
// chain accepts when the uniform clears its own weight Z_1^lambda (times an
// optional bounded eigenfunction factor), so marginally each chain is an
// exact rejection sampler for its reweighted kernel. The agreement counter
// sigma gains 1 when the appended shapes match and both new windows keep
// dense connected cross-sections over the agreed depth, else resets to 0.

struct CoupledChainOptions {
    int steps = 48;
    double delta = 0.25;        // density threshold of the connectivity test
    long max_proposals = 200000;  // per chain per step
    std::uint64_t seed = 1;
    SolveOptions solve;
    // Optional reweighting by a truncated eigenfunction: canonical key of
    // the last k_memory crossings -> value; missing keys fall back to k_max.
    int k_memory = 0;  // 0 disables the factor
    std::unordered_map<std::string, double> k_values;
    double k_max = 1.0;
};

struct SigmaTrace {
    std::vector<int> sigma;  // sigma_0..sigma_steps
    // Per step: 0 = agreement extended, 1 = appended shapes differ,
    // 2 = shapes agree but a window failed the density condition.
    std::vector<int> cause;
    int first_decouple = -1;  // step index of the first reset, -1 if none
};

SigmaTrace couple_weighted_chains(const CylinderConfig& cfg, const PathWindow& a0,
                                  const PathWindow& b0, double lambda,
                                  const CoupledChainOptions& opts,
                                  std::uint64_t trace_index);

// ---------------------------------------------------------------------------
// Fits of the decoupling statistics over a batch of traces.

struct RateFit {
    double rate = 0.0;       // decay per unit (positive = decaying)
    double intercept = 0.0;  // log level at 0
    double r2 = 0.0;
    int points = 0;
};

struct TailReport {
    RateFit tail;      // log P{sigma_{2n} < n} against n
    RateFit decouple;  // log P{reset | sigma = k} against k
    double b_hat = 0.0;  // worst observed per-step continue probability
    int k0 = 0;          // smallest agreement count entering b_hat
    std::vector<double> tail_prob;   // P{sigma_{2n} < n}, n = 1..
    std::vector<long> reset_events;  // per agreement count
    std::vector<long> exposures;     // per agreement count
};

TailReport tail_bound_check(const std::vector<SigmaTrace>& traces, int min_events = 20);

// ---------------------------------------------------------------------------
// Dominating birth chain on {0, 1, ...}: from k the chain climbs to k+1
// with probability 1 - exp(-alpha (k+1)) and resets to 0 otherwise.

// Exact P{s_n >= k} by dynamic programming; rows n = 0..steps, columns
// k = 0..steps+s0.
std::vector<std::vector<double>> dominating_survival_exact(double alpha, int steps,
                                                           int s0 = 0);

// Empirical version from simulated replicas (deterministic in seed).
std::vector<std::vector<double>> dominating_survival_sim(double alpha, int steps,
                                                         long replicas,
                                                         std::uint64_t seed, int s0 = 0);

// P{the chain started at 0 never resets} = prod_{j>=1} (1 - exp(-alpha j)).
double dominating_escape_prob(double alpha);

// Largest alpha whose reset probabilities exp(-alpha(k+1)) dominate both the
// fitted reset curve and the worst observed reset rate. Throws
// StructuralError when the fit does not decay.
double calibrate_alpha(const TailReport& rep);

}
