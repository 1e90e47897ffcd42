#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cylwalk/cylinder.hpp"
#include "cylwalk/harmonic.hpp"
#include "cylwalk/paths.hpp"

namespace cylwalk {

// Point estimate of the decay rate xi(lambda) together with the raw series
// behind the fit. For the direct estimator log_means holds the per-level
// log sample means of Z_n^lambda (n = 1..n_max); for the resampling
// estimator it holds the per-step log normalizers.
struct ExponentEstimate {
    double xi = 0.0;
    double se = 0.0;  // replication standard error
    int n_min = 0;
    int n_max = 0;
    std::vector<double> log_means;
    std::string method;
};

// ---------------------------------------------------------------------------
// Direct Monte Carlo: sample independent extensions of fixed obstacle
// windows, solve the survival ratio Z_n exactly for each replica, and fit
// the decay of log E[Z_n^lambda] over n in [n_min, n_max]. The error bar
// comes from refitting on contiguous replica batches.

struct DirectOptions {
    int n_min = 2;
    int n_max = 10;
    long replicas = 4000;
    int batches = 10;
    std::uint64_t seed = 1;
    int workers = 1;
    SolveOptions solve;
};

ExponentEstimate estimate_direct(const CylinderConfig& cfg,
                                 const std::vector<PathWindow>& ws, double lambda,
                                 const DirectOptions& opts = {});

// k straight windows of the given depth spread over distinct torus columns;
// the standard multi-obstacle starting configuration.
std::vector<PathWindow> spread_windows(const CylinderConfig& cfg, int k, int depth);

// ---------------------------------------------------------------------------
// Sequential reweighting: a particle population of truncated windows evolves
// one crossing per step; each particle is weighted by Z_1^lambda of its own
// extension, the per-step normalizer estimates E_pi[Z_1^lambda], and the
// population is multinomially resampled when the effective sample size
// drops below ess_frac * particles.

struct WeightedEnsemble {
    std::vector<PathWindow> particles;
    std::vector<double> weights;
    int step = 0;                  // crossings applied so far
    std::uint64_t master_seed = 1;
    std::vector<double> step_log_norm;  // log c_t for t = 1..step
    int resamples = 0;

    double weight_total() const;
    double ess() const;  // (sum w)^2 / sum w^2
};

struct ResampleOptions {
    int particles = 1024;
    int steps = 48;
    int burn_in = 12;
    double ess_frac = 0.5;
    int max_depth = 24;  // window truncation
    int batches = 8;
    std::uint64_t seed = 1;
    int workers = 1;
    int snapshot_every = 0;  // 0 disables snapshots
    int snapshot_k = 2;      // class key = last k segments
    SolveOptions solve;
};

// Class-weight histogram of the ensemble at one step; classes are canonical
// keys of the last snapshot_k segments, weights normalized to 1.
struct EnsembleSnapshot {
    int step = 0;
    std::map<std::string, double> class_weight;
};

double snapshot_tv(const EnsembleSnapshot& a, const EnsembleSnapshot& b);
EnsembleSnapshot take_snapshot(const CylinderConfig& cfg, const WeightedEnsemble& ens,
                               int k);

WeightedEnsemble make_ensemble(const CylinderConfig& cfg, const PathWindow& w0,
                               int particles, std::uint64_t seed);

// One propagation step; throws ExtinctionError when every particle dies.
void resample_step(const CylinderConfig& cfg, WeightedEnsemble& ens, double lambda,
                   const ResampleOptions& opts);

// Estimate from the accumulated log normalizers past the burn-in.
ExponentEstimate ensemble_estimate(const WeightedEnsemble& ens, int burn_in,
                                   int batches);

struct ResampleResult {
    ExponentEstimate estimate;
    WeightedEnsemble ensemble;
    std::vector<EnsembleSnapshot> snapshots;
};

ResampleResult estimate_resample(const CylinderConfig& cfg, const PathWindow& w0,
                                 double lambda, const ResampleOptions& opts = {});

// Text round trip for checkpoint/resume of a population.
std::string format_ensemble(const CylinderConfig& cfg, const WeightedEnsemble& ens);
WeightedEnsemble parse_ensemble(const CylinderConfig& cfg, const std::string& text);

// Stationarity check: the ensemble-weighted mean of Z_1^lambda over one
// fresh (uncommitted) crossing should match exp(-xi_hat) from the same run.
struct InvariantReport {
    double pi_mean_z = 0.0;
    double exp_neg_xi = 0.0;
    double diff = 0.0;
    double tol = 0.0;  // 3 sigma combined
    double mc_se = 0.0;
    bool ok = false;
};

InvariantReport invariant_check(const CylinderConfig& cfg, const WeightedEnsemble& ens,
                                double lambda, const ResampleOptions& opts = {});

// ---------------------------------------------------------------------------
// Exhaustive audit of the capped finite-n decay sequence
//   q_n = sum over capped extension sequences of M(seq) * Z_n^lambda,
// enumerated by depth-first search from a straight start. Reports the table
// and any submultiplicativity violations q_{n+m} > q_n * q_m.

struct AuditOptions {
    int depth = 6;    // straight start window depth (tail continues straight)
    int t_max = 4;    // per-crossing step cap
    double tol = 1e-9;
    std::size_t max_solves = 5000000;
    SolveOptions solve;
};

struct QTable {
    std::vector<double> q;  // q[0] = 1, entries up to n_total
    double cap_mass = 0.0;  // enumerated one-crossing mass at the cap
    int t_max = 0;
    int violations = 0;
    double worst_excess = 0.0;  // max log q_{n+m} - log q_n - log q_m
    long solves = 0;
};

QTable subadditivity_audit(const CylinderConfig& cfg, double lambda, int n_total,
                           const AuditOptions& opts = {});

// ---------------------------------------------------------------------------
// Truncated transfer operator on memory-m states (tuples of capped crossing
// shapes). Entry weight is M(shape) * Z_1^lambda of the state window
// extended by the shape; the leading eigenvalue rho_m gives xi_m = -log
// rho_m and the eigenfunction feeds the coupled-chain weights. At lambda = 0
// the eigenvalue equals the capped one-crossing mass exactly.

struct SpectrumOptions {
    int t_max = 4;
    long max_states = 300000;
    int max_iters = 20000;
    double tol = 1e-12;
    SolveOptions solve;
};

struct SpectrumResult {
    double rho = 0.0;
    double xi = 0.0;  // -log rho
    std::vector<double> eigenfunction;  // per state, max = 1
    std::vector<std::string> state_keys;
    int states = 0;
    int shapes = 0;
    double tail_mass = 0.0;  // one-crossing mass beyond the cap
    int iters = 0;
    double residual = 0.0;
};

SpectrumResult transfer_eigen(const CylinderConfig& cfg, double lambda, int memory,
                              const SpectrumOptions& opts = {});

// ---------------------------------------------------------------------------
// xi(lambda) over a grid with shape diagnostics.

enum class CurveMethod { Direct, Resample };

struct CurvePoint {
    double lambda = 0.0;
    double xi = 0.0;
    double se = 0.0;
};

struct XiCurve {
    std::vector<CurvePoint> points;
    bool monotone = true;        // nondecreasing within joint 2 sigma
    double max_cubic_resid = 0.0;  // worst cubic-fit residual (5+ points)
    double intercept = 0.0;        // linear lambda -> 0 extrapolation
    double intercept_se = 0.0;
};

XiCurve xi_curve(const CylinderConfig& cfg, const std::vector<double>& lambdas,
                 CurveMethod method, const DirectOptions& dopts,
                 const ResampleOptions& ropts);

}
