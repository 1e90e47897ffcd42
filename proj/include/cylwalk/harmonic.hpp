#pragma once

#include <random>
#include <vector>

#include "cylwalk/cylinder.hpp"
#include "cylwalk/paths.hpp"

namespace cylwalk {

// Finite solve region: levels bottom..top, walk killed on obstacles and on
// stepping below bottom, success on first arrival at a free top-level site.
struct Slab {
    int bottom = 0;
    int top = 0;
    std::vector<Site> obstacles;  // sites inside [bottom, top]
};

struct SolveOptions {
    int tail_margin = 32;   // extra straight-tail levels below the lowest site
    double tol = 1e-12;     // residual bound; polish sweeps then error beyond it
};

// Survival probability field on a slab: value(z) = P{z reaches a free top
// site before hitting an obstacle or leaving through the bottom}. Values of
// obstacle cells are 0, free top cells 1. degenerate marks a slab whose top
// row is fully blocked (field identically 0).
struct HarmonicField {
    int bottom = 0;
    int top = 0;
    int cross = 0;
    std::vector<double> value;  // (top-bottom+1) * cross, level-major
    bool degenerate = false;

    double at(int level, int torus) const;
    double at(const Site& z) const { return at(z.level, z.torus); }
};

// Generic slab solve (block elimination level by level; residual checked,
// Gauss-Seidel polish as fallback).
HarmonicField solve_field(const CylinderConfig& cfg, const Slab& slab,
                          const SolveOptions& opts = {});

// Field of P{reach level 0 avoiding the window before dropping below
// bottom}; the window contributes its sites plus its completion tail.
HarmonicField solve_h(const CylinderConfig& cfg, const PathWindow& w, int bottom,
                      const SolveOptions& opts = {});

// Doob-conditioned one-step law at z: p(z,v) h(v) / h(z) over neighbours
// with h(v) > 0. Requires h(z) > 0 and bottom <= z.level < top.
std::vector<Step> hprocess_kernel(const CylinderConfig& cfg, const HarmonicField& h,
                                  const Site& z);

// Distribution over torus coordinates of the first arrival on a level.
struct HittingMeasure {
    int level = 0;
    std::vector<double> mass;  // per torus index

    double total() const;
    // 0.5 * L1 distance; measures must sit on the same level.
    static double tv_distance(const HittingMeasure& a, const HittingMeasure& b);
};

// First-arrival law on to_level of the conditioned walk started from the
// uniform distribution on positive-h free sites of from_level. The h-field
// is solved on the slab [from_level, 0] with the window as obstacle.
HittingMeasure hitting_measure(const CylinderConfig& cfg, const PathWindow& w,
                               int from_level, int to_level,
                               const SolveOptions& opts = {});

// Same with a point start (z must have h(z) > 0).
HittingMeasure hitting_measure_from(const CylinderConfig& cfg, const PathWindow& w,
                                    const Site& z, int to_level,
                                    const SolveOptions& opts = {});

// Row y of the matrix: first-arrival law on level j+1 of the conditioned
// walk currently at (j, y). Precomputable per window and reused by the
// coupling driver. h must come from solve_h on the same window.
std::vector<HittingMeasure> level_crossing_rows(const CylinderConfig& cfg,
                                                const HarmonicField& h, int j);

// Worst-case probability, over connected cross-section configurations D and
// ordered pairs z != w in D, that the walk started at z reaches w before
// leaving D (leaving = any vertical step or a lateral step out of D).
// band is the variant where vertical excursions are allowed as long as the
// torus coordinate stays inside D; it is reported for comparison only and
// plays no role in any bound.
struct HarnackReport {
    double level_confined = 0.0;
    double band = 0.0;
    int configurations = 0;  // connected subsets with >= 2 sites
};

HarnackReport harnack_report(const CylinderConfig& cfg);
double harnack_constant(const CylinderConfig& cfg);  // = level_confined

// Survival ratio for a window extended by chained segments up to level n:
//   z = P{deep walk avoids window+extension until first arrival on level n}
//     / P{deep walk avoids window until first arrival on level 0}.
// Both solves share one deep uniform start tail_margin levels below the
// lowest obstacle site. degenerate marks a zero denominator.
struct SurvivalResult {
    double z = 0.0;
    double numerator = 0.0;
    double denominator = 0.0;
    bool degenerate = false;
};

SurvivalResult survival_prob_exact(const CylinderConfig& cfg, const PathWindow& w,
                                   const std::vector<Segment>& ext,
                                   const SolveOptions& opts = {});

// Union-of-obstacles version used with several simultaneous windows; all
// extension lists must reach the same level.
SurvivalResult survival_union(const CylinderConfig& cfg,
                              const std::vector<PathWindow>& ws,
                              const std::vector<std::vector<Segment>>& exts,
                              const SolveOptions& opts = {});

// Evaluator for many one-segment extensions of one window: the denominator
// is solved once at construction and reused. Numerator and denominator
// share the same deep start, so each ratio matches survival_prob_exact up
// to the deep-start cutoff; a segment dipping near the cutoff falls back to
// a standalone deeper solve.
class OneStepSurvival {
public:
    OneStepSurvival(const CylinderConfig& cfg, const PathWindow& w,
                    const SolveOptions& opts = {});

    bool degenerate() const { return degenerate_; }
    double denominator() const { return den_; }
    // Z_1 of the window extended by s; 0 when the extension blocks the slab.
    double z1(const Segment& s) const;

private:
    const CylinderConfig cfg_;
    PathWindow w_;
    SolveOptions opts_;
    int bottom_ = 0;
    std::vector<Site> base_;
    double den_ = 0.0;
    bool degenerate_ = false;
};

// Audit variants.
// Walk started at the level-0 site z (free to dip below 0):
double zbar_survival(const CylinderConfig& cfg, const PathWindow& w,
                     const std::vector<Segment>& ext, const Site& z,
                     const SolveOptions& opts = {});
// Walk started at z and killed when touching level -1:
double zhat_survival(const CylinderConfig& cfg, const PathWindow& w,
                     const std::vector<Segment>& ext, const Site& z,
                     const SolveOptions& opts = {});
// Deep-start ratio conditioned on the walk touching level -k between its
// first arrival on level 0 and its first arrival on the extension top:
double zstar_survival(const CylinderConfig& cfg, const PathWindow& w,
                      const std::vector<Segment>& ext, int k,
                      const SolveOptions& opts = {});

// Validates that ext chains from the window endpoint with targets 1..n.
void validate_extension(const CylinderConfig& cfg, const PathWindow& w,
                        const std::vector<Segment>& ext);

}
