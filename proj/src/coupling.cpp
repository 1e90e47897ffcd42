#include "cylwalk/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cylwalk/errors.hpp"
#include "cylwalk/rng.hpp"
#include "cylwalk/stats.hpp"

namespace cylwalk {

namespace {

double pow_lambda(double z, double lambda) {
    if (lambda == 0.0) return 1.0;
    return std::pow(z, lambda);
}

// Cumulative-scan draw from a nonnegative row; rounding slack falls back to
// the last positive entry.
int draw_from_row(const std::vector<double>& mass, double total, std::mt19937_64& g) {
    const double u = rng::uniform(g) * total;
    double acc = 0.0;
    int last = -1;
    for (std::size_t i = 0; i < mass.size(); ++i) {
        if (!(mass[i] > 0.0)) continue;
        acc += mass[i];
        last = static_cast<int>(i);
        if (u < acc) return last;
    }
    if (last < 0) throw StructuralError("draw_from_row: empty row");
    return last;
}

}  // namespace

std::pair<int, int> maximal_coupling_draw(const HittingMeasure& a,
                                          const HittingMeasure& b,
                                          std::mt19937_64& g) {
    if (a.mass.size() != b.mass.size() || a.level != b.level)
        throw ArgumentError("maximal_coupling_draw: rows do not match");
    const double ta = a.total();
    const double tb = b.total();
    if (!(ta > 0.0) || !(tb > 0.0))
        throw ArgumentError("maximal_coupling_draw: empty row");

    std::vector<double> lo(a.mass.size());
    double overlap = 0.0;
    for (std::size_t i = 0; i < a.mass.size(); ++i) {
        lo[i] = std::min(a.mass[i] / ta, b.mass[i] / tb);
        overlap += lo[i];
    }

    const double u = rng::uniform(g);
    if (u < overlap) {
        const int x = draw_from_row(lo, overlap, g);
        return {x, x};
    }
    std::vector<double> ra(a.mass.size()), rb(b.mass.size());
    for (std::size_t i = 0; i < a.mass.size(); ++i) {
        ra[i] = std::max(0.0, a.mass[i] / ta - lo[i]);
        rb[i] = std::max(0.0, b.mass[i] / tb - lo[i]);
    }
    const double rest = 1.0 - overlap;
    const int x = draw_from_row(ra, rest, g);
    const int y = draw_from_row(rb, rest, g);
    return {x, y};
}

HProcessCoupler::HProcessCoupler(const CylinderConfig& cfg, const PathWindow& w,
                                 int start_level, int target_level,
                                 const SolveOptions& opts)
    : cfg_(cfg), start_(start_level), target_(target_level) {
    cfg_.validate();
    validate_window(cfg_, w);
    if (!(start_ < target_) || target_ > 0)
        throw ArgumentError("HProcessCoupler: need start_level < target_level <= 0");

    const HarmonicField h = solve_h(cfg_, w, start_, opts);
    if (h.degenerate) throw StructuralError("HProcessCoupler: window blocks the cylinder");
    for (int y = 0; y < cfg_.cross_size(); ++y)
        if (h.at(start_, y) > 0.0) live_.push_back(y);
    if (live_.empty()) throw StructuralError("HProcessCoupler: start level is dead");

    rows_.reserve(static_cast<std::size_t>(target_ - start_));
    for (int j = start_; j < target_; ++j)
        rows_.push_back(level_crossing_rows(cfg_, h, j));

    // Below the kept window only the straight completion column is blocked
    // and the complement slice stays connected.
    const CrossSectionProfile prof = cross_sections(cfg_, w);
    connected_ = 0;
    for (int j = start_; j <= -1; ++j) {
        if (j < prof.bottom)
            ++connected_;
        else if (prof.level_connected(j))
            ++connected_;
    }
}

const HittingMeasure& HProcessCoupler::row(int level, int torus) const {
    if (level < start_ || level >= target_)
        throw ArgumentError("HProcessCoupler::row: level outside start..target-1");
    if (torus < 0 || torus >= cfg_.cross_size())
        throw ArgumentError("HProcessCoupler::row: torus index out of range");
    return rows_[static_cast<std::size_t>(level - start_)][static_cast<std::size_t>(torus)];
}

CoupleResult HProcessCoupler::run(int torus_a, int torus_b, std::mt19937_64& g) const {
    CoupleResult out;
    int a = torus_a;
    int b = torus_b;
    for (int z : {a, b})
        if (std::find(live_.begin(), live_.end(), z) == live_.end())
            throw ArgumentError("HProcessCoupler::run: start site has h = 0");

    out.path_a.push_back(a);
    out.path_b.push_back(b);
    bool met = (a == b);
    out.meet_level = met ? start_ : target_ + 1;
    for (int j = start_; j < target_; ++j) {
        const auto& rows = rows_[static_cast<std::size_t>(j - start_)];
        if (met) {
            const auto& mu = rows[static_cast<std::size_t>(a)];
            a = b = draw_from_row(mu.mass, mu.total(), g);
        } else {
            const auto [ta, tb] =
                maximal_coupling_draw(rows[static_cast<std::size_t>(a)],
                                      rows[static_cast<std::size_t>(b)], g);
            a = ta;
            b = tb;
            if (a == b) {
                met = true;
                out.meet_level = j + 1;
            }
        }
        out.path_a.push_back(a);
        out.path_b.push_back(b);
    }
    out.coupled = (a == b);
    return out;
}

CoupleResult couple_hprocesses(const CylinderConfig& cfg, const PathWindow& w,
                               int start_level, int torus_a, int torus_b,
                               std::mt19937_64& g, const SolveOptions& opts) {
    return HProcessCoupler(cfg, w, start_level, 0, opts).run(torus_a, torus_b, g);
}

// ---------------------------------------------------------------------------

namespace {

struct ChainSide {
    PathWindow w;
    bool done = false;
    Segment shape;  // accepted reference-anchored shape
};

double accept_prob(const CylinderConfig& cfg, const PathWindow& w, const Segment& shape,
                   double lambda, const CoupledChainOptions& opts) {
    const Segment seg = place_shape(cfg, shape, w.endpoint());
    const SurvivalResult sr = survival_prob_exact(cfg, w, {seg}, opts.solve);
    double p = pow_lambda(sr.degenerate ? 0.0 : sr.z, lambda);
    if (opts.k_memory > 0) {
        const PathWindow nw = concat(cfg, w, seg, 0);
        const int kk = std::min(opts.k_memory, nw.depth());
        const auto it = opts.k_values.find(window_key(cfg, restrict_window(cfg, nw, kk)));
        const double kv = (it == opts.k_values.end()) ? opts.k_max : it->second;
        p *= kv / opts.k_max;
    }
    if (p > 1.0) throw StructuralError("coupled chains: acceptance weight above 1");
    return p;
}

}  // namespace

SigmaTrace couple_weighted_chains(const CylinderConfig& cfg, const PathWindow& a0,
                                  const PathWindow& b0, double lambda,
                                  const CoupledChainOptions& opts,
                                  std::uint64_t trace_index) {
    cfg.validate();
    if (lambda < 0.0) throw ArgumentError("coupled chains: lambda must be >= 0");
    if (opts.steps < 1) throw ArgumentError("coupled chains: steps must be >= 1");
    if (!(opts.delta > 0.0) || !(opts.delta < 1.0))
        throw ArgumentError("coupled chains: delta must be in (0, 1)");
    if (!(opts.k_max > 0.0)) throw ArgumentError("coupled chains: k_max must be positive");

    ChainSide a{canonicalize(cfg, a0), false, {}};
    ChainSide b{canonicalize(cfg, b0), false, {}};
    validate_window(cfg, a.w);
    validate_window(cfg, b.w);

    SigmaTrace tr;
    int sigma0 = 0;
    for (int k = std::min(a.w.depth(), b.w.depth()); k >= 0; --k)
        if (agrees_last_k(cfg, a.w, b.w, k)) {
            sigma0 = k;
            break;
        }
    tr.sigma.push_back(sigma0);

    auto g = rng::stream(opts.seed, 0x636f7570ULL, trace_index);
    for (int n = 0; n < opts.steps; ++n) {
        a.done = b.done = false;
        long tries = 0;
        // Common proposals until one side accepts: both see the same shape
        // and the same uniform, so a joint acceptance moves both together.
        while (!a.done && !b.done) {
            if (++tries > opts.max_proposals)
                throw StructuralError("coupled chains: proposal budget exhausted");
            const Segment shape = sample_segment(cfg, Site{-1, 0}, g);
            const double u = rng::uniform(g);
            if (u < accept_prob(cfg, a.w, shape, lambda, opts)) {
                a.done = true;
                a.shape = shape;
            }
            if (u < accept_prob(cfg, b.w, shape, lambda, opts)) {
                b.done = true;
                b.shape = shape;
            }
        }
        // The slower side continues alone on fresh draws; its marginal law
        // is untouched (still first acceptance over i.i.d. proposals).
        for (ChainSide* side : {&a, &b}) {
            while (!side->done) {
                if (++tries > 2 * opts.max_proposals)
                    throw StructuralError("coupled chains: proposal budget exhausted");
                const Segment shape = sample_segment(cfg, Site{-1, 0}, g);
                const double u = rng::uniform(g);
                if (u < accept_prob(cfg, side->w, shape, lambda, opts)) {
                    side->done = true;
                    side->shape = shape;
                }
            }
        }

        const bool same = a.shape.sites == b.shape.sites;
        a.w = concat(cfg, a.w, place_shape(cfg, a.shape, a.w.endpoint()), 0);
        b.w = concat(cfg, b.w, place_shape(cfg, b.shape, b.w.endpoint()), 0);

        int next = 0;
        int cause;
        if (!same) {
            cause = 1;
        } else {
            const int k = tr.sigma.back() + 1;
            const bool dense =
                in_V_k(cfg, a.w, std::min(k, a.w.depth()), opts.delta) &&
                in_V_k(cfg, b.w, std::min(k, b.w.depth()), opts.delta);
            if (dense) {
                next = k;
                cause = 0;
            } else {
                cause = 2;
            }
        }
        if (next == 0 && tr.first_decouple < 0) tr.first_decouple = n;
        tr.sigma.push_back(next);
        tr.cause.push_back(cause);
    }
    return tr;
}

// ---------------------------------------------------------------------------

TailReport tail_bound_check(const std::vector<SigmaTrace>& traces, int min_events) {
    if (traces.empty()) throw ArgumentError("tail_bound_check: no traces");
    if (min_events < 1) throw ArgumentError("tail_bound_check: min_events must be >= 1");

    int kmax = 0;
    for (const auto& tr : traces)
        for (int s : tr.sigma) kmax = std::max(kmax, s);

    TailReport rep;
    rep.exposures.assign(static_cast<std::size_t>(kmax) + 1, 0);
    rep.reset_events.assign(static_cast<std::size_t>(kmax) + 1, 0);
    for (const auto& tr : traces)
        for (std::size_t n = 0; n + 1 < tr.sigma.size(); ++n) {
            const int k = tr.sigma[n];
            ++rep.exposures[static_cast<std::size_t>(k)];
            if (tr.sigma[n + 1] != k + 1) ++rep.reset_events[static_cast<std::size_t>(k)];
        }

    rep.b_hat = 1.0;
    rep.k0 = -1;
    std::vector<double> xs, ys;
    for (int k = 0; k <= kmax; ++k) {
        const long e = rep.exposures[static_cast<std::size_t>(k)];
        const long r = rep.reset_events[static_cast<std::size_t>(k)];
        if (e < min_events) continue;
        if (rep.k0 < 0) rep.k0 = k;
        rep.b_hat = std::min(rep.b_hat, 1.0 - static_cast<double>(r) / static_cast<double>(e));
        if (r >= 1) {
            xs.push_back(static_cast<double>(k));
            ys.push_back(std::log(static_cast<double>(r) / static_cast<double>(e)));
        }
    }
    if (xs.size() >= 2) {
        const LinFit f = linear_fit(xs, ys);
        rep.decouple.rate = -f.slope;
        rep.decouple.intercept = f.intercept;
        rep.decouple.r2 = f.r2;
        rep.decouple.points = f.points;
    }

    // Tail of the agreement count: fraction of traces with sigma_{2n} < n.
    std::size_t horizon = traces[0].sigma.size();
    for (const auto& tr : traces) horizon = std::min(horizon, tr.sigma.size());
    std::vector<double> tx, ty;
    for (std::size_t n = 1; 2 * n < horizon; ++n) {
        long hits = 0;
        for (const auto& tr : traces)
            if (tr.sigma[2 * n] < static_cast<int>(n)) ++hits;
        const double p = static_cast<double>(hits) / static_cast<double>(traces.size());
        rep.tail_prob.push_back(p);
        if (hits == 0) break;  // later points are below resolution
        tx.push_back(static_cast<double>(n));
        ty.push_back(std::log(p));
    }
    if (tx.size() >= 2) {
        const LinFit f = linear_fit(tx, ty);
        rep.tail.rate = -f.slope;
        rep.tail.intercept = f.intercept;
        rep.tail.r2 = f.r2;
        rep.tail.points = f.points;
    }
    return rep;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> dominating_survival_exact(double alpha, int steps,
                                                           int s0) {
    if (!(alpha > 0.0)) throw ArgumentError("dominating chain: alpha must be positive");
    if (steps < 1 || s0 < 0) throw ArgumentError("dominating chain: bad steps or start");
    const int width = steps + s0 + 1;
    std::vector<double> cur(static_cast<std::size_t>(width), 0.0);
    cur[static_cast<std::size_t>(s0)] = 1.0;

    std::vector<std::vector<double>> survival;
    const auto push_survival = [&](const std::vector<double>& dist) {
        std::vector<double> row(static_cast<std::size_t>(width), 0.0);
        double acc = 0.0;
        for (int k = width - 1; k >= 0; --k) {
            acc += dist[static_cast<std::size_t>(k)];
            row[static_cast<std::size_t>(k)] = acc;
        }
        survival.push_back(std::move(row));
    };
    push_survival(cur);
    for (int n = 1; n <= steps; ++n) {
        std::vector<double> next(static_cast<std::size_t>(width), 0.0);
        for (int k = 0; k < width - 1; ++k) {
            const double m = cur[static_cast<std::size_t>(k)];
            if (!(m > 0.0)) continue;
            const double up = 1.0 - std::exp(-alpha * (k + 1));
            next[static_cast<std::size_t>(k + 1)] += m * up;
            next[0] += m * (1.0 - up);
        }
        cur = std::move(next);
        push_survival(cur);
    }
    return survival;
}

std::vector<std::vector<double>> dominating_survival_sim(double alpha, int steps,
                                                         long replicas,
                                                         std::uint64_t seed, int s0) {
    if (!(alpha > 0.0)) throw ArgumentError("dominating chain: alpha must be positive");
    if (steps < 1 || s0 < 0 || replicas < 1)
        throw ArgumentError("dominating chain: bad steps, start, or replicas");
    const int width = steps + s0 + 1;
    std::vector<std::vector<long>> count(
        static_cast<std::size_t>(steps) + 1,
        std::vector<long>(static_cast<std::size_t>(width), 0));
    for (long r = 0; r < replicas; ++r) {
        auto g = rng::stream(seed, static_cast<std::uint64_t>(r));
        int s = s0;
        ++count[0][static_cast<std::size_t>(s)];
        for (int n = 1; n <= steps; ++n) {
            const double up = 1.0 - std::exp(-alpha * (s + 1));
            s = (rng::uniform(g) < up) ? s + 1 : 0;
            ++count[static_cast<std::size_t>(n)][static_cast<std::size_t>(s)];
        }
    }
    std::vector<std::vector<double>> survival(
        static_cast<std::size_t>(steps) + 1,
        std::vector<double>(static_cast<std::size_t>(width), 0.0));
    for (int n = 0; n <= steps; ++n) {
        long acc = 0;
        for (int k = width - 1; k >= 0; --k) {
            acc += count[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
            survival[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] =
                static_cast<double>(acc) / static_cast<double>(replicas);
        }
    }
    return survival;
}

double dominating_escape_prob(double alpha) {
    if (!(alpha > 0.0)) throw ArgumentError("dominating chain: alpha must be positive");
    double prod = 1.0;
    for (int j = 1;; ++j) {
        const double f = std::exp(-alpha * j);
        if (f < 1e-18) break;
        prod *= 1.0 - f;
    }
    return prod;
}

double calibrate_alpha(const TailReport& rep) {
    if (rep.decouple.points < 2)
        throw StructuralError("calibrate_alpha: not enough reset statistics");
    if (!(rep.decouple.rate > 0.0))
        throw StructuralError("calibrate_alpha: reset rate does not decay");
    // Need exp(-alpha(k+1)) >= fitted reset probability exp(intercept - rate k)
    // for every k, plus cover for the worst observed reset rate at small k.
    double alpha = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 400; ++k)
        alpha = std::min(alpha,
                         (rep.decouple.rate * k - rep.decouple.intercept) / (k + 1));
    if (rep.b_hat < 1.0) alpha = std::min(alpha, -std::log(1.0 - rep.b_hat));
    if (!(alpha > 0.0))
        throw StructuralError("calibrate_alpha: no positive dominating rate");
    return alpha;
}

}
