#include "cylwalk/exponent.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "cylwalk/errors.hpp"
#include "cylwalk/rng.hpp"
#include "cylwalk/stats.hpp"
#include "parallel.hpp"

namespace cylwalk {

namespace {

// Convention: Z^0 = 1 even for dead extensions, so lambda = 0 reproduces the
// plain walk measure exactly.
double pow_lambda(double z, double lambda) {
    if (lambda == 0.0) return 1.0;
    return std::pow(z, lambda);
}

double free_row_mean(const CylinderConfig& cfg, const HarmonicField& f,
                     const std::vector<Site>& obstacles, int bottom) {
    std::vector<std::uint8_t> blocked(static_cast<std::size_t>(cfg.cross_size()), 0);
    for (const auto& z : obstacles)
        if (z.level == bottom) blocked[static_cast<std::size_t>(z.torus)] = 1;
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y < cfg.cross_size(); ++y) {
        if (blocked[static_cast<std::size_t>(y)]) continue;
        acc += f.at(bottom, y);
        ++count;
    }
    if (count == 0) throw StructuralError("deep-start row fully blocked");
    return acc / count;
}

// Crossing shapes are translation classes; enumerate them once from the
// reference anchor and shift to any start site.
std::vector<WeightedSegment> reference_shapes(const CylinderConfig& cfg, int t_max) {
    return enumerate_segments(cfg, Site{-1, 0}, t_max);
}

}  // namespace

std::vector<PathWindow> spread_windows(const CylinderConfig& cfg, int k, int depth) {
    cfg.validate();
    const int B = cfg.cross_size();
    if (k < 1 || k >= B)
        throw ArgumentError("spread_windows: need 1 <= k < cross section size");
    if (depth < 1) throw ArgumentError("spread_windows: depth must be positive");
    std::vector<PathWindow> ws;
    ws.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i)
        ws.push_back(straight_window(cfg, depth, Completion::StraightLine,
                                     static_cast<int>(static_cast<long>(i) * B / k)));
    return ws;
}

ExponentEstimate estimate_direct(const CylinderConfig& cfg,
                                 const std::vector<PathWindow>& ws, double lambda,
                                 const DirectOptions& opts) {
    cfg.validate();
    if (lambda < 0.0) throw ArgumentError("estimate_direct: lambda must be >= 0");
    if (ws.empty()) throw ArgumentError("estimate_direct: need at least one window");
    for (const auto& w : ws) validate_window(cfg, w);
    if (opts.n_min < 1 || opts.n_max <= opts.n_min)
        throw ArgumentError("estimate_direct: need 1 <= n_min < n_max");
    if (opts.batches < 2 || opts.replicas < 2L * opts.batches)
        throw ArgumentError("estimate_direct: need batches >= 2 and replicas >= 2*batches");

    bool any_absorb = false;
    int absorb_bottom = 0;
    for (const auto& w : ws)
        if (w.completion == Completion::Absorb) {
            absorb_bottom = any_absorb ? std::max(absorb_bottom, -w.depth()) : -w.depth();
            any_absorb = true;
        }

    const long R = opts.replicas;
    const int nmax = opts.n_max;
    std::vector<std::vector<double>> zs(static_cast<std::size_t>(R));

    detail::parallel_for(R, opts.workers, [&](long r) {
        auto g = rng::stream(opts.seed, static_cast<std::uint64_t>(r));
        // One independent extension walk per window, sampled to n_max.
        std::vector<std::vector<Segment>> exts(ws.size());
        int floor = 0;
        for (std::size_t i = 0; i < ws.size(); ++i) {
            floor = std::min(floor, ws[i].floor_level());
            Site at = ws[i].endpoint();
            for (int n = 1; n <= nmax; ++n) {
                Segment s = sample_segment(cfg, at, g);
                at = s.end();
                for (const auto& z : s.sites) floor = std::min(floor, z.level);
                exts[i].push_back(std::move(s));
            }
        }
        const int bottom = any_absorb ? absorb_bottom : floor - opts.solve.tail_margin;

        std::vector<Site> base;
        for (const auto& w : ws)
            for (const auto& z : obstacle_sites(cfg, w, bottom)) base.push_back(z);
        const HarmonicField den_field = solve_field(cfg, Slab{bottom, 0, base}, opts.solve);
        if (den_field.degenerate)
            throw StructuralError("estimate_direct: initial windows block the cylinder");
        const double den = free_row_mean(cfg, den_field, base, bottom);
        if (!(den > 0.0))
            throw StructuralError("estimate_direct: initial windows block the cylinder");

        std::vector<Site> full = base;
        auto& row = zs[static_cast<std::size_t>(r)];
        row.assign(static_cast<std::size_t>(nmax), 0.0);
        for (int n = 1; n <= nmax; ++n) {
            for (const auto& ext : exts)
                for (const auto& z : ext[static_cast<std::size_t>(n - 1)].sites)
                    if (z.level >= bottom) full.push_back(z);
            const HarmonicField f = solve_field(cfg, Slab{bottom, n, full}, opts.solve);
            row[static_cast<std::size_t>(n - 1)] =
                f.degenerate ? 0.0 : free_row_mean(cfg, f, base, bottom) / den;
        }
    });

    // Pooled per-level means and the batch refits behind the error bar.
    std::vector<double> log_means(static_cast<std::size_t>(nmax), 0.0);
    for (int n = 1; n <= nmax; ++n) {
        Kahan acc;
        for (long r = 0; r < R; ++r)
            acc.add(pow_lambda(zs[static_cast<std::size_t>(r)][static_cast<std::size_t>(n - 1)], lambda));
        const double m = acc.value() / static_cast<double>(R);
        if (!(m > 0.0)) throw ExtinctionError("estimate_direct: no surviving replicas");
        log_means[static_cast<std::size_t>(n - 1)] = std::log(m);
    }

    std::vector<double> xs, ys;
    for (int n = opts.n_min; n <= nmax; ++n) {
        xs.push_back(static_cast<double>(n));
        ys.push_back(log_means[static_cast<std::size_t>(n - 1)]);
    }
    const LinFit pooled = linear_fit(xs, ys);

    std::vector<double> batch_xi;
    const long blen = R / opts.batches;
    for (int b = 0; b < opts.batches; ++b) {
        std::vector<double> by;
        bool ok = true;
        for (int n = opts.n_min; n <= nmax && ok; ++n) {
            Kahan acc;
            for (long r = b * blen; r < (b + 1) * blen; ++r)
                acc.add(pow_lambda(zs[static_cast<std::size_t>(r)][static_cast<std::size_t>(n - 1)],
                                   lambda));
            const double m = acc.value() / static_cast<double>(blen);
            if (!(m > 0.0)) ok = false;
            else by.push_back(std::log(m));
        }
        if (ok) batch_xi.push_back(-linear_fit(xs, by).slope);
    }
    if (batch_xi.size() < 2)
        throw ExtinctionError("estimate_direct: too many empty batches for an error bar");

    ExponentEstimate est;
    est.xi = 0.0 - pooled.slope;  // 0.0 - keeps lambda = 0 from printing -0
    est.se = sample_stddev(batch_xi) / std::sqrt(static_cast<double>(batch_xi.size()));
    est.n_min = opts.n_min;
    est.n_max = nmax;
    est.log_means = std::move(log_means);
    est.method = "direct";
    return est;
}

// ---------------------------------------------------------------------------

double WeightedEnsemble::weight_total() const {
    Kahan k;
    for (double w : weights) k.add(w);
    return k.value();
}

double WeightedEnsemble::ess() const {
    Kahan s1, s2;
    for (double w : weights) {
        s1.add(w);
        s2.add(w * w);
    }
    if (!(s2.value() > 0.0)) return 0.0;
    return s1.value() * s1.value() / s2.value();
}

WeightedEnsemble make_ensemble(const CylinderConfig& cfg, const PathWindow& w0,
                               int particles, std::uint64_t seed) {
    cfg.validate();
    validate_window(cfg, w0);
    if (particles < 2) throw ArgumentError("make_ensemble: need at least two particles");
    const OneStepSurvival probe(cfg, w0);
    if (probe.degenerate())
        throw ArgumentError("make_ensemble: starting window blocks the cylinder");
    WeightedEnsemble ens;
    ens.particles.assign(static_cast<std::size_t>(particles), canonicalize(cfg, w0));
    ens.weights.assign(static_cast<std::size_t>(particles), 1.0);
    ens.master_seed = seed;
    return ens;
}

void resample_step(const CylinderConfig& cfg, WeightedEnsemble& ens, double lambda,
                   const ResampleOptions& opts) {
    if (ens.particles.empty() || ens.particles.size() != ens.weights.size())
        throw ArgumentError("resample_step: malformed ensemble");
    if (lambda < 0.0) throw ArgumentError("resample_step: lambda must be >= 0");
    if (opts.max_depth < 1) throw ArgumentError("resample_step: max_depth must be >= 1");
    const long P = static_cast<long>(ens.particles.size());
    const int t = ens.step + 1;

    std::vector<PathWindow> next(static_cast<std::size_t>(P));
    std::vector<double> g(static_cast<std::size_t>(P));
    detail::parallel_for(P, opts.workers, [&](long i) {
        auto rg = rng::stream(ens.master_seed, static_cast<std::uint64_t>(t),
                              static_cast<std::uint64_t>(i));
        const PathWindow& w = ens.particles[static_cast<std::size_t>(i)];
        const Segment s = sample_segment(cfg, w.endpoint(), rg);
        const SurvivalResult sr = survival_prob_exact(cfg, w, {s}, opts.solve);
        g[static_cast<std::size_t>(i)] = pow_lambda(sr.degenerate ? 0.0 : sr.z, lambda);
        next[static_cast<std::size_t>(i)] = concat(cfg, w, s, opts.max_depth);
    });

    Kahan wsum, gsum;
    for (long i = 0; i < P; ++i) {
        wsum.add(ens.weights[static_cast<std::size_t>(i)]);
        gsum.add(ens.weights[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)]);
    }
    if (!(wsum.value() > 0.0) || !(gsum.value() > 0.0))
        throw ExtinctionError("resample_step: population died out");
    const double c = gsum.value() / wsum.value();

    ens.particles = std::move(next);
    // Rescaling by 1/c keeps weights O(1); normalizers are scale invariant.
    for (long i = 0; i < P; ++i)
        ens.weights[static_cast<std::size_t>(i)] *= g[static_cast<std::size_t>(i)] / c;
    ens.step = t;
    ens.step_log_norm.push_back(std::log(c));

    if (ens.ess() < opts.ess_frac * static_cast<double>(P)) {
        std::vector<double> cum(static_cast<std::size_t>(P));
        double acc = 0.0;
        for (long i = 0; i < P; ++i) {
            acc += ens.weights[static_cast<std::size_t>(i)];
            cum[static_cast<std::size_t>(i)] = acc;
        }
        auto rr = rng::stream(ens.master_seed, 0x8000000000000000ULL ^ static_cast<std::uint64_t>(t),
                              0);
        std::vector<PathWindow> picked(static_cast<std::size_t>(P));
        for (long i = 0; i < P; ++i) {
            const double u = rng::uniform(rr) * acc;
            const auto it = std::upper_bound(cum.begin(), cum.end(), u);
            const auto j = std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()),
                                                 static_cast<std::size_t>(P - 1));
            picked[static_cast<std::size_t>(i)] = ens.particles[j];
        }
        ens.particles = std::move(picked);
        ens.weights.assign(static_cast<std::size_t>(P), 1.0);
        ++ens.resamples;
    }
}

ExponentEstimate ensemble_estimate(const WeightedEnsemble& ens, int burn_in,
                                   int batches) {
    if (burn_in < 0 || ens.step <= burn_in)
        throw ArgumentError("ensemble_estimate: burn_in must be below the step count");
    std::vector<double> tail(ens.step_log_norm.begin() + burn_in, ens.step_log_norm.end());
    ExponentEstimate est;
    est.xi = 0.0 - mean(tail);  // 0.0 - keeps lambda = 0 from printing -0
    if (batches >= 2 && static_cast<int>(tail.size()) >= 2 * batches)
        est.se = batch_stderr(tail, batches);
    else if (tail.size() >= 2)
        est.se = sample_stddev(tail) / std::sqrt(static_cast<double>(tail.size()));
    est.n_min = burn_in + 1;
    est.n_max = ens.step;
    est.log_means = ens.step_log_norm;
    est.method = "resample";
    return est;
}

EnsembleSnapshot take_snapshot(const CylinderConfig& cfg, const WeightedEnsemble& ens,
                               int k) {
    if (k < 1) throw ArgumentError("take_snapshot: k must be >= 1");
    EnsembleSnapshot snap;
    snap.step = ens.step;
    Kahan total;
    for (double w : ens.weights) total.add(w);
    if (!(total.value() > 0.0)) throw StructuralError("take_snapshot: zero total weight");
    for (std::size_t i = 0; i < ens.particles.size(); ++i) {
        const PathWindow& w = ens.particles[i];
        const std::string key =
            window_key(cfg, restrict_window(cfg, w, std::min(k, w.depth())));
        snap.class_weight[key] += ens.weights[i] / total.value();
    }
    return snap;
}

double snapshot_tv(const EnsembleSnapshot& a, const EnsembleSnapshot& b) {
    double acc = 0.0;
    for (const auto& [key, wa] : a.class_weight) {
        const auto it = b.class_weight.find(key);
        acc += std::abs(wa - (it == b.class_weight.end() ? 0.0 : it->second));
    }
    for (const auto& [key, wb] : b.class_weight)
        if (a.class_weight.find(key) == a.class_weight.end()) acc += wb;
    return 0.5 * acc;
}

ResampleResult estimate_resample(const CylinderConfig& cfg, const PathWindow& w0,
                                 double lambda, const ResampleOptions& opts) {
    if (opts.steps < 2 || opts.burn_in < 0 || opts.burn_in >= opts.steps)
        throw ArgumentError("estimate_resample: need 0 <= burn_in < steps");
    if (!(opts.ess_frac > 0.0) || opts.ess_frac > 1.0)
        throw ArgumentError("estimate_resample: ess_frac must be in (0, 1]");
    ResampleResult out;
    out.ensemble = make_ensemble(cfg, w0, opts.particles, opts.seed);
    for (int t = 1; t <= opts.steps; ++t) {
        resample_step(cfg, out.ensemble, lambda, opts);
        if (opts.snapshot_every > 0 && t % opts.snapshot_every == 0)
            out.snapshots.push_back(take_snapshot(cfg, out.ensemble, opts.snapshot_k));
    }
    out.estimate = ensemble_estimate(out.ensemble, opts.burn_in, opts.batches);
    return out;
}

std::string format_ensemble(const CylinderConfig& cfg, const WeightedEnsemble& ens) {
    std::ostringstream os;
    os.precision(17);
    os << "ensemble 1\n";
    os << "seed " << ens.master_seed << "\n";
    os << "step " << ens.step << "\n";
    os << "resamples " << ens.resamples << "\n";
    os << "lognorms " << ens.step_log_norm.size() << "\n";
    for (double v : ens.step_log_norm) os << v << "\n";
    os << "particles " << ens.particles.size() << "\n";
    for (std::size_t i = 0; i < ens.particles.size(); ++i) {
        os << "weight " << ens.weights[i] << "\n";
        os << format_window(cfg, ens.particles[i]);
    }
    return os.str();
}

WeightedEnsemble parse_ensemble(const CylinderConfig& cfg, const std::string& text) {
    std::istringstream is(text);
    std::string word;
    int version = 0;
    WeightedEnsemble ens;
    if (!(is >> word >> version) || word != "ensemble" || version != 1)
        throw ArgumentError("parse_ensemble: missing 'ensemble 1' header");
    if (!(is >> word >> ens.master_seed) || word != "seed")
        throw ArgumentError("parse_ensemble: bad seed line");
    if (!(is >> word >> ens.step) || word != "step")
        throw ArgumentError("parse_ensemble: bad step line");
    if (!(is >> word >> ens.resamples) || word != "resamples")
        throw ArgumentError("parse_ensemble: bad resamples line");
    std::size_t nlog = 0;
    if (!(is >> word >> nlog) || word != "lognorms")
        throw ArgumentError("parse_ensemble: bad lognorms line");
    ens.step_log_norm.resize(nlog);
    for (std::size_t i = 0; i < nlog; ++i)
        if (!(is >> ens.step_log_norm[i]))
            throw ArgumentError("parse_ensemble: truncated lognorm list");
    std::size_t P = 0;
    if (!(is >> word >> P) || word != "particles" || P < 1)
        throw ArgumentError("parse_ensemble: bad particles line");
    is >> std::ws;
    std::string line;
    for (std::size_t i = 0; i < P; ++i) {
        if (!std::getline(is, line))
            throw ArgumentError("parse_ensemble: truncated particle list");
        std::istringstream wl(line);
        double weight = 0.0;
        if (!(wl >> word >> weight) || word != "weight" || !(weight >= 0.0))
            throw ArgumentError("parse_ensemble: bad weight line");
        std::string wtext;
        bool closed = false;
        while (std::getline(is, line)) {
            wtext += line;
            wtext += "\n";
            if (line == "end") {
                closed = true;
                break;
            }
        }
        if (!closed) throw ArgumentError("parse_ensemble: truncated window block");
        ens.weights.push_back(weight);
        ens.particles.push_back(parse_window(cfg, wtext));
    }
    return ens;
}

InvariantReport invariant_check(const CylinderConfig& cfg, const WeightedEnsemble& ens,
                                double lambda, const ResampleOptions& opts) {
    const ExponentEstimate est = ensemble_estimate(ens, opts.burn_in, opts.batches);
    const long P = static_cast<long>(ens.particles.size());
    std::vector<double> g(static_cast<std::size_t>(P));
    detail::parallel_for(P, opts.workers, [&](long i) {
        auto rg = rng::stream(ens.master_seed, 0x696e766172ULL, static_cast<std::uint64_t>(i));
        const PathWindow& w = ens.particles[static_cast<std::size_t>(i)];
        const Segment s = sample_segment(cfg, w.endpoint(), rg);
        const SurvivalResult sr = survival_prob_exact(cfg, w, {s}, opts.solve);
        g[static_cast<std::size_t>(i)] = pow_lambda(sr.degenerate ? 0.0 : sr.z, lambda);
    });

    Kahan wsum, gsum;
    for (long i = 0; i < P; ++i) {
        wsum.add(ens.weights[static_cast<std::size_t>(i)]);
        gsum.add(ens.weights[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)]);
    }
    if (!(wsum.value() > 0.0)) throw StructuralError("invariant_check: zero total weight");

    InvariantReport rep;
    rep.pi_mean_z = gsum.value() / wsum.value();
    Kahan var;
    for (long i = 0; i < P; ++i) {
        const double w = ens.weights[static_cast<std::size_t>(i)];
        const double dev = g[static_cast<std::size_t>(i)] - rep.pi_mean_z;
        var.add(w * w * dev * dev);
    }
    rep.mc_se = std::sqrt(var.value()) / wsum.value();
    rep.exp_neg_xi = std::exp(-est.xi);
    rep.diff = std::abs(rep.pi_mean_z - rep.exp_neg_xi);
    rep.tol = 3.0 * std::sqrt(rep.mc_se * rep.mc_se +
                              est.se * est.se * rep.exp_neg_xi * rep.exp_neg_xi);
    rep.ok = rep.diff <= rep.tol;
    return rep;
}

// ---------------------------------------------------------------------------

QTable subadditivity_audit(const CylinderConfig& cfg, double lambda, int n_total,
                           const AuditOptions& opts) {
    cfg.validate();
    if (lambda < 0.0) throw ArgumentError("subadditivity_audit: lambda must be >= 0");
    if (n_total < 2) throw ArgumentError("subadditivity_audit: n_total must be >= 2");
    if (opts.t_max < 1) throw ArgumentError("subadditivity_audit: t_max must be >= 1");
    if (opts.depth < 1) throw ArgumentError("subadditivity_audit: depth must be >= 1");

    const PathWindow w0 = straight_window(cfg, opts.depth);
    const int bottom = -opts.depth - opts.solve.tail_margin;
    const std::vector<Site> base = obstacle_sites(cfg, w0, bottom);
    const HarmonicField den_field = solve_field(cfg, Slab{bottom, 0, base}, opts.solve);
    if (den_field.degenerate)
        throw StructuralError("subadditivity_audit: straight start is blocked");
    const double den = free_row_mean(cfg, den_field, base, bottom);

    const auto shapes = reference_shapes(cfg, opts.t_max);
    QTable table;
    table.t_max = opts.t_max;
    table.q.assign(static_cast<std::size_t>(n_total) + 1, 0.0);
    table.q[0] = 1.0;
    Kahan mass;
    for (const auto& sh : shapes) mass.add(sh.prob);
    table.cap_mass = mass.value();

    std::vector<Site> obstacles = base;
    long solves = 0;

    const std::function<void(int, const Site&, double)> rec =
        [&](int n, const Site& from, double prob) {
            for (const auto& sh : shapes) {
                const Segment seg = place_shape(cfg, sh.seg, from);
                const std::size_t mark = obstacles.size();
                for (const auto& z : seg.sites)
                    if (z.level >= bottom) obstacles.push_back(z);
                if (static_cast<std::size_t>(++solves) > opts.max_solves)
                    throw BudgetError("subadditivity_audit: solve budget exceeded");
                const HarmonicField f =
                    solve_field(cfg, Slab{bottom, n + 1, obstacles}, opts.solve);
                const double num = f.degenerate ? 0.0 : free_row_mean(cfg, f, base, bottom);
                table.q[static_cast<std::size_t>(n + 1)] +=
                    prob * sh.prob * pow_lambda(num / den, lambda);
                if (n + 1 < n_total) rec(n + 1, seg.end(), prob * sh.prob);
                obstacles.resize(mark);
            }
        };
    rec(0, w0.endpoint(), 1.0);
    table.solves = solves;

    for (int n = 1; n <= n_total; ++n)
        if (!(table.q[static_cast<std::size_t>(n)] > 0.0))
            throw StructuralError("subadditivity_audit: vanished level mass");
    for (int n = 1; n < n_total; ++n)
        for (int m = 1; n + m <= n_total; ++m) {
            const double excess = std::log(table.q[static_cast<std::size_t>(n + m)]) -
                                  std::log(table.q[static_cast<std::size_t>(n)]) -
                                  std::log(table.q[static_cast<std::size_t>(m)]);
            table.worst_excess = std::max(table.worst_excess, excess);
            if (excess > opts.tol) ++table.violations;
        }
    return table;
}

// ---------------------------------------------------------------------------

SpectrumResult transfer_eigen(const CylinderConfig& cfg, double lambda, int memory,
                              const SpectrumOptions& opts) {
    cfg.validate();
    if (lambda < 0.0) throw ArgumentError("transfer_eigen: lambda must be >= 0");
    if (memory < 1) throw ArgumentError("transfer_eigen: memory must be >= 1");
    if (opts.t_max < 1) throw ArgumentError("transfer_eigen: t_max must be >= 1");

    const auto shapes = reference_shapes(cfg, opts.t_max);
    const long N = static_cast<long>(shapes.size());
    long states = 1;
    for (int j = 0; j < memory; ++j) {
        if (states > opts.max_states / N)
            throw BudgetError("transfer_eigen: state space exceeds max_states");
        states *= N;
    }

    // suffix = states / N; successor of s under shape j is (s % suffix) * N + j,
    // i.e. drop the oldest crossing. Digit order is oldest first.
    const long suffix = states / N;
    std::vector<PathWindow> windows(static_cast<std::size_t>(states));
    std::vector<std::string> keys(static_cast<std::size_t>(states));
    for (long s = 0; s < states; ++s) {
        std::vector<Segment> segs;
        segs.reserve(static_cast<std::size_t>(memory));
        Site at{-memory, 0};
        long rem = s;
        long div = suffix;
        for (int j = 0; j < memory; ++j) {
            const long id = rem / div;
            rem %= div;
            div = std::max(1L, div / N);
            Segment seg = place_shape(cfg, shapes[static_cast<std::size_t>(id)].seg, at);
            at = seg.end();
            segs.push_back(std::move(seg));
        }
        windows[static_cast<std::size_t>(s)] =
            canonicalize(cfg, make_window(cfg, std::move(segs), Completion::StraightLine));
        keys[static_cast<std::size_t>(s)] = window_key(cfg, windows[static_cast<std::size_t>(s)]);
    }

    // Entry weights, laid out per (state, appended shape).
    std::vector<double> weight(static_cast<std::size_t>(states * N), 0.0);
    detail::parallel_for(states, 1, [&](long s) {
        const PathWindow& w = windows[static_cast<std::size_t>(s)];
        if (lambda == 0.0) {
            for (long j = 0; j < N; ++j)
                weight[static_cast<std::size_t>(s * N + j)] =
                    shapes[static_cast<std::size_t>(j)].prob;
            return;
        }
        const OneStepSurvival ctx(cfg, w, opts.solve);
        for (long j = 0; j < N; ++j) {
            const Segment seg = place_shape(cfg, shapes[static_cast<std::size_t>(j)].seg,
                                            w.endpoint());
            const double z = ctx.degenerate() ? 0.0 : ctx.z1(seg);
            weight[static_cast<std::size_t>(s * N + j)] =
                shapes[static_cast<std::size_t>(j)].prob * pow_lambda(z, lambda);
        }
    });

    // Power iteration on the action f -> sum_j weight(s, j) f(next(s, j)).
    std::vector<double> f(static_cast<std::size_t>(states), 1.0);
    std::vector<double> fn(static_cast<std::size_t>(states), 0.0);
    double rho = 0.0;
    int iters = 0;
    for (int it = 1; it <= opts.max_iters; ++it) {
        double peak = 0.0;
        for (long s = 0; s < states; ++s) {
            Kahan acc;
            const long tail_id = (s % suffix) * N;
            for (long j = 0; j < N; ++j)
                acc.add(weight[static_cast<std::size_t>(s * N + j)] *
                        f[static_cast<std::size_t>(tail_id + j)]);
            fn[static_cast<std::size_t>(s)] = acc.value();
            peak = std::max(peak, acc.value());
        }
        if (!(peak > 0.0)) throw StructuralError("transfer_eigen: operator annihilated f");
        iters = it;
        const double prev = rho;
        rho = peak;
        for (long s = 0; s < states; ++s)
            f[static_cast<std::size_t>(s)] = fn[static_cast<std::size_t>(s)] / peak;
        if (it > 1 && std::abs(rho - prev) <= opts.tol * rho) break;
    }

    double resid = 0.0;
    for (long s = 0; s < states; ++s) {
        Kahan acc;
        const long tail_id = (s % suffix) * N;
        for (long j = 0; j < N; ++j)
            acc.add(weight[static_cast<std::size_t>(s * N + j)] *
                    f[static_cast<std::size_t>(tail_id + j)]);
        resid = std::max(resid, std::abs(acc.value() - rho * f[static_cast<std::size_t>(s)]));
    }

    SpectrumResult out;
    out.rho = rho;
    out.xi = -std::log(rho);
    out.eigenfunction = std::move(f);
    out.state_keys = std::move(keys);
    out.states = static_cast<int>(states);
    out.shapes = static_cast<int>(N);
    out.tail_mass = segment_tail_mass(cfg, opts.t_max);
    out.iters = iters;
    out.residual = resid;
    return out;
}

// ---------------------------------------------------------------------------

XiCurve xi_curve(const CylinderConfig& cfg, const std::vector<double>& lambdas,
                 CurveMethod method, const DirectOptions& dopts,
                 const ResampleOptions& ropts) {
    if (lambdas.empty()) throw ArgumentError("xi_curve: empty lambda grid");
    std::vector<double> grid = lambdas;
    std::sort(grid.begin(), grid.end());

    XiCurve curve;
    for (double lam : grid) {
        ExponentEstimate est;
        if (method == CurveMethod::Direct) {
            const auto ws = spread_windows(cfg, 1, std::max(8, ropts.max_depth));
            est = estimate_direct(cfg, ws, lam, dopts);
        } else {
            est = estimate_resample(cfg, straight_window(cfg, ropts.max_depth), lam, ropts)
                      .estimate;
        }
        curve.points.push_back(CurvePoint{lam, est.xi, est.se});
    }

    for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
        const auto& a = curve.points[i];
        const auto& b = curve.points[i + 1];
        if (b.xi < a.xi - 2.0 * std::hypot(a.se, b.se)) curve.monotone = false;
    }

    const auto n = curve.points.size();
    if (n >= 5) {
        Eigen::MatrixXd V(static_cast<Eigen::Index>(n), 4);
        Eigen::VectorXd y(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const double x = curve.points[i].lambda;
            V(static_cast<Eigen::Index>(i), 0) = 1.0;
            V(static_cast<Eigen::Index>(i), 1) = x;
            V(static_cast<Eigen::Index>(i), 2) = x * x;
            V(static_cast<Eigen::Index>(i), 3) = x * x * x;
            y(static_cast<Eigen::Index>(i)) = curve.points[i].xi;
        }
        const Eigen::VectorXd coef = V.colPivHouseholderQr().solve(y);
        const Eigen::VectorXd resid = V * coef - y;
        curve.max_cubic_resid = resid.cwiseAbs().maxCoeff();
    }

    // Intercept of the low-lambda linear extrapolation with its propagated
    // error (OLS coefficients are linear in the fitted xi values). Only
    // positive lambdas enter: E[Z^0] = 1 counts blocked paths that every
    // positive power excludes, so the curve jumps at 0 and the intercept
    // estimates the limit from the right.
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < n && pos.size() < 3; ++i)
        if (curve.points[i].lambda > 0.0) pos.push_back(i);
    if (pos.size() >= 2) {
        std::vector<double> xs, ys;
        for (std::size_t i : pos) {
            xs.push_back(curve.points[i].lambda);
            ys.push_back(curve.points[i].xi);
        }
        const LinFit fit = linear_fit(xs, ys);
        curve.intercept = fit.intercept;
        const double mx = mean(xs);
        double sxx = 0.0;
        for (double x : xs) sxx += (x - mx) * (x - mx);
        double var = 0.0;
        for (std::size_t i = 0; i < pos.size(); ++i) {
            const double c =
                1.0 / static_cast<double>(pos.size()) - mx * (xs[i] - mx) / sxx;
            var += c * c * curve.points[pos[i]].se * curve.points[pos[i]].se;
        }
        curve.intercept_se = std::sqrt(var);
    } else if (!curve.points.empty()) {
        curve.intercept = curve.points.back().xi;
        curve.intercept_se = curve.points.back().se;
    }
    return curve;
}

}
