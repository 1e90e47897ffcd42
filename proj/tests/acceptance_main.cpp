// Acceptance gate: one PASS/FAIL line per numbered criterion, with the
// measured quantities inline and every tolerance pinned next to its
// comparison. Exits nonzero if any criterion fails. Criterion ids given as
// arguments (e.g. "A4 A5") select a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cylwalk/coupling.hpp"
#include "cylwalk/cylinder.hpp"
#include "cylwalk/errors.hpp"
#include "cylwalk/exponent.hpp"
#include "cylwalk/harmonic.hpp"
#include "cylwalk/paths.hpp"
#include "cylwalk/stats.hpp"
#include "oracles.hpp"

using namespace cylwalk;

namespace {

CylinderConfig cfg_of(int d, int L, double p) {
    CylinderConfig cfg;
    cfg.d = d;
    cfg.L = L;
    cfg.p = p;
    return cfg;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// Origin-anchored crossing shape from a move string over U(p), D(own),
// F(lip, +1 lateral step); the shape must end with its only arrival at +1.
Segment shape_of(const CylinderConfig& cfg, const std::string& moves) {
    Segment s;
    s.target_level = 1;
    Site at{0, 0};
    s.sites.push_back(at);
    for (char c : moves) {
        if (c == 'U')
            at.level += 1;
        else if (c == 'D')
            at.level -= 1;
        else
            at.torus = torus_add(cfg, at.torus, 1);
        s.sites.push_back(at);
    }
    return s;
}

// Window of the given depth built by chaining origin shapes bottom-up.
PathWindow window_of(const CylinderConfig& cfg, const std::vector<std::string>& moves) {
    std::vector<Segment> segs;
    Site at{-static_cast<int>(moves.size()), 0};
    for (const auto& m : moves) {
        Segment seg = place_shape(cfg, shape_of(cfg, m), at);
        at = seg.end();
        segs.push_back(std::move(seg));
    }
    return canonicalize(cfg, make_window(cfg, std::move(segs), Completion::StraightLine));
}

std::vector<PathWindow> rebuild_states(const CylinderConfig& cfg,
                                       const std::vector<WeightedSegment>& shapes,
                                       int memory) {
    const long N = static_cast<long>(shapes.size());
    long states = 1;
    for (int j = 0; j < memory; ++j) states *= N;
    std::vector<PathWindow> out(static_cast<std::size_t>(states));
    for (long s = 0; s < states; ++s) {
        std::vector<Segment> segs;
        Site at{-memory, 0};
        long rem = s;
        long div = states / N;
        for (int j = 0; j < memory; ++j) {
            const long id = rem / div;
            rem %= div;
            div = std::max(1L, div / N);
            Segment seg = place_shape(cfg, shapes[static_cast<std::size_t>(id)].seg, at);
            at = seg.end();
            segs.push_back(std::move(seg));
        }
        out[static_cast<std::size_t>(s)] =
            canonicalize(cfg, make_window(cfg, std::move(segs), Completion::StraightLine));
    }
    return out;
}

// --------------------------------------------------------------------------
// A1: closed-form first passage against an absorbing-chain enumeration and
// Monte Carlo frequencies.

bool check_a1(std::string& detail) {
    double max_err = 0.0;
    for (double p : {0.6, 0.75, 0.9}) {
        const auto cfg = cfg_of(2, 2, p);
        for (int n = 1; n <= 20; ++n)
            max_err = std::max(
                max_err, std::abs(first_passage_prob(cfg, n) - oracle::first_passage(cfg, n)));
    }
    const auto ref = cfg_of(2, 2, 0.75);
    const double f1 = std::abs(first_passage_prob(ref, 1) - oracle::frozen::first_passage_d2_p075_n1);
    const double f3 = std::abs(first_passage_prob(ref, 3) - oracle::frozen::first_passage_d2_p075_n3);
    const double fl = std::abs(first_passage_limit(ref) - oracle::frozen::first_passage_d2_p075_lim);
    max_err = std::max({max_err, f1, f3, fl});

    int mc_bad = 0;
    double worst_pull = 0.0;
    for (int n : {1, 3, 8}) {
        double se = 0.0;
        const double f = oracle::first_passage_mc(ref, n, 1000000, 911 + n, &se);
        const double pull = std::abs(f - first_passage_prob(ref, n)) / se;
        worst_pull = std::max(worst_pull, pull);
        if (pull > 3.0) ++mc_bad;
    }
    detail = "max |closed form - solve| = " + fmt(max_err, 2) +
             " (tol 1e-10, n <= 20, p in {0.6,0.75,0.9}); MC worst pull " +
             fmt(worst_pull, 3) + " sigma at 1e6 samples (tol 3)";
    return max_err <= 1e-10 && mc_bad == 0;
}

// --------------------------------------------------------------------------
// A2: ladder fields and survival ratios against trajectory enumeration.

bool check_a2(std::string& detail) {
    const auto cfg = cfg_of(2, 2, 0.75);
    // Depth <= 4 obstacle windows chained from the ladder crossing shapes.
    // Any lateral move blocks the two-site cross-section outright, so the
    // survival ratio is nondegenerate only for the column-confined builds;
    // the blocked ones still exercise the field solve and must come back
    // degenerate from both sides.
    const std::vector<std::vector<std::string>> builds = {
        {"U"},
        {"U", "U"},
        {"FU", "U"},
        {"U", "DUU", "U"},
        {"U", "U", "FU"},
        {"DUU", "U", "FFU"},
        {"U", "FU", "U", "U"},
        {"U", "U", "U", "U"},
    };
    double max_field_err = 0.0;
    double max_z_err = 0.0;
    double cap40_tail = 0.0;
    int ratio_checked = 0;
    bool degenerate_consistent = true;
    for (const auto& moves : builds) {
        const int depth = static_cast<int>(moves.size());
        const auto w = window_of(cfg, moves);
        const int bottom = -depth - 8;
        const auto obs = obstacle_sites(cfg, w, bottom);
        const auto h = solve_h(cfg, w, bottom);
        const auto ref = oracle::enumerate_field(cfg, obs, bottom, 0);
        for (int l = bottom; l < 0; ++l)
            for (int y = 0; y < 2; ++y)
                max_field_err = std::max(
                    max_field_err,
                    std::abs(h.at(l, y) -
                             ref[static_cast<std::size_t>(l - bottom) * 2 + y]));

        // Survival ratio of one- and two-crossing extensions, enumerated
        // from the same deep uniform start the solver uses. A shallow
        // margin keeps the enumerated masses far above the resolution
        // cutoff (the ratio itself is margin-insensitive).
        SolveOptions sopt;
        sopt.tail_margin = 8;
        const std::vector<Segment> ext = {
            place_shape(cfg, shape_of(cfg, "U"), w.endpoint()),
        };
        std::vector<Segment> ext2 = ext;
        ext2.push_back(place_shape(cfg, shape_of(cfg, "U"), ext.back().end()));
        for (const auto& e : {ext, ext2}) {
            const auto sv = survival_prob_exact(cfg, w, e, sopt);
            const int eb = -depth - sopt.tail_margin;
            const auto base = obstacle_sites(cfg, w, eb);
            auto full = base;
            for (const auto& s : e)
                for (const auto& z : s.sites) full.push_back(z);
            const int top = static_cast<int>(e.size());
            double den = 0.0, num = 0.0;
            int starts = 0;
            for (int y = 0; y < 2; ++y) {
                bool blocked = false;
                for (const auto& z : base)
                    if (z.level == eb && z.torus == y) blocked = true;
                if (blocked) continue;
                ++starts;
                const auto dres =
                    oracle::enumerate_survival(cfg, base, Site{eb, y}, eb, 0, 40, 1e-15);
                const auto nres =
                    oracle::enumerate_survival(cfg, full, Site{eb, y}, eb, top, 40, 1e-15);
                den += dres.passed;
                num += nres.passed;
                cap40_tail = std::max({cap40_tail, dres.tail_at_cap, nres.tail_at_cap});
            }
            den /= starts;
            num /= starts;
            if (sv.degenerate != (den <= 0.0)) degenerate_consistent = false;
            if (!sv.degenerate) {
                max_z_err = std::max(max_z_err, std::abs(sv.z - num / den));
                ++ratio_checked;
            }
        }
    }
    detail = "max field err " + fmt(max_field_err, 2) + " over " +
             std::to_string(builds.size()) + " windows, max Z err " + fmt(max_z_err, 2) +
             " over " + std::to_string(ratio_checked) +
             " ratios (tol 1e-8); blocked builds degenerate both ways; "
             "enumeration tail at cap 40: " +
             fmt(cap40_tail, 2);
    return max_field_err <= 1e-8 && max_z_err <= 1e-8 && degenerate_consistent &&
           ratio_checked >= 8;
}

// --------------------------------------------------------------------------
// A3: Harnack ratio on connected slices, then the literal per-level coupling
// failure bound ((1-a^2)/2)^k.

bool check_a3(std::string& detail) {
    double worst_margin = 1e300;
    for (int L : {2, 3, 4}) {
        const auto cfg = cfg_of(2, L, 0.75);
        const double a = harnack_constant(cfg);
        std::vector<PathWindow> ws = {straight_window(cfg, 4)};
        if (L >= 3) ws.push_back(window_of(cfg, {"U", "FU", "U", "U"}));
        for (const auto& w : ws) {
            const auto h = solve_h(cfg, w, -8);
            const auto prof = cross_sections(cfg, w);
            for (int level = prof.bottom; level <= -1; ++level) {
                if (!prof.level_connected(level)) continue;
                const auto& cells = prof.cells[static_cast<std::size_t>(level - prof.bottom)];
                if (cells.size() < 2) continue;
                double lo = 1e300, hi = 0.0;
                for (int y : cells) {
                    lo = std::min(lo, h.at(level, y));
                    hi = std::max(hi, h.at(level, y));
                }
                worst_margin = std::min(worst_margin, lo / hi - a);
            }
        }
    }
    const bool harnack_ok = worst_margin >= -1e-12;

    const auto cfg = cfg_of(2, 3, 0.75);
    const auto w = straight_window(cfg, 3);
    const HProcessCoupler coupler(cfg, w, -8, 0);
    const int k = coupler.connected_levels();
    const double a = harnack_constant(cfg);
    const double bound = std::pow((1.0 - a * a) / 2.0, k);
    const long traces = 20000;
    std::mt19937_64 g(7);
    long fails = 0;
    for (long i = 0; i < traces; ++i)
        if (!coupler.run(1, 2, g).coupled) ++fails;
    const double f = static_cast<double>(fails) / static_cast<double>(traces);
    const double se = std::sqrt(std::max(f * (1.0 - f), 1e-12) / static_cast<double>(traces));
    const bool couple_ok = f <= bound + 3.0 * se;

    detail = "harnack slice margin " + fmt(worst_margin, 2) +
             " (>= 0 required); coupling failure " + fmt(f, 4) + " vs ((1-a^2)/2)^" +
             std::to_string(k) + " + 3se = " + fmt(bound + 3.0 * se, 4) +
             " [without the 1/2 factor: " + fmt(std::pow(1.0 - a * a, k), 3) + "]";
    return harnack_ok && couple_ok;
}

// --------------------------------------------------------------------------
// A4: the three estimators agree on xi(lambda) for d = 2, L in {2,3},
// p = 0.75, lambda in {0.5, 1, 2}; exact zero at lambda 0; upper bound and
// monotonicity.

bool check_a4(std::string& detail) {
    std::ostringstream note;
    bool ok = true;
    for (int L : {2, 3}) {
        const auto cfg = cfg_of(2, L, 0.75);
        const auto ws = spread_windows(cfg, 1, 16);

        DirectOptions dopt;
        dopt.n_min = L == 2 ? 3 : 2;
        dopt.n_max = L == 2 ? 7 : 6;
        dopt.replicas = L == 2 ? 30000 : 40000;
        dopt.batches = 10;
        dopt.seed = 101 + L;

        ResampleOptions ropt;
        ropt.particles = 1024;
        ropt.steps = 64;
        ropt.burn_in = 16;
        ropt.batches = 8;
        ropt.max_depth = 24;
        ropt.seed = 202 + L;

        SpectrumOptions spopt;
        spopt.t_max = 4;

        // Exact zero at lambda = 0, and the truncation identity for the
        // spectral value: rho(0) = 1 - tail exactly, so the band's lower
        // edge sits at 0.
        const auto d0 = estimate_direct(cfg, ws, 0.0, dopt);
        const auto r0 = estimate_resample(cfg, ws[0], 0.0, ropt);
        const auto s0 = transfer_eigen(cfg, 0.0, 1, spopt);
        if (d0.xi != 0.0 || r0.estimate.xi != 0.0) ok = false;
        if (std::abs((1.0 - s0.rho) - s0.tail_mass) > 1e-12) ok = false;

        std::vector<double> dxs{0.0}, rxs{0.0}, sxs{0.0};
        for (double lambda : {0.5, 1.0, 2.0}) {
            const auto de = estimate_direct(cfg, ws, lambda, dopt);
            const auto re = estimate_resample(cfg, ws[0], lambda, ropt).estimate;
            const auto sp = transfer_eigen(cfg, lambda, 3, spopt);
            dxs.push_back(de.xi);
            rxs.push_back(re.xi);
            sxs.push_back(sp.xi);

            const double gap = std::abs(de.xi - re.xi);
            const double joint = 3.0 * (de.se + re.se);
            const bool pair_dr = gap <= joint;

            // Capped spectrum brackets the true rate within the dropped
            // one-crossing mass: xi_true in [xi_cap - log(1+tail/rho), xi_cap].
            const double lo = sp.xi - std::log1p(sp.tail_mass / sp.rho);
            const bool band_d = de.xi >= lo - 3.0 * de.se && de.xi <= sp.xi + 3.0 * de.se;
            const bool band_r = re.xi >= lo - 3.0 * re.se && re.xi <= sp.xi + 3.0 * re.se;

            const double bound = (L - 1 + lambda) * std::log(cfg.d / cfg.p);
            const bool under = de.xi <= bound && re.xi <= bound;

            if (!(pair_dr && band_d && band_r && under)) ok = false;
            if (lambda == 1.0)
                note << "L" << L << ": xi(1) d/r/s = " << fmt(de.xi) << "/" << fmt(re.xi)
                     << "/" << fmt(sp.xi) << " (gap " << fmt(gap, 2) << " vs 3se "
                     << fmt(joint, 2) << "); ";
            if (!pair_dr)
                note << "L" << L << " lam " << fmt(lambda, 2) << " pair gap " << fmt(gap, 3)
                     << " > " << fmt(joint, 3) << "; ";
            if (!(band_d && band_r))
                note << "L" << L << " lam " << fmt(lambda, 2) << " band [" << fmt(lo) << ","
                     << fmt(sp.xi) << "] missed (d " << fmt(de.xi) << ", r " << fmt(re.xi)
                     << "); ";
            if (!under)
                note << "L" << L << " lam " << fmt(lambda, 2) << " above bound " << fmt(bound)
                     << "; ";
        }
        for (std::size_t i = 1; i < dxs.size(); ++i) {
            if (dxs[i] < dxs[i - 1] || rxs[i] < rxs[i - 1] || sxs[i] < sxs[i - 1]) {
                ok = false;
                note << "L" << L << " not monotone; ";
            }
        }
    }
    detail = note.str() + "xi(0) = 0 exact";
    return ok;
}

// --------------------------------------------------------------------------
// A5: exact capped decay sequence is submultiplicative with a flat
// prefactor against the spectral rate.

bool check_a5(std::string& detail) {
    const auto cfg = cfg_of(2, 2, 0.75);
    AuditOptions aopt;
    aopt.depth = 6;
    aopt.t_max = 4;
    const auto qt = subadditivity_audit(cfg, 1.0, 6, aopt);

    SpectrumOptions spopt;
    spopt.t_max = 4;
    const auto sp = transfer_eigen(cfg, 1.0, 1, spopt);

    double cmin = 1e300, cmax = 0.0;
    for (int n = 1; n <= 6; ++n) {
        const double c = qt.q[static_cast<std::size_t>(n)] * std::exp(sp.xi * n);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
    }
    const double band = cmax / cmin;
    detail = "violations " + std::to_string(qt.violations) + ", worst excess " +
             fmt(qt.worst_excess, 2) + " (tol 1e-12); prefactor band q_n e^{xi n} in [" +
             fmt(cmin) + "," + fmt(cmax) + "], ratio " + fmt(band, 4) +
             " (tol 1.25); solves " + std::to_string(qt.solves);
    return qt.violations == 0 && qt.worst_excess <= 1e-12 && band <= 1.25;
}

// --------------------------------------------------------------------------
// A6: coupled-chain decoupling statistics and the dominating-chain
// inequality at the calibrated reset rate.

bool check_a6(std::string& detail) {
    const auto cfg = cfg_of(2, 3, 0.75);
    const auto a0 = straight_window(cfg, 6);
    const auto b0 = window_of(cfg, {"U", "U", "U", "U", "U", "FU"});
    CoupledChainOptions copt;
    copt.steps = 24;
    copt.seed = 606;
    const long T = 1500;
    std::vector<SigmaTrace> traces;
    traces.reserve(static_cast<std::size_t>(T));
    for (long i = 0; i < T; ++i)
        traces.push_back(
            couple_weighted_chains(cfg, a0, b0, 1.0, copt, static_cast<std::uint64_t>(i)));

    const auto rep = tail_bound_check(traces, 20);
    const bool fit_ok = rep.decouple.rate > 0.0 && rep.decouple.r2 >= 0.9;
    const bool tail_ok = rep.tail.rate > 0.0;

    const double alpha = calibrate_alpha(rep);
    const auto dom = dominating_survival_exact(alpha, copt.steps);
    int violations = 0;
    int tested = 0;
    for (int n : {4, 8, 12, 16, 20, 24}) {
        for (int k = 1; k <= std::min(n, 12); ++k) {
            long cnt = 0;
            for (const auto& tr : traces)
                if (tr.sigma[static_cast<std::size_t>(n)] >= k) ++cnt;
            const double emp = static_cast<double>(cnt) / static_cast<double>(T);
            const double ex = dom[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
            const double se =
                std::sqrt(std::max(emp * (1.0 - emp), ex * (1.0 - ex)) / static_cast<double>(T));
            ++tested;
            if (emp + 3.0 * se + 1e-9 < ex) ++violations;
        }
    }
    detail = "decouple rate " + fmt(rep.decouple.rate, 3) + " (R2 " + fmt(rep.decouple.r2, 3) +
             ", tol > 0 / >= 0.9); tail rate " + fmt(rep.tail.rate, 3) +
             " (tol > 0); alpha " + fmt(alpha, 3) + "; domination violations " +
             std::to_string(violations) + "/" + std::to_string(tested);
    return fit_ok && tail_ok && violations == 0;
}

// --------------------------------------------------------------------------
// A7: stationarity identity of the resampled population and TV convergence
// of the class-weight snapshots.

bool check_a7(std::string& detail) {
    const auto cfg = cfg_of(2, 3, 0.75);
    const auto w0 = straight_window(cfg, 16);
    ResampleOptions ropt;
    ropt.particles = 4096;
    ropt.steps = 36;
    ropt.burn_in = 12;
    ropt.batches = 8;
    ropt.max_depth = 24;
    ropt.snapshot_every = 1;
    ropt.snapshot_k = 4;
    ropt.seed = 707;
    const auto res = estimate_resample(cfg, w0, 1.0, ropt);
    const auto inv = invariant_check(cfg, res.ensemble, 1.0, ropt);

    // TV of each snapshot against the final one decays exponentially over
    // the class-memory horizon (the last-k classes forget the straight
    // start in k crossings), then sits on the finite-population floor. Fit
    // the horizon, and require the floor to sit well below the start.
    const auto& snaps = res.snapshots;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < snaps.size() && snaps[i].step <= ropt.snapshot_k; ++i) {
        const double tv = snapshot_tv(snaps[i], snaps.back());
        if (tv <= 0.0) break;
        xs.push_back(static_cast<double>(snaps[i].step));
        ys.push_back(std::log(tv));
    }
    std::vector<double> late;
    for (const auto& s : snaps)
        if (s.step >= 12 && s.step + 1 < ropt.steps)
            late.push_back(snapshot_tv(s, snaps.back()));
    std::sort(late.begin(), late.end());
    const double floor = late.empty() ? 1.0 : late[late.size() / 2];

    bool decay_ok = false;
    double rate = 0.0, r2 = 0.0;
    if (xs.size() >= 4) {
        const auto f = linear_fit(xs, ys);
        rate = -f.slope;
        r2 = f.r2;
        decay_ok = rate > 0.0 && r2 >= 0.6 && floor <= 0.6 * std::exp(ys.front());
    }
    detail = "|pi mean - e^{-xi}| = " + fmt(inv.diff, 3) + " vs 3se " + fmt(inv.tol, 3) +
             "; snapshot TV rate " + fmt(rate, 3) + " per step (R2 " + fmt(r2, 3) +
             ", tol > 0 / >= 0.6, " + std::to_string(xs.size()) +
             " points), floor " + fmt(floor, 3) + " vs start " + fmt(std::exp(ys.front()), 3);
    return inv.ok && decay_ok;
}

// --------------------------------------------------------------------------
// A8: transfer-operator memory convergence and eigenfunction regularity on
// the ladder.

bool check_a8(std::string& detail) {
    const auto cfg = cfg_of(2, 2, 0.75);
    SpectrumOptions spopt;
    spopt.t_max = 3;
    std::vector<double> rho;
    for (int m = 1; m <= 5; ++m) rho.push_back(transfer_eigen(cfg, 1.0, m, spopt).rho);
    std::vector<double> inc;
    for (std::size_t i = 0; i + 1 < rho.size(); ++i)
        inc.push_back(std::abs(rho[i + 1] - rho[i]));
    bool geo = true;
    for (std::size_t i = 0; i + 1 < inc.size(); ++i)
        if (inc[i + 1] > 0.7 * inc[i] + 1e-12) geo = false;

    // Eigenfunction: strictly positive exactly on the live states, with a
    // bounded max/min ratio there.
    const auto sp = transfer_eigen(cfg, 1.0, 3, spopt);
    const auto shapes = enumerate_segments(cfg, Site{0, 0}, spopt.t_max);
    const auto states = rebuild_states(cfg, shapes, 3);
    double emin = 1e300, emax = 0.0;
    bool sign_ok = true;
    int live = 0;
    for (std::size_t s = 0; s < states.size(); ++s) {
        const OneStepSurvival probe(cfg, states[s]);
        const double v = sp.eigenfunction[s];
        if (probe.degenerate()) {
            if (v != 0.0) sign_ok = false;
        } else {
            ++live;
            if (!(v > 0.0)) sign_ok = false;
            emin = std::min(emin, v);
            emax = std::max(emax, v);
        }
    }
    const double ratio = emax / emin;
    detail = "rho(m=1..5) increments " + fmt(inc[0], 2) + "/" + fmt(inc[1], 2) + "/" +
             fmt(inc[2], 2) + "/" + fmt(inc[3], 2) + " (geometric, factor 0.7 + 1e-12); " +
             std::to_string(live) + "/" + std::to_string(states.size()) +
             " live states positive, ratio " + fmt(ratio, 4) + " (tol 10)";
    return geo && sign_ok && ratio <= 10.0;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> only;
    for (int i = 1; i < argc; ++i) only.insert(argv[i]);
    struct Entry {
        const char* id;
        bool (*fn)(std::string&);
    };
    const Entry entries[] = {
        {"A1", check_a1}, {"A2", check_a2}, {"A3", check_a3}, {"A4", check_a4},
        {"A5", check_a5}, {"A6", check_a6}, {"A7", check_a7}, {"A8", check_a8},
    };
    bool all = true;
    for (const auto& e : entries) {
        if (!only.empty() && !only.count(e.id)) continue;
        std::string detail;
        bool ok = false;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            ok = e.fn(detail);
        } catch (const std::exception& ex) {
            ok = false;
            detail = std::string("exception: ") + ex.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %s  %s  [%.1fs]\n", e.id, ok ? "PASS" : "FAIL", detail.c_str(), secs);
        std::fflush(stdout);
        all = all && ok;
    }
    return all ? 0 : 1;
}
