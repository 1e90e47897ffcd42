#include "cylwalk/harmonic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "cylwalk/errors.hpp"

namespace cylwalk {

namespace {

// Block tridiagonal system, one BxB block row per level. lo[0] and up[n-1]
// are ignored. Solved by forward block elimination (Thomas scheme).
struct BlockTri {
    int n = 0;
    int B = 0;
    std::vector<Eigen::MatrixXd> lo, di, up;
    std::vector<Eigen::VectorXd> rhs;

    void init(int nblocks, int bsize) {
        n = nblocks;
        B = bsize;
        lo.assign(n, Eigen::MatrixXd::Zero(B, B));
        di.assign(n, Eigen::MatrixXd::Zero(B, B));
        up.assign(n, Eigen::MatrixXd::Zero(B, B));
        rhs.assign(n, Eigen::VectorXd::Zero(B));
    }

    std::vector<Eigen::VectorXd> solve() const {
        std::vector<Eigen::MatrixXd> gain(n);
        std::vector<Eigen::VectorXd> part(n);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(di[0]);
        gain[0] = lu.solve(up[0]);
        part[0] = lu.solve(rhs[0]);
        for (int i = 1; i < n; ++i) {
            Eigen::MatrixXd w = di[i] - lo[i] * gain[i - 1];
            Eigen::PartialPivLU<Eigen::MatrixXd> lw(w);
            gain[i] = lw.solve(up[i]);
            part[i] = lw.solve(Eigen::VectorXd(rhs[i] - lo[i] * part[i - 1]));
        }
        std::vector<Eigen::VectorXd> x(n);
        x[n - 1] = part[n - 1];
        for (int i = n - 2; i >= 0; --i) x[i] = part[i] - gain[i] * x[i + 1];
        return x;
    }
};

struct Grid {
    int bottom = 0, top = 0, B = 0;
    std::vector<std::uint8_t> blocked;  // (top-bottom+1) * B

    int idx(int level, int torus) const { return (level - bottom) * B + torus; }
    bool is_blocked(int level, int torus) const { return blocked[idx(level, torus)] != 0; }
};

Grid make_grid(const CylinderConfig& cfg, const Slab& slab) {
    if (slab.top <= slab.bottom)
        throw ArgumentError("slab: top must exceed bottom");
    Grid g;
    g.bottom = slab.bottom;
    g.top = slab.top;
    g.B = cfg.cross_size();
    g.blocked.assign(static_cast<std::size_t>(g.top - g.bottom + 1) * g.B, 0);
    for (const auto& z : slab.obstacles)
        if (z.level >= g.bottom && z.level <= g.top) g.blocked[g.idx(z.level, z.torus)] = 1;
    return g;
}

double field_residual(const CylinderConfig& cfg, const Grid& g,
                      const HarmonicField& f) {
    double worst = 0.0;
    for (int level = g.bottom; level < g.top; ++level) {
        for (int y = 0; y < g.B; ++y) {
            if (g.is_blocked(level, y)) continue;
            double acc = 0.0;
            for (const auto& s : neighbors(cfg, Site{level, y})) {
                if (s.to.level < g.bottom) continue;
                if (g.is_blocked(s.to.level, s.to.torus)) continue;
                acc += s.prob * f.at(s.to);
            }
            worst = std::max(worst, std::abs(f.at(level, y) - acc));
        }
    }
    return worst;
}

}  // namespace

double HarmonicField::at(int level, int torus) const {
    if (level < bottom) return 0.0;
    if (level > top || torus < 0 || torus >= cross)
        throw ArgumentError("field: site outside the solved slab");
    return value[static_cast<std::size_t>(level - bottom) * cross + torus];
}

HarmonicField solve_field(const CylinderConfig& cfg, const Slab& slab,
                          const SolveOptions& opts) {
    cfg.validate();
    const Grid g = make_grid(cfg, slab);
    HarmonicField f;
    f.bottom = g.bottom;
    f.top = g.top;
    f.cross = g.B;
    f.value.assign(g.blocked.size(), 0.0);

    bool top_free = false;
    for (int y = 0; y < g.B; ++y) {
        if (!g.is_blocked(g.top, y)) {
            f.value[g.idx(g.top, y)] = 1.0;
            top_free = true;
        }
    }
    if (!top_free) {
        f.degenerate = true;
        return f;
    }

    const int n = g.top - g.bottom;  // unknown levels bottom .. top-1
    BlockTri sys;
    sys.init(n, g.B);
    for (int level = g.bottom; level < g.top; ++level) {
        const int i = level - g.bottom;
        for (int y = 0; y < g.B; ++y) {
            sys.di[i](y, y) = 1.0;
            if (g.is_blocked(level, y)) continue;  // pinned to 0
            for (const auto& s : neighbors(cfg, Site{level, y})) {
                if (s.to.level < g.bottom) continue;  // absorbed below, value 0
                if (g.is_blocked(s.to.level, s.to.torus)) continue;
                if (s.to.level == g.top) {
                    sys.rhs[i](y) += s.prob;  // boundary value 1
                } else if (s.to.level == level) {
                    sys.di[i](y, s.to.torus) -= s.prob;
                } else if (s.to.level == level + 1) {
                    sys.up[i](y, s.to.torus) -= s.prob;
                } else {
                    sys.lo[i](y, s.to.torus) -= s.prob;
                }
            }
        }
    }

    const auto x = sys.solve();
    for (int i = 0; i < n; ++i)
        for (int y = 0; y < g.B; ++y)
            f.value[g.idx(g.bottom + i, y)] = std::max(0.0, x[i](y));

    // Direct elimination should already satisfy the balance equations; the
    // sweep below only runs when cancellation pushed the residual over tol.
    double res = field_residual(cfg, g, f);
    int sweeps = 0;
    while (res > opts.tol && sweeps < 20000) {
        for (int level = g.bottom; level < g.top; ++level) {
            for (int y = 0; y < g.B; ++y) {
                if (g.is_blocked(level, y)) continue;
                double acc = 0.0;
                for (const auto& s : neighbors(cfg, Site{level, y})) {
                    if (s.to.level < g.bottom) continue;
                    if (g.is_blocked(s.to.level, s.to.torus)) continue;
                    acc += s.prob * f.at(s.to);
                }
                f.value[g.idx(level, y)] = acc;
            }
        }
        res = field_residual(cfg, g, f);
        ++sweeps;
    }
    if (res > opts.tol)
        throw StructuralError("solve_field: residual " + std::to_string(res) +
                              " above tolerance after polish");
    return f;
}

HarmonicField solve_h(const CylinderConfig& cfg, const PathWindow& w, int bottom,
                      const SolveOptions& opts) {
    Slab slab;
    slab.bottom = bottom;
    slab.top = 0;
    slab.obstacles = obstacle_sites(cfg, w, bottom);
    return solve_field(cfg, slab, opts);
}

std::vector<Step> hprocess_kernel(const CylinderConfig& cfg, const HarmonicField& h,
                                  const Site& z) {
    if (z.level < h.bottom || z.level >= h.top)
        throw ArgumentError("hprocess_kernel: site outside the transient region");
    const double hz = h.at(z);
    if (!(hz > 0.0))
        throw ArgumentError("hprocess_kernel: conditioned walk undefined where h = 0");
    std::vector<Step> out;
    for (const auto& s : neighbors(cfg, z)) {
        if (s.to.level < h.bottom) continue;
        const double hv = h.at(s.to);
        if (hv > 0.0) out.push_back({s.to, s.prob * hv / hz});
    }
    return out;
}

double HittingMeasure::total() const {
    double t = 0.0;
    for (double v : mass) t += v;
    return t;
}

double HittingMeasure::tv_distance(const HittingMeasure& a, const HittingMeasure& b) {
    if (a.level != b.level || a.mass.size() != b.mass.size())
        throw ArgumentError("tv_distance: measures live on different levels");
    double s = 0.0;
    for (std::size_t i = 0; i < a.mass.size(); ++i) s += std::abs(a.mass[i] - b.mass[i]);
    return 0.5 * s;
}

namespace {

// First-arrival probabilities on to_level for the h-conditioned walk:
// fields[w].at(u) = P{walk at u crosses into to_level at torus w}. Cells
// with h = 0 (including obstacles) are dead. The plain avoiding walk is the
// special case of an indicator field.
std::vector<HarmonicField> crossing_fields(const CylinderConfig& cfg,
                                           const HarmonicField& h, int to_level) {
    if (to_level <= h.bottom || to_level > h.top)
        throw ArgumentError("crossing_fields: to_level outside slab");
    const int B = h.cross;
    const int n = to_level - h.bottom;  // transient levels bottom .. to_level-1

    std::vector<BlockTri> sys(B);
    for (int w = 0; w < B; ++w) sys[w].init(n, B);

    for (int level = h.bottom; level < to_level; ++level) {
        const int i = level - h.bottom;
        for (int y = 0; y < B; ++y) {
            for (int w = 0; w < B; ++w) sys[w].di[i](y, y) = 1.0;
            const double hy = h.at(level, y);
            if (!(hy > 0.0)) continue;
            for (const auto& s : neighbors(cfg, Site{level, y})) {
                if (s.to.level < h.bottom) continue;
                const double hv = h.at(s.to);
                if (!(hv > 0.0)) continue;
                const double q = s.prob * hv / hy;  // conditioned one-step mass
                if (s.to.level == to_level) {
                    sys[s.to.torus].rhs[i](y) += q;
                } else if (s.to.level == level) {
                    for (int w = 0; w < B; ++w) sys[w].di[i](y, s.to.torus) -= q;
                } else if (s.to.level == level + 1) {
                    for (int w = 0; w < B; ++w) sys[w].up[i](y, s.to.torus) -= q;
                } else {
                    for (int w = 0; w < B; ++w) sys[w].lo[i](y, s.to.torus) -= q;
                }
            }
        }
    }

    std::vector<HarmonicField> fields(B);
    for (int w = 0; w < B; ++w) {
        const auto x = sys[w].solve();
        auto& f = fields[w];
        f.bottom = h.bottom;
        f.top = to_level - 1;
        f.cross = B;
        f.value.assign(static_cast<std::size_t>(n) * B, 0.0);
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < B; ++y)
                f.value[static_cast<std::size_t>(i) * B + y] = std::max(0.0, x[i](y));
    }
    return fields;
}

HarmonicField window_field(const CylinderConfig& cfg, const PathWindow& w,
                           int bottom, const SolveOptions& opts) {
    HarmonicField h = solve_h(cfg, w, bottom, opts);
    if (h.degenerate)
        throw StructuralError("hitting measure: window blocks level 0 completely");
    return h;
}

}  // namespace

HittingMeasure hitting_measure(const CylinderConfig& cfg, const PathWindow& w,
                               int from_level, int to_level, const SolveOptions& opts) {
    if (!(from_level < to_level) || to_level > 0)
        throw ArgumentError("hitting_measure: need from_level < to_level <= 0");
    const HarmonicField h = window_field(cfg, w, from_level, opts);
    const auto fields = crossing_fields(cfg, h, to_level);
    // Uniform start over live sites of the bottom row.
    std::vector<int> live;
    for (int y = 0; y < h.cross; ++y)
        if (h.at(from_level, y) > 0.0) live.push_back(y);
    if (live.empty())
        throw StructuralError("hitting_measure: no live start sites on from_level");
    HittingMeasure mu;
    mu.level = to_level;
    mu.mass.assign(h.cross, 0.0);
    for (int wy = 0; wy < h.cross; ++wy) {
        double acc = 0.0;
        for (int y : live) acc += fields[wy].at(from_level, y);
        mu.mass[wy] = acc / static_cast<double>(live.size());
    }
    return mu;
}

HittingMeasure hitting_measure_from(const CylinderConfig& cfg, const PathWindow& w,
                                    const Site& z, int to_level,
                                    const SolveOptions& opts) {
    if (!(z.level < to_level) || to_level > 0)
        throw ArgumentError("hitting_measure_from: need z.level < to_level <= 0");
    const HarmonicField h = window_field(cfg, w, z.level, opts);
    if (!(h.at(z) > 0.0))
        throw ArgumentError("hitting_measure_from: start has h = 0");
    const auto fields = crossing_fields(cfg, h, to_level);
    HittingMeasure mu;
    mu.level = to_level;
    mu.mass.assign(h.cross, 0.0);
    for (int wy = 0; wy < h.cross; ++wy) mu.mass[wy] = fields[wy].at(z);
    return mu;
}

std::vector<HittingMeasure> level_crossing_rows(const CylinderConfig& cfg,
                                                const HarmonicField& h, int j) {
    if (j < h.bottom || j + 1 > h.top)
        throw ArgumentError("level_crossing_rows: level outside slab");
    const auto fields = crossing_fields(cfg, h, j + 1);
    std::vector<HittingMeasure> rows(h.cross);
    for (int y = 0; y < h.cross; ++y) {
        rows[y].level = j + 1;
        rows[y].mass.assign(h.cross, 0.0);
        for (int wy = 0; wy < h.cross; ++wy) rows[y].mass[wy] = fields[wy].at(j, y);
    }
    return rows;
}

namespace {

std::vector<int> distinct_lateral(const CylinderConfig& cfg, int torus) {
    std::vector<int> out;
    int mult = 1;
    for (int i = 0; i < cfg.d - 1; ++i) {
        int c = (torus / mult) % cfg.L;
        int up = torus + ((c + 1) % cfg.L - c) * mult;
        int dn = torus + ((c - 1 + cfg.L) % cfg.L - c) * mult;
        out.push_back(up);
        if (dn != up) out.push_back(dn);
        mult *= cfg.L;
    }
    return out;
}

bool mask_connected(const CylinderConfig& cfg, unsigned mask, int B) {
    int first = -1;
    for (int y = 0; y < B; ++y)
        if (mask & (1u << y)) {
            first = y;
            break;
        }
    if (first < 0) return false;
    unsigned seen = 1u << first;
    std::vector<int> stack{first};
    while (!stack.empty()) {
        int y = stack.back();
        stack.pop_back();
        for (int t : distinct_lateral(cfg, y)) {
            if ((mask & (1u << t)) && !(seen & (1u << t))) {
                seen |= 1u << t;
                stack.push_back(t);
            }
        }
    }
    return seen == mask;
}

// P{reach target before leaving D or stepping off the level}, for every
// start in D, by one dense solve on D \ {target}.
std::vector<double> confined_reach(const CylinderConfig& cfg,
                                   const std::vector<int>& cells, int target) {
    const double lateral = 1.0 / (2.0 * cfg.d);
    std::vector<int> others;
    for (int y : cells)
        if (y != target) others.push_back(y);
    const int n = static_cast<int>(others.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    const auto pos = [&](int y) {
        return static_cast<int>(std::find(others.begin(), others.end(), y) - others.begin());
    };
    for (int i = 0; i < n; ++i) {
        int mult = 1;
        for (int dim = 0; dim < cfg.d - 1; ++dim) {
            int c = (others[i] / mult) % cfg.L;
            int up = others[i] + ((c + 1) % cfg.L - c) * mult;
            int dn = others[i] + ((c - 1 + cfg.L) % cfg.L - c) * mult;
            for (int t : {up, dn}) {
                // L = 2 repeats the same target; adding lateral twice keeps
                // the merged 1/d mass.
                if (t == target)
                    b(i) += lateral;
                else if (std::find(cells.begin(), cells.end(), t) != cells.end())
                    A(i, pos(t)) -= lateral;
            }
            mult *= cfg.L;
        }
    }
    Eigen::VectorXd f = A.partialPivLu().solve(b);
    std::vector<double> out(cfg.cross_size(), 0.0);
    for (int i = 0; i < n; ++i) out[others[i]] = f(i);
    out[target] = 1.0;
    return out;
}

// Same reach probability when vertical excursions are allowed while the
// torus coordinate stays in D: walk on levels -K..K with the target pinned
// at level 0.
std::vector<double> band_reach(const CylinderConfig& cfg, const std::vector<int>& cells,
                               int target, int K) {
    const int m = static_cast<int>(cells.size());
    const int nlev = 2 * K + 1;
    const auto pos = [&](int y) {
        auto it = std::find(cells.begin(), cells.end(), y);
        return it == cells.end() ? -1 : static_cast<int>(it - cells.begin());
    };
    BlockTri sys;
    sys.init(nlev, m);
    const double up_p = cfg.p / cfg.d;
    const double dn_p = (1.0 - cfg.p) / cfg.d;
    const double lateral = 1.0 / (2.0 * cfg.d);
    for (int li = 0; li < nlev; ++li) {
        const int level = li - K;
        for (int i = 0; i < m; ++i) {
            sys.di[li](i, i) = 1.0;
            if (level == 0 && cells[i] == target) {
                sys.rhs[li](i) = 1.0;
                continue;
            }
            if (li + 1 < nlev) sys.up[li](i, i) -= up_p;
            if (li > 0) sys.lo[li](i, i) -= dn_p;
            int mult = 1;
            for (int dim = 0; dim < cfg.d - 1; ++dim) {
                int c = (cells[i] / mult) % cfg.L;
                int u = cells[i] + ((c + 1) % cfg.L - c) * mult;
                int dn = cells[i] + ((c - 1 + cfg.L) % cfg.L - c) * mult;
                for (int t : {u, dn}) {
                    int j = pos(t);
                    if (j >= 0) sys.di[li](i, j) -= lateral;
                }
                mult *= cfg.L;
            }
        }
    }
    const auto x = sys.solve();
    std::vector<double> out(cfg.cross_size(), 0.0);
    for (int i = 0; i < m; ++i) out[cells[i]] = x[K](i);
    return out;
}

}  // namespace

HarnackReport harnack_report(const CylinderConfig& cfg) {
    cfg.validate();
    const int B = cfg.cross_size();
    if (B > 20)
        throw BudgetError("harnack_report: cross-section too large to enumerate");
    const double r = (1.0 - cfg.p) / cfg.p;
    const int K = std::min(4000, std::max(80, static_cast<int>(std::ceil(
                                                   std::log(1e-12) / std::log(r))) +
                                                   40));
    HarnackReport rep;
    rep.level_confined = 1.0;
    rep.band = 1.0;
    for (unsigned mask = 1; mask < (1u << B); ++mask) {
        if (std::popcount(mask) < 2) continue;
        if (!mask_connected(cfg, mask, B)) continue;
        ++rep.configurations;
        std::vector<int> cells;
        for (int y = 0; y < B; ++y)
            if (mask & (1u << y)) cells.push_back(y);
        for (int target : cells) {
            const auto f = confined_reach(cfg, cells, target);
            const auto fb = band_reach(cfg, cells, target, K);
            for (int z : cells) {
                if (z == target) continue;
                rep.level_confined = std::min(rep.level_confined, f[z]);
                rep.band = std::min(rep.band, fb[z]);
            }
        }
    }
    if (rep.configurations == 0)
        throw StructuralError("harnack_report: no usable configuration");
    return rep;
}

double harnack_constant(const CylinderConfig& cfg) {
    return harnack_report(cfg).level_confined;
}

void validate_extension(const CylinderConfig& cfg, const PathWindow& w,
                        const std::vector<Segment>& ext) {
    for (std::size_t i = 0; i < ext.size(); ++i) {
        validate_segment(cfg, ext[i]);
        if (ext[i].target_level != static_cast<int>(i) + 1)
            throw ArgumentError("extension: segment targets must run 1..n");
        const Site& prev = (i == 0) ? w.endpoint() : ext[i - 1].end();
        if (!(ext[i].start() == prev))
            throw ArgumentError("extension: segments do not chain from the window");
    }
}

namespace {

struct UnionSetup {
    int bottom = 0;         // deep-start level
    std::vector<Site> base;  // window obstacles down to bottom
    std::vector<Site> full;  // base plus extension sites (clipped at bottom)
    int top = 0;            // extension height n
};

UnionSetup union_setup(const CylinderConfig& cfg, const std::vector<PathWindow>& ws,
                       const std::vector<std::vector<Segment>>& exts,
                       const SolveOptions& opts) {
    if (ws.empty() || ws.size() != exts.size())
        throw ArgumentError("survival: need one extension list per window");
    const int n = static_cast<int>(exts[0].size());
    for (std::size_t i = 0; i < ws.size(); ++i) {
        validate_window(cfg, ws[i]);
        validate_extension(cfg, ws[i], exts[i]);
        if (static_cast<int>(exts[i].size()) != n)
            throw ArgumentError("survival: all extensions must reach the same level");
    }

    bool any_absorb = false;
    int absorb_bottom = std::numeric_limits<int>::min();
    int floor = 0;
    for (std::size_t i = 0; i < ws.size(); ++i) {
        if (ws[i].completion == Completion::Absorb) {
            any_absorb = true;
            absorb_bottom = std::max(absorb_bottom, -ws[i].depth());
        }
        floor = std::min(floor, ws[i].floor_level());
        for (const auto& seg : exts[i])
            for (const auto& z : seg.sites) floor = std::min(floor, z.level);
    }
    UnionSetup s;
    s.top = n;
    s.bottom = any_absorb ? absorb_bottom : floor - opts.tail_margin;
    for (std::size_t i = 0; i < ws.size(); ++i) {
        // Absorb windows own no history below their own bottom; straight
        // windows extend their tail all the way to the slab bottom.
        const int low = ws[i].completion == Completion::Absorb
                            ? std::max(s.bottom, -ws[i].depth())
                            : s.bottom;
        for (const auto& z : obstacle_sites(cfg, ws[i], low)) s.base.push_back(z);
    }
    s.full = s.base;
    for (const auto& ext : exts)
        for (const auto& seg : ext)
            for (const auto& z : seg.sites)
                if (z.level >= s.bottom) s.full.push_back(z);
    return s;
}

double start_row_mean(const CylinderConfig& cfg, const HarmonicField& f,
                      const std::vector<Site>& base, int bottom) {
    std::vector<std::uint8_t> blocked(cfg.cross_size(), 0);
    for (const auto& z : base)
        if (z.level == bottom) blocked[z.torus] = 1;
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y < cfg.cross_size(); ++y) {
        if (blocked[y]) continue;
        acc += f.at(bottom, y);
        ++count;
    }
    if (count == 0)
        throw StructuralError("survival: deep-start row fully blocked");
    return acc / count;
}

}  // namespace

SurvivalResult survival_union(const CylinderConfig& cfg,
                              const std::vector<PathWindow>& ws,
                              const std::vector<std::vector<Segment>>& exts,
                              const SolveOptions& opts) {
    const UnionSetup s = union_setup(cfg, ws, exts, opts);
    SurvivalResult out;
    if (s.top == 0) {  // empty extension, ratio is 1 by definition
        out.z = out.numerator = out.denominator = 1.0;
        return out;
    }

    Slab den_slab{s.bottom, 0, s.base};
    const HarmonicField den_field = solve_field(cfg, den_slab, opts);
    out.denominator = den_field.degenerate
                          ? 0.0
                          : start_row_mean(cfg, den_field, s.base, s.bottom);
    if (!(out.denominator > 0.0)) {
        out.degenerate = true;
        return out;
    }

    Slab num_slab{s.bottom, s.top, s.full};
    const HarmonicField num_field = solve_field(cfg, num_slab, opts);
    out.numerator = num_field.degenerate
                        ? 0.0
                        : start_row_mean(cfg, num_field, s.base, s.bottom);
    out.z = out.numerator / out.denominator;
    return out;
}

SurvivalResult survival_prob_exact(const CylinderConfig& cfg, const PathWindow& w,
                                   const std::vector<Segment>& ext,
                                   const SolveOptions& opts) {
    return survival_union(cfg, {w}, {ext}, opts);
}

double zbar_survival(const CylinderConfig& cfg, const PathWindow& w,
                     const std::vector<Segment>& ext, const Site& z,
                     const SolveOptions& opts) {
    if (z.level != 0) throw ArgumentError("zbar_survival: start must sit on level 0");
    const UnionSetup s = union_setup(cfg, {w}, {ext}, opts);
    if (s.top == 0) return 1.0;
    Slab slab{s.bottom, s.top, s.full};
    return solve_field(cfg, slab, opts).at(z);
}

double zhat_survival(const CylinderConfig& cfg, const PathWindow& w,
                     const std::vector<Segment>& ext, const Site& z,
                     const SolveOptions& opts) {
    if (z.level != 0) throw ArgumentError("zhat_survival: start must sit on level 0");
    validate_extension(cfg, w, ext);
    const int n = static_cast<int>(ext.size());
    if (n == 0) return 1.0;
    Slab slab;
    slab.bottom = 0;  // touching level -1 kills
    slab.top = n;
    for (const auto& z0 : obstacle_sites(cfg, w, 0)) slab.obstacles.push_back(z0);
    for (const auto& seg : ext)
        for (const auto& zs : seg.sites)
            if (zs.level >= 0) slab.obstacles.push_back(zs);
    return solve_field(cfg, slab, opts).at(z);
}

double zstar_survival(const CylinderConfig& cfg, const PathWindow& w,
                      const std::vector<Segment>& ext, int k,
                      const SolveOptions& opts) {
    const UnionSetup s = union_setup(cfg, {w}, {ext}, opts);
    const int n = s.top;
    if (n == 0) return 1.0;
    if (k < 1 || -k <= s.bottom + 2)
        throw ArgumentError("zstar_survival: k must be >= 1 and above the deep start");

    // Avoidance survival from every cell (phase after the touch).
    Slab num_slab{s.bottom, n, s.full};
    const HarmonicField g2 = solve_field(cfg, num_slab, opts);

    // Phase before the touch: live on levels -k+1 .. n-1, reaching level n
    // first loses, stepping down to level -k hands over to g2.
    Grid grid = make_grid(cfg, num_slab);
    const int lo = -k + 1;
    BlockTri sys;
    sys.init(n - lo, grid.B);
    for (int level = lo; level < n; ++level) {
        const int i = level - lo;
        for (int y = 0; y < grid.B; ++y) {
            sys.di[i](y, y) = 1.0;
            if (grid.is_blocked(level, y)) continue;
            for (const auto& st : neighbors(cfg, Site{level, y})) {
                if (st.to.level == n) continue;  // reached the top untouched
                if (grid.is_blocked(st.to.level, st.to.torus)) continue;
                if (st.to.level == -k) {
                    sys.rhs[i](y) += st.prob * g2.at(st.to);
                } else if (st.to.level == level) {
                    sys.di[i](y, st.to.torus) -= st.prob;
                } else if (st.to.level == level + 1) {
                    sys.up[i](y, st.to.torus) -= st.prob;
                } else {
                    sys.lo[i](y, st.to.torus) -= st.prob;
                }
            }
        }
    }
    const auto g1 = sys.solve();

    // Arrival law on level 0 of the deep walk avoiding the full obstacle
    // set: plain avoiding kernel = conditioned kernel of an indicator field.
    HarmonicField ind;
    ind.bottom = s.bottom;
    ind.top = 0;
    ind.cross = grid.B;
    ind.value.assign(static_cast<std::size_t>(1 - s.bottom) * grid.B, 1.0);
    for (const auto& z : s.full)
        if (z.level >= s.bottom && z.level <= 0)
            ind.value[static_cast<std::size_t>(z.level - s.bottom) * grid.B + z.torus] = 0.0;
    const auto arrivals = crossing_fields(cfg, ind, 0);

    std::vector<std::uint8_t> blocked_row(grid.B, 0);
    for (const auto& z : s.base)
        if (z.level == s.bottom) blocked_row[z.torus] = 1;
    double numerator = 0.0;
    int starts = 0;
    for (int y0 = 0; y0 < grid.B; ++y0) {
        if (blocked_row[y0]) continue;
        ++starts;
        for (int ya = 0; ya < grid.B; ++ya) {
            const double arrive = arrivals[ya].at(s.bottom, y0);
            if (arrive > 0.0) numerator += arrive * g1[0 - lo](ya);
        }
    }
    if (starts == 0) throw StructuralError("zstar_survival: deep-start row blocked");
    numerator /= starts;

    // Denominator: avoid the window to level 0, then touch -k before n.
    Slab den_slab{s.bottom, 0, s.base};
    const HarmonicField den_field = solve_field(cfg, den_slab, opts);
    if (den_field.degenerate) throw StructuralError("zstar_survival: degenerate window");
    const double den0 = start_row_mean(cfg, den_field, s.base, s.bottom);
    const double r = (1.0 - cfg.p) / cfg.p;
    // Two-sided ruin from level 0: hit -k before n.
    const double phi =
        (1.0 - std::pow(r, n)) / (std::pow(r, -k) - std::pow(r, n));
    const double denominator = den0 * phi;
    if (!(denominator > 0.0)) throw StructuralError("zstar_survival: zero denominator");
    return numerator / denominator;
}

OneStepSurvival::OneStepSurvival(const CylinderConfig& cfg, const PathWindow& w,
                                 const SolveOptions& opts)
    : cfg_(cfg), w_(w), opts_(opts) {
    validate_window(cfg_, w_);
    bottom_ = w_.completion == Completion::Absorb ? -w_.depth()
                                                  : w_.floor_level() - opts_.tail_margin;
    base_ = obstacle_sites(cfg_, w_, bottom_);
    Slab den_slab{bottom_, 0, base_};
    const HarmonicField f = solve_field(cfg_, den_slab, opts_);
    den_ = f.degenerate ? 0.0 : start_row_mean(cfg_, f, base_, bottom_);
    degenerate_ = !(den_ > 0.0);
}

double OneStepSurvival::z1(const Segment& s) const {
    if (degenerate_) throw StructuralError("one-step survival: degenerate window");
    validate_extension(cfg_, w_, {s});
    int floor = 0;
    for (const auto& z : s.sites) floor = std::min(floor, z.level);
    if (w_.completion == Completion::StraightLine && floor < bottom_ + 2) {
        // Rare deep dip near the cutoff: redo both solves at a deeper start.
        const SurvivalResult r = survival_prob_exact(cfg_, w_, {s}, opts_);
        return r.degenerate ? 0.0 : r.z;
    }
    Slab num_slab{bottom_, 1, base_};
    num_slab.obstacles.reserve(base_.size() + s.sites.size());
    for (const auto& z : s.sites)
        if (z.level >= bottom_) num_slab.obstacles.push_back(z);
    const HarmonicField f = solve_field(cfg_, num_slab, opts_);
    if (f.degenerate) return 0.0;
    return start_row_mean(cfg_, f, base_, bottom_) / den_;
}

}
