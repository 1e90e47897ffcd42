#include "cylwalk/paths.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cylwalk/errors.hpp"
#include "cylwalk/rng.hpp"

namespace cylwalk {

namespace {

// Distinct lateral neighbours of a packed torus index.
std::vector<int> lateral_neighbors(const CylinderConfig& cfg, int torus) {
    std::vector<int> out;
    out.reserve(2 * (cfg.d - 1));
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

bool is_step(const CylinderConfig& cfg, const Site& a, const Site& b) {
    if (a.level != b.level) {
        if (std::abs(a.level - b.level) != 1) return false;
        return a.torus == b.torus;
    }
    const auto lat = lateral_neighbors(cfg, a.torus);
    return std::find(lat.begin(), lat.end(), b.torus) != lat.end();
}

}  // namespace

void validate_segment(const CylinderConfig& cfg, const Segment& s) {
    if (s.sites.size() < 2)
        throw ArgumentError("segment: needs at least start and crossing site");
    if (s.start().level != s.target_level - 1)
        throw ArgumentError("segment: must start one level below its target");
    if (s.end().level != s.target_level)
        throw ArgumentError("segment: must end on its target level");
    for (std::size_t i = 0; i + 1 < s.sites.size(); ++i) {
        if (s.sites[i].level >= s.target_level)
            throw ArgumentError("segment: interior site on or above target level");
        if (!is_step(cfg, s.sites[i], s.sites[i + 1]))
            throw ArgumentError("segment: consecutive sites are not lattice neighbours");
    }
}

Segment make_segment(const CylinderConfig& cfg, std::vector<Site> sites) {
    Segment s;
    if (sites.empty()) throw ArgumentError("segment: empty site list");
    s.target_level = sites.back().level;
    s.sites = std::move(sites);
    validate_segment(cfg, s);
    return s;
}

int PathWindow::floor_level() const {
    int lo = endpoint().level;
    for (const auto& seg : segments)
        for (const auto& z : seg.sites) lo = std::min(lo, z.level);
    return lo;
}

void validate_window(const CylinderConfig& cfg, const PathWindow& w) {
    if (w.segments.empty()) throw ArgumentError("window: needs at least one segment");
    const int m = w.depth();
    for (int i = 0; i < m; ++i) {
        const Segment& seg = w.segments[i];
        if (seg.target_level != -m + 1 + i)
            throw ArgumentError("window: segment targets must run -depth+1 .. 0");
        validate_segment(cfg, seg);
        if (i > 0 && !(seg.start() == w.segments[i - 1].end()))
            throw ArgumentError("window: segments do not chain");
    }
}

PathWindow make_window(const CylinderConfig& cfg, std::vector<Segment> segments,
                       Completion completion) {
    PathWindow w;
    w.segments = std::move(segments);
    w.completion = completion;
    validate_window(cfg, w);
    return w;
}

PathWindow straight_window(const CylinderConfig& cfg, int depth, Completion completion,
                           int torus) {
    if (depth < 1) throw ArgumentError("straight_window: depth must be >= 1");
    std::vector<Segment> segs;
    segs.reserve(depth);
    for (int i = -depth + 1; i <= 0; ++i) {
        Segment s;
        s.target_level = i;
        s.sites = {Site{i - 1, torus}, Site{i, torus}};
        segs.push_back(std::move(s));
    }
    return make_window(cfg, std::move(segs), completion);
}

PathWindow translate_torus(const CylinderConfig& cfg, const PathWindow& w, int offset) {
    PathWindow out = w;
    for (auto& seg : out.segments)
        for (auto& z : seg.sites) z.torus = torus_add(cfg, z.torus, offset);
    return out;
}

PathWindow canonicalize(const CylinderConfig& cfg, const PathWindow& w) {
    return translate_torus(cfg, w, torus_neg(cfg, w.endpoint().torus));
}

PathWindow concat(const CylinderConfig& cfg, const PathWindow& w, const Segment& s,
                  int max_depth) {
    validate_segment(cfg, s);
    if (s.target_level != 1)
        throw ArgumentError("concat: appended segment must cross into level 1");
    if (!(s.start() == w.endpoint()))
        throw ArgumentError("concat: segment does not start at the window endpoint");
    PathWindow out;
    out.completion = w.completion;
    out.segments = w.segments;
    out.segments.push_back(s);
    if (max_depth > 0 && static_cast<int>(out.segments.size()) > max_depth)
        out.segments.erase(out.segments.begin(),
                           out.segments.end() - max_depth);
    for (auto& seg : out.segments) {
        seg.target_level -= 1;
        for (auto& z : seg.sites) z.level -= 1;
    }
    out = canonicalize(cfg, out);
    validate_window(cfg, out);
    return out;
}

bool agrees_last_k(const CylinderConfig& cfg, const PathWindow& a, const PathWindow& b,
                   int k) {
    if (k == 0) return true;
    if (k < 0 || k > a.depth() || k > b.depth())
        throw ArgumentError("agrees_last_k: k outside both window depths");
    // Canonical form pins the endpoint torus coordinate, so block equality up
    // to one common translation becomes literal equality.
    const PathWindow ca = canonicalize(cfg, a);
    const PathWindow cb = canonicalize(cfg, b);
    for (int i = 1; i <= k; ++i) {
        const Segment& sa = ca.segments[ca.depth() - i];
        const Segment& sb = cb.segments[cb.depth() - i];
        if (sa.sites != sb.sites) return false;
    }
    return true;
}

std::vector<Site> obstacle_sites(const CylinderConfig&, const PathWindow& w,
                                 int low) {
    const int bottom = -w.depth();
    if (w.completion == Completion::Absorb && low < bottom)
        throw StructuralError(
            "obstacle_sites: absorb completion has no history below the window");
    std::set<Site> out;
    for (const auto& seg : w.segments)
        for (const auto& z : seg.sites)
            if (z.level >= low) out.insert(z);
    if (w.completion == Completion::StraightLine) {
        const int tail_torus = w.anchor().torus;
        for (int j = low; j < bottom; ++j) out.insert(Site{j, tail_torus});
    }
    return std::vector<Site>(out.begin(), out.end());
}

bool CrossSectionProfile::level_connected(int level) const {
    const int idx = level - bottom;
    if (idx < 0 || idx >= static_cast<int>(connected.size()))
        throw ArgumentError("cross sections: level outside profile");
    return connected[idx] != 0;
}

CrossSectionProfile cross_sections(const CylinderConfig& cfg, const PathWindow& w) {
    validate_window(cfg, w);
    const int B = cfg.cross_size();
    const int top = 0;
    const int window_bottom = -w.depth();
    const int eval_bottom = (w.completion == Completion::StraightLine)
                                ? std::min(w.floor_level(), window_bottom) - 1
                                : window_bottom;
    const int H = top - eval_bottom + 1;
    const auto cell = [&](int level, int torus) { return (level - eval_bottom) * B + torus; };

    std::vector<std::uint8_t> blocked(static_cast<std::size_t>(H) * B, 0);
    for (const auto& z : obstacle_sites(cfg, w, eval_bottom))
        blocked[cell(z.level, z.torus)] = 1;

    // Flood from the bottom row. For StraightLine the rows below eval_bottom
    // repeat the same single-site obstacle pattern forever, so seeding the
    // bottom row reproduces connectivity from arbitrarily far down.
    std::vector<std::uint8_t> reached(blocked.size(), 0);
    std::deque<int> queue;
    for (int y = 0; y < B; ++y) {
        const int c = cell(eval_bottom, y);
        if (!blocked[c]) {
            reached[c] = 1;
            queue.push_back(c);
        }
    }
    while (!queue.empty()) {
        const int c = queue.front();
        queue.pop_front();
        const int level = eval_bottom + c / B;
        const int torus = c % B;
        const auto push = [&](int lv, int ty) {
            if (lv < eval_bottom || lv > top) return;
            const int cc = cell(lv, ty);
            if (!blocked[cc] && !reached[cc]) {
                reached[cc] = 1;
                queue.push_back(cc);
            }
        };
        push(level - 1, torus);
        push(level + 1, torus);
        for (int ty : lateral_neighbors(cfg, torus)) push(level, ty);
    }

    CrossSectionProfile prof;
    prof.bottom = window_bottom;
    prof.cells.resize(top - window_bottom + 1);
    prof.connected.assign(top - window_bottom + 1, 0);
    for (int level = window_bottom; level <= top; ++level) {
        auto& cells = prof.cells[level - window_bottom];
        for (int y = 0; y < B; ++y)
            if (reached[cell(level, y)]) cells.push_back(y);
        if (cells.empty()) continue;
        // Lateral connectivity inside the slice.
        std::set<int> todo(cells.begin() + 1, cells.end());
        std::deque<int> q{cells.front()};
        std::set<int> seen{cells.front()};
        while (!q.empty()) {
            int y = q.front();
            q.pop_front();
            for (int ty : lateral_neighbors(cfg, y)) {
                if (todo.count(ty) && !seen.count(ty)) {
                    seen.insert(ty);
                    q.push_back(ty);
                }
            }
        }
        if (seen.size() == cells.size()) prof.connected[level - window_bottom] = 1;
    }
    prof.reaches_top = !prof.cells.back().empty();
    return prof;
}

bool is_nice(const CylinderConfig& cfg, const PathWindow& w, int min_connected) {
    if (min_connected < 0) throw ArgumentError("is_nice: min_connected must be >= 0");
    const auto prof = cross_sections(cfg, w);
    if (!prof.reaches_top) return false;
    int count = 0;
    for (int level = prof.bottom; level <= -1; ++level)
        if (prof.level_connected(level)) ++count;
    return count >= min_connected;
}

bool in_V(const CylinderConfig& cfg, const PathWindow& w, int k, int j, double delta) {
    if (delta < 0.0 || delta >= 1.0) throw ArgumentError("in_V: delta must be in [0, 1)");
    if (k < 1 || k > w.depth()) throw ArgumentError("in_V: k outside window depth");
    if (j < 1 || j > k) throw ArgumentError("in_V: j must be in [1, k]");
    const auto prof = cross_sections(cfg, w);
    int count = 0;
    for (int level = -k; level <= -k + j - 1; ++level)
        if (prof.level_connected(level)) ++count;
    return count > delta * j;
}

bool in_V_k(const CylinderConfig& cfg, const PathWindow& w, int k, double delta) {
    if (delta < 0.0 || delta >= 1.0) throw ArgumentError("in_V_k: delta must be in [0, 1)");
    if (k < 0 || k > w.depth()) throw ArgumentError("in_V_k: k outside window depth");
    if (k == 0) return true;
    const auto prof = cross_sections(cfg, w);
    for (int j = std::max(1, (k + 1) / 2); j <= k; ++j) {
        int count = 0;
        for (int level = -k; level <= -k + j - 1; ++level)
            if (prof.level_connected(level)) ++count;
        if (!(count > delta * j)) return false;
    }
    return true;
}

bool in_W(const Segment& s, int j) {
    for (const auto& z : s.sites)
        if (z.level <= j) return false;
    return true;
}

Segment sample_segment(const CylinderConfig& cfg, const Site& from, std::mt19937_64& g) {
    Segment s;
    s.target_level = from.level + 1;
    s.sites.push_back(from);
    // Finite a.s. because of the upward bias; the cap only guards corrupted state.
    for (long step = 0; step < 100000000L; ++step) {
        const Site next = sample_step(cfg, s.sites.back(), g);
        s.sites.push_back(next);
        if (next.level == s.target_level) return s;
    }
    throw StructuralError("sample_segment: crossing did not finish");
}

namespace {

void enumerate_rec(const CylinderConfig& cfg, std::vector<Site>& stack, double prob,
                   int target, int t_max, std::size_t max_count,
                   std::vector<WeightedSegment>& out) {
    if (static_cast<int>(stack.size()) - 1 >= t_max) return;
    for (const auto& step : neighbors(cfg, stack.back())) {
        stack.push_back(step.to);
        if (step.to.level == target) {
            if (out.size() >= max_count)
                throw BudgetError("enumerate_segments: more than max_count segments");
            out.push_back({Segment{stack, target}, prob * step.prob});
        } else {
            enumerate_rec(cfg, stack, prob * step.prob, target, t_max, max_count, out);
        }
        stack.pop_back();
    }
}

}  // namespace

std::vector<WeightedSegment> enumerate_segments(const CylinderConfig& cfg,
                                                const Site& from, int t_max,
                                                std::size_t max_count) {
    if (t_max < 1) throw ArgumentError("enumerate_segments: t_max must be >= 1");
    std::vector<WeightedSegment> out;
    std::vector<Site> stack{from};
    enumerate_rec(cfg, stack, 1.0, from.level + 1, t_max, max_count, out);
    return out;
}

double segment_tail_mass(const CylinderConfig& cfg, int t_max) {
    if (t_max < 0) throw ArgumentError("segment_tail_mass: t_max must be >= 0");
    // Level displacement only: up p/d, down (1-p)/d, lateral stays put.
    const double up = cfg.p / cfg.d;
    const double dn = (1.0 - cfg.p) / cfg.d;
    const double stay = 1.0 - up - dn;
    // alive[i] = mass at displacement -i that has never reached +1.
    std::vector<double> alive(t_max + 2, 0.0);
    alive[0] = 1.0;
    for (int t = 0; t < t_max; ++t) {
        std::vector<double> next(alive.size(), 0.0);
        for (std::size_t i = 0; i < alive.size(); ++i) {
            if (alive[i] == 0.0) continue;
            next[i] += stay * alive[i];
            if (i + 1 < next.size()) next[i + 1] += dn * alive[i];
            if (i > 0) next[i - 1] += up * alive[i];
            // i == 0 moving up crosses into +1 and leaves the alive mass.
        }
        alive.swap(next);
    }
    double total = 0.0;
    for (double v : alive) total += v;
    return total;
}

std::string format_window(const CylinderConfig& cfg, const PathWindow& w) {
    validate_window(cfg, w);
    std::ostringstream os;
    os << "window 1\n";
    os << "depth " << w.depth() << "\n";
    os << "completion "
       << (w.completion == Completion::StraightLine ? "straight" : "absorb") << "\n";
    for (const auto& seg : w.segments) {
        os << "segment " << seg.target_level << "\n";
        for (const auto& z : seg.sites) {
            os << z.level;
            for (int c : torus_unpack(cfg, z.torus)) os << " " << c;
            os << "\n";
        }
    }
    os << "end\n";
    return os.str();
}

PathWindow parse_window(const CylinderConfig& cfg, const std::string& text) {
    std::istringstream is(text);
    std::string word;
    int version = 0;
    if (!(is >> word >> version) || word != "window" || version != 1)
        throw ArgumentError("parse_window: missing 'window 1' header");
    int depth = 0;
    if (!(is >> word >> depth) || word != "depth" || depth < 1)
        throw ArgumentError("parse_window: bad depth line");
    std::string comp;
    if (!(is >> word >> comp) || word != "completion" || (comp != "straight" && comp != "absorb"))
        throw ArgumentError("parse_window: bad completion line");

    std::vector<Segment> segments;
    std::vector<Site> sites;
    int target = 0;
    bool open = false;
    const auto flush = [&]() {
        if (!open) return;
        Segment s;
        s.target_level = target;
        s.sites = std::move(sites);
        sites.clear();
        segments.push_back(std::move(s));
        open = false;
    };
    while (is >> word) {
        if (word == "segment") {
            flush();
            if (!(is >> target)) throw ArgumentError("parse_window: bad segment header");
            open = true;
        } else if (word == "end") {
            flush();
            if (static_cast<int>(segments.size()) != depth)
                throw ArgumentError("parse_window: depth does not match segment count");
            return make_window(cfg, std::move(segments),
                               comp == "straight" ? Completion::StraightLine
                                                  : Completion::Absorb);
        } else {
            if (!open) throw ArgumentError("parse_window: site outside a segment");
            Site z;
            z.level = std::stoi(word);
            std::vector<int> coords(cfg.d - 1);
            for (int i = 0; i < cfg.d - 1; ++i)
                if (!(is >> coords[i])) throw ArgumentError("parse_window: truncated site");
            z.torus = torus_pack(cfg, coords);
            sites.push_back(z);
        }
    }
    throw ArgumentError("parse_window: missing end marker");
}

Segment shift_segment(const CylinderConfig& cfg, const Segment& s, int dlevel,
                      int dtorus) {
    Segment out;
    out.target_level = s.target_level + dlevel;
    out.sites.reserve(s.sites.size());
    for (const auto& z : s.sites)
        out.sites.push_back(Site{z.level + dlevel, torus_add(cfg, z.torus, dtorus)});
    return out;
}

Segment place_shape(const CylinderConfig& cfg, const Segment& shape, const Site& from) {
    if (shape.sites.empty()) throw ArgumentError("place_shape: empty shape");
    return shift_segment(cfg, shape, from.level - shape.start().level,
                         torus_add(cfg, from.torus, torus_neg(cfg, shape.start().torus)));
}

PathWindow restrict_window(const CylinderConfig& cfg, const PathWindow& w, int k) {
    validate_window(cfg, w);
    if (k < 1 || k > w.depth())
        throw ArgumentError("restrict_window: k must be in [1, depth]");
    std::vector<Segment> kept(w.segments.end() - k, w.segments.end());
    return canonicalize(cfg, make_window(cfg, std::move(kept), Completion::StraightLine));
}

std::string window_key(const CylinderConfig& cfg, const PathWindow& w) {
    const PathWindow c = canonicalize(cfg, w);
    std::ostringstream os;
    os << (c.completion == Completion::StraightLine ? 's' : 'a');
    for (const auto& seg : c.segments) {
        os << '|';
        for (const auto& z : seg.sites) os << z.level << ',' << z.torus << ';';
    }
    return os.str();
}

}
