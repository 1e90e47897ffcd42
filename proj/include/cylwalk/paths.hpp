#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cylwalk/cylinder.hpp"

namespace cylwalk {

// One level-crossing piece of a walk: starts on level i-1, ends at its first
// visit to level i, every interior site strictly below level i. Dips below
// the start level are allowed and kept.
struct Segment {
    std::vector<Site> sites;  // consecutive lattice neighbours
    int target_level = 0;     // the level i the segment crosses into

    const Site& start() const { return sites.front(); }
    const Site& end() const { return sites.back(); }
    int step_count() const { return static_cast<int>(sites.size()) - 1; }
};

// Throws ArgumentError when the site list is not a valid crossing piece.
void validate_segment(const CylinderConfig& cfg, const Segment& s);
Segment make_segment(const CylinderConfig& cfg, std::vector<Site> sites);

// What the path looks like below the kept window. StraightLine pretends the
// history ran straight down from the window anchor; Absorb keeps no history
// and instead treats the level just below the window as killing, so solvers
// must not extend their slab past the window bottom.
enum class Completion { StraightLine, Absorb };

// The last `depth` segments of a half-infinite path, top endpoint pinned to
// level 0. Canonical form also pins the endpoint torus coordinate to 0.
struct PathWindow {
    std::vector<Segment> segments;  // target levels -depth+1 .. 0, chained
    Completion completion = Completion::StraightLine;

    int depth() const { return static_cast<int>(segments.size()); }
    const Site& endpoint() const { return segments.back().end(); }
    const Site& anchor() const { return segments.front().start(); }
    int floor_level() const;  // lowest level any kept site touches
};

void validate_window(const CylinderConfig& cfg, const PathWindow& w);
PathWindow make_window(const CylinderConfig& cfg, std::vector<Segment> segments,
                       Completion completion);

// Straight vertical window of the given depth at a fixed torus coordinate.
PathWindow straight_window(const CylinderConfig& cfg, int depth,
                           Completion completion = Completion::StraightLine,
                           int torus = 0);

// Torus-translate so the endpoint has torus coordinate 0.
PathWindow canonicalize(const CylinderConfig& cfg, const PathWindow& w);
PathWindow translate_torus(const CylinderConfig& cfg, const PathWindow& w, int offset);

// Append a crossing segment (target level 1, anchored at w's endpoint),
// relabel levels so the new endpoint sits at 0, canonicalize, and truncate
// to max_depth segments (0 keeps everything).
PathWindow concat(const CylinderConfig& cfg, const PathWindow& w, const Segment& s,
                  int max_depth = 0);

// Equality of the last k segments up to one common torus translation.
// k = 0 is trivially true; k above either depth throws ArgumentError.
bool agrees_last_k(const CylinderConfig& cfg, const PathWindow& a,
                   const PathWindow& b, int k);

// Obstacle sites of the window with level >= low. StraightLine extends the
// anchor coordinate straight down; Absorb refuses low below the window
// bottom (StructuralError) since no history exists there.
std::vector<Site> obstacle_sites(const CylinderConfig& cfg, const PathWindow& w,
                                 int low);

// Free-space profile of the window. D is the connected component of the
// complement that reaches the window from below (through the completion
// tail for StraightLine, from the bottom row for Absorb). cells[j] lists the
// torus indices of D on level bottom+j; connected[j] says whether that slice
// is nonempty and laterally connected.
struct CrossSectionProfile {
    int bottom = 0;  // reporting starts at this level (= -depth)
    std::vector<std::vector<int>> cells;
    std::vector<std::uint8_t> connected;
    bool reaches_top = false;  // D touches level 0

    bool level_connected(int level) const;  // J_level, bottom <= level <= 0
};

CrossSectionProfile cross_sections(const CylinderConfig& cfg, const PathWindow& w);

// Finite-window surrogate for "nice": the complement component from below
// must reach level 0 and at least min_connected of the levels -depth..-1
// must have a connected cross-section.
bool is_nice(const CylinderConfig& cfg, const PathWindow& w, int min_connected);

// Connected cross-section density tests over the last k levels: in_V checks
// the j lowest of them (levels -k .. -k+j-1) carry more than delta*j
// connected slices; in_V_k requires that for every integer j in [k/2, k].
bool in_V(const CylinderConfig& cfg, const PathWindow& w, int k, int j, double delta);
bool in_V_k(const CylinderConfig& cfg, const PathWindow& w, int k, double delta);

// Segment stays strictly above level j.
bool in_W(const Segment& s, int j);

// Walk from `from` until it first crosses one level up; the returned
// segment is exact (no length cap).
Segment sample_segment(const CylinderConfig& cfg, const Site& from, std::mt19937_64& g);

// Crossing shapes are translation classes: shift a segment rigidly, or
// anchor one so its start lands on `from`.
Segment shift_segment(const CylinderConfig& cfg, const Segment& s, int dlevel,
                      int dtorus);
Segment place_shape(const CylinderConfig& cfg, const Segment& shape, const Site& from);

struct WeightedSegment {
    Segment seg;
    double prob = 0.0;  // product of step probabilities
};

// All crossing segments from `from` of at most t_max steps with their exact
// walk probabilities. Throws BudgetError past max_count entries.
std::vector<WeightedSegment> enumerate_segments(const CylinderConfig& cfg,
                                                const Site& from, int t_max,
                                                std::size_t max_count = 2000000);

// Exact probability that a crossing takes more than t_max steps (the mass
// enumerate_segments leaves out; lateral moves do not change levels, so a
// one-dimensional level recursion is exact).
double segment_tail_mass(const CylinderConfig& cfg, int t_max);

// Line-oriented text round trip for windows.
std::string format_window(const CylinderConfig& cfg, const PathWindow& w);
PathWindow parse_window(const CylinderConfig& cfg, const std::string& text);

// Compact canonical key (shape + completion), usable as a hash-map key for
// window classes.
std::string window_key(const CylinderConfig& cfg, const PathWindow& w);

// Canonical window made of the last k segments only (1 <= k <= depth),
// completion forced to StraightLine; the truncated-memory class of w.
PathWindow restrict_window(const CylinderConfig& cfg, const PathWindow& w, int k);

}
