#pragma once

#include <compare>
#include <cstdint>
#include <random>
#include <vector>

namespace cylwalk {

// Geometry and one-step kernel of the upward-biased nearest-neighbour walk
// on the half-infinite discrete cylinder Z x T_L^(d-1).
struct CylinderConfig {
    int d = 2;        // ambient dimension; the cross-section is a (d-1)-torus
    int L = 2;        // torus side, >= 2
    double p = 0.75;  // forward bias, in (1/2, 1)

    // Number of sites in one cross-section, L^(d-1).
    int cross_size() const;

    // Throws ArgumentError on d < 2, L < 2, or p outside (1/2, 1).
    void validate() const;
};

// A lattice site. Torus coordinates are packed into one index in
// [0, L^(d-1)), coordinate 0 least significant; level is the Z coordinate.
struct Site {
    int level = 0;
    int torus = 0;

    friend bool operator==(const Site&, const Site&) = default;
    friend std::strong_ordering operator<=>(const Site&, const Site&) = default;
};

int torus_pack(const CylinderConfig& cfg, const std::vector<int>& coords);
std::vector<int> torus_unpack(const CylinderConfig& cfg, int torus);
// Componentwise sum / negation mod L of packed indices.
int torus_add(const CylinderConfig& cfg, int a, int b);
int torus_neg(const CylinderConfig& cfg, int a);

struct Step {
    Site to;
    double prob = 0.0;
};

// Distinct-target transition list from z: forward p/d, backward (1-p)/d,
// each lateral unit move 1/(2d). For L = 2 the two lateral moves of a torus
// coordinate land on the same site and are merged into one entry of mass
// 1/d. Probabilities sum to 1 exactly.
std::vector<Step> neighbors(const CylinderConfig& cfg, const Site& z);

// One step of the walk from z using the kernel above.
Site sample_step(const CylinderConfig& cfg, const Site& z, std::mt19937_64& g);

// P{walk started on level 0 reaches level n before revisiting level 0},
// n >= 1. Closed form in psi(x) = ((1-p)/p)^x; decreasing in n with limit
// (2p-1)/d.
double first_passage_prob(const CylinderConfig& cfg, int n);

// Limit of first_passage_prob as n -> infinity, (2p-1)/d.
double first_passage_limit(const CylinderConfig& cfg);

}
