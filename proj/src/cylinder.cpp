#include "cylwalk/cylinder.hpp"

#include <cmath>
#include <string>

#include "cylwalk/errors.hpp"
#include "cylwalk/rng.hpp"

namespace cylwalk {

int CylinderConfig::cross_size() const {
    int n = 1;
    for (int i = 1; i < d; ++i) n *= L;
    return n;
}

void CylinderConfig::validate() const {
    if (d < 2)
        throw ArgumentError("cylinder: d must be >= 2 (d = " + std::to_string(d) +
                            " has no torus cross-section)");
    if (L < 2)
        throw ArgumentError("cylinder: L must be >= 2");
    if (!(p > 0.5) || !(p < 1.0))
        throw ArgumentError("cylinder: p must lie in (1/2, 1)");
}

int torus_pack(const CylinderConfig& cfg, const std::vector<int>& coords) {
    if (static_cast<int>(coords.size()) != cfg.d - 1)
        throw ArgumentError("torus_pack: expected " + std::to_string(cfg.d - 1) +
                            " coordinates");
    int idx = 0;
    for (int i = cfg.d - 2; i >= 0; --i) {
        int c = coords[i] % cfg.L;
        if (c < 0) c += cfg.L;
        idx = idx * cfg.L + c;
    }
    return idx;
}

std::vector<int> torus_unpack(const CylinderConfig& cfg, int torus) {
    std::vector<int> coords(cfg.d - 1);
    for (int i = 0; i < cfg.d - 1; ++i) {
        coords[i] = torus % cfg.L;
        torus /= cfg.L;
    }
    return coords;
}

int torus_add(const CylinderConfig& cfg, int a, int b) {
    int idx = 0;
    int mult = 1;
    for (int i = 0; i < cfg.d - 1; ++i) {
        int ca = a % cfg.L, cb = b % cfg.L;
        idx += ((ca + cb) % cfg.L) * mult;
        a /= cfg.L;
        b /= cfg.L;
        mult *= cfg.L;
    }
    return idx;
}

int torus_neg(const CylinderConfig& cfg, int a) {
    int idx = 0;
    int mult = 1;
    for (int i = 0; i < cfg.d - 1; ++i) {
        int ca = a % cfg.L;
        idx += ((cfg.L - ca) % cfg.L) * mult;
        a /= cfg.L;
        mult *= cfg.L;
    }
    return idx;
}

std::vector<Step> neighbors(const CylinderConfig& cfg, const Site& z) {
    std::vector<Step> out;
    out.reserve(2 * cfg.d);
    out.push_back({Site{z.level + 1, z.torus}, cfg.p / cfg.d});
    out.push_back({Site{z.level - 1, z.torus}, (1.0 - cfg.p) / cfg.d});
    const double lateral = 1.0 / (2.0 * cfg.d);
    int mult = 1;
    for (int i = 0; i < cfg.d - 1; ++i) {
        int c = (z.torus / mult) % cfg.L;
        int up = z.torus + ((c + 1) % cfg.L - c) * mult;
        int dn = z.torus + ((c - 1 + cfg.L) % cfg.L - c) * mult;
        if (up == dn) {
            // L = 2: both lateral moves of this coordinate coincide.
            out.push_back({Site{z.level, up}, 2.0 * lateral});
        } else {
            out.push_back({Site{z.level, up}, lateral});
            out.push_back({Site{z.level, dn}, lateral});
        }
        mult *= cfg.L;
    }
    return out;
}

Site sample_step(const CylinderConfig& cfg, const Site& z, std::mt19937_64& g) {
    const double u = rng::uniform(g);
    double acc = 0.0;
    const auto steps = neighbors(cfg, z);
    for (const auto& s : steps) {
        acc += s.prob;
        if (u < acc) return s.to;
    }
    return steps.back().to;  // u landed in the rounding slack at 1.0
}

double first_passage_prob(const CylinderConfig& cfg, int n) {
    cfg.validate();
    if (n < 1) throw ArgumentError("first_passage_prob: n must be >= 1");
    const double r = (1.0 - cfg.p) / cfg.p;  // psi(x) = r^x
    // (p/d) * (psi(0) - psi(-1)) / (psi(n-1) - psi(-1))
    const double num = 1.0 - 1.0 / r;
    const double den = std::pow(r, n - 1) - 1.0 / r;
    return (cfg.p / cfg.d) * (num / den);
}

double first_passage_limit(const CylinderConfig& cfg) {
    cfg.validate();
    return (2.0 * cfg.p - 1.0) / cfg.d;
}

}
