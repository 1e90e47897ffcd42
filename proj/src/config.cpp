#include "cylwalk/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cylwalk/errors.hpp"
#include "cylwalk/stats.hpp"

namespace cylwalk {

namespace {

using nlohmann::json;

template <typename T>
void opt(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ArgumentError("config: top level must be an object");

    ExperimentConfig c;
    if (j.contains("cylinder")) {
        const json& cj = j.at("cylinder");
        opt(cj, "d", c.cyl.d);
        opt(cj, "L", c.cyl.L);
        opt(cj, "p", c.cyl.p);
    }
    opt(j, "seed", c.seed);
    opt(j, "workers", c.workers);
    opt(j, "delta", c.delta);
    opt(j, "lambda", c.lambda);
    opt(j, "lambda_grid", c.lambda_grid);
    if (j.contains("solve")) {
        const json& sj = j.at("solve");
        opt(sj, "tail_margin", c.solve.tail_margin);
        opt(sj, "tol", c.solve.tol);
    }
    if (j.contains("direct")) {
        const json& dj = j.at("direct");
        opt(dj, "n_min", c.direct.n_min);
        opt(dj, "n_max", c.direct.n_max);
        opt(dj, "replicas", c.direct.replicas);
        opt(dj, "batches", c.direct.batches);
        opt(dj, "depth", c.direct_depth);
        opt(dj, "obstacles", c.direct_obstacles);
    }
    if (j.contains("resample")) {
        const json& rj = j.at("resample");
        opt(rj, "particles", c.resample.particles);
        opt(rj, "steps", c.resample.steps);
        opt(rj, "burn_in", c.resample.burn_in);
        opt(rj, "ess_frac", c.resample.ess_frac);
        opt(rj, "max_depth", c.resample.max_depth);
        opt(rj, "batches", c.resample.batches);
        opt(rj, "snapshot_every", c.resample.snapshot_every);
        opt(rj, "snapshot_k", c.resample.snapshot_k);
    }
    if (j.contains("audit")) {
        const json& aj = j.at("audit");
        opt(aj, "depth", c.audit.depth);
        opt(aj, "t_max", c.audit.t_max);
        opt(aj, "n_total", c.audit_n_total);
    }
    if (j.contains("spectrum")) {
        const json& sj = j.at("spectrum");
        opt(sj, "t_max", c.spectrum.t_max);
        opt(sj, "memory", c.spectrum_memory);
        opt(sj, "max_states", c.spectrum.max_states);
    }
    if (j.contains("chains")) {
        const json& hj = j.at("chains");
        opt(hj, "steps", c.chains.steps);
        opt(hj, "traces", c.chain_traces);
        opt(hj, "k_memory", c.chains.k_memory);
    }
    if (j.contains("couple")) {
        const json& pj = j.at("couple");
        opt(pj, "start_depth", c.couple_start_depth);
        opt(pj, "traces", c.couple_traces);
    }
    c.sync_shared();
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

std::string ExperimentConfig::to_json_text() const {
    json j;
    j["cylinder"] = {{"d", cyl.d}, {"L", cyl.L}, {"p", cyl.p}};
    j["seed"] = seed;
    j["workers"] = workers;
    j["delta"] = delta;
    j["lambda"] = lambda;
    j["lambda_grid"] = lambda_grid;
    j["solve"] = {{"tail_margin", solve.tail_margin}, {"tol", solve.tol}};
    j["direct"] = {{"n_min", direct.n_min},   {"n_max", direct.n_max},
                   {"replicas", direct.replicas}, {"batches", direct.batches},
                   {"depth", direct_depth},   {"obstacles", direct_obstacles}};
    j["resample"] = {{"particles", resample.particles},
                     {"steps", resample.steps},
                     {"burn_in", resample.burn_in},
                     {"ess_frac", resample.ess_frac},
                     {"max_depth", resample.max_depth},
                     {"batches", resample.batches},
                     {"snapshot_every", resample.snapshot_every},
                     {"snapshot_k", resample.snapshot_k}};
    j["audit"] = {{"depth", audit.depth}, {"t_max", audit.t_max}, {"n_total", audit_n_total}};
    j["spectrum"] = {{"t_max", spectrum.t_max},
                     {"memory", spectrum_memory},
                     {"max_states", spectrum.max_states}};
    j["chains"] = {{"steps", chains.steps},
                   {"traces", chain_traces},
                   {"k_memory", chains.k_memory}};
    j["couple"] = {{"start_depth", couple_start_depth}, {"traces", couple_traces}};
    return j.dump(2);
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(to_json_text()); }

void ExperimentConfig::sync_shared() {
    direct.seed = seed;
    direct.workers = workers;
    direct.solve = solve;
    resample.seed = seed;
    resample.workers = workers;
    resample.solve = solve;
    audit.solve = solve;
    spectrum.solve = solve;
    chains.seed = seed;
    chains.solve = solve;
    chains.delta = delta;
}

void ExperimentConfig::validate() const {
    cyl.validate();
    if (workers < 1 || workers > 4096) throw ArgumentError("config: workers out of range");
    if (!(delta > 0.0) || !(delta < 1.0)) throw ArgumentError("config: delta must be in (0,1)");
    if (lambda < 0.0) throw ArgumentError("config: lambda must be >= 0");
    for (double l : lambda_grid)
        if (l < 0.0) throw ArgumentError("config: lambda_grid entries must be >= 0");
    if (lambda_grid.empty()) throw ArgumentError("config: lambda_grid must be nonempty");
    if (solve.tail_margin < 4 || solve.tail_margin > 4096)
        throw ArgumentError("config: tail_margin out of range");
    if (!(solve.tol > 0.0) || solve.tol > 1e-6)
        throw ArgumentError("config: solve tolerance out of range");
    if (direct.n_min < 1 || direct.n_max <= direct.n_min)
        throw ArgumentError("config: direct n range invalid");
    if (direct.replicas < 20 || direct.batches < 2)
        throw ArgumentError("config: direct replicas/batches too small");
    if (direct_depth < 1 || direct_obstacles < 1)
        throw ArgumentError("config: direct depth/obstacles invalid");
    if (resample.particles < 2 || resample.steps < 2)
        throw ArgumentError("config: resample particles/steps too small");
    if (resample.burn_in < 0 || resample.burn_in >= resample.steps)
        throw ArgumentError("config: resample burn_in out of range");
    if (!(resample.ess_frac > 0.0) || resample.ess_frac > 1.0)
        throw ArgumentError("config: resample ess_frac out of range");
    if (resample.max_depth < 1) throw ArgumentError("config: resample max_depth invalid");
    if (audit.depth < 1 || audit.t_max < 1 || audit_n_total < 2)
        throw ArgumentError("config: audit settings invalid");
    if (spectrum.t_max < 1 || spectrum_memory < 1 || spectrum.max_states < 2)
        throw ArgumentError("config: spectrum settings invalid");
    if (chains.steps < 1 || chain_traces < 1)
        throw ArgumentError("config: chain settings invalid");
    if (couple_start_depth < 1 || couple_traces < 1)
        throw ArgumentError("config: couple settings invalid");
}

}
