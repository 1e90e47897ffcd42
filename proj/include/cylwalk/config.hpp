#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cylwalk/coupling.hpp"
#include "cylwalk/cylinder.hpp"
#include "cylwalk/exponent.hpp"

namespace cylwalk {

// Run-wide settings for the command-line driver. Loaded from JSON with
// defaults for missing keys; the canonical dump (sorted keys) is hashed so
// outputs can be traced back to their exact configuration.
struct ExperimentConfig {
    CylinderConfig cyl;
    std::uint64_t seed = 1;
    int workers = 1;
    double delta = 0.25;
    SolveOptions solve;

    double lambda = 1.0;
    std::vector<double> lambda_grid = {0.0, 0.25, 0.5, 1.0, 1.5, 2.0};

    DirectOptions direct;
    int direct_depth = 16;
    int direct_obstacles = 1;

    ResampleOptions resample;

    AuditOptions audit;
    int audit_n_total = 6;

    SpectrumOptions spectrum;
    int spectrum_memory = 3;

    CoupledChainOptions chains;
    long chain_traces = 1000;

    int couple_start_depth = 8;  // levels below 0 where paired walks begin
    long couple_traces = 20000;

    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
    std::string to_json_text() const;  // canonical, sorted keys
    std::uint64_t hash() const;        // FNV-1a of the canonical dump
    void validate() const;

    // Copy seed/workers/solve into the nested option blocks.
    void sync_shared();
};

}
