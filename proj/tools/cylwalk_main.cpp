#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cylwalk/config.hpp"
#include "cylwalk/coupling.hpp"
#include "cylwalk/errors.hpp"
#include "cylwalk/exponent.hpp"
#include "cylwalk/harmonic.hpp"
#include "cylwalk/paths.hpp"
#include "cylwalk/rng.hpp"
#include "cylwalk/version.hpp"
#include "parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cylwalk;

namespace {

std::string hash_hex(const ExperimentConfig& c) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << c.hash();
    return os.str();
}

std::string stamp(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "# cylwalk " << kVersion << " config=" << hash_hex(c) << " seed=" << c.seed;
    return os.str();
}

json base_report(const ExperimentConfig& c) {
    json j;
    j["version"] = kVersion;
    j["config_hash"] = hash_hex(c);
    j["seed"] = c.seed;
    return j;
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw StructuralError("cannot write " + path.string());
    out << content;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

PathWindow load_window(const ExperimentConfig& c, const std::string& window_path,
                       int fallback_depth) {
    if (window_path.empty()) return straight_window(c.cyl, fallback_depth);
    std::ifstream in(window_path);
    if (!in) throw ArgumentError("cannot open window file " + window_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_window(c.cyl, buf.str());
}

// Start window pair for the coupled chains: a straight column against one
// whose newest crossing detours. The agreement counter starts at 0 and the
// obstacle sets differ wherever the width allows a lateral kink; on the
// two-site torus any lateral site would block the cylinder, so the detour
// is a dip there and the obstacle sets coincide (decoupling never fires).
std::pair<PathWindow, PathWindow> chain_starts(const CylinderConfig& cfg, int depth) {
    const PathWindow a = straight_window(cfg, depth);
    std::vector<Segment> segs = a.segments;
    Segment detour;
    detour.target_level = 0;
    if (cfg.L >= 3)
        detour.sites = {Site{-1, 0}, Site{-1, 1}, Site{0, 1}};
    else
        detour.sites = {Site{-1, 0}, Site{-2, 0}, Site{-1, 0}, Site{0, 0}};
    segs.back() = detour;
    PathWindow b = make_window(cfg, std::move(segs), Completion::StraightLine);
    return {a, canonicalize(cfg, b)};
}

json estimate_to_json(const ExponentEstimate& est) {
    json j;
    j["xi"] = est.xi;
    j["se"] = est.se;
    j["n_min"] = est.n_min;
    j["n_max"] = est.n_max;
    j["method"] = est.method;
    j["log_means"] = est.log_means;
    return j;
}

void cmd_direct(const ExperimentConfig& c, const fs::path& out) {
    const auto ws = spread_windows(c.cyl, c.direct_obstacles, c.direct_depth);
    const ExponentEstimate est = estimate_direct(c.cyl, ws, c.lambda, c.direct);
    json j = base_report(c);
    j["lambda"] = c.lambda;
    j["estimate"] = estimate_to_json(est);
    write_json(out / "exponent_direct.json", j);

    std::ostringstream csv;
    csv.precision(17);
    csv << stamp(c) << "\n" << "n,log_mean\n";
    for (std::size_t i = 0; i < est.log_means.size(); ++i)
        csv << (i + 1) << "," << est.log_means[i] << "\n";
    write_file(out / "exponent_direct.csv", csv.str());
    std::cout << "xi(" << c.lambda << ") = " << est.xi << " +- " << est.se
              << "  [direct, n " << est.n_min << ".." << est.n_max << "]\n";
}

void cmd_resample(const ExperimentConfig& c, const fs::path& out,
                  const std::string& resume_path, const std::string& checkpoint_path) {
    WeightedEnsemble ens;
    std::vector<EnsembleSnapshot> snapshots;
    if (resume_path.empty()) {
        ResampleResult res = estimate_resample(
            c.cyl, straight_window(c.cyl, c.resample.max_depth), c.lambda, c.resample);
        ens = std::move(res.ensemble);
        snapshots = std::move(res.snapshots);
    } else {
        std::ifstream in(resume_path);
        if (!in) throw ArgumentError("cannot open ensemble file " + resume_path);
        std::ostringstream buf;
        buf << in.rdbuf();
        ens = parse_ensemble(c.cyl, buf.str());
        for (int t = 0; t < c.resample.steps; ++t) {
            resample_step(c.cyl, ens, c.lambda, c.resample);
            if (c.resample.snapshot_every > 0 && ens.step % c.resample.snapshot_every == 0)
                snapshots.push_back(take_snapshot(c.cyl, ens, c.resample.snapshot_k));
        }
    }
    const ExponentEstimate est =
        ensemble_estimate(ens, std::min(c.resample.burn_in, ens.step - 1), c.resample.batches);
    const InvariantReport inv = invariant_check(c.cyl, ens, c.lambda, c.resample);

    json j = base_report(c);
    j["lambda"] = c.lambda;
    j["estimate"] = estimate_to_json(est);
    j["resamples"] = ens.resamples;
    j["ess"] = ens.ess();
    j["invariant"] = {{"pi_mean_z", inv.pi_mean_z}, {"exp_neg_xi", inv.exp_neg_xi},
                      {"diff", inv.diff},           {"tol", inv.tol},
                      {"mc_se", inv.mc_se},         {"ok", inv.ok}};
    if (snapshots.size() >= 2) {
        json tv = json::array();
        for (std::size_t i = 0; i + 1 < snapshots.size(); ++i)
            tv.push_back({{"step", snapshots[i + 1].step},
                          {"tv_prev", snapshot_tv(snapshots[i], snapshots[i + 1])},
                          {"tv_final", snapshot_tv(snapshots[i + 1], snapshots.back())}});
        j["snapshot_tv"] = tv;
    }
    write_json(out / "exponent_resample.json", j);

    std::ostringstream csv;
    csv.precision(17);
    csv << stamp(c) << "\n" << "step,log_norm\n";
    for (std::size_t i = 0; i < ens.step_log_norm.size(); ++i)
        csv << (i + 1) << "," << ens.step_log_norm[i] << "\n";
    write_file(out / "exponent_resample.csv", csv.str());
    if (!checkpoint_path.empty()) write_file(checkpoint_path, format_ensemble(c.cyl, ens));
    std::cout << "xi(" << c.lambda << ") = " << est.xi << " +- " << est.se
              << "  [resample, steps " << ens.step << ", resamples " << ens.resamples
              << "]\n";
}

void cmd_spectrum(const ExperimentConfig& c, const fs::path& out) {
    std::ostringstream csv;
    csv.precision(17);
    csv << stamp(c) << "\n"
        << "memory,states,shapes,rho,xi,residual,iters,tail_mass\n";
    json list = json::array();
    for (int m = 1; m <= c.spectrum_memory; ++m) {
        const SpectrumResult sr = transfer_eigen(c.cyl, c.lambda, m, c.spectrum);
        csv << m << "," << sr.states << "," << sr.shapes << "," << sr.rho << "," << sr.xi
            << "," << sr.residual << "," << sr.iters << "," << sr.tail_mass << "\n";
        list.push_back({{"memory", m},
                        {"states", sr.states},
                        {"rho", sr.rho},
                        {"xi", sr.xi},
                        {"residual", sr.residual},
                        {"iters", sr.iters}});
        std::cout << "memory " << m << ": rho = " << sr.rho << ", xi = " << sr.xi << " ("
                  << sr.states << " states)\n";
    }
    json j = base_report(c);
    j["lambda"] = c.lambda;
    j["levels"] = list;
    write_json(out / "spectrum.json", j);
    write_file(out / "spectrum.csv", csv.str());
}

void cmd_curve(const ExperimentConfig& c, const fs::path& out, const std::string& method) {
    const CurveMethod m =
        method == "resample" ? CurveMethod::Resample : CurveMethod::Direct;
    const XiCurve curve = xi_curve(c.cyl, c.lambda_grid, m, c.direct, c.resample);
    std::ostringstream csv;
    csv.precision(17);
    csv << stamp(c) << "\n" << "lambda,xi,se\n";
    for (const auto& pt : curve.points)
        csv << pt.lambda << "," << pt.xi << "," << pt.se << "\n";
    write_file(out / "xi_curve.csv", csv.str());

    json j = base_report(c);
    j["method"] = method;
    j["monotone"] = curve.monotone;
    j["max_cubic_resid"] = curve.max_cubic_resid;
    j["intercept"] = curve.intercept;
    j["intercept_se"] = curve.intercept_se;
    json pts = json::array();
    for (const auto& pt : curve.points)
        pts.push_back({{"lambda", pt.lambda}, {"xi", pt.xi}, {"se", pt.se}});
    j["points"] = pts;
    write_json(out / "xi_curve.json", j);
    std::cout << "curve over " << curve.points.size() << " points, monotone="
              << (curve.monotone ? "yes" : "no") << ", intercept " << curve.intercept
              << " +- " << curve.intercept_se << "\n";
}

void cmd_audit(const ExperimentConfig& c, const fs::path& out) {
    const QTable table = subadditivity_audit(c.cyl, c.lambda, c.audit_n_total, c.audit);
    std::ostringstream csv;
    csv.precision(17);
    csv << stamp(c) << "\n" << "n,q\n";
    for (std::size_t n = 0; n < table.q.size(); ++n) csv << n << "," << table.q[n] << "\n";
    write_file(out / "audit_q.csv", csv.str());

    json j = base_report(c);
    j["lambda"] = c.lambda;
    j["t_max"] = table.t_max;
    j["cap_mass"] = table.cap_mass;
    j["violations"] = table.violations;
    j["worst_excess"] = table.worst_excess;
    j["solves"] = table.solves;
    j["q"] = table.q;
    write_json(out / "audit.json", j);
    std::cout << "q table to n = " << table.q.size() - 1 << ", violations "
              << table.violations << ", worst excess " << table.worst_excess << "\n";
}

void cmd_couple(const ExperimentConfig& c, const fs::path& out) {
    const int m = c.couple_start_depth;
    const PathWindow w = straight_window(c.cyl, m);
    const HProcessCoupler coupler(c.cyl, w, -m, 0, c.solve);
    const auto& live = coupler.live_starts();
    if (live.size() < 2)
        throw StructuralError("couple: need at least two live start columns");

    const long T = c.couple_traces;
    std::vector<std::uint8_t> fail(static_cast<std::size_t>(T), 0);
    detail::parallel_for(T, c.workers, [&](long r) {
        auto g = rng::stream(c.seed, 0x6870ULL, static_cast<std::uint64_t>(r));
        const auto a = live[rng::below(g, live.size())];
        auto b = a;
        while (b == a) b = live[rng::below(g, live.size())];
        const CoupleResult res = coupler.run(a, b, g);
        fail[static_cast<std::size_t>(r)] = res.coupled ? 0 : 1;
    });
    long failures = 0;
    for (auto f : fail) failures += f;
    const double rate = static_cast<double>(failures) / static_cast<double>(T);
    const double se = std::sqrt(std::max(rate * (1.0 - rate), 1.0 / static_cast<double>(T)) /
                                static_cast<double>(T));
    const double a_const = harnack_constant(c.cyl);
    const double bound =
        std::pow((1.0 - a_const * a_const) / 2.0, coupler.connected_levels());

    json j = base_report(c);
    j["traces"] = T;
    j["start_depth"] = m;
    j["failures"] = failures;
    j["failure_rate"] = rate;
    j["failure_se"] = se;
    j["harnack_a"] = a_const;
    j["connected_levels"] = coupler.connected_levels();
    j["bound"] = bound;
    j["ok"] = rate <= bound + 3.0 * se;
    write_json(out / "couple.json", j);
    std::cout << "coupling failure rate " << rate << " (bound " << bound << ", "
              << coupler.connected_levels() << " connected levels)\n";
}

void cmd_chains(const ExperimentConfig& c, const fs::path& out) {
    CoupledChainOptions opts = c.chains;
    if (opts.k_memory > 0) {
        SpectrumOptions so = c.spectrum;
        const SpectrumResult sr = transfer_eigen(c.cyl, c.lambda, opts.k_memory, so);
        opts.k_values.clear();
        opts.k_max = 0.0;
        for (std::size_t s = 0; s < sr.state_keys.size(); ++s) {
            opts.k_values[sr.state_keys[s]] = sr.eigenfunction[s];
            opts.k_max = std::max(opts.k_max, sr.eigenfunction[s]);
        }
    }
    const auto [a0, b0] = chain_starts(c.cyl, 8);
    const long T = c.chain_traces;
    std::vector<SigmaTrace> traces(static_cast<std::size_t>(T));
    detail::parallel_for(T, c.workers, [&](long r) {
        traces[static_cast<std::size_t>(r)] = couple_weighted_chains(
            c.cyl, a0, b0, c.lambda, opts, static_cast<std::uint64_t>(r));
    });

    const TailReport rep = tail_bound_check(traces);
    json j = base_report(c);
    j["lambda"] = c.lambda;
    j["traces"] = T;
    j["steps"] = opts.steps;
    j["tail"] = {{"rate", rep.tail.rate},
                 {"r2", rep.tail.r2},
                 {"points", rep.tail.points}};
    j["decouple"] = {{"rate", rep.decouple.rate},
                     {"intercept", rep.decouple.intercept},
                     {"r2", rep.decouple.r2},
                     {"points", rep.decouple.points}};
    j["b_hat"] = rep.b_hat;
    j["k0"] = rep.k0;
    j["tail_prob"] = rep.tail_prob;

    try {
        const double alpha = calibrate_alpha(rep);
        j["alpha"] = alpha;
        j["escape_prob"] = dominating_escape_prob(alpha);
        const int horizon = opts.steps - 2;
        const auto dom = dominating_survival_exact(alpha, std::max(1, horizon));
        // Empirical survival of the agreement count, offset by two steps.
        int kmax = 0;
        for (const auto& tr : traces)
            for (int s : tr.sigma) kmax = std::max(kmax, s);
        long violations = 0;
        long checks = 0;
        for (int n = 1; n <= horizon; ++n)
            for (int k = 1; k <= std::min(kmax, n); ++k) {
                long hits = 0;
                for (const auto& tr : traces)
                    if (tr.sigma[static_cast<std::size_t>(n + 2)] >= k) ++hits;
                const double p = static_cast<double>(hits) / static_cast<double>(T);
                const double pse =
                    std::sqrt(std::max(p * (1.0 - p), 1.0 / static_cast<double>(T)) /
                              static_cast<double>(T));
                ++checks;
                if (dom[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] >
                    p + 3.0 * pse)
                    ++violations;
            }
        j["domination_checks"] = checks;
        j["domination_violations"] = violations;
    } catch (const StructuralError& e) {
        j["alpha_error"] = e.what();
    }
    write_json(out / "chains.json", j);
    std::cout << "chains: decouple rate " << rep.decouple.rate << " (r2 "
              << rep.decouple.r2 << "), tail rate " << rep.tail.rate << " (r2 "
              << rep.tail.r2 << ")\n";
}

void cmd_hmeasure(const ExperimentConfig& c, const fs::path& out,
                  const std::string& window_path, int from_level, int to_level) {
    const PathWindow w = load_window(c, window_path, 8);
    if (from_level >= to_level) throw ArgumentError("hmeasure: need from < to");
    const HittingMeasure mu = hitting_measure(c.cyl, w, from_level, to_level, c.solve);
    std::ostringstream csv;
    csv.precision(17);
    csv << stamp(c) << "\n" << "torus,mass\n";
    for (std::size_t y = 0; y < mu.mass.size(); ++y) csv << y << "," << mu.mass[y] << "\n";
    write_file(out / "hmeasure.csv", csv.str());
    std::cout << "arrival law on level " << to_level << " from uniform level "
              << from_level << " start, total " << mu.total() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"biased random walks on discrete half-infinite cylinders"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", window_path, method = "direct";
    std::string resume_path, checkpoint_path;
    std::uint64_t seed = 0;
    int workers = 0;
    double lambda = -1.0;
    int from_level = -8, to_level = 0;

    app.add_option("--config", config_path, "JSON configuration file");
    app.add_option("--seed", seed, "master seed override");
    app.add_option("--workers", workers, "worker thread override");
    app.add_option("--lambda", lambda, "tilt parameter override");
    app.add_option("--out", out_dir, "output directory");

    auto* sc_direct =
        app.add_subcommand("exponent-direct", "decay rate from independent extensions");
    auto* sc_res = app.add_subcommand("exponent-resample",
                                      "decay rate from a weighted particle population");
    sc_res->add_option("--resume", resume_path, "continue from a saved population");
    sc_res->add_option("--checkpoint", checkpoint_path, "write the final population here");
    auto* sc_spec =
        app.add_subcommand("spectrum", "truncated transfer-operator eigenvalues");
    auto* sc_curve = app.add_subcommand("curve", "xi over the configured lambda grid");
    sc_curve->add_option("--method", method, "direct or resample")
        ->check(CLI::IsMember({"direct", "resample"}));
    auto* sc_audit =
        app.add_subcommand("audit", "exhaustive submultiplicativity audit of q_n");
    auto* sc_couple =
        app.add_subcommand("couple", "maximal coupling of paired conditioned walks");
    auto* sc_chains =
        app.add_subcommand("chains", "coupled weighted chains and the agreement tail");
    auto* sc_hm = app.add_subcommand("hmeasure", "first-arrival law around a window");
    sc_hm->add_option("--window", window_path, "window file (defaults to straight)");
    sc_hm->add_option("--from", from_level, "start level");
    sc_hm->add_option("--to", to_level, "arrival level");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{}
                                                   : ExperimentConfig::from_file(config_path);
        if (app.count("--seed") > 0) cfg.seed = seed;
        if (app.count("--workers") > 0) cfg.workers = workers;
        if (app.count("--lambda") > 0) cfg.lambda = lambda;
        cfg.sync_shared();
        cfg.validate();
        const fs::path out(out_dir);
        fs::create_directories(out);
        write_file(out / "config.json", cfg.to_json_text() + "\n");

        if (sc_direct->parsed()) cmd_direct(cfg, out);
        else if (sc_res->parsed()) cmd_resample(cfg, out, resume_path, checkpoint_path);
        else if (sc_spec->parsed()) cmd_spectrum(cfg, out);
        else if (sc_curve->parsed()) cmd_curve(cfg, out, method);
        else if (sc_audit->parsed()) cmd_audit(cfg, out);
        else if (sc_couple->parsed()) cmd_couple(cfg, out);
        else if (sc_chains->parsed()) cmd_chains(cfg, out);
        else if (sc_hm->parsed()) cmd_hmeasure(cfg, out, window_path, from_level, to_level);
        return 0;
    } catch (const ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
