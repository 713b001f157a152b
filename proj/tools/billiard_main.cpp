// Command-line harness: experiment orchestration, deterministic seeding and
// result persistence. Subcommands: map-check, survival, response, family,
// compare. Exit codes: 0 pass, 1 check failure, 2 configuration error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "billiard/checks.hpp"
#include "billiard/config.hpp"
#include "billiard/io.hpp"
#include "billiard/open_system.hpp"
#include "billiard/response.hpp"
#include "billiard/standard_family.hpp"

using namespace billiard;
using nlohmann::json;

namespace {

struct RunContext {
    ExperimentConfig cfg;
    std::string out_dir = "out";
    std::string cfg_hash;
    std::vector<std::string> outputs;

    std::string path(const std::string& name) {
        outputs.push_back(name);
        return out_dir + "/" + name;
    }

    void write_manifest(const std::string& command) {
        json m;
        m["command"] = command;
        m["config_hash"] = cfg_hash;
        m["code_version"] = version_string;
        auto now = std::chrono::system_clock::now();
        m["timestamp_unix"] =
            std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
        m["outputs"] = outputs;
        m["config"] = cfg.to_json();
        write_json(out_dir + "/manifest.json", m);
    }
};

json check_to_json(const CheckResult& c) {
    return {{"name", c.name},
            {"pass", c.pass},
            {"worst", c.worst},
            {"threshold", c.threshold},
            {"n_checked", c.n_checked}};
}

int cmd_map_check(RunContext& ctx) {
    Table table = build_table(ctx.cfg.table);
    json out;
    out["config_hash"] = ctx.cfg_hash;

    HorizonReport hr = verify_table(table, ctx.cfg.verify_directions, ctx.cfg.verify_starts,
                                    ctx.cfg.verify_max_flight);
    out["horizon"] = {{"finite_horizon", hr.finite_horizon},
                      {"corridor_free", hr.corridor_free},
                      {"tau_min", hr.tau_min},
                      {"tau_max", hr.tau_max}};
    for (auto [p, q] : hr.corridors) out["horizon"]["corridors"].push_back({p, q});

    bool all = hr.finite_horizon && hr.corridor_free;
    std::vector<CheckResult> suite = {determinant_check(table), jacobian_fd_check(table),
                                      reversal_check(table), cone_invariance_check(table)};
    for (const auto& c : suite) {
        out["suites"].push_back(check_to_json(c));
        all = all && c.pass;
        std::printf("%-32s %s (worst %.3e, threshold %.1e, n=%zu)\n", c.name.c_str(),
                    c.pass ? "PASS" : "FAIL", c.worst, c.threshold, c.n_checked);
    }
    if (!hr.finite_horizon || !hr.corridor_free) {
        std::printf("horizon check FAIL:");
        if (!hr.finite_horizon)
            std::printf(" sampled flight exceeded %.3g at r=%.6f phi=%.6f;", hr.max_flight,
                        hr.witness_r, hr.witness_phi);
        for (auto [p, q] : hr.corridors) std::printf(" corridor (%d,%d)", p, q);
        std::printf("\n");
    } else {
        std::printf("%-32s PASS (tau in [%.4f, %.4f])\n", "horizon", hr.tau_min, hr.tau_max);
    }
    out["pass"] = all;
    write_json(ctx.path("map_check.json"), out);
    ctx.write_manifest("map-check");
    return all ? 0 : 1;
}

int cmd_survival(RunContext& ctx) {
    Table table = build_table(ctx.cfg.table);
    std::vector<Observable> obs;
    for (const auto& name : ctx.cfg.observables) obs.push_back(make_observable(table, name));

    json summary;
    summary["config_hash"] = ctx.cfg_hash;
    summary["r_star"] = ctx.cfg.r_star;
    summary["seed"] = ctx.cfg.seed;

    for (std::size_t ti = 0; ti < ctx.cfg.t_list.size(); ++ti) {
        double t = ctx.cfg.t_list[ti];
        Hole hole = make_hole(table, ctx.cfg.r_star, t, ctx.cfg.t_max);
        json entry = {{"t", t}};
        try {
            Ensemble e = sample_mu0(table, ctx.cfg.n_particles, mix64(ctx.cfg.seed + 17 * ti));
            SurvivalTrace trace =
                evolve_open(std::move(e), table, hole, ctx.cfg.n_steps, obs);

            std::vector<std::string> header = {"step", "survivors", "p_n"};
            for (const auto& o : obs) {
                header.push_back("mean_" + o.name);
                header.push_back("stderr_" + o.name);
            }
            char fname[64];
            std::snprintf(fname, sizeof fname, "survival_t%.4f.csv", t);
            CsvWriter csv(ctx.path(fname), header);
            for (std::size_t k = 0; k < trace.p.size(); ++k) {
                std::vector<double> row = {static_cast<double>(k),
                                           static_cast<double>(trace.survivors[k]), trace.p[k]};
                for (std::size_t j = 0; j < obs.size(); ++j) {
                    row.push_back(trace.means[j][k]);
                    row.push_back(trace.stderrs[j][k]);
                }
                csv.row(row);
            }

            if (t > 0.0) {
                EscapeRate er = escape_rate(trace);
                entry["escape_rate"] = er.rate;
                entry["escape_rate_ci"] = er.ci;
                DecayTable tele = telescoping_from_trace(trace, 0, t);
                entry["telescoping"] = {{"gamma", tele.gamma},
                                        {"r2", tele.r2},
                                        {"fitted_points", tele.fitted_points},
                                        {"delta0_over_t", tele.delta0_over_t}};
            } else {
                entry["escape_rate"] = 0.0;
            }
            for (std::size_t j = 0; j < obs.size(); ++j) {
                MuEstimate est = plateau_estimate(trace, j);
                entry["mu_t"][obs[j].name] = {{"value", est.value}, {"stderr", est.se}};
            }
            entry["grazing_kills"] = trace.grazing_kills;
            std::printf("t=%.4f: p_end=%.6f escape_rate=%s\n", t,
                        trace.p.back(), entry["escape_rate"].dump().c_str());
        } catch (const Extinction& e) {
            entry["error"] = std::string("extinction: ") + e.what();
            std::printf("t=%.4f: extinction\n", t);
        } catch (const NonStationary& e) {
            entry["error"] = std::string("nonstationary: ") + e.what();
        }
        summary["runs"].push_back(entry);
    }
    write_json(ctx.path("survival_summary.json"), summary);
    ctx.write_manifest("survival");
    return 0;
}

int cmd_response(RunContext& ctx) {
    Table table = build_table(ctx.cfg.table);
    SeriesOptions sopt;
    sopt.n_phi_nodes = ctx.cfg.line_nodes;
    sopt.K_max = ctx.cfg.K_max;
    sopt.mu0_r_nodes = ctx.cfg.n_r_nodes;
    sopt.mu0_phi_nodes = ctx.cfg.n_phi_nodes;
    McParams mc{ctx.cfg.n_particles, ctx.cfg.n_steps, ctx.cfg.seed};

    bool all = true;
    json out;
    out["config_hash"] = ctx.cfg_hash;
    for (const auto& name : ctx.cfg.observables) {
        Observable obs = make_observable(table, name);
        ResponseReport rep = response_verdict(table, ctx.cfg.r_star, obs, ctx.cfg.tail_tol,
                                              ctx.cfg.t_list, mc, sopt);

        CsvWriter csv(ctx.path("terms_" + name + ".csv"),
                      {"k", "mu0_part", "line_part", "term", "quad_error", "skipped_nodes"});
        for (const auto& t : rep.series.terms)
            csv.row({static_cast<double>(t.k), t.mu0_part, t.line_part, t.term, t.quad_error,
                     static_cast<double>(t.skipped_nodes)});

        json jr = {{"observable", name},
                   {"series_value", rep.series.value},
                   {"series_tail_bound", rep.series.tail_bound},
                   {"series_quad_error", rep.series.quad_error_total},
                   {"series_K", rep.series.K},
                   {"series_fitted_decay", rep.series.fitted_decay},
                   {"series_tail_certified", rep.series.tail_certified},
                   {"series_no_decay", rep.series.no_decay},
                   {"mu0", rep.fd.mu0},
                   {"richardson", rep.fd.richardson},
                   {"richardson_se", rep.fd.richardson_se},
                   {"fit_residual", rep.fd.fit_residual},
                   {"combined_error", rep.combined_error},
                   {"discrepancy", rep.discrepancy},
                   {"verdict", rep.pass ? "PASS" : "FAIL"}};
        for (const auto& s : rep.fd.slopes)
            jr["slopes"].push_back({{"t", s.t},
                                    {"mu_t", s.mu_t},
                                    {"mu_t_stderr", s.mu_t_se},
                                    {"slope", s.slope},
                                    {"slope_stderr", s.slope_se}});
        out["reports"].push_back(jr);
        all = all && rep.pass;
        std::printf("%s: series=%.6g fd=%.6g +- %.3g  |diff|=%.3g <= 3*%.3g : %s\n", name.c_str(),
                    rep.series.value, rep.fd.richardson, rep.fd.richardson_se, rep.discrepancy,
                    rep.combined_error, rep.pass ? "PASS" : "FAIL");
    }
    out["pass"] = all;
    write_json(ctx.path("response.json"), out);
    ctx.write_manifest("response");
    return all ? 0 : 1;
}

int cmd_family(RunContext& ctx) {
    Table table = build_table(ctx.cfg.table);
    Observable obs = make_observable(table, ctx.cfg.observables.front());
    json out;
    out["config_hash"] = ctx.cfg_hash;

    for (double r : ctx.cfg.family_r_lines) {
        StandardFamily g0 = vertical_line_family(table, r, ctx.cfg.family);
        char buf[64];
        std::snprintf(buf, sizeof buf, "family_r%.3f_snapshot.csv", r);
        CsvWriter snap(ctx.path(buf), {"pair", "weight", "r", "phi", "rho"});
        for (std::size_t j = 0; j < g0.pairs.size(); ++j) {
            const StandardPair& p = g0.pairs[j];
            for (std::size_t i = 0; i < p.n(); ++i)
                snap.row({static_cast<double>(j), p.weight, p.r[i], p.phi[i], p.rho[i]});
        }

        for (double t : ctx.cfg.family_t_list) {
            Hole hole = make_hole(table, ctx.cfg.r_star, t, ctx.cfg.t_max);
            std::snprintf(buf, sizeof buf, "family_r%.3f_t%.4f.csv", r, t);
            CsvWriter csv(ctx.path(buf),
                          {"generation", "pairs", "Z", "varpi_emp", "max_curvature",
                           "max_density_ratio", "surviving_fraction", "dropped_mass"});
            StandardFamily g = g0;
            for (int gen = 0; gen <= ctx.cfg.family_generations; ++gen) {
                RegularityReport rep = regularity_report(g);
                csv.row({static_cast<double>(gen), static_cast<double>(rep.n_pairs), rep.Z,
                         rep.varpi_emp, rep.max_curvature, rep.max_density_ratio,
                         g.surviving_fraction_last, g.dropped_mass_last});
                if (gen == ctx.cfg.family_generations) break;
                g = evolve_family(g, table, hole, FamilyMode::Leaky);
            }
            std::printf("family r=%.3f t=%.4f: %d generations, final Z=%.3f, pairs=%zu\n", r, t,
                        ctx.cfg.family_generations, boundary_Z(g), g.pairs.size());
        }
    }

    if (ctx.cfg.family_r_lines.size() >= 2) {
        for (double t : ctx.cfg.family_t_list) {
            Hole hole = make_hole(table, ctx.cfg.r_star, t, ctx.cfg.t_max);
            StandardFamily a = vertical_line_family(table, ctx.cfg.family_r_lines[0], ctx.cfg.family);
            StandardFamily b = vertical_line_family(table, ctx.cfg.family_r_lines[1], ctx.cfg.family);
            DecaySeries d = mixing_diagnostic(a, b, table, hole, ctx.cfg.mixing_n_max, obs);
            char buf[64];
            std::snprintf(buf, sizeof buf, "mixing_t%.4f.csv", t);
            CsvWriter csv(ctx.path(buf), {"n", "d_n"});
            for (std::size_t n = 0; n < d.d.size(); ++n)
                csv.row({static_cast<double>(n), d.d[n]});
            out["mixing"].push_back({{"t", t},
                                     {"gamma_emp", d.gamma_emp},
                                     {"r2", d.r2},
                                     {"fitted_points", d.fitted_points},
                                     {"noise_floor", d.noise_floor}});
            std::printf("mixing t=%.4f: gamma_emp=%.4f (R2=%.3f, %d points)\n", t, d.gamma_emp,
                        d.r2, d.fitted_points);
        }
    }
    write_json(ctx.path("family_summary.json"), out);
    ctx.write_manifest("family");
    return 0;
}

void collect_numbers(const json& j, const std::string& prefix,
                     std::vector<std::pair<std::string, double>>& out) {
    if (j.is_number()) {
        out.emplace_back(prefix, j.get<double>());
    } else if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            collect_numbers(it.value(), prefix + "/" + it.key(), out);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i)
            collect_numbers(j[i], prefix + "[" + std::to_string(i) + "]", out);
    }
}

int cmd_compare(const std::string& a_path, const std::string& b_path, double tol) {
    json a = read_json(a_path);
    json b = read_json(b_path);
    if (!a.contains("config_hash") || !b.contains("config_hash")) {
        std::fprintf(stderr, "compare: missing config_hash field\n");
        return 2;
    }
    if (a["config_hash"] != b["config_hash"]) {
        std::fprintf(stderr, "compare: refusing to compare outputs with different config hashes\n");
        return 2;
    }
    std::vector<std::pair<std::string, double>> na, nb;
    collect_numbers(a, "", na);
    collect_numbers(b, "", nb);
    if (na.size() != nb.size()) {
        std::fprintf(stderr, "compare: different numeric field sets\n");
        return 1;
    }
    int bad = 0;
    for (std::size_t i = 0; i < na.size(); ++i) {
        double d = std::abs(na[i].second - nb[i].second);
        double scale = std::max({std::abs(na[i].second), std::abs(nb[i].second), 1.0});
        if (na[i].first != nb[i].first || d > tol * scale) {
            std::printf("differs: %s  %.17g vs %.17g\n", na[i].first.c_str(), na[i].second,
                        nb[i].second);
            ++bad;
        }
    }
    std::printf("compare: %zu numeric fields, %d mismatches\n", na.size(), bad);
    return bad ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sinai billiard with a boundary hole: open-system response toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir = "out";
    int threads = 0;
    uint64_t seed_override = 0;
    bool has_seed = false;
    app.add_option("--config", config_path, "experiment configuration (JSON)");
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_option("--threads", threads, "worker threads (0 = hardware)");
    auto* seed_opt = app.add_option("--seed", seed_override, "override mc.seed");

    auto* c_map = app.add_subcommand("map-check", "map invariant suites + horizon verification");
    auto* c_sur = app.add_subcommand("survival", "open-system survival traces and escape rates");
    auto* c_res = app.add_subcommand("response", "two-sided linear-response comparison");
    auto* c_fam = app.add_subcommand("family", "standard-family evolution diagnostics");
    auto* c_cmp = app.add_subcommand("compare", "compare two JSON outputs (same config hash)");
    std::string cmp_a, cmp_b;
    double cmp_tol = 1e-12;
    c_cmp->add_option("a", cmp_a, "first JSON")->required();
    c_cmp->add_option("b", cmp_b, "second JSON")->required();
    c_cmp->add_option("--tol", cmp_tol, "relative tolerance")->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    has_seed = seed_opt->count() > 0;
    set_threads(threads);

    try {
        if (c_cmp->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_tol);

        RunContext ctx;
        if (!config_path.empty()) ctx.cfg = load_config(config_path);
        ctx.cfg.validate();
        if (has_seed) ctx.cfg.seed = seed_override;
        ctx.out_dir = out_dir;
        std::filesystem::create_directories(out_dir);
        ctx.cfg_hash = ctx.cfg.hash();
        std::printf("config %s -> %s/\n", ctx.cfg_hash.c_str(), out_dir.c_str());

        if (c_map->parsed()) return cmd_map_check(ctx);
        if (c_sur->parsed()) return cmd_survival(ctx);
        if (c_res->parsed()) return cmd_response(ctx);
        if (c_fam->parsed()) return cmd_family(ctx);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const OverlapError& e) {
        std::fprintf(stderr, "table error: %s\n", e.what());
        return 2;
    } catch (const HorizonViolation& e) {
        std::fprintf(stderr, "horizon violation: %s\n", e.what());
        return 1;
    } catch (const BilliardError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
