#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "billiard/errors.hpp"
#include "billiard/geometry.hpp"
#include "billiard/observable.hpp"
#include "billiard/standard_family.hpp"

namespace billiard {

inline constexpr const char* version_string = "0.1.0";

/// Experiment configuration with documented defaults. Every run embeds the
/// hash of the fully resolved configuration in its outputs.
struct ExperimentConfig {
    std::vector<Scatterer> table = {{{0.0, 0.0}, 0.38}, {{0.5, 0.5}, 0.17}};

    double r_star = 0.5;
    std::vector<double> t_list = {0.04, 0.02, 0.01};
    double t_max = 0.1;

    std::vector<std::string> observables = {"cos_r"};

    std::size_t n_particles = 1000000;
    int n_steps = 60;
    uint64_t seed = 20260801;

    int n_r_nodes = 256;      // mu0 tensor quadrature, arc direction
    int n_phi_nodes = 256;    // mu0 tensor quadrature, angle direction
    int line_nodes = 200000;  // vertical-line quadrature for the series terms

    double tail_tol = 1e-3;
    int K_max = 40;

    FamilyOptions family;
    std::vector<double> family_r_lines = {0.3, 1.1};
    std::vector<double> family_t_list = {0.0, 0.01};
    int family_generations = 30;
    int mixing_n_max = 24;

    int verify_directions = 1024;
    int verify_starts = 512;
    double verify_max_flight = 5.0;

    int telescoping_k_max = 30;

    void validate() const {
        if (table.empty()) throw ConfigError("config: table must have at least one scatterer");
        for (const auto& sc : table)
            if (!(sc.radius > 0.0)) throw ConfigError("config: scatterer radius must be > 0");
        if (t_list.empty()) throw ConfigError("config: hole.t_list must be non-empty");
        for (double t : t_list)
            if (t < 0.0 || t > t_max) throw ConfigError("config: hole size outside [0, t_max]");
        if (observables.empty()) throw ConfigError("config: observables must be non-empty");
        if (n_particles < 1) throw ConfigError("config: mc.n_particles must be >= 1");
        if (n_steps < 12) throw ConfigError("config: mc.n_steps must be >= 12");
        if (n_r_nodes < 16 || n_phi_nodes < 16 || line_nodes < 16)
            throw ConfigError("config: quadrature node counts must be >= 16");
        if (!(tail_tol >= 0.0)) throw ConfigError("config: series.tail_tol must be >= 0");
        if (K_max < 5) throw ConfigError("config: series.K_max must be >= 5");
        if (family.k0 < 2) throw ConfigError("config: family.k0 must be >= 2");
        if (family.k_max_strip < family.k0)
            throw ConfigError("config: family.k_max_strip must be >= family.k0");
        if (!(family.delta_star > 0.0)) throw ConfigError("config: family.delta_star must be > 0");
        if (verify_directions < 1 || verify_starts < 1)
            throw ConfigError("config: verify counts must be >= 1");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& sc : table)
            j["table"].push_back({{"center", {sc.center.x, sc.center.y}}, {"radius", sc.radius}});
        j["hole"] = {{"r_star", r_star}, {"t_list", t_list}, {"t_max", t_max}};
        j["observables"] = observables;
        j["mc"] = {{"n_particles", n_particles}, {"n_steps", n_steps}, {"seed", seed}};
        j["quadrature"] = {{"n_r_nodes", n_r_nodes},
                           {"n_phi_nodes", n_phi_nodes},
                           {"line_nodes", line_nodes}};
        j["series"] = {{"tail_tol", tail_tol}, {"K_max", K_max}};
        j["family"] = {{"delta_star", family.delta_star},
                       {"k0", family.k0},
                       {"k_max_strip", family.k_max_strip},
                       {"mass_floor", family.mass_floor},
                       {"max_pairs", family.max_pairs},
                       {"r_lines", family_r_lines},
                       {"t_list", family_t_list},
                       {"n_generations", family_generations},
                       {"mixing_n_max", mixing_n_max}};
        j["verify"] = {{"n_directions", verify_directions},
                       {"n_starts", verify_starts},
                       {"max_flight", verify_max_flight}};
        j["telescoping"] = {{"k_max", telescoping_k_max}};
        return j;
    }

    /// FNV-1a over the canonical (sorted-key) dump of the resolved config.
    std::string hash() const {
        std::string dump = to_json().dump();
        uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : dump) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

namespace config_detail {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace config_detail

/// Overlay a JSON document onto the defaults. Unknown keys are rejected to
/// catch typos.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    static const std::vector<std::string> known = {"table",  "hole",   "observables", "mc",
                                                   "quadrature", "series", "family",
                                                   "verify", "telescoping"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("config: unknown section '" + it.key() + "'");
    }
    if (j.contains("table")) {
        cfg.table.clear();
        for (const auto& e : j.at("table")) {
            Scatterer sc;
            sc.center.x = e.at("center").at(0).get<double>();
            sc.center.y = e.at("center").at(1).get<double>();
            sc.radius = e.at("radius").get<double>();
            if (e.contains("ref_angle")) sc.ref_angle = e.at("ref_angle").get<double>();
            cfg.table.push_back(sc);
        }
    }
    if (j.contains("hole")) {
        const auto& h = j.at("hole");
        config_detail::maybe(h, "r_star", cfg.r_star);
        config_detail::maybe(h, "t_list", cfg.t_list);
        config_detail::maybe(h, "t_max", cfg.t_max);
    }
    config_detail::maybe(j, "observables", cfg.observables);
    if (j.contains("mc")) {
        const auto& m = j.at("mc");
        config_detail::maybe(m, "n_particles", cfg.n_particles);
        config_detail::maybe(m, "n_steps", cfg.n_steps);
        config_detail::maybe(m, "seed", cfg.seed);
    }
    if (j.contains("quadrature")) {
        const auto& q = j.at("quadrature");
        config_detail::maybe(q, "n_r_nodes", cfg.n_r_nodes);
        config_detail::maybe(q, "n_phi_nodes", cfg.n_phi_nodes);
        config_detail::maybe(q, "line_nodes", cfg.line_nodes);
    }
    if (j.contains("series")) {
        const auto& s = j.at("series");
        config_detail::maybe(s, "tail_tol", cfg.tail_tol);
        config_detail::maybe(s, "K_max", cfg.K_max);
    }
    if (j.contains("family")) {
        const auto& f = j.at("family");
        config_detail::maybe(f, "delta_star", cfg.family.delta_star);
        config_detail::maybe(f, "k0", cfg.family.k0);
        config_detail::maybe(f, "k_max_strip", cfg.family.k_max_strip);
        config_detail::maybe(f, "mass_floor", cfg.family.mass_floor);
        config_detail::maybe(f, "max_pairs", cfg.family.max_pairs);
        config_detail::maybe(f, "r_lines", cfg.family_r_lines);
        config_detail::maybe(f, "t_list", cfg.family_t_list);
        config_detail::maybe(f, "n_generations", cfg.family_generations);
        config_detail::maybe(f, "mixing_n_max", cfg.mixing_n_max);
    }
    if (j.contains("verify")) {
        const auto& v = j.at("verify");
        config_detail::maybe(v, "n_directions", cfg.verify_directions);
        config_detail::maybe(v, "n_starts", cfg.verify_starts);
        config_detail::maybe(v, "max_flight", cfg.verify_max_flight);
    }
    if (j.contains("telescoping"))
        config_detail::maybe(j.at("telescoping"), "k_max", cfg.telescoping_k_max);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

}  // namespace billiard
