#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "billiard/errors.hpp"
#include "billiard/geometry.hpp"
#include "billiard/map.hpp"

namespace billiard {

/// A C^1 observable on the phase space, with sup-norm and Lipschitz metadata
/// for error budgets.
struct Observable {
    std::string name;
    std::function<double(const PhasePoint&)> f;
    double sup_norm = 0.0;
    double lipschitz = 0.0;

    double operator()(const PhasePoint& x) const { return f(x); }
};

inline std::vector<std::string> builtin_observable_names() {
    return {"const", "sin_phi", "cos_r", "cos2_phi", "harmonic(m,n)"};
}

/// Built-in observables: const, sin_phi, cos_r = cos(2 pi r / |dD|),
/// cos2_phi, and harmonic(m,n) = cos(2 pi m r / |dD|) cos^n(phi).
inline Observable make_observable(const Table& table, const std::string& spec) {
    double P = table.total_perimeter;
    if (spec == "const")
        return {spec, [](const PhasePoint&) { return 1.0; }, 1.0, 0.0};
    if (spec == "sin_phi")
        return {spec, [](const PhasePoint& x) { return std::sin(x.phi); }, 1.0, 1.0};
    if (spec == "cos_r") {
        double w = 2.0 * pi / P;
        return {spec, [w](const PhasePoint& x) { return std::cos(w * x.r); }, 1.0, w};
    }
    if (spec == "cos2_phi")
        return {spec, [](const PhasePoint& x) {
                    double c = std::cos(x.phi);
                    return c * c;
                },
                1.0, 1.0};
    int m = 0, n = 0;
    if (std::sscanf(spec.c_str(), "harmonic(%d,%d)", &m, &n) == 2) {
        double w = 2.0 * pi * m / P;
        return {spec,
                [w, n](const PhasePoint& x) {
                    return std::cos(w * x.r) * std::pow(std::cos(x.phi), n);
                },
                1.0, std::hypot(w, static_cast<double>(n))};
    }
    std::string names;
    for (const auto& s : builtin_observable_names()) names += " " + s;
    throw ConfigError("unknown observable '" + spec + "'; built-ins:" + names);
}

}  // namespace billiard
