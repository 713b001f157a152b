#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "billiard/map.hpp"
#include "billiard/rng.hpp"

namespace billiard {

/// Map-level verification suites shared by the CLI map-check command and the
/// acceptance tests.
struct CheckResult {
    std::string name;
    bool pass = false;
    double worst = 0.0;
    double threshold = 0.0;
    std::size_t n_checked = 0;
};

namespace checks_detail {

inline PhasePoint sample_point(const Table& table, CounterRng& rng, double margin) {
    for (;;) {
        double r = rng.next_u01() * table.total_perimeter;
        double phi = std::asin(2.0 * rng.next_u01() - 1.0);
        if (0.5 * pi - std::abs(phi) > margin) return {r, phi};
    }
}

}  // namespace checks_detail

/// |det DF - cos phi / cos phi1| at random points with a grazing-margin floor.
inline CheckResult determinant_check(const Table& table, std::size_t n = 10000,
                                     double margin = 1e-3, double tol = 1e-9,
                                     uint64_t seed = 301) {
    CheckResult res{"determinant_identity", false, 0.0, tol, 0};
    CounterRng rng(seed, 0);
    while (res.n_checked < n) {
        PhasePoint x = checks_detail::sample_point(table, rng, margin);
        CollisionStep st = billiard_map(table, x);
        if (st.grazing_margin < margin) continue;
        Jacobian2x2 J = differential(table, x);
        double expect = std::cos(x.phi) / std::cos(st.image.phi);
        res.worst = std::max(res.worst, std::abs(J.determinant() - expect));
        ++res.n_checked;
    }
    res.pass = res.worst < tol;
    return res;
}

/// Entrywise relative error of DF against central finite differences.
inline CheckResult jacobian_fd_check(const Table& table, std::size_t n = 1000,
                                     double margin = 0.1, double h = 1e-6, double tol = 1e-5,
                                     uint64_t seed = 302) {
    CheckResult res{"jacobian_vs_finite_differences", false, 0.0, tol, 0};
    CounterRng rng(seed, 0);
    double P = table.total_perimeter;
    while (res.n_checked < n) {
        PhasePoint x = checks_detail::sample_point(table, rng, margin);
        CollisionStep st = billiard_map(table, x);
        if (st.grazing_margin < margin) continue;
        CollisionStep rp = billiard_map(table, {x.r + h, x.phi});
        CollisionStep rm = billiard_map(table, {x.r - h, x.phi});
        CollisionStep pp = billiard_map(table, {x.r, x.phi + h});
        CollisionStep pm = billiard_map(table, {x.r, x.phi - h});
        auto same_branch = [&](const CollisionStep& s) {
            return std::abs(wrap_signed(s.image.r - st.image.r, P)) < 0.05;
        };
        if (!same_branch(rp) || !same_branch(rm) || !same_branch(pp) || !same_branch(pm)) continue;
        double fd[2][2];
        fd[0][0] = wrap_signed(rp.image.r - rm.image.r, P) / (2 * h);
        fd[0][1] = wrap_signed(pp.image.r - pm.image.r, P) / (2 * h);
        fd[1][0] = (rp.image.phi - rm.image.phi) / (2 * h);
        fd[1][1] = (pp.image.phi - pm.image.phi) / (2 * h);
        Jacobian2x2 J = differential(table, x);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                res.worst = std::max(res.worst, std::abs(fd[a][b] - J.m[a][b]) / std::abs(J.m[a][b]));
        ++res.n_checked;
    }
    res.pass = res.worst < tol;
    return res;
}

/// Round-trip error of F composed with its inverse.
inline CheckResult reversal_check(const Table& table, std::size_t n = 10000, double tol = 1e-9,
                                  uint64_t seed = 303) {
    CheckResult res{"time_reversal_roundtrip", false, 0.0, tol, 0};
    CounterRng rng(seed, 0);
    double P = table.total_perimeter;
    while (res.n_checked < n) {
        PhasePoint x = checks_detail::sample_point(table, rng, 1e-3);
        CollisionStep st;
        try {
            st = billiard_map(table, x);
            if (st.grazing_margin < 1e-6) continue;
            PhasePoint back = inverse_map(table, st.image);
            res.worst = std::max(res.worst, std::abs(wrap_signed(back.r - x.r, P)));
            res.worst = std::max(res.worst, std::abs(back.phi - x.phi));
        } catch (const SingularInput&) {
            continue;
        }
        ++res.n_checked;
    }
    res.pass = res.worst < tol;
    return res;
}

/// DF maps random large-unstable-cone vectors into the small unstable cone
/// at the image, within the given slope slack.
inline CheckResult cone_invariance_check(const Table& table, std::size_t n = 10000,
                                         double slack = 1e-8, uint64_t seed = 304) {
    CheckResult res{"cone_invariance", false, 0.0, slack, 0};
    CounterRng rng(seed, 0);
    std::size_t failures = 0;
    while (res.n_checked < n) {
        PhasePoint x = checks_detail::sample_point(table, rng, 1e-3);
        CollisionStep st = billiard_map(table, x);
        if (st.grazing_margin < 1e-3) continue;
        Jacobian2x2 J = differential(table, x);
        double kappa = table.frame(x.r).curvature;
        double u = rng.next_u01();
        Vec2 v = u < 0.1 ? Vec2{0.0, 1.0} : Vec2{1.0, kappa + std::tan(0.5 * pi * rng.next_u01())};
        Vec2 w = {J.m[0][0] * v.x + J.m[0][1] * v.y, J.m[1][0] * v.x + J.m[1][1] * v.y};
        double kappa1 = table.frame(st.image.r).curvature;
        double upper = small_cone_upper(kappa1, std::cos(st.image.phi), st.tau);
        if (!detail::in_unstable_cone(w.x, w.y, kappa1, upper, true, slack)) ++failures;
        ++res.n_checked;
    }
    res.worst = static_cast<double>(failures);
    res.pass = failures == 0;
    return res;
}

}  // namespace billiard
