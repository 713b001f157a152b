#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "billiard/geometry.hpp"
#include "billiard/hole.hpp"

namespace billiard {

/// Tolerance on cos(phi) below which a collision counts as grazing.
inline constexpr double grazing_tol = 1e-12;

/// Collision coordinates: arc-length along the boundary and the angle of the
/// post-collisional velocity with the inward normal (positive toward the
/// positive tangent direction).
struct PhasePoint {
    double r = 0.0;
    double phi = 0.0;
};

struct CollisionStep {
    PhasePoint image;
    double tau = 0.0;
    double grazing_margin = 0.0;  // pi/2 - |phi_1|
};

/// Differential of the collision map. Entries are (-1/cos phi_1) * (A B; C D)
/// with A = tau*kappa + cos phi, B = tau, C = tau*kappa*kappa_1 +
/// kappa*cos phi_1 + kappa_1*cos phi, D = tau*kappa_1 + cos phi_1.
struct Jacobian2x2 {
    double m[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    double tau = 0.0, kappa = 0.0, kappa1 = 0.0, cos_phi = 0.0, cos_phi1 = 0.0;

    /// det DF = cos phi / cos phi_1. Evaluated in extended precision from the
    /// step scalars; assembling it from the rounded double entries would lose
    /// several digits to cancellation near grazing.
    double determinant() const {
        long double A = (long double)tau * kappa + (long double)cos_phi;
        long double B = tau;
        long double C = (long double)tau * kappa * kappa1 + (long double)kappa * cos_phi1 +
                        (long double)kappa1 * cos_phi;
        long double D = (long double)tau * kappa1 + (long double)cos_phi1;
        long double c1 = cos_phi1;
        return static_cast<double>((A * D - B * C) / (c1 * c1));
    }
};

enum class ConeKind { LargeUnstable, SmallUnstable, LargeStable, SmallStable };

/// Homogeneity strip classification: index 0 for the central strip, k >= k0
/// near grazing, with the boundary and singular cases flagged.
struct HomogeneityIndex {
    int index = 0;
    bool on_boundary = false;  // |phi| falls on some strip boundary
    bool singular = false;     // |phi| = pi/2
};

/// Velocity vector of the phase point at the given boundary frame.
inline Vec2 direction_of(const BoundaryFrame& f, double phi) {
    return std::cos(phi) * f.inward_normal + std::sin(phi) * f.unit_tangent;
}

/// Nearest forward collision of the ray (position, direction) with the table,
/// by unfolding over lattice translates.
inline RayHit next_collision(const Table& table, const Vec2& position, const Vec2& direction,
                             double s_max = 0.0) {
    if (s_max <= 0.0) s_max = table.candidate_reach();
    for (const auto& sc : table.scatterers) {
        for (int kx = -1; kx <= 1; ++kx) {
            for (int ky = -1; ky <= 1; ++ky) {
                Vec2 o = position - Vec2{sc.center.x + kx, sc.center.y + ky};
                double d = o.norm() - sc.radius;
                if (d < -1e-12)
                    throw PreconditionError("next_collision: start position inside a scatterer");
                if (d < 1e-12 && direction.dot(o) < -1e-12)
                    throw PreconditionError("next_collision: direction points into the host scatterer");
            }
        }
    }
    auto hit = ray_cast(table, position, direction, s_max);
    if (!hit)
        throw NoCollision("next_collision: no hit within s_max=" + std::to_string(s_max) +
                          " (table bug or horizon violation)");
    return *hit;
}

/// One application of the collision map F with specular reflection.
inline CollisionStep billiard_map(const Table& table, const PhasePoint& x) {
    double cphi = std::cos(x.phi);
    if (!(cphi > grazing_tol))
        throw SingularInput("billiard_map: grazing input, cos(phi)=" + std::to_string(cphi));

    BoundaryFrame f = table.frame(x.r);
    Vec2 v = direction_of(f, x.phi);
    auto hit = ray_cast(table, f.position, v, table.candidate_reach());
    if (!hit)
        throw NoCollision("billiard_map: no collision within reach " +
                          std::to_string(table.candidate_reach()));

    const Scatterer& sc = table.scatterers[hit->scatterer];
    Vec2 c1 = {sc.center.x + hit->kx, sc.center.y + hit->ky};
    Vec2 u1 = hit->point - c1;
    double inv = 1.0 / u1.norm();
    u1 = inv * u1;                 // inward normal at the image
    Vec2 t1 = {-u1.y, u1.x};       // tangent, counterclockwise
    double cos1 = -v.dot(u1);      // reflected velocity dotted with the normal
    double sin1 = v.dot(t1);
    double theta1 = std::atan2(u1.y, u1.x);

    CollisionStep step;
    step.image.r = table.arc_of_angle(hit->scatterer, theta1);
    step.image.phi = std::atan2(sin1, cos1);
    step.tau = hit->s;
    step.grazing_margin = 0.5 * pi - std::abs(step.image.phi);
    return step;
}

/// F^{-1} through the time-reversal conjugation I(r, phi) = (r, -phi).
inline PhasePoint inverse_map(const Table& table, const PhasePoint& x) {
    CollisionStep step = billiard_map(table, {x.r, -x.phi});
    return {step.image.r, -step.image.phi};
}

/// Closed-form differential of F at x, from the tau/kappa/angle data of the step.
inline Jacobian2x2 differential(const Table& table, const PhasePoint& x) {
    CollisionStep step = billiard_map(table, x);
    double cos1 = std::cos(step.image.phi);
    if (std::abs(cos1) < 1e-9)
        throw SingularInput("differential: image too close to grazing");

    Jacobian2x2 J;
    J.tau = step.tau;
    J.kappa = table.frame(x.r).curvature;
    J.kappa1 = table.frame(step.image.r).curvature;
    J.cos_phi = std::cos(x.phi);
    J.cos_phi1 = cos1;
    double A = J.tau * J.kappa + J.cos_phi;
    double B = J.tau;
    double C = J.tau * J.kappa * J.kappa1 + J.kappa * J.cos_phi1 + J.kappa1 * J.cos_phi;
    double D = J.tau * J.kappa1 + J.cos_phi1;
    double s = -1.0 / cos1;
    J.m[0][0] = s * A;
    J.m[0][1] = s * B;
    J.m[1][0] = s * C;
    J.m[1][1] = s * D;
    return J;
}

enum class StopReason { Completed, EnteredHole, Grazing };

struct Trajectory {
    std::vector<PhasePoint> points;  // x_0 .. x_m
    std::vector<double> taus;        // free paths of the executed steps
    StopReason reason = StopReason::Completed;
};

/// Iterate F up to n steps, stopping early when the orbit enters the hole
/// (checked before mapping, step 0 included) or reaches a grazing collision.
inline Trajectory iterate(const Table& table, const PhasePoint& x, int n,
                          const Hole* hole = nullptr) {
    if (n < 0) throw PreconditionError("iterate: n must be >= 0");
    Trajectory traj;
    traj.points.push_back(x);
    PhasePoint cur = x;
    for (int k = 0; k < n; ++k) {
        if (hole && hole->contains(cur.r)) {
            traj.reason = StopReason::EnteredHole;
            return traj;
        }
        CollisionStep step;
        try {
            step = billiard_map(table, cur);
        } catch (const SingularInput&) {
            traj.reason = StopReason::Grazing;
            return traj;
        }
        cur = step.image;
        traj.points.push_back(cur);
        traj.taus.push_back(step.tau);
    }
    if (hole && hole->contains(cur.r)) traj.reason = StopReason::EnteredHole;
    return traj;
}

namespace detail {

// Slope comparisons via cross products, sign-normalized so that v and -v agree.
// large unstable: kappa <= dphi/dr <= infinity
// small unstable: kappa <= dphi/dr <= kappa + cos(phi)/tau_prev
inline bool in_unstable_cone(double vr, double vphi, double kappa, double upper,
                             bool has_upper, double slack) {
    if (vphi < 0.0 || (vphi == 0.0 && vr < 0.0)) {
        vr = -vr;
        vphi = -vphi;
    }
    if (vr < 0.0 && vphi <= 0.0) return false;
    // dphi/dr >= kappa  <=>  vphi - kappa*vr >= 0 (for vr >= 0); vr < 0 with vphi > 0 fails
    if (vr < -slack * vphi) return false;
    if (vphi - kappa * vr < -slack * std::abs(vr)) return false;
    if (has_upper) {
        if (vr <= 0.0) return slack > 0.0 && std::abs(vr) <= slack * vphi;
        if (vphi - upper * vr > slack * vr) return false;
    }
    return true;
}

}  // namespace detail

/// Small-cone upper slope at a point reached through a step of free path
/// tau_prev: kappa + cos(phi)/tau_prev.
inline double small_cone_upper(double kappa, double cos_phi, double tau_prev) {
    return kappa + cos_phi / tau_prev;
}

/// Cone membership of the tangent vector v = (dr, dphi) at x. The small cones
/// need the free path of the adjacent step, recovered through the inverse
/// (unstable) or forward (stable) map.
inline bool cone_membership(const Table& table, const PhasePoint& x, const Vec2& v, ConeKind kind,
                            double slack = 0.0) {
    if (v.x == 0.0 && v.y == 0.0) throw PreconditionError("cone_membership: zero vector");
    double kappa = table.frame(x.r).curvature;
    switch (kind) {
        case ConeKind::LargeUnstable:
            return detail::in_unstable_cone(v.x, v.y, kappa, 0.0, false, slack);
        case ConeKind::LargeStable:
            return detail::in_unstable_cone(v.x, -v.y, kappa, 0.0, false, slack);
        case ConeKind::SmallUnstable: {
            PhasePoint prev = inverse_map(table, x);
            double tau_prev = billiard_map(table, prev).tau;
            double upper = small_cone_upper(kappa, std::cos(x.phi), tau_prev);
            return detail::in_unstable_cone(v.x, v.y, kappa, upper, true, slack);
        }
        case ConeKind::SmallStable: {
            double tau = billiard_map(table, x).tau;
            double upper = small_cone_upper(kappa, std::cos(x.phi), tau);
            return detail::in_unstable_cone(v.x, -v.y, kappa, upper, true, slack);
        }
    }
    return false;
}

/// Homogeneity strip of a phase point: H_0 away from grazing, H_k with
/// k^{-2} > pi/2 - |phi| > (k+1)^{-2} otherwise.
inline HomogeneityIndex classify_point(const PhasePoint& x, int k0) {
    if (k0 < 2) throw PreconditionError("classify_point: k0 must be >= 2");
    HomogeneityIndex h;
    double margin = 0.5 * pi - std::abs(x.phi);
    if (margin <= 0.0) {
        h.index = std::numeric_limits<int>::max();
        h.singular = true;
        return h;
    }
    double k0m = 1.0 / (static_cast<double>(k0) * k0);
    if (margin > k0m) {
        h.index = 0;
        return h;
    }
    if (margin == k0m) {
        h.index = 0;
        h.on_boundary = true;
        return h;
    }
    double kreal = 1.0 / std::sqrt(margin);
    int k = static_cast<int>(std::floor(kreal));
    double km = 1.0 / (static_cast<double>(k) * k);
    if (margin == km) {
        h.index = k;
        h.on_boundary = true;
        return h;
    }
    if (margin > km) k -= 1;  // floor rounding at the boundary
    h.index = std::max(k, k0);
    return h;
}

}  // namespace billiard
