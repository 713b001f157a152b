#pragma once

#include <cmath>
#include <string>

#include "billiard/errors.hpp"
#include "billiard/geometry.hpp"

namespace billiard {

/// Full vertical strip of boundary arc-length with mu0-mass exactly t:
/// [r* - t|dD|/2, r* + t|dD|/2] x [-pi/2, pi/2].
struct Hole {
    double r_star = 0.0;
    double t = 0.0;
    double arc_halfwidth = 0.0;
    double lo = 0.0;  // arc interval endpoints; contained in one scatterer segment
    double hi = 0.0;

    /// Closed-interval membership. An empty hole (t = 0) contains nothing,
    /// so the open dynamics coincides with the closed one.
    bool contains(double r) const { return t > 0.0 && r >= lo && r <= hi; }
};

inline Hole make_hole(const Table& table, double r_star, double t, double t_max = 0.1) {
    if (t < 0.0 || t > t_max)
        throw PreconditionError("make_hole: t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(t_max) + "]");
    Hole h;
    h.r_star = wrap(r_star, table.total_perimeter);
    h.t = t;
    h.arc_halfwidth = 0.5 * t * table.total_perimeter;
    h.lo = h.r_star - h.arc_halfwidth;
    h.hi = h.r_star + h.arc_halfwidth;
    if (t > 0.0) {
        int i = table.locate(h.r_star);
        double seg_lo = table.arc_start(i);
        double seg_hi = table.cumulative_arclength[i];
        if (h.lo < seg_lo || h.hi > seg_hi)
            throw HoleSpansScatterers("make_hole: hole [" + std::to_string(h.lo) + ", " +
                                      std::to_string(h.hi) + "] crosses the boundary of scatterer " +
                                      std::to_string(i));
    }
    return h;
}

}  // namespace billiard
