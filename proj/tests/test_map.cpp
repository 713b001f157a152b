#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "billiard/map.hpp"
#include "billiard/rng.hpp"
#include "helpers.hpp"

using namespace billiard;
using Catch::Approx;

namespace {

/// Extended-precision brute-force collision map: independent frame
/// computation and exhaustive lattice unfolding in long double, no pruning.
/// Written before the production map and kept as its oracle.
struct OracleResult {
    long double r1, phi1, tau;
};

OracleResult oracle_map(const Table& table, double r, double phi) {
    const long double PI = 3.14159265358979323846264338327950288L;
    int n = static_cast<int>(table.scatterers.size());

    // locate the scatterer by long-double partial perimeters
    std::vector<long double> cum(n);
    long double acc = 0.0L;
    for (int i = 0; i < n; ++i) {
        acc += 2.0L * PI * (long double)table.scatterers[i].radius;
        cum[i] = acc;
    }
    long double rr = std::fmod((long double)r, acc);
    if (rr < 0) rr += acc;
    int host = 0;
    while (host + 1 < n && rr >= cum[host]) ++host;
    long double base = host == 0 ? 0.0L : cum[host - 1];
    long double R = table.scatterers[host].radius;
    long double th = (rr - base) / R;
    long double cx = table.scatterers[host].center.x, cy = table.scatterers[host].center.y;
    long double px = cx + R * cosl(th), py = cy + R * sinl(th);
    long double nx = cosl(th), ny = sinl(th);
    long double tx = -sinl(th), ty = cosl(th);
    long double vx = cosl((long double)phi) * nx + sinl((long double)phi) * tx;
    long double vy = cosl((long double)phi) * ny + sinl((long double)phi) * ty;

    long double best = 1e30L;
    int bi = -1, bkx = 0, bky = 0;
    const int W = 8;
    for (int i = 0; i < n; ++i) {
        long double Ri = table.scatterers[i].radius;
        for (int kx = -W; kx <= W; ++kx) {
            for (int ky = -W; ky <= W; ++ky) {
                long double ox = px - (table.scatterers[i].center.x + kx);
                long double oy = py - (table.scatterers[i].center.y + ky);
                long double b = vx * ox + vy * oy;
                long double c = ox * ox + oy * oy - Ri * Ri;
                long double disc = b * b - c;
                if (disc < 0) continue;
                long double s = -b - sqrtl(disc);
                if (s > 1e-15L && s < best) {
                    best = s;
                    bi = i;
                    bkx = kx;
                    bky = ky;
                }
            }
        }
    }
    REQUIRE(bi >= 0);
    long double hx = px + best * vx, hy = py + best * vy;
    long double c1x = table.scatterers[bi].center.x + bkx, c1y = table.scatterers[bi].center.y + bky;
    long double ux = hx - c1x, uy = hy - c1y;
    long double un = sqrtl(ux * ux + uy * uy);
    ux /= un;
    uy /= un;
    long double t1x = -uy, t1y = ux;
    long double cos1 = -(vx * ux + vy * uy);
    long double sin1 = vx * t1x + vy * t1y;
    long double th1 = atan2l(uy, ux);
    long double local = fmodl(th1, 2.0L * PI);
    if (local < 0) local += 2.0L * PI;
    OracleResult res;
    res.r1 = (bi == 0 ? 0.0L : cum[bi - 1]) + (long double)table.scatterers[bi].radius * local;
    res.phi1 = atan2l(sin1, cos1);
    res.tau = best;
    return res;
}

PhasePoint sample_point(const Table& table, CounterRng& rng, double margin) {
    for (;;) {
        double r = rng.next_u01() * table.total_perimeter;
        double phi = std::asin(2.0 * rng.next_u01() - 1.0);
        if (0.5 * pi - std::abs(phi) > margin) return {r, phi};
    }
}

}  // namespace

TEST_CASE("radial shot between the aligned disks") {
    Table t = testutil::pinned_table();
    double s2 = 1.0 / std::sqrt(2.0);
    Vec2 start = {0.3 * s2, 0.3 * s2};  // 45-degree point of disk 1
    RayHit hit = next_collision(t, start, {s2, s2});
    REQUIRE(hit.s == Approx(std::sqrt(0.5) - 0.5).epsilon(1e-12));
    REQUIRE(hit.point.x == Approx(0.5 - 0.2 * s2).margin(1e-12));
    REQUIRE(hit.point.y == Approx(0.5 - 0.2 * s2).margin(1e-12));
    REQUIRE(hit.scatterer == 1);
}

TEST_CASE("near-tangent shot reaches the closed-form tangent length") {
    Table t = testutil::pinned_table();
    double s2 = 1.0 / std::sqrt(2.0);
    Vec2 p = {0.3 * s2, 0.3 * s2};
    Vec2 c2 = {0.5, 0.5};
    Vec2 u = c2 - p;
    double d = u.norm();
    u = (1.0 / d) * u;
    double tangent_len = std::sqrt(d * d - 0.2 * 0.2);
    double alpha = std::asin(0.2 / d) * (1.0 - 1e-6);  // rotated a hair into the disk
    double ca = std::cos(alpha), sa = std::sin(alpha);
    Vec2 v = {u.x * ca - u.y * sa, u.x * sa + u.y * ca};
    RayHit hit = next_collision(t, p, v);
    REQUIRE(hit.scatterer == 1);
    REQUIRE(hit.s == Approx(tangent_len).margin(1e-3));
    // grazing image
    Vec2 n1 = hit.point - c2;
    n1 = (1.0 / n1.norm()) * n1;
    REQUIRE(std::abs(v.dot(n1)) < 5e-3);
}

TEST_CASE("direction into the host scatterer is rejected") {
    Table t = testutil::pinned_table();
    REQUIRE_THROWS_AS(next_collision(t, {0.3, 0.0}, {-1.0, 0.0}), PreconditionError);
}

TEST_CASE("head-on bounce maps 45-degree point of disk 1 to 225-degree point of disk 2") {
    Table t = testutil::pinned_table();
    PhasePoint x = {0.3 * pi / 4.0, 0.0};
    CollisionStep st = billiard_map(t, x);
    REQUIRE(st.image.r == Approx(0.85 * pi).epsilon(1e-12));
    REQUIRE(st.image.phi == Approx(0.0).margin(1e-12));
    REQUIRE(st.tau == Approx(std::sqrt(0.5) - 0.5).epsilon(1e-12));
}

TEST_CASE("grazing start is singular") {
    Table t = testutil::pinned_table();
    REQUIRE_THROWS_AS(billiard_map(t, {0.1, 0.5 * pi}), SingularInput);
    REQUIRE_THROWS_AS(billiard_map(t, {0.1, -0.5 * pi}), SingularInput);
    REQUIRE_THROWS_AS(inverse_map(t, {0.1, 0.5 * pi}), SingularInput);
}

TEST_CASE("map matches the extended-precision oracle") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 1);
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
        PhasePoint x = sample_point(t, rng, 1e-3);
        OracleResult ref = oracle_map(t, x.r, x.phi);
        if (0.5 * pi - std::abs((double)ref.phi1) < 1e-6) continue;  // ill-conditioned branch edge
        CollisionStep st = billiard_map(t, x);
        double dr = wrap_signed(st.image.r - (double)ref.r1, t.total_perimeter);
        REQUIRE(std::abs(dr) < 1e-10);
        REQUIRE(std::abs(st.image.phi - (double)ref.phi1) < 1e-10);
        REQUIRE(st.tau == Approx((double)ref.tau).margin(1e-10));
        ++checked;
    }
    REQUIRE(checked > 9900);
}

TEST_CASE("time reversal: inverse_map undoes billiard_map") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 2);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        PhasePoint x = sample_point(t, rng, 1e-3);
        CollisionStep st = billiard_map(t, x);
        if (st.grazing_margin < 1e-4) continue;
        PhasePoint back = inverse_map(t, st.image);
        worst = std::max(worst, std::abs(wrap_signed(back.r - x.r, t.total_perimeter)));
        worst = std::max(worst, std::abs(back.phi - x.phi));
    }
    REQUIRE(worst < 1e-9);
}

TEST_CASE("determinant identity det DF = cos phi / cos phi1") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 3);
    for (int i = 0; i < 2000; ++i) {
        PhasePoint x = sample_point(t, rng, 1e-3);
        CollisionStep st = billiard_map(t, x);
        if (st.grazing_margin < 1e-3) continue;
        Jacobian2x2 J = differential(t, x);
        double expect = std::cos(x.phi) / std::cos(st.image.phi);
        REQUIRE(std::abs(J.determinant() - expect) < 1e-9);
    }
}

TEST_CASE("B entry equals -tau / cos phi1") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 4);
    for (int i = 0; i < 500; ++i) {
        PhasePoint x = sample_point(t, rng, 1e-2);
        CollisionStep st = billiard_map(t, x);
        if (st.grazing_margin < 1e-2) continue;
        Jacobian2x2 J = differential(t, x);
        REQUIRE(J.m[0][1] == Approx(-st.tau / std::cos(st.image.phi)).epsilon(1e-12));
        REQUIRE(J.m[0][1] < 0.0);  // r1 strictly decreasing in phi
    }
}

TEST_CASE("closed-form differential matches central finite differences") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 5);
    const double h = 1e-6;
    int done = 0;
    while (done < 1000) {
        PhasePoint x = sample_point(t, rng, 0.1);
        CollisionStep st = billiard_map(t, x);
        if (st.grazing_margin < 0.1) continue;
        CollisionStep rp = billiard_map(t, {x.r + h, x.phi});
        CollisionStep rm = billiard_map(t, {x.r - h, x.phi});
        CollisionStep pp = billiard_map(t, {x.r, x.phi + h});
        CollisionStep pm = billiard_map(t, {x.r, x.phi - h});
        double P = t.total_perimeter;
        // all four probes must stay on the same smooth branch
        auto near_image = [&](const CollisionStep& s) {
            return std::abs(wrap_signed(s.image.r - st.image.r, P)) < 0.05;
        };
        if (!near_image(rp) || !near_image(rm) || !near_image(pp) || !near_image(pm)) continue;

        double fd[2][2];
        fd[0][0] = wrap_signed(rp.image.r - rm.image.r, P) / (2 * h);
        fd[0][1] = wrap_signed(pp.image.r - pm.image.r, P) / (2 * h);
        fd[1][0] = (rp.image.phi - rm.image.phi) / (2 * h);
        fd[1][1] = (pp.image.phi - pm.image.phi) / (2 * h);
        Jacobian2x2 J = differential(t, x);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                REQUIRE(std::abs(fd[a][b] - J.m[a][b]) / std::abs(J.m[a][b]) < 1e-5);
        ++done;
    }
}

TEST_CASE("iterate: n = 0 returns the initial point only") {
    Table t = testutil::pinned_table();
    Trajectory tr = iterate(t, {0.4, 0.1}, 0);
    REQUIRE(tr.points.size() == 1);
    REQUIRE(tr.reason == StopReason::Completed);
}

TEST_CASE("iterate: starting inside the hole is an immediate stop") {
    Table t = testutil::pinned_table();
    Hole h = make_hole(t, 0.5, 0.05);
    Trajectory tr = iterate(t, {0.5, 0.3}, 10, &h);
    REQUIRE(tr.points.size() == 1);
    REQUIRE(tr.reason == StopReason::EnteredHole);
}

TEST_CASE("iterate: period-2 head-on orbit returns to the start") {
    Table t = testutil::pinned_table();
    PhasePoint x = {0.3 * pi / 4.0, 0.0};
    Trajectory tr = iterate(t, x, 2);
    REQUIRE(tr.points.size() == 3);
    REQUIRE(std::abs(wrap_signed(tr.points[2].r - x.r, t.total_perimeter)) < 1e-9);
    REQUIRE(std::abs(tr.points[2].phi - x.phi) < 1e-9);
}

TEST_CASE("vertical vectors are unstable, horizontal are not") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 6);
    for (int i = 0; i < 200; ++i) {
        PhasePoint x = sample_point(t, rng, 1e-2);
        REQUIRE(cone_membership(t, x, {0.0, 1.0}, ConeKind::LargeUnstable));
        REQUIRE_FALSE(cone_membership(t, x, {1.0, 0.0}, ConeKind::LargeUnstable));
        REQUIRE(cone_membership(t, x, {0.0, 1.0}, ConeKind::LargeStable));
        REQUIRE_FALSE(cone_membership(t, x, {1.0, -1e9}, ConeKind::LargeUnstable));
        REQUIRE(cone_membership(t, x, {1e-9, 1.0}, ConeKind::LargeUnstable));
    }
}

TEST_CASE("DF maps the large unstable cone into the small unstable cone") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 7);
    int done = 0;
    while (done < 2000) {
        PhasePoint x = sample_point(t, rng, 1e-3);
        CollisionStep st = billiard_map(t, x);
        if (st.grazing_margin < 1e-3) continue;
        Jacobian2x2 J = differential(t, x);
        double kappa = t.frame(x.r).curvature;
        // random slope in [kappa, +inf], including the vertical direction
        double u = rng.next_u01();
        Vec2 v;
        if (u < 0.1)
            v = {0.0, 1.0};
        else
            v = {1.0, kappa + std::tan(0.5 * pi * rng.next_u01())};
        Vec2 w = {J.m[0][0] * v.x + J.m[0][1] * v.y, J.m[1][0] * v.x + J.m[1][1] * v.y};
        double kappa1 = t.frame(st.image.r).curvature;
        double upper = small_cone_upper(kappa1, std::cos(st.image.phi), st.tau);
        REQUIRE(detail::in_unstable_cone(w.x, w.y, kappa1, upper, true, 1e-8));
        ++done;
    }
}

TEST_CASE("small-cone membership through the inverse map") {
    Table t = testutil::default_table();
    CounterRng rng(2024, 8);
    int done = 0;
    while (done < 200) {
        PhasePoint x = sample_point(t, rng, 1e-2);
        CollisionStep st = billiard_map(t, x);
        if (st.grazing_margin < 1e-2) continue;
        Jacobian2x2 J = differential(t, x);
        Vec2 w = {J.m[0][1], J.m[1][1]};  // image of the vertical: the small-cone upper edge
        REQUIRE(cone_membership(t, st.image, w, ConeKind::SmallUnstable, 1e-6));
        REQUIRE(cone_membership(t, st.image, w, ConeKind::LargeUnstable, 1e-9));
        ++done;
    }
}

TEST_CASE("homogeneity classification") {
    REQUIRE(classify_point({0.0, 0.0}, 10).index == 0);
    REQUIRE(classify_point({0.0, 0.5 * pi - 1.0 / 110.0}, 10).index == 10);
    REQUIRE(classify_point({0.0, -(0.5 * pi - 1.0 / 110.0)}, 10).index == 10);
    REQUIRE(classify_point({0.0, 0.5 * pi - 1.0 / 9.0}, 10).index == 0);
    REQUIRE(classify_point({0.0, 0.5 * pi - 1.0 / 40001.0}, 10).index == 200);

    HomogeneityIndex g = classify_point({0.0, 0.5 * pi}, 10);
    REQUIRE(g.singular);

    REQUIRE_THROWS_AS(classify_point({0.0, 0.0}, 1), PreconditionError);

    // strip bounds are consistent: pi/2 - k^{-2} < |phi| < pi/2 - (k+1)^{-2}
    for (int k : {10, 17, 63, 199}) {
        double lo = 0.5 * pi - 1.0 / (double(k) * k);
        double hi = 0.5 * pi - 1.0 / (double(k + 1) * (k + 1));
        double mid = 0.5 * (lo + hi);
        REQUIRE(classify_point({0.0, mid}, 10).index == k);
    }
}
