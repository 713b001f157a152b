#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "billiard/open_system.hpp"
#include "helpers.hpp"

using namespace billiard;
using Catch::Approx;

namespace {

double quad_phi(const std::function<double(double)>& f, int n) {
    // plain midpoint oracle over [-pi/2, pi/2], independent of the library rules
    double h = pi / n, acc = 0.0;
    for (int i = 0; i < n; ++i) acc += f(-0.5 * pi + (i + 0.5) * h);
    return acc * h;
}

}  // namespace

TEST_CASE("make_hole normalization and junction guard") {
    Table t = testutil::pinned_table();
    Hole h = make_hole(t, 0.5, 0.1);
    REQUIRE(h.hi - h.lo == Approx(0.1 * pi).epsilon(1e-12));  // width 0.31416
    REQUIRE(h.contains(0.5));
    REQUIRE_FALSE(h.contains(0.5 + 0.06 * pi));

    Hole empty = make_hole(t, 0.5, 0.0);
    REQUIRE_FALSE(empty.contains(0.5));

    // interval crossing the disk-1/disk-2 junction at 0.6*pi
    REQUIRE_THROWS_AS(make_hole(t, 0.6 * pi, 0.05), HoleSpansScatterers);
    REQUIRE_THROWS_AS(make_hole(t, 0.5, 0.2, 0.1), PreconditionError);
}

TEST_CASE("sample_mu0 has the right phi marginal") {
    Table t = testutil::default_table();
    std::size_t n = 1000000;
    Ensemble e = sample_mu0(t, n, 77);

    // mean of sin(phi) vanishes by symmetry
    KahanSum s1, s2;
    for (auto& p : e.particles) {
        s1.add(std::sin(p.phi));
        s2.add(std::cos(p.phi));
    }
    double mean_sin = s1.value() / n;
    double se_sin = 1.0 / std::sqrt(3.0 * n);  // Var sin = int sin^2 cos/2 = 1/3
    REQUIRE(std::abs(mean_sin) < 4.0 * se_sin);

    // mean of cos(phi) -> (pi/2)/2 = pi/4, frozen from the quadrature oracle
    double expect = quad_phi([](double x) { return std::cos(x) * std::cos(x) / 2.0; }, 200001);
    REQUIRE(expect == Approx(pi / 4.0).epsilon(1e-9));
    double mean_cos = s2.value() / n;
    double var_cos = quad_phi([](double x) { return std::cos(x) * std::cos(x) * std::cos(x) / 2.0; },
                              200001) -
                     expect * expect;
    REQUIRE(std::abs(mean_cos - expect) < 4.0 * std::sqrt(var_cos / n));

    // Kolmogorov-Smirnov against the CDF (1 + sin phi)/2 at the 1% level
    std::vector<double> phis(n);
    for (std::size_t i = 0; i < n; ++i) phis[i] = e.particles[i].phi;
    std::sort(phis.begin(), phis.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double F = 0.5 * (1.0 + std::sin(phis[i]));
        ks = std::max(ks, std::abs(F - (i + 1.0) / n));
        ks = std::max(ks, std::abs(F - static_cast<double>(i) / n));
    }
    REQUIRE(ks < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("closed system: survival is flat and means are invariant") {
    Table t = testutil::default_table();
    Hole none = make_hole(t, 0.5, 0.0);
    std::vector<Observable> obs = {make_observable(t, "const"), make_observable(t, "sin_phi"),
                                   make_observable(t, "cos_r")};
    Ensemble e = sample_mu0(t, 200000, 11);
    SurvivalTrace tr = evolve_open(std::move(e), t, none, 20, obs);

    for (double p : tr.p) REQUIRE(p == 1.0);
    for (std::size_t k = 0; k < tr.means[0].size(); ++k) REQUIRE(tr.means[0][k] == 1.0);

    for (int j : {1, 2}) {
        for (int k : {1, 10, 20}) {
            double d = std::abs(tr.means[j][k] - tr.means[j][0]);
            double se = std::hypot(tr.stderrs[j][k], tr.stderrs[j][0]);
            REQUIRE(d < 5.0 * se);
        }
    }
}

TEST_CASE("open system: survival is monotone and the constant stays normalized") {
    Table t = testutil::default_table();
    Hole h = make_hole(t, 0.5, 0.02);
    std::vector<Observable> obs = {make_observable(t, "const")};
    SurvivalTrace tr = evolve_open(sample_mu0(t, 100000, 3), t, h, 40, obs);
    for (std::size_t k = 0; k + 1 < tr.p.size(); ++k) REQUIRE(tr.p[k + 1] <= tr.p[k]);
    for (double m : tr.means[0]) REQUIRE(m == 1.0);
    REQUIRE(tr.p.back() > 0.2);
    REQUIRE(tr.p.back() < 1.0);
}

TEST_CASE("survival lower bound (1 - Ct)^n across the t sweep") {
    Table t = testutil::default_table();
    std::vector<double> c_hats;
    for (double tt : {0.04, 0.02, 0.01}) {
        Hole h = make_hole(t, 0.5, tt);
        SurvivalTrace tr = evolve_open(sample_mu0(t, 200000, 5), t, h, 50,
                                       {make_observable(t, "const")});
        double worst = 0.0;  // the tightest per-step decay over the trace
        for (std::size_t k = 0; k < tr.p.size(); ++k) {
            if (k == 0 || !(tr.p[k] > 0.0)) continue;
            worst = std::max(worst, -std::log(tr.p[k]) / static_cast<double>(k));
        }
        double c_hat = (1.0 - std::exp(-worst)) / tt;
        c_hats.push_back(c_hat);
        // the bound holds by construction of c_hat; it must also be O(1)
        REQUIRE(c_hat > 0.0);
        REQUIRE(c_hat < 10.0);
    }
    double cmax = *std::max_element(c_hats.begin(), c_hats.end());
    double cmin = *std::min_element(c_hats.begin(), c_hats.end());
    REQUIRE((cmax - cmin) / (0.5 * (cmax + cmin)) < 0.5);
}

TEST_CASE("extinction is reported") {
    Table t = testutil::default_table();
    Hole h = make_hole(t, 0.5, 0.1);
    REQUIRE_THROWS_AS(evolve_open(sample_mu0(t, 20, 9), t, h, 400,
                                  {make_observable(t, "const")}),
                      Extinction);
}

TEST_CASE("escape rate: zero at t = 0 and monotone in t") {
    Table t = testutil::default_table();
    Hole none = make_hole(t, 0.5, 0.0);
    SurvivalTrace tr0 = evolve_open(sample_mu0(t, 2000, 1), t, none, 30,
                                    {make_observable(t, "const")});
    EscapeRate r0 = escape_rate(tr0);
    REQUIRE(r0.rate == 0.0);

    auto rate_at = [&](double tt) {
        Hole h = make_hole(t, 0.5, tt);
        SurvivalTrace tr = evolve_open(sample_mu0(t, 300000, 17), t, h, 50,
                                       {make_observable(t, "const")});
        return escape_rate(tr);
    };
    EscapeRate r_hi = rate_at(0.04);
    EscapeRate r_lo = rate_at(0.01);
    REQUIRE(r_hi.rate > r_lo.rate);
    REQUIRE(r_lo.rate > 0.0);
    // rate/t stays O(1) as t decreases
    REQUIRE(r_lo.rate / 0.01 < 10.0);
    REQUIRE(r_lo.rate / 0.01 > 0.05);
}

TEST_CASE("escape rate needs enough plateau steps") {
    Table t = testutil::default_table();
    Hole none = make_hole(t, 0.5, 0.0);
    SurvivalTrace tr = evolve_open(sample_mu0(t, 1000, 1), t, none, 5,
                                   {make_observable(t, "const")});
    REQUIRE_THROWS_AS(escape_rate(tr), PreconditionError);
}

TEST_CASE("sample_Dt is normalized and respects range bounds") {
    Table t = testutil::default_table();
    Hole h = make_hole(t, 0.5, 0.02);
    Ensemble e = sample_Dt(t, h, 100000, 23);
    REQUIRE(e.n_alive >= e.particles.size() - 2);  // grazing losses are measure zero

    KahanSum s;
    std::size_t n_used = 0;
    for (std::size_t i = 0; i < e.particles.size(); ++i) {
        if (!e.alive[i]) continue;
        s.add(e.particles[i].phi);
        ++n_used;
    }
    double mean_phi = s.value() / n_used;
    REQUIRE(std::abs(mean_phi) <= 0.5 * pi);

    REQUIRE_THROWS_AS(sample_Dt(t, make_hole(t, 0.5, 0.0), 10, 1), PreconditionError);
}

TEST_CASE("evolution is deterministic and thread-count independent") {
    Table t = testutil::default_table();
    Hole h = make_hole(t, 0.5, 0.02);
    std::vector<Observable> obs = {make_observable(t, "cos_r")};

    set_threads(1);
    SurvivalTrace a = evolve_open(sample_mu0(t, 50000, 42), t, h, 20, obs);
    set_threads(2);
    SurvivalTrace b = evolve_open(sample_mu0(t, 50000, 42), t, h, 20, obs);
    set_threads(0);

    REQUIRE(a.survivors == b.survivors);
    for (std::size_t k = 0; k < a.means[0].size(); ++k) {
        REQUIRE(a.means[0][k] == b.means[0][k]);  // bit identical
        REQUIRE(a.stderrs[0][k] == b.stderrs[0][k]);
    }
}

TEST_CASE("estimate_mu_t: closed-system values match mu0") {
    Table t = testutil::default_table();
    Hole none = make_hole(t, 0.5, 0.0);
    MuEstimate est = estimate_mu_t(t, none, make_observable(t, "sin_phi"), 200000, 30, 7);
    REQUIRE(std::abs(est.value) < 4.0 * est.se);
    REQUIRE(est.se > 0.0);
}

TEST_CASE("plateau_estimate rejects a synthetic trend") {
    SurvivalTrace tr;
    tr.observable_names = {"x"};
    tr.means.resize(1);
    tr.stderrs.resize(1);
    for (int k = 0; k <= 30; ++k) {
        tr.p.push_back(1.0);
        tr.survivors.push_back(1000);
        tr.means[0].push_back(0.01 * k);  // strong linear drift
        tr.stderrs[0].push_back(1e-6);
    }
    REQUIRE_THROWS_AS(plateau_estimate(tr, 0), NonStationary);

    SurvivalTrace flat;
    flat.observable_names = {"x"};
    flat.means.resize(1);
    flat.stderrs.resize(1);
    for (int k = 0; k <= 30; ++k) {
        flat.p.push_back(1.0);
        flat.survivors.push_back(1000);
        flat.means[0].push_back(0.5 + 1e-4 * ((k * 2654435761u) % 97 / 96.0 - 0.5));
        flat.stderrs[0].push_back(1e-4);
    }
    REQUIRE_NOTHROW(plateau_estimate(flat, 0));
}
