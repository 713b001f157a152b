#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "billiard/errors.hpp"
#include "billiard/hole.hpp"
#include "billiard/map.hpp"
#include "billiard/numerics.hpp"
#include "billiard/observable.hpp"
#include "billiard/open_system.hpp"
#include "billiard/parallel.hpp"

namespace billiard {

struct QuadResult {
    double value = 0.0;
    double error = 0.0;  // node-doubling estimate plus a rounding floor
};

/// mu0(phi) by tensor-product quadrature of phi(r,x) cos(x) / (2 |dD|):
/// Gauss-Legendre panels in the angle, midpoint rule in the (periodic) arc
/// direction, with a Richardson error estimate from node doubling.
inline QuadResult mu0_expectation(const Table& table, const Observable& obs, int n_r_nodes,
                                  int n_phi_nodes) {
    if (n_r_nodes < 16 || n_phi_nodes < 16)
        throw PreconditionError("mu0_expectation: node counts must be >= 16");
    double P = table.total_perimeter;
    auto eval = [&](int nr, int nphi) {
        KahanSum acc;
        for (int i = 0; i < nr; ++i) {
            double r = P * (i + 0.5) / nr;
            double inner = integrate_gl(
                [&](double phi) { return obs({r, phi}) * std::cos(phi); }, -0.5 * pi, 0.5 * pi,
                nphi);
            acc.add(inner);
        }
        return acc.value() / (2.0 * nr);
    };
    QuadResult q;
    q.value = eval(n_r_nodes, n_phi_nodes);
    double coarse = eval(n_r_nodes / 2, n_phi_nodes / 2);
    q.error = std::abs(q.value - coarse) + 4.0 * 2.2e-16 * (1.0 + std::abs(q.value));
    return q;
}

/// One term of the response series of the main theorem:
/// mu0(phi) - (1/2) Int phi(F^k(r*, x)) cos(x) dx.
struct SeriesTerm {
    int k = 0;
    double mu0_part = 0.0;
    double line_part = 0.0;
    double term = 0.0;
    double quad_error = 0.0;
    int skipped_nodes = 0;  // grid orbits discarded for coming within 1e-9 of grazing
};

namespace detail {

/// State of the vertical-line quadrature grid at {r*} x [-pi/2, pi/2],
/// evolved incrementally: after advance() was called k times, node i sits at
/// F^k(r*, phi_i). Midpoint rule with weight cos(phi)/2. Orbits that come
/// within 1e-9 of grazing are frozen at their last position and counted;
/// freezing (rather than dropping) keeps the rule exactly normalized, and the
/// frozen value is no worse than any other choice inside a jump cell. Jump
/// cells dominate the quadrature error, each contributing O(||phi||_inf / n).
class LineGrid {
public:
    LineGrid(const Table& table, double r_star, int n_nodes)
        : table_(table), n_(n_nodes), h_(pi / n_nodes) {
        pts_.resize(n_);
        alive_.assign(n_, 1);
        w_.resize(n_);
        for (int i = 0; i < n_; ++i) {
            double phi = -0.5 * pi + (i + 0.5) * h_;
            pts_[i] = {r_star, phi};
            // exact mass of the cell: the rule telescopes to 1 for constants
            w_[i] = 0.5 * (std::sin(phi + 0.5 * h_) - std::sin(phi - 0.5 * h_));
        }
    }

    /// (1/2) Int phi(current grid) cos dphi, full grid and odd-index half grid.
    void integrate(const Observable& obs, double& full, double& half) const {
        KahanSum a, b;
        for (int i = 0; i < n_; ++i) {
            double v = obs(pts_[i]) * w_[i];
            a.add(v);
            if (i % 2 == 1) b.add(2.0 * v);
        }
        full = a.value();
        half = b.value();
    }

    void advance() {
        for_chunks(static_cast<std::size_t>(n_), 4096,
                   [&](std::size_t, std::size_t i0, std::size_t i1) {
                       for (std::size_t i = i0; i < i1; ++i) {
                           if (!alive_[i]) continue;
                           try {
                               CollisionStep st = billiard_map(table_, pts_[i]);
                               if (st.grazing_margin < 1e-9) {
                                   alive_[i] = 0;
                                   continue;
                               }
                               pts_[i] = st.image;
                           } catch (const SingularInput&) {
                               alive_[i] = 0;
                           }
                       }
                   });
    }

    int skipped() const {
        int s = 0;
        for (auto a : alive_)
            if (!a) ++s;
        return s;
    }

private:
    const Table& table_;
    int n_;
    double h_;
    std::vector<PhasePoint> pts_;
    std::vector<uint8_t> alive_;
    std::vector<double> w_;
};

}  // namespace detail

/// Standalone evaluation of series term k (the series driver below reuses the
/// grid incrementally instead).
inline SeriesTerm series_term(const Table& table, double r_star, const Observable& obs, int k,
                              int n_phi_nodes, const QuadResult* mu0_cached = nullptr) {
    if (k < 0) throw PreconditionError("series_term: k must be >= 0");
    QuadResult mu0 = mu0_cached ? *mu0_cached : mu0_expectation(table, obs, 128, 128);
    detail::LineGrid grid(table, r_star, n_phi_nodes);
    for (int j = 0; j < k; ++j) grid.advance();
    double full = 0.0, half = 0.0;
    grid.integrate(obs, full, half);
    SeriesTerm t;
    t.k = k;
    t.mu0_part = mu0.value;
    t.line_part = full;
    t.term = mu0.value - full;
    t.quad_error =
        std::abs(full - half) + mu0.error + 4.0 * 2.2e-16 * (1.0 + std::abs(full));
    t.skipped_nodes = grid.skipped();
    return t;
}

struct SeriesReport {
    std::vector<SeriesTerm> terms;
    std::vector<double> partial_sums;
    double value = 0.0;
    double tail_bound = 0.0;
    double quad_error_total = 0.0;
    double fitted_decay = 0.0;  // geometric ratio from the last fitted terms
    bool tail_certified = false;
    bool no_decay = false;
    int K = 0;
};

struct SeriesOptions {
    int n_phi_nodes = 200000;
    int K_max = 40;
    int mu0_r_nodes = 256;
    int mu0_phi_nodes = 256;
};

/// Accumulate response-series terms until a geometric fit to the last five
/// certifies the tail below tail_tol (or K_max is hit, with a no-decay flag
/// when the terms refuse to shrink).
inline SeriesReport response_series(const Table& table, double r_star, const Observable& obs,
                                    double tail_tol, const SeriesOptions& opt = {}) {
    if (!(tail_tol >= 0.0)) throw PreconditionError("response_series: tail_tol must be >= 0");
    QuadResult mu0 = mu0_expectation(table, obs, opt.mu0_r_nodes, opt.mu0_phi_nodes);
    detail::LineGrid grid(table, r_star, opt.n_phi_nodes);

    SeriesReport rep;
    KahanSum sum, err;
    err.add(0.0);
    for (int k = 0; k <= opt.K_max; ++k) {
        if (k > 0) grid.advance();
        double full = 0.0, half = 0.0;
        grid.integrate(obs, full, half);
        SeriesTerm t;
        t.k = k;
        t.mu0_part = mu0.value;
        t.line_part = full;
        t.term = mu0.value - full;
        t.quad_error =
            std::abs(full - half) + mu0.error + 4.0 * 2.2e-16 * (1.0 + std::abs(full));
        t.skipped_nodes = grid.skipped();
        rep.terms.push_back(t);
        sum.add(t.term);
        err.add(t.quad_error);
        rep.partial_sums.push_back(sum.value());

        int nk = static_cast<int>(rep.terms.size());
        // direct stop: the last three terms are already far below tolerance
        if (nk >= 3 && tail_tol > 0.0) {
            bool tiny = true;
            for (int j = nk - 3; j < nk; ++j)
                if (std::abs(rep.terms[j].term) > 0.1 * tail_tol) tiny = false;
            if (tiny) {
                rep.tail_bound = 3.0 * 0.1 * tail_tol;
                rep.tail_certified = true;
                break;
            }
        }
        // geometric fit over the last five terms
        if (nk >= 5) {
            std::vector<double> xs, ys;
            bool usable = true;
            for (int j = nk - 5; j < nk; ++j) {
                double a = std::abs(rep.terms[j].term);
                if (a <= 0.0) {
                    usable = false;
                    break;
                }
                xs.push_back(j);
                ys.push_back(std::log(a));
            }
            if (usable) {
                LinFit fit = linear_fit(xs, ys);
                double g = std::exp(fit.slope);
                rep.fitted_decay = g;
                if (tail_tol > 0.0 && g < 0.95) {
                    double tail = std::abs(rep.terms.back().term) * g / (1.0 - g);
                    if (tail < tail_tol) {
                        rep.tail_bound = tail;
                        rep.tail_certified = true;
                        break;
                    }
                }
            }
        }
    }
    rep.K = static_cast<int>(rep.terms.size()) - 1;
    rep.value = sum.value();
    rep.quad_error_total = err.value();
    if (!rep.tail_certified) {
        rep.no_decay = rep.fitted_decay >= 1.0 || rep.fitted_decay == 0.0;
        double g = rep.fitted_decay;
        rep.tail_bound = (g > 0.0 && g < 1.0)
                             ? std::abs(rep.terms.back().term) * g / (1.0 - g)
                             : std::abs(rep.terms.back().term) * 10.0;
    }
    return rep;
}

struct McParams {
    std::size_t n_particles = 1000000;
    int n_steps = 60;
    uint64_t seed = 20260801;
};

struct FdSlope {
    double t = 0.0;
    double mu_t = 0.0;
    double mu_t_se = 0.0;
    double slope = 0.0;
    double slope_se = 0.0;
};

struct FdReport {
    std::vector<FdSlope> slopes;
    double mu0 = 0.0;
    double mu0_error = 0.0;
    double richardson = 0.0;     // intercept of the t -> slope fit at t = 0
    double richardson_se = 0.0;  // propagated MC error of the intercept
    double fit_residual = 0.0;   // worst deviation of the linear model
    double combined_error = 0.0;
};

/// Finite-difference side of the theorem: slopes (mu_t - mu0)/t for each t,
/// extrapolated to t = 0 under the model mu_t = mu0 + A t + B t^2.
inline FdReport finite_difference_derivative(const Table& table, double r_star,
                                             const Observable& obs, std::vector<double> t_list,
                                             const McParams& mc, int mu0_r_nodes = 256,
                                             int mu0_phi_nodes = 256) {
    if (t_list.size() < 2)
        throw PreconditionError("finite_difference_derivative: need >= 2 hole sizes");
    for (std::size_t i = 0; i + 1 < t_list.size(); ++i)
        if (t_list[i] <= t_list[i + 1])
            throw PreconditionError("finite_difference_derivative: t_list must be sorted descending");

    QuadResult mu0 = mu0_expectation(table, obs, mu0_r_nodes, mu0_phi_nodes);
    FdReport rep;
    rep.mu0 = mu0.value;
    rep.mu0_error = mu0.error;
    for (std::size_t i = 0; i < t_list.size(); ++i) {
        double t = t_list[i];
        Hole hole = make_hole(table, r_star, t);
        MuEstimate est = estimate_mu_t(table, hole, obs, mc.n_particles, mc.n_steps,
                                       mix64(mc.seed + 101 * i));
        FdSlope s;
        s.t = t;
        s.mu_t = est.value;
        s.mu_t_se = est.se;
        s.slope = (est.value - mu0.value) / t;
        s.slope_se = (est.se + mu0.error) / t;
        rep.slopes.push_back(s);
    }

    // weighted least squares of slope_i = A + B t_i
    double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
    for (const auto& s : rep.slopes) {
        double w = 1.0 / std::max(s.slope_se * s.slope_se, 1e-300);
        sw += w;
        swx += w * s.t;
        swy += w * s.slope;
        swxx += w * s.t * s.t;
        swxy += w * s.t * s.slope;
    }
    double det = sw * swxx - swx * swx;
    double A, B;
    if (std::abs(det) > 1e-300) {
        A = (swxx * swy - swx * swxy) / det;
        B = (sw * swxy - swx * swy) / det;
        rep.richardson_se = std::sqrt(std::max(swxx / det, 0.0));
    } else {
        A = rep.slopes.back().slope;
        B = 0.0;
        rep.richardson_se = rep.slopes.back().slope_se;
    }
    rep.richardson = A;
    double worst = 0.0;
    for (const auto& s : rep.slopes) worst = std::max(worst, std::abs(A + B * s.t - s.slope));
    rep.fit_residual = worst;
    rep.combined_error = rep.richardson_se + rep.fit_residual;
    return rep;
}

/// Full two-sided comparison for one observable.
struct ResponseReport {
    std::string observable;
    SeriesReport series;
    FdReport fd;
    double combined_error = 0.0;
    double discrepancy = 0.0;
    bool pass = false;
};

inline ResponseReport response_verdict(const Table& table, double r_star, const Observable& obs,
                                       double tail_tol, const std::vector<double>& t_list,
                                       const McParams& mc, const SeriesOptions& sopt = {}) {
    ResponseReport rep;
    rep.observable = obs.name;
    rep.series = response_series(table, r_star, obs, tail_tol, sopt);
    rep.fd = finite_difference_derivative(table, r_star, obs, t_list, mc, sopt.mu0_r_nodes,
                                          sopt.mu0_phi_nodes);
    rep.combined_error = rep.fd.combined_error + rep.series.tail_bound + rep.series.quad_error_total;
    rep.discrepancy = std::abs(rep.series.value - rep.fd.richardson);
    rep.pass = rep.discrepancy <= 3.0 * rep.combined_error;
    return rep;
}

/// Telescoping decay D_k = |(L_t^{k+1} mu0)(phi) - (L_t^k mu0)(phi)| and the
/// hole/survival independence ratio mu0(F(H_t) n M_t^k) / (t mu0(M_t^k)),
/// both from one Monte Carlo trace.
struct DecayRow {
    int k = 0;
    double delta = 0.0;
    double delta_se = 0.0;
    double independence = 0.0;  // equals (p_k - p_{k+1}) / (t p_k)
    bool below_noise = false;
};

struct DecayTable {
    std::vector<DecayRow> rows;
    double gamma = 0.0;  // fitted per-step ratio of Delta_k before the noise floor
    double r2 = 0.0;
    int fitted_points = 0;
    double delta0_over_t = 0.0;
};

inline DecayTable telescoping_from_trace(const SurvivalTrace& trace, std::size_t obs_idx,
                                         double t) {
    if (!(t > 0.0)) throw PreconditionError("telescoping: needs t > 0");
    int k_max = static_cast<int>(trace.p.size()) - 2;
    DecayTable out;
    std::vector<double> xs, ys;
    for (int k = 0; k <= k_max; ++k) {
        DecayRow row;
        row.k = k;
        row.delta = std::abs(trace.means[obs_idx][k + 1] - trace.means[obs_idx][k]);
        row.delta_se = std::hypot(trace.stderrs[obs_idx][k + 1], trace.stderrs[obs_idx][k]);
        row.independence = (trace.p[k] - trace.p[k + 1]) / (t * trace.p[k]);
        row.below_noise = row.delta < 3.0 * row.delta_se;
        out.rows.push_back(row);
        if (!row.below_noise && row.delta > 0.0) {
            xs.push_back(k);
            ys.push_back(std::log(row.delta / t));
        }
    }
    out.delta0_over_t = out.rows.empty() ? 0.0 : out.rows[0].delta / t;
    if (xs.size() >= 3) {
        LinFit fit = linear_fit(xs, ys);
        out.gamma = std::exp(fit.slope);
        out.r2 = fit.r2;
        out.fitted_points = static_cast<int>(xs.size());
    }
    return out;
}

inline DecayTable telescoping_diagnostic(const Table& table, const Hole& hole,
                                         const Observable& obs, int k_max, const McParams& mc) {
    if (!(hole.t > 0.0)) throw PreconditionError("telescoping_diagnostic: needs t > 0");
    Ensemble e = sample_mu0(table, mc.n_particles, mc.seed);
    SurvivalTrace trace = evolve_open(std::move(e), table, hole, k_max + 1, {obs});
    return telescoping_from_trace(trace, 0, hole.t);
}

}  // namespace billiard
