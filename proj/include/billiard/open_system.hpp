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
#include "billiard/parallel.hpp"
#include "billiard/rng.hpp"

namespace billiard {

inline constexpr std::size_t ensemble_chunk = 1 << 16;

/// Uniformly weighted particle cloud. Conditional averages run over the alive
/// particles only.
struct Ensemble {
    std::vector<PhasePoint> particles;
    std::vector<uint8_t> alive;
    uint64_t seed = 0;
    std::size_t n_alive = 0;
    uint64_t grazing_kills = 0;
};

/// Per-step survival fractions and conditional observable means; step k
/// estimates (L_t^k mu0)(phi).
struct SurvivalTrace {
    std::vector<std::string> observable_names;
    std::vector<std::size_t> survivors;            // after the step-k kill
    std::vector<double> p;                          // survivors / N
    std::vector<std::vector<double>> means;         // [observable][step]
    std::vector<std::vector<double>> stderrs;       // [observable][step]
    std::size_t n_particles = 0;
    uint64_t grazing_kills = 0;
};

/// i.i.d. samples of mu0: r uniform, phi = arcsin(2u - 1) (inverse CDF of
/// the cos(phi)/2 marginal). Deterministic given the seed.
inline Ensemble sample_mu0(const Table& table, std::size_t n, uint64_t seed) {
    if (n < 1) throw PreconditionError("sample_mu0: n must be >= 1");
    Ensemble e;
    e.seed = seed;
    e.particles.resize(n);
    e.alive.assign(n, 1);
    e.n_alive = n;
    double P = table.total_perimeter;
    for_chunks(n, ensemble_chunk, [&](std::size_t, std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            CounterRng rng(seed, i);
            double r = rng.next_u01() * P;
            double phi = std::asin(2.0 * rng.next_u01() - 1.0);
            e.particles[i] = {r, phi};
        }
    });
    return e;
}

/// Samples of D_t = mu0(. o F 1_{H_t}) / t: r uniform in the hole interval,
/// phi from the cos/2 marginal, then one application of F.
inline Ensemble sample_Dt(const Table& table, const Hole& hole, std::size_t n, uint64_t seed) {
    if (!(hole.t > 0.0)) throw PreconditionError("sample_Dt: needs t > 0");
    if (n < 1) throw PreconditionError("sample_Dt: n must be >= 1");
    Ensemble e;
    e.seed = seed;
    e.particles.resize(n);
    e.alive.assign(n, 1);
    e.n_alive = n;
    std::vector<uint64_t> grazed(1 + (n - 1) / ensemble_chunk, 0);
    for_chunks(n, ensemble_chunk, [&](std::size_t c, std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            CounterRng rng(seed, i);
            double r = hole.lo + rng.next_u01() * (hole.hi - hole.lo);
            double phi = std::asin(2.0 * rng.next_u01() - 1.0);
            try {
                e.particles[i] = billiard_map(table, {r, phi}).image;
            } catch (const SingularInput&) {
                e.particles[i] = {r, phi};
                e.alive[i] = 0;
                ++grazed[c];
            }
        }
    });
    for (uint64_t g : grazed) {
        e.grazing_kills += g;
        e.n_alive -= g;
    }
    return e;
}

namespace detail {

struct ChunkStat {
    std::size_t count = 0;
    std::vector<double> sum;
    std::vector<double> sum2;
};

}  // namespace detail

/// Conditional evolution of an ensemble: at each step kill the particles
/// currently in the hole (step 0 included), record survival and conditional
/// means, then map the survivors by F. Reductions run over a fixed chunk grid
/// so results do not depend on the worker count.
inline SurvivalTrace evolve_open(Ensemble ensemble, const Table& table, const Hole& hole,
                                 int n_steps, const std::vector<Observable>& observables) {
    if (ensemble.n_alive == 0) throw PreconditionError("evolve_open: empty ensemble");
    std::size_t n = ensemble.particles.size();
    std::size_t n_obs = observables.size();
    std::size_t n_chunks = n == 0 ? 0 : 1 + (n - 1) / ensemble_chunk;

    SurvivalTrace trace;
    trace.n_particles = n;
    for (const auto& o : observables) trace.observable_names.push_back(o.name);
    trace.means.assign(n_obs, {});
    trace.stderrs.assign(n_obs, {});

    std::vector<detail::ChunkStat> stats(n_chunks);
    std::vector<uint64_t> grazed(n_chunks, 0);

    for (int k = 0; k <= n_steps; ++k) {
        for (auto& st : stats) {
            st.count = 0;
            st.sum.assign(n_obs, 0.0);
            st.sum2.assign(n_obs, 0.0);
        }
        for_chunks(n, ensemble_chunk, [&](std::size_t c, std::size_t i0, std::size_t i1) {
            auto& st = stats[c];
            for (std::size_t i = i0; i < i1; ++i) {
                if (!ensemble.alive[i]) continue;
                if (hole.contains(ensemble.particles[i].r)) {
                    ensemble.alive[i] = 0;
                    continue;
                }
                ++st.count;
                for (std::size_t j = 0; j < n_obs; ++j) {
                    double v = observables[j](ensemble.particles[i]);
                    st.sum[j] += v;
                    st.sum2[j] += v * v;
                }
            }
        });
        std::size_t count = 0;
        std::vector<KahanSum> sums(n_obs), sums2(n_obs);
        for (const auto& st : stats) {
            count += st.count;
            for (std::size_t j = 0; j < n_obs; ++j) {
                sums[j].add(st.sum[j]);
                sums2[j].add(st.sum2[j]);
            }
        }
        ensemble.n_alive = count;
        if (count == 0)
            throw Extinction("evolve_open: ensemble extinct at step " + std::to_string(k) +
                             " (t or n_steps too large for this ensemble size)");
        trace.survivors.push_back(count);
        trace.p.push_back(static_cast<double>(count) / static_cast<double>(n));
        for (std::size_t j = 0; j < n_obs; ++j) {
            double mean = sums[j].value() / count;
            double var = count > 1
                             ? std::max(0.0, (sums2[j].value() - count * mean * mean) / (count - 1))
                             : 0.0;
            trace.means[j].push_back(mean);
            trace.stderrs[j].push_back(std::sqrt(var / count));
        }
        if (k == n_steps) break;
        for_chunks(n, ensemble_chunk, [&](std::size_t c, std::size_t i0, std::size_t i1) {
            for (std::size_t i = i0; i < i1; ++i) {
                if (!ensemble.alive[i]) continue;
                try {
                    ensemble.particles[i] = billiard_map(table, ensemble.particles[i]).image;
                } catch (const SingularInput&) {
                    ensemble.alive[i] = 0;
                    ++grazed[c];
                }
            }
        });
    }
    for (uint64_t g : grazed) trace.grazing_kills += g;
    return trace;
}

struct MuEstimate {
    double value = 0.0;
    double se = 0.0;
    int window = 0;
    double trend = 0.0;
    double trend_se = 0.0;
    SurvivalTrace trace;
};

/// Plateau analysis of a trace: average of the conditional means over the
/// trailing third, with the window variability (autocorrelation-corrected)
/// plus the averaged per-step MC noise as the error. Throws NonStationary
/// when the window still trends beyond 3x the trend's standard error.
inline MuEstimate plateau_estimate(const SurvivalTrace& trace, std::size_t obs_idx = 0) {
    int n_steps = static_cast<int>(trace.p.size()) - 1;
    if (n_steps < 12) throw PreconditionError("plateau_estimate: need n_steps >= 12");
    int w = (n_steps + 2) / 3;
    int k0 = n_steps + 1 - w;
    std::vector<double> ks, window_means;
    for (int k = k0; k <= n_steps; ++k) {
        ks.push_back(k);
        window_means.push_back(trace.means[obs_idx][k]);
    }
    MuEstimate est;
    est.window = w;
    LinFit fit = linear_fit(ks, window_means);
    est.trend = fit.slope;
    est.trend_se = fit.se_slope;
    MeanVar mv = mean_var(window_means);
    est.value = mv.mean;

    double rho = 0.0;
    if (w > 2 && mv.var > 0.0) {
        double acc = 0.0;
        for (int i = 0; i + 1 < w; ++i)
            acc += (window_means[i] - mv.mean) * (window_means[i + 1] - mv.mean);
        rho = acc / ((w - 1) * mv.var);
        rho = std::min(0.95, std::max(0.0, rho));
    }
    double n_eff = w * (1.0 - rho) / (1.0 + rho);
    double se_window = n_eff > 1.0 ? std::sqrt(mv.var / n_eff) : std::sqrt(mv.var);
    KahanSum se_mc2;
    for (int k = k0; k <= n_steps; ++k)
        se_mc2.add(trace.stderrs[obs_idx][k] * trace.stderrs[obs_idx][k]);
    double se_mc = std::sqrt(se_mc2.value()) / w;
    est.se = std::sqrt(se_window * se_window + se_mc * se_mc);

    // reject only a trend that is both significant and material next to the
    // reported uncertainty of the estimate itself
    if (std::abs(est.trend) > 3.0 * est.trend_se &&
        std::abs(est.trend) * w > 3.0 * std::max(est.se, 1e-300))
        throw NonStationary("plateau_estimate: trailing window still trends (slope " +
                            std::to_string(est.trend) + " +- " + std::to_string(est.trend_se) + ")");
    return est;
}

/// mu_t(phi) from a fresh mu0 ensemble evolved n_steps times.
inline MuEstimate estimate_mu_t(const Table& table, const Hole& hole, const Observable& obs,
                                std::size_t n_particles, int n_steps, uint64_t seed) {
    Ensemble e = sample_mu0(table, n_particles, seed);
    SurvivalTrace trace = evolve_open(std::move(e), table, hole, n_steps, {obs});
    MuEstimate est = plateau_estimate(trace, 0);
    est.trace = std::move(trace);
    return est;
}

struct EscapeRate {
    double rate = 0.0;
    double ci = 0.0;  // half-width, 1.96 se
    int window = 0;
};

/// Escape rate per collision: minus the slope of log p_n over the trailing
/// third of the trace.
inline EscapeRate escape_rate(const SurvivalTrace& trace) {
    int n = static_cast<int>(trace.p.size());
    int w = std::max(10, n / 3);
    if (n < w || n < 10) throw PreconditionError("escape_rate: need >= 10 plateau steps");
    std::vector<double> ks, logp;
    for (int k = n - w; k < n; ++k) {
        if (!(trace.p[k] > 0.0)) throw Extinction("escape_rate: p_n hit zero inside the window");
        ks.push_back(k);
        logp.push_back(std::log(trace.p[k]));
    }
    LinFit fit = linear_fit(ks, logp);
    EscapeRate er;
    er.rate = -fit.slope;
    er.ci = 1.96 * fit.se_slope;
    er.window = w;
    return er;
}

}  // namespace billiard
