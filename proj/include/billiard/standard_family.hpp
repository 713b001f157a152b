#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <cstdio>
#include <vector>

#include "billiard/errors.hpp"
#include "billiard/hole.hpp"
#include "billiard/map.hpp"
#include "billiard/numerics.hpp"
#include "billiard/observable.hpp"
#include "billiard/parallel.hpp"
#include "billiard/rng.hpp"

namespace billiard {

/// Unstable graph curve with a sampled positive density. Nodes are exact
/// images of exact source points; phi and slope describe the graph, rho is
/// normalized so that its composite-Simpson integral over the grid is 1.
/// Node count is odd, r strictly increasing.
struct StandardPair {
    std::vector<double> r;
    std::vector<double> phi;
    std::vector<double> slope;
    std::vector<double> rho;
    double weight = 0.0;
    int strip = 0;       // homogeneity strip containing the curve
    int64_t parent = -1; // index of the parent pair in the previous generation

    std::size_t n() const { return r.size(); }

    /// Euclidean curve length, integrating sqrt(1 + slope^2).
    double length() const {
        std::vector<double> f(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) f[i] = std::sqrt(1.0 + slope[i] * slope[i]);
        return simpson(r, f);
    }
};

enum class FamilyMode { Closed, Hatted, Leaky };

struct FamilyOptions {
    double delta_star = 0.05;   // maximum pair length
    int k0 = 10;                // first homogeneity strip index
    int k_max_strip = 200;      // strips beyond this are dropped, with accounting
    double mass_floor = 1e-10;  // pieces below this weight are dropped, with accounting
    std::size_t max_pairs = 20000;  // unbiased thinning budget (see evolve_family)
    int min_nodes = 5;
    int max_nodes = 49;
    uint64_t thin_seed = 0x5eedf00dULL;
};

struct StandardFamily {
    std::vector<StandardPair> pairs;
    FamilyMode mode = FamilyMode::Closed;
    int generation = 0;
    double retained_mass = 1.0;       // construction mass before normalization
    double dropped_mass_total = 0.0;  // strip truncation + mass floor + resolution loss
    double dropped_mass_last = 0.0;
    double surviving_fraction_last = 1.0;  // leaky mode: mass outside hole before renorm
    uint64_t resolution_losses = 0;
    uint64_t thin_events = 0;
    FamilyOptions opts;

    double total_weight() const {
        KahanSum s;
        for (const auto& p : pairs) s.add(p.weight);
        return s.value();
    }
};

struct RegularityReport {
    double Z = 0.0;
    double varpi_emp = 0.0;        // sampled sup of |log rho(x)/rho(y)| / |x-y|^{1/3}
    double max_curvature = 0.0;    // max |phi''| from slope differences
    double max_density_ratio = 0.0;  // worst per-pair max/min of rho
    std::size_t n_pairs = 0;
};

struct DecaySeries {
    std::vector<double> d;
    double gamma_emp = 0.0;
    double r2 = 0.0;
    int fitted_points = 0;
    double noise_floor = 0.0;
};

namespace fam_detail {

constexpr double inf_slope = std::numeric_limits<double>::infinity();

/// A point of the source measure being pushed forward: location, graph slope
/// (infinite for vertical lines) and mass density in the source parameter.
struct SourcePoint {
    double r = 0.0;
    double phi = 0.0;
    double slope = 0.0;
    double density = 0.0;
};

struct ImageSample {
    bool valid = false;
    int scatterer = -1, kx = 0, ky = 0;
    double r1 = 0.0, phi1 = 0.0, slope1 = 0.0, density1 = 0.0;
    double margin = 0.0;
    int strip = -1;

    bool same_target(const ImageSample& o) const {
        if (valid != o.valid) return false;
        if (!valid) return true;
        return scatterer == o.scatterer && kx == o.kx && ky == o.ky;
    }

    /// For adjacent scan samples only: a reference-angle wrap makes r1 jump
    /// by a perimeter, which must cut the graph representation. Meaningless
    /// between far-apart samples (smooth images can span most of a circle).
    bool same_branch(const ImageSample& o, double half_perimeter) const {
        if (!same_target(o)) return false;
        if (!valid) return true;
        return std::abs(r1 - o.r1) < half_perimeter;
    }
};

struct PushAccounting {
    double dropped = 0.0;  // strips beyond k_max, singular slivers, floors
    double killed = 0.0;   // hole losses (leaky mode)
    uint64_t resolution_losses = 0;
    // drop breakdown, for diagnostics
    double drop_sliver = 0.0;
    double drop_strip = 0.0;
    double drop_floor = 0.0;
    double drop_emit = 0.0;
};

/// Shared push-forward engine: cuts a parametrized source segment at branch
/// changes, homogeneity boundaries and hole lines, maps the smooth cells, and
/// emits standard pairs of bounded length.
class Pusher {
public:
    Pusher(const Table& table, const std::function<SourcePoint(double)>& src,
           const std::function<double(double, double)>& mass_integral, const FamilyOptions& opts,
           const Hole* hole, bool kill_hole)
        : table_(table), src_(src), mass_(mass_integral), opts_(opts), hole_(hole),
          kill_hole_(kill_hole) {}

    ImageSample eval(double u) const {
        SourcePoint s = src_(u);
        ImageSample im;
        double cphi = std::cos(s.phi);
        if (!(cphi > grazing_tol)) return im;
        BoundaryFrame f = table_.frame(s.r);
        Vec2 v = direction_of(f, s.phi);
        auto hit = ray_cast(table_, f.position, v, table_.candidate_reach());
        if (!hit) return im;
        const Scatterer& sc = table_.scatterers[hit->scatterer];
        Vec2 c1 = {sc.center.x + hit->kx, sc.center.y + hit->ky};
        Vec2 u1 = hit->point - c1;
        double inv = 1.0 / u1.norm();
        u1 = inv * u1;
        Vec2 t1 = {-u1.y, u1.x};
        double cos1 = -v.dot(u1);
        double sin1 = v.dot(t1);
        if (!(cos1 > grazing_tol)) return im;

        double tau = hit->s;
        double kap = f.curvature;
        double kap1 = sc.radius > 0.0 ? 1.0 / sc.radius : 0.0;
        double A = tau * kap + cphi;
        double B = tau;
        double C = tau * kap * kap1 + kap * cos1 + kap1 * cphi;
        double D = tau * kap1 + cos1;

        im.valid = true;
        im.scatterer = hit->scatterer;
        im.kx = hit->kx;
        im.ky = hit->ky;
        im.r1 = table_.arc_of_angle(hit->scatterer, std::atan2(u1.y, u1.x));
        im.phi1 = std::atan2(sin1, cos1);
        im.margin = 0.5 * pi - std::abs(im.phi1);
        if (std::isinf(s.slope)) {
            im.slope1 = D / B;
            im.density1 = s.density * cos1 / B;
        } else {
            double num = A + B * s.slope;  // positive on unstable curves
            im.slope1 = (C + D * s.slope) / num;
            im.density1 = s.density * cos1 / num;
        }
        im.strip = classify_point({im.r1, im.phi1}, opts_.k0).index;
        return im;
    }

    /// Push [u_lo, u_hi] (already free of source-strip boundaries) with the
    /// given parent weight; append pairs and update the accounting.
    void push(double u_lo, double u_hi, double parent_weight, int64_t parent_id, int scan_nodes,
              std::vector<StandardPair>& out, PushAccounting& acc) const {
        if (!(u_hi > u_lo) || !(parent_weight > 0.0)) return;

        // 1. scan, refined until same-branch cells have short image chords
        std::vector<double> us;
        std::vector<ImageSample> ims;
        int n_scan = std::max(4, scan_nodes);
        double inset = 1e-12 * (u_hi - u_lo);
        for (int i = 0; i <= n_scan; ++i) {
            double u = u_lo + (u_hi - u_lo) * i / n_scan;
            if (i == 0) u += inset;
            if (i == n_scan) u -= inset;
            us.push_back(u);
            ims.push_back(eval(u));
        }
        double chord_max = 0.5 * opts_.delta_star;
        double u_floor = (u_hi - u_lo) / (n_scan * 4096.0);
        for (std::size_t i = 0; i + 1 < us.size();) {
            bool same = ims[i].same_branch(ims[i + 1], half_perim(ims[i]));
            double chord = same && ims[i].valid
                               ? std::hypot(ims[i + 1].r1 - ims[i].r1, ims[i + 1].phi1 - ims[i].phi1)
                               : 0.0;
            if (same && chord > chord_max && us[i + 1] - us[i] > u_floor) {
                double um = 0.5 * (us[i] + us[i + 1]);
                us.insert(us.begin() + i + 1, um);
                ims.insert(ims.begin() + i + 1, eval(um));
                continue;
            }
            ++i;
        }

        // 2. branch cuts; a scan cell can hide several jumps (A -> C -> B), so
        // keep extracting transitions from the left until the endpoints agree
        std::vector<double> cuts;
        cuts.push_back(us.front());
        for (std::size_t i = 0; i + 1 < us.size(); ++i) {
            double ua = us[i], ub = us[i + 1];
            ImageSample ia = ims[i];
            const ImageSample& ib = ims[i + 1];
            int guard = 0;
            while (!ia.same_branch(ib, half_perim(ia)) && guard++ < 24) {
                double c = bisect_branch(ua, ub, ia, ib);
                cuts.push_back(c);
                double step = std::max(1e-11 * std::max(1.0, std::abs(ub)), (ub - c) * 1e-9);
                ua = c + step;
                if (!(ua < ub)) break;
                ia = eval(ua);
            }
        }
        cuts.push_back(us.back());
        std::sort(cuts.begin(), cuts.end());

        // 3. per smooth cell: trim grazing ends, then strip and hole cuts, then emit
        double m_keep = 1.0 / (static_cast<double>(opts_.k_max_strip + 1) * (opts_.k_max_strip + 1));
        auto graze = [&](const ImageSample& s) { return !s.valid || s.margin < m_keep; };
        for (std::size_t ci = 0; ci + 1 < cuts.size(); ++ci) {
            double a = cuts[ci], b = cuts[ci + 1];
            if (!(b - a > 0.0)) continue;
            double eps = std::max(1e-12 * std::max(1.0, std::abs(b)), 1e-9 * (b - a));
            double am = a + eps, bm = b - eps;
            if (!(bm > am)) {
                acc.dropped += std::max(0.0, parent_weight * mass_(a, b));
                continue;
            }
            ImageSample ia = eval(am), ib = eval(bm);
            ImageSample icen = eval(0.5 * (am + bm));
            if (graze(icen)) {
                // the whole cell sits beyond the last kept strip
                double w = std::max(0.0, parent_weight * mass_(a, b));
                acc.dropped += w;
                acc.drop_strip += w;
                continue;
            }
            // a smooth branch ends on a grazing collision with the margin
            // monotone near the end: trim up to the outermost kept boundary,
            // accounting the trimmed sliver as strip truncation
            if (graze(ia)) {
                double lo = am, hi = 0.5 * (am + bm);
                for (int it = 0; it < 60 && hi - lo > 1e-12 * std::max(1.0, std::abs(hi)); ++it) {
                    double mid = 0.5 * (lo + hi);
                    if (graze(eval(mid)))
                        lo = mid;
                    else
                        hi = mid;
                }
                double w = std::max(0.0, parent_weight * mass_(a, hi));
                acc.dropped += w;
                acc.drop_strip += w;
                am = hi;
                ia = eval(am);
            }
            if (graze(ib)) {
                double lo = 0.5 * (am + bm), hi = bm;
                for (int it = 0; it < 60 && hi - lo > 1e-12 * std::max(1.0, std::abs(hi)); ++it) {
                    double mid = 0.5 * (lo + hi);
                    if (graze(eval(mid)))
                        hi = mid;
                    else
                        lo = mid;
                }
                double w = std::max(0.0, parent_weight * mass_(lo, b));
                acc.dropped += w;
                acc.drop_strip += w;
                bm = lo;
                ib = eval(bm);
            }
            if (!(bm > am)) continue;
            if (graze(ia) || graze(ib) || !ia.same_target(icen) || !ib.same_target(icen)) {
                // unresolved sliver around a singularity
                double w = std::max(0.0, parent_weight * mass_(am, bm));
#ifdef BILLIARD_DEBUG_PUSH
                std::fprintf(stderr,
                             "sliver drop: cell [%.12f, %.12f] w=%.3e ga=%d gb=%d "
                             "ia=(%d,%d,%d,%d m=%.2e) ib=(%d,%d,%d,%d m=%.2e) icen=(%d,%d,%d,%d)\n",
                             am, bm, w, (int)graze(ia), (int)graze(ib), (int)ia.valid, ia.scatterer,
                             ia.kx, ia.ky, ia.margin, (int)ib.valid, ib.scatterer, ib.kx, ib.ky,
                             ib.margin, (int)icen.valid, icen.scatterer, icen.kx, icen.ky);
#endif
                acc.dropped += w;
                acc.drop_sliver += w;
                ++acc.resolution_losses;
                continue;
            }
            std::vector<double> sub;
            sub.push_back(am);
            strip_cuts(am, bm, ia, ib, sub);
            hole_cuts(am, bm, ia, ib, sub);
            sub.push_back(bm);
            std::sort(sub.begin(), sub.end());

            for (std::size_t si = 0; si + 1 < sub.size(); ++si) {
                double sa = sub[si], sb = sub[si + 1];
                if (!(sb - sa > 0.0)) continue;
                double w = parent_weight * mass_(sa, sb);
                if (!(w > 0.0)) continue;
                double mid = 0.5 * (sa + sb);
                ImageSample imid = eval(mid);
                if (!imid.valid || !imid.same_target(ia)) {
                    acc.dropped += w;
                    acc.drop_sliver += w;
                    ++acc.resolution_losses;
                    continue;
                }
                if (imid.strip > opts_.k_max_strip) {
                    acc.dropped += w;
                    acc.drop_strip += w;
                    continue;
                }
                if (hole_) {
                    SourcePoint sp = src_(mid);
                    bool cur_in = hole_->contains(sp.r);
                    bool img_in = hole_->contains(imid.r1);
                    if (kill_hole_ && (cur_in || img_in)) {
                        acc.killed += w;
                        continue;
                    }
                }
                emit(sa, sb, w, imid.strip, parent_id, out, acc);
            }
        }
    }

private:
    double half_perim(const ImageSample& im) const {
        if (!im.valid || im.scatterer < 0) return 1e300;
        return pi * table_.scatterers[im.scatterer].radius;  // half of 2*pi*R
    }

    double bisect_branch(double ua, double ub, ImageSample ia, ImageSample ib) const {
        // the final bracket must be narrower than the cell insets used later
        for (int it = 0; it < 80 && ub - ua > 1e-13 * std::max(1.0, std::abs(ub)); ++it) {
            double um = 0.5 * (ua + ub);
            ImageSample im = eval(um);
            if (im.same_branch(ia, half_perim(ia))) {
                ua = um;
                ia = im;
            } else {
                ub = um;
                ib = im;
            }
        }
        return 0.5 * (ua + ub);
    }

    /// phi1 is strictly monotone along a smooth cell; locate crossings of the
    /// homogeneity boundaries +-(pi/2 - k^{-2}).
    void strip_cuts(double a, double b, const ImageSample& ia, const ImageSample& ib,
                    std::vector<double>& sub) const {
        double lo = std::min(ia.phi1, ib.phi1), hi = std::max(ia.phi1, ib.phi1);
        auto add_boundary = [&](double bound) {
            if (bound > lo && bound < hi) sub.push_back(bisect_phi1(a, b, ia.phi1, bound));
        };
        for (int sgn : {+1, -1}) {
            for (int k = opts_.k0; k <= opts_.k_max_strip + 1; ++k) {
                double bound = sgn * (0.5 * pi - 1.0 / (static_cast<double>(k) * k));
                if (bound > lo && bound < hi)
                    add_boundary(bound);
                else if (sgn > 0 && bound > hi)
                    break;
                else if (sgn < 0 && bound < lo)
                    break;
            }
        }
    }

    double bisect_phi1(double ua, double ub, double phi1_a, double bound) const {
        bool a_below = phi1_a < bound;
        for (int it = 0; it < 60 && ub - ua > 1e-11 * std::max(1.0, std::abs(ub)); ++it) {
            double um = 0.5 * (ua + ub);
            ImageSample im = eval(um);
            bool below = im.valid ? (im.phi1 < bound) : a_below;
            if (below == a_below)
                ua = um;
            else
                ub = um;
        }
        return 0.5 * (ua + ub);
    }

    void hole_cuts(double a, double b, const ImageSample& ia, const ImageSample& ib,
                   std::vector<double>& sub) const {
        if (!hole_ || !(hole_->t > 0.0)) return;
        // source-side edges (source parameter is the arc-length for graph curves)
        SourcePoint pa = src_(a), pb = src_(b);
        if (!std::isinf(pa.slope)) {
            double rlo = std::min(pa.r, pb.r), rhi = std::max(pa.r, pb.r);
            for (double edge : {hole_->lo, hole_->hi})
                if (edge > rlo && edge < rhi) sub.push_back(bisect_source_r(a, b, pa.r, edge));
        }
        // image-side edges: r1 is strictly monotone along a smooth cell
        double ilo = std::min(ia.r1, ib.r1), ihi = std::max(ia.r1, ib.r1);
        for (double edge : {hole_->lo, hole_->hi})
            if (edge > ilo && edge < ihi) sub.push_back(bisect_r1(a, b, ia.r1, edge));
    }

    double bisect_source_r(double ua, double ub, double ra, double edge) const {
        bool a_below = ra < edge;
        for (int it = 0; it < 60 && ub - ua > 1e-11 * std::max(1.0, std::abs(ub)); ++it) {
            double um = 0.5 * (ua + ub);
            bool below = src_(um).r < edge;
            if (below == a_below)
                ua = um;
            else
                ub = um;
        }
        return 0.5 * (ua + ub);
    }

    double bisect_r1(double ua, double ub, double r1_a, double edge) const {
        bool a_below = r1_a < edge;
        for (int it = 0; it < 60 && ub - ua > 1e-11 * std::max(1.0, std::abs(ub)); ++it) {
            double um = 0.5 * (ua + ub);
            ImageSample im = eval(um);
            bool below = im.valid ? (im.r1 < edge) : a_below;
            if (below == a_below)
                ua = um;
            else
                ub = um;
        }
        return 0.5 * (ua + ub);
    }

    /// Sample the image of [a, b], split it into length-bounded chunks and
    /// append the resulting pairs. The expansion varies along the cell, so
    /// chunks come from cumulative-length quantiles of a probe and any chunk
    /// still exceeding delta_star is re-split.
    void emit(double a, double b, double weight, int strip, int64_t parent_id,
              std::vector<StandardPair>& out, PushAccounting& acc) const {
        const int n_probe = 33;
        double cum[n_probe];
        cum[0] = 0.0;
        ImageSample prev;
        for (int i = 0; i < n_probe; ++i) {
            double u = a + (b - a) * i / (n_probe - 1.0);
            ImageSample im = eval(u);
            if (!im.valid) {
                acc.dropped += weight;
                acc.drop_emit += weight;
                ++acc.resolution_losses;
                return;
            }
            if (i > 0)
                cum[i] = cum[i - 1] + std::hypot(im.r1 - prev.r1, im.phi1 - prev.phi1);
            prev = im;
        }
        double L = cum[n_probe - 1];
        int n_sub = std::max(1, static_cast<int>(std::ceil(L / (0.98 * opts_.delta_star))));
        auto u_at_length = [&](double target) {
            int i = 0;
            while (i + 2 < n_probe && cum[i + 1] < target) ++i;
            double seg = cum[i + 1] - cum[i];
            double f = seg > 0.0 ? (target - cum[i]) / seg : 0.0;
            return a + (b - a) * (i + std::min(std::max(f, 0.0), 1.0)) / (n_probe - 1.0);
        };
        std::vector<std::pair<double, double>> work;
        for (int sc = n_sub - 1; sc >= 0; --sc)
            work.emplace_back(sc == 0 ? a : u_at_length(L * sc / n_sub),
                              sc == n_sub - 1 ? b : u_at_length(L * (sc + 1) / n_sub));
        double target_h = opts_.delta_star / 32.0;
        int resplits = 0;
        while (!work.empty()) {
            auto [ca, cb] = work.back();
            work.pop_back();
            double Lc = L * (cb - ca) / (b - a);
            int m = static_cast<int>(std::ceil(std::max(Lc, opts_.delta_star / 4.0) / target_h)) | 1;
            m = std::clamp(m, opts_.min_nodes, opts_.max_nodes);
            double w = n_sub == 1 && resplits == 0
                           ? weight
                           : weight * mass_(ca, cb) / std::max(mass_(a, b), 1e-300);
            if (w < opts_.mass_floor) {
                acc.dropped += std::max(w, 0.0);
                acc.drop_floor += std::max(w, 0.0);
                continue;
            }

            StandardPair pr;
            pr.weight = w;
            pr.strip = strip;
            pr.parent = parent_id;
            pr.r.resize(m);
            pr.phi.resize(m);
            pr.slope.resize(m);
            pr.rho.resize(m);
            bool ok = true;
            for (int i = 0; i < m; ++i) {
                double u = ca + (cb - ca) * i / (m - 1.0);
                ImageSample im = eval(u);
                if (!im.valid || !(im.density1 > 0.0) || !std::isfinite(im.slope1)) {
                    ok = false;
                    break;
                }
                pr.r[i] = im.r1;
                pr.phi[i] = im.phi1;
                pr.slope[i] = im.slope1;
                pr.rho[i] = im.density1;
            }
            if (ok) {
                bool inc = pr.r.front() < pr.r.back();
                if (!inc) {
                    std::reverse(pr.r.begin(), pr.r.end());
                    std::reverse(pr.phi.begin(), pr.phi.end());
                    std::reverse(pr.slope.begin(), pr.slope.end());
                    std::reverse(pr.rho.begin(), pr.rho.end());
                }
                for (std::size_t i = 0; i + 1 < pr.r.size(); ++i)
                    if (!(pr.r[i + 1] > pr.r[i])) ok = false;
            }
            if (!ok) {
                acc.dropped += w;
                acc.drop_emit += w;
                ++acc.resolution_losses;
                continue;
            }
            if (pr.length() > opts_.delta_star && resplits < 64) {
                ++resplits;
                double cm = 0.5 * (ca + cb);
                work.emplace_back(cm, cb);
                work.emplace_back(ca, cm);
                continue;
            }
            double mass = simpson(pr.r, pr.rho);
            if (!(mass > 0.0)) {
                acc.dropped += w;
                acc.drop_emit += w;
                ++acc.resolution_losses;
                continue;
            }
            for (auto& x : pr.rho) x /= mass;
            out.push_back(std::move(pr));
        }
    }

    const Table& table_;
    const std::function<SourcePoint(double)>& src_;
    const std::function<double(double, double)>& mass_;
    const FamilyOptions& opts_;
    const Hole* hole_;
    bool kill_hole_;
};

/// Quadratic (Simpson-cell) interpolation of the density of a pair.
inline double rho_at(const StandardPair& p, double x) {
    std::size_t n = p.r.size();
    auto it = std::upper_bound(p.r.begin(), p.r.end(), x);
    std::size_t i = it == p.r.begin() ? 0 : static_cast<std::size_t>(it - p.r.begin()) - 1;
    i = std::min(i, n - 2);
    std::size_t c = (i / 2) * 2;  // Simpson cell start
    if (c + 2 >= n) c = n - 3;
    double x1 = p.r[c + 1];
    double u0 = p.r[c] - x1, u2 = p.r[c + 2] - x1;
    double f0 = p.rho[c], f1 = p.rho[c + 1], f2 = p.rho[c + 2];
    double c2 = (u2 * (f0 - f1) - u0 * (f2 - f1)) / (u0 * u0 * u2 - u2 * u2 * u0);
    double c1 = (f2 - f1 - c2 * u2 * u2) / u2;
    double u = x - x1;
    return f1 + c1 * u + c2 * u * u;
}

/// Integral of the pair's (quadratically interpolated) density over [a, b].
inline double rho_integral(const StandardPair& p, double a, double b) {
    std::size_t n = p.r.size();
    a = std::max(a, p.r.front());
    b = std::min(b, p.r.back());
    if (!(b > a)) return 0.0;
    KahanSum acc;
    for (std::size_t c = 0; c + 2 < n; c += 2) {
        double lo = std::max(a, p.r[c]);
        double hi = std::min(b, p.r[c + 2]);
        if (!(hi > lo)) continue;
        double x1 = p.r[c + 1];
        double u0 = p.r[c] - x1, u2 = p.r[c + 2] - x1;
        double f0 = p.rho[c], f1 = p.rho[c + 1], f2 = p.rho[c + 2];
        double c2 = (u2 * (f0 - f1) - u0 * (f2 - f1)) / (u0 * u0 * u2 - u2 * u2 * u0);
        double c1 = (f2 - f1 - c2 * u2 * u2) / u2;
        double ua = lo - x1, ub = hi - x1;
        acc.add(f1 * (ub - ua) + 0.5 * c1 * (ub * ub - ua * ua) +
                c2 * (ub * ub * ub - ua * ua * ua) / 3.0);
    }
    return acc.value();
}

/// Graph value and slope of a pair at x by cubic Hermite interpolation.
inline void graph_at(const StandardPair& p, double x, double& phi, double& slope) {
    std::size_t n = p.r.size();
    auto it = std::upper_bound(p.r.begin(), p.r.end(), x);
    std::size_t i = it == p.r.begin() ? 0 : static_cast<std::size_t>(it - p.r.begin()) - 1;
    i = std::min(i, n - 2);
    double x0 = p.r[i], x1 = p.r[i + 1];
    double h = x1 - x0;
    phi = hermite(x0, p.phi[i], p.slope[i], x1, p.phi[i + 1], p.slope[i + 1], x);
    double u = (x - x0) / h;
    double f0 = p.phi[i], f1 = p.phi[i + 1], d0 = p.slope[i], d1 = p.slope[i + 1];
    slope = ((6 * u * u - 6 * u) * f0 + (3 * u * u - 4 * u + 1) * h * d0 +
             (-6 * u * u + 6 * u) * f1 + (3 * u * u - 2 * u) * h * d1) /
            h;
}

}  // namespace fam_detail

/// Push-forward of the measure (1/2) cos(phi) dphi on the vertical line
/// {r} x [-pi/2, pi/2], partitioned by the homogeneity strips of the source
/// and of the image. Weights are exact: (sin(phi_hi) - sin(phi_lo)) / 2.
inline StandardFamily vertical_line_family(const Table& table, double r_star,
                                           const FamilyOptions& opts = {}) {
    double P = table.total_perimeter;
    double rs = wrap(r_star, P);
    {
        int i = table.locate(rs);
        if (!(rs > table.arc_start(i) && rs < table.cumulative_arclength[i]))
            throw PreconditionError("vertical_line_family: r on a scatterer junction");
    }

    StandardFamily fam;
    fam.mode = FamilyMode::Closed;
    fam.opts = opts;

    std::function<fam_detail::SourcePoint(double)> src = [rs](double u) {
        return fam_detail::SourcePoint{rs, u, fam_detail::inf_slope, 0.5 * std::cos(u)};
    };
    std::function<double(double, double)> mass = [](double a, double b) {
        return 0.5 * (std::sin(b) - std::sin(a));
    };
    fam_detail::Pusher pusher(table, src, mass, opts, nullptr, false);
    fam_detail::PushAccounting acc;

    // source strip intervals, truncated at k_max_strip
    double k0b = 0.5 * pi - 1.0 / (static_cast<double>(opts.k0) * opts.k0);
    double cutoff =
        0.5 * pi - 1.0 / (static_cast<double>(opts.k_max_strip + 1) * (opts.k_max_strip + 1));
    struct Segment {
        double lo, hi;
        int scan;
    };
    std::vector<Segment> segments;
    segments.push_back({-k0b, k0b, 2048});
    for (int k = opts.k0; k <= opts.k_max_strip; ++k) {
        double b0 = 0.5 * pi - 1.0 / (static_cast<double>(k) * k);
        double b1 = 0.5 * pi - 1.0 / (static_cast<double>(k + 1) * (k + 1));
        segments.push_back({b0, b1, 8});
        segments.push_back({-b1, -b0, 8});
    }
    acc.dropped += 2.0 * 0.5 * (1.0 - std::sin(cutoff));  // grazing tails beyond k_max

    std::vector<std::vector<StandardPair>> parts(segments.size());
    std::vector<fam_detail::PushAccounting> accs(segments.size());
    for_chunks(segments.size(), 1, [&](std::size_t c, std::size_t i0, std::size_t) {
        const Segment& seg = segments[i0];
        pusher.push(seg.lo, seg.hi, 1.0, static_cast<int64_t>(i0), seg.scan, parts[c], accs[c]);
    });
    for (std::size_t i = 0; i < segments.size(); ++i) {
        for (auto& p : parts[i]) fam.pairs.push_back(std::move(p));
        acc.dropped += accs[i].dropped;
        acc.killed += accs[i].killed;
        fam.resolution_losses += accs[i].resolution_losses;
    }
    fam.dropped_mass_total = fam.dropped_mass_last = acc.dropped;

    // normalize to a probability family; the (tiny) truncated mass stays on record
    double retained = fam.total_weight();
    fam.retained_mass = retained;
    if (!(retained > 0.0)) throw PreconditionError("vertical_line_family: no retained mass");
    for (auto& p : fam.pairs) p.weight /= retained;
    return fam;
}

/// mu_G(phi) = sum_j p_j Int rho_j phi(r, phi_j(r)) dr by composite Simpson
/// on each pair's grid.
inline double family_measure(const StandardFamily& fam, const Observable& obs) {
    std::size_t n = fam.pairs.size();
    std::vector<double> partial(n, 0.0);
    for_chunks(n, 64, [&](std::size_t, std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const StandardPair& p = fam.pairs[i];
            std::vector<double> f(p.n());
            for (std::size_t j = 0; j < p.n(); ++j)
                f[j] = p.rho[j] * obs({p.r[j], p.phi[j]});
            partial[i] = p.weight * simpson(p.r, f);
        }
    });
    KahanSum acc;
    for (double v : partial) acc.add(v);
    return acc.value();
}

/// Boundary functional Z(G) = sum_j p_j / |W_j|.
inline double boundary_Z(const StandardFamily& fam) {
    KahanSum acc;
    for (const auto& p : fam.pairs) acc.add(p.weight / std::max(p.length(), 1e-300));
    return acc.value();
}

namespace fam_detail {

/// Deterministic unbiased thinning to the pair budget: pairs with weight >= c
/// survive unchanged, smaller ones survive with probability w/c (systematic
/// low-variance sampling) and weight c. The exact evolution multiplies the
/// pair count roughly by the mean expansion every step, so some budget is
/// unavoidable; diagnostics on thinned families are statistical estimates.
inline void thin_family(StandardFamily& fam) {
    std::size_t budget = fam.opts.max_pairs;
    if (budget == 0 || fam.pairs.size() <= budget) return;
    double total = fam.total_weight();
    if (!(total > 0.0)) return;

    double clo = 0.0, chi = total;
    for (int it = 0; it < 200; ++it) {
        double c = 0.5 * (clo + chi);
        double expect = 0.0;
        for (const auto& p : fam.pairs) expect += std::min(1.0, p.weight / c);
        if (expect > budget)
            clo = c;
        else
            chi = c;
    }
    double c = chi;

    CounterRng rng(fam.opts.thin_seed, static_cast<uint64_t>(fam.generation));
    double u = rng.next_u01();
    std::vector<StandardPair> kept;
    kept.reserve(budget + 16);
    double acc = 0.0;
    long taken = 0;
    for (auto& p : fam.pairs) {
        if (p.weight >= c) {
            kept.push_back(std::move(p));
            continue;
        }
        acc += p.weight / c;
        if (std::floor(acc - u) >= taken) {
            ++taken;
            p.weight = c;
            kept.push_back(std::move(p));
        }
    }
    fam.pairs = std::move(kept);
    double new_total = fam.total_weight();
    if (new_total > 0.0) {
        double scale = total / new_total;
        for (auto& p : fam.pairs) p.weight *= scale;
    }
    ++fam.thin_events;
}

}  // namespace fam_detail

/// One step of the family evolution. Closed mode pushes by F and ignores the
/// hole; hatted mode adds the hole-boundary cuts but keeps all mass; leaky
/// mode drops the mass entering the hole (now or at the image) and
/// renormalizes by the surviving fraction.
inline StandardFamily evolve_family(const StandardFamily& family, const Table& table,
                                    const Hole& hole, FamilyMode mode) {
    const FamilyOptions& opts = family.opts;
    std::size_t n = family.pairs.size();
    if (n == 0) throw PreconditionError("evolve_family: empty family");

    const Hole* hptr = (mode == FamilyMode::Closed || hole.t <= 0.0) ? nullptr : &hole;
    bool kill = mode == FamilyMode::Leaky;

    std::vector<std::vector<StandardPair>> parts(n);
    std::vector<fam_detail::PushAccounting> accs(n);
    for_chunks(n, 4, [&](std::size_t, std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const StandardPair& p = family.pairs[i];
            std::function<fam_detail::SourcePoint(double)> src =
                [&p](double u) {
                    fam_detail::SourcePoint s;
                    s.r = u;
                    fam_detail::graph_at(p, u, s.phi, s.slope);
                    s.density = fam_detail::rho_at(p, u);
                    return s;
                };
            std::function<double(double, double)> mass = [&p](double a, double b) {
                return fam_detail::rho_integral(p, a, b);
            };
            fam_detail::Pusher pusher(table, src, mass, opts, hptr, kill);
            int scan = static_cast<int>(p.n()) * 2;
            pusher.push(p.r.front(), p.r.back(), p.weight, static_cast<int64_t>(i), scan,
                        parts[i], accs[i]);
        }
    });

    StandardFamily out;
    out.mode = mode;
    out.opts = opts;
    out.generation = family.generation + 1;
    out.dropped_mass_total = family.dropped_mass_total;
    out.resolution_losses = family.resolution_losses;
    out.thin_events = family.thin_events;

    double dropped = 0.0, killed = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& p : parts[i]) out.pairs.push_back(std::move(p));
        dropped += accs[i].dropped;
        killed += accs[i].killed;
        out.resolution_losses += accs[i].resolution_losses;
    }
    out.dropped_mass_last = dropped;
    out.dropped_mass_total += dropped;

    if (mode == FamilyMode::Leaky) {
        double surviving = out.total_weight();
        out.surviving_fraction_last = surviving;
        if (!(surviving > 0.0))
            throw MassExtinct("evolve_family: no surviving mass in leaky mode");
        for (auto& p : out.pairs) p.weight /= surviving;
    }
    fam_detail::thin_family(out);
    return out;
}

/// Empirical regularity data: Z, the sampled Hoelder-log constant of the
/// densities, the worst curvature of the graphs and the worst per-pair
/// density ratio.
inline RegularityReport regularity_report(const StandardFamily& fam) {
    RegularityReport rep;
    rep.n_pairs = fam.pairs.size();
    rep.Z = boundary_Z(fam);
    for (const auto& p : fam.pairs) {
        double rmin = p.rho[0], rmax = p.rho[0];
        for (double x : p.rho) {
            rmin = std::min(rmin, x);
            rmax = std::max(rmax, x);
        }
        if (rmin > 0.0) rep.max_density_ratio = std::max(rep.max_density_ratio, rmax / rmin);
        std::size_t m = p.n();
        for (std::size_t stride = 1; stride < m; stride *= 2) {
            for (std::size_t i = 0; i + stride < m; ++i) {
                double dr = p.r[i + stride] - p.r[i];
                if (!(dr > 0.0)) continue;
                double q = std::abs(std::log(p.rho[i + stride] / p.rho[i])) / std::cbrt(dr);
                rep.varpi_emp = std::max(rep.varpi_emp, q);
            }
        }
        for (std::size_t i = 0; i + 1 < m; ++i) {
            double dd = std::abs(p.slope[i + 1] - p.slope[i]) / (p.r[i + 1] - p.r[i]);
            rep.max_curvature = std::max(rep.max_curvature, dd);
        }
    }
    return rep;
}

/// d_n = |mu_{L_t^n G_a}(phi) - mu_{L_t^n G_b}(phi)| with a geometric fit of
/// the decaying segment (points below the noise floor are excluded).
inline DecaySeries mixing_diagnostic(StandardFamily family_a, StandardFamily family_b,
                                     const Table& table, const Hole& hole, int n_max,
                                     const Observable& obs) {
    DecaySeries out;
    for (int k = 0; k <= n_max; ++k) {
        double da = family_measure(family_a, obs);
        double db = family_measure(family_b, obs);
        out.d.push_back(std::abs(da - db));
        if (k == n_max) break;
        family_a = evolve_family(family_a, table, hole, FamilyMode::Leaky);
        family_b = evolve_family(family_b, table, hole, FamilyMode::Leaky);
    }
    double dmin = out.d.empty() ? 0.0 : *std::min_element(out.d.begin(), out.d.end());
    out.noise_floor = std::max(3.0 * dmin, 1e-12);
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < out.d.size(); ++k) {
        if (out.d[k] <= out.noise_floor) break;
        xs.push_back(static_cast<double>(k));
        ys.push_back(std::log(out.d[k]));
    }
    if (xs.size() >= 3) {
        LinFit fit = linear_fit(xs, ys);
        out.gamma_emp = std::exp(fit.slope);
        out.r2 = fit.r2;
        out.fitted_points = static_cast<int>(xs.size());
    }
    return out;
}

}  // namespace billiard
