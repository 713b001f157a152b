#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "billiard/errors.hpp"

namespace billiard {

/// Neumaier compensated summation.
class KahanSum {
public:
    void add(double x) {
        double t = s_ + x;
        if (std::abs(s_) >= std::abs(x))
            c_ += (s_ - t) + x;
        else
            c_ += (x - t) + s_;
        s_ = t;
    }
    double value() const { return s_ + c_; }

private:
    double s_ = 0.0;
    double c_ = 0.0;
};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        double w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
}

/// Integrate f over [a, b]: single Gauss-Legendre rule up to 512 nodes,
/// composite 32-point panels beyond that.
template <typename F>
double integrate_gl(F&& f, double a, double b, int n) {
    std::vector<double> x, w;
    if (n <= 512) {
        gauss_legendre(n, x, w);
        KahanSum acc;
        double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        for (int i = 0; i < n; ++i) acc.add(w[i] * half * f(mid + half * x[i]));
        return acc.value();
    }
    int panels = (n + 31) / 32;
    gauss_legendre(32, x, w);
    KahanSum acc;
    for (int p = 0; p < panels; ++p) {
        double pa = a + (b - a) * p / panels;
        double pb = a + (b - a) * (p + 1) / panels;
        double mid = 0.5 * (pa + pb), half = 0.5 * (pb - pa);
        for (int i = 0; i < 32; ++i) acc.add(w[i] * half * f(mid + half * x[i]));
    }
    return acc.value();
}

struct LinFit {
    double slope = 0.0;
    double intercept = 0.0;
    double se_slope = 0.0;
    double se_intercept = 0.0;
    double r2 = 0.0;
    double rms_residual = 0.0;
};

/// Ordinary least squares y = a + b x with standard errors and R^2.
inline LinFit linear_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    std::size_t n = xs.size();
    if (n != ys.size() || n < 2) throw PreconditionError("linear_fit: need >= 2 points");
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    LinFit fit;
    if (sxx == 0.0) throw PreconditionError("linear_fit: degenerate abscissae");
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = ys[i] - (fit.intercept + fit.slope * xs[i]);
        ss_res += e * e;
    }
    fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    fit.rms_residual = std::sqrt(ss_res / n);
    if (n > 2) {
        double s2 = ss_res / (n - 2);
        fit.se_slope = std::sqrt(s2 / sxx);
        fit.se_intercept = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    return fit;
}

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // sample variance (n-1 in the denominator)
    std::size_t n = 0;
    double stderr_mean() const { return n > 1 ? std::sqrt(var / n) : 0.0; }
};

inline MeanVar mean_var(const std::vector<double>& v) {
    MeanVar mv;
    mv.n = v.size();
    if (mv.n == 0) return mv;
    KahanSum s;
    for (double x : v) s.add(x);
    mv.mean = s.value() / mv.n;
    if (mv.n > 1) {
        KahanSum q;
        for (double x : v) q.add((x - mv.mean) * (x - mv.mean));
        mv.var = q.value() / (mv.n - 1);
    }
    return mv;
}

/// Integral of the quadratic through (x0,f0), (x1,f1), (x2,f2) over [x0, x2].
inline double simpson_cell(double x0, double x1, double x2, double f0, double f1, double f2) {
    double h0 = x1 - x0, h1 = x2 - x1;
    double h = h0 + h1;
    return h / 6.0 * ((2.0 - h1 / h0) * f0 + (h * h) / (h0 * h1) * f1 + (2.0 - h0 / h1) * f2);
}

/// Composite Simpson over a strictly increasing grid with an odd number of nodes.
inline double simpson(const std::vector<double>& x, const std::vector<double>& f) {
    std::size_t n = x.size();
    if (n < 3 || n % 2 == 0 || f.size() != n)
        throw PreconditionError("simpson: need an odd number (>= 3) of nodes");
    KahanSum acc;
    for (std::size_t i = 0; i + 2 < n; i += 2)
        acc.add(simpson_cell(x[i], x[i + 1], x[i + 2], f[i], f[i + 1], f[i + 2]));
    return acc.value();
}

/// Cubic Hermite interpolation with value/derivative data at both ends.
inline double hermite(double x0, double f0, double d0, double x1, double f1, double d1, double x) {
    double h = x1 - x0;
    double u = (x - x0) / h;
    double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * f0 + (u3 - 2 * u2 + u) * h * d0 + (-2 * u3 + 3 * u2) * f1 +
           (u3 - u2) * h * d1;
}

}  // namespace billiard
