#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

namespace phasekit {

// Order-zero Bessel function of the first kind. Power series up to |x| <= 20
// (alternating, accumulated in long double so cancellation stays below 1e-12),
// Hankel asymptotic expansion beyond.
inline double bessel_j0(double x) {
    x = std::fabs(x);
    if (x <= 20.0) {
        const long double q = -static_cast<long double>(x) * x / 4.0L;
        long double term = 1.0L, sum = 1.0L;
        for (int k = 1; k < 120; ++k) {
            term *= q / (static_cast<long double>(k) * k);
            sum += term;
            if (std::fabs(static_cast<double>(term)) < 1e-18 * std::max(1.0, std::fabs(static_cast<double>(sum))))
                break;
        }
        return static_cast<double>(sum);
    }
    const double z = 1.0 / x;
    const double z2 = z * z;
    const double p = 1.0 - z2 * (9.0 / 128.0 - z2 * 3675.0 / 32768.0);
    const double q = z * (-1.0 / 8.0 + z2 * 75.0 / 1024.0);
    const double chi = x - std::numbers::pi / 4.0;
    return std::sqrt(2.0 / (std::numbers::pi * x)) * (p * std::cos(chi) - q * std::sin(chi));
}

namespace detail {

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample variance about the mean (unbiased).
inline double variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// Mean of squares; the residual-variance convention used throughout is the
// second moment about the lock point, not about the sample mean.
inline double mean_square(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double ss_res = 0.0;
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("linear_fit: need >= 2 matched points");
    const double mx = mean(x), my = mean(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) throw std::invalid_argument("linear_fit: degenerate abscissa");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.ss_res = syy - f.slope * sxy;
    f.r_squared = (syy > 0.0) ? std::max(0.0, 1.0 - f.ss_res / syy) : 1.0;
    return f;
}

// Bisection root finder; f(lo) and f(hi) must bracket a sign change.
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     double tol = 1e-14, int max_iter = 200) {
    double flo = f(lo), fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0)) throw std::invalid_argument("bisect: no sign change");
    for (int i = 0; i < max_iter; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0 || (hi - lo) < tol * std::max(1.0, std::fabs(mid))) return mid;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// Solve a small dense symmetric system by Gaussian elimination with partial
// pivoting. Matrices here never exceed ~6x6.
inline std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        if (std::fabs(a[col][col]) < 1e-300) throw std::runtime_error("solve_dense: singular system");
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

// Non-negative least squares, Lawson-Hanson active set. columns[j] is the
// j-th basis column sampled on the data grid.
inline std::vector<double> nnls(const std::vector<std::vector<double>>& columns,
                                const std::vector<double>& target, int max_iter = 200) {
    const std::size_t ncol = columns.size();
    const std::size_t nrow = target.size();
    std::vector<double> x(ncol, 0.0);
    std::vector<bool> active(ncol, false);

    auto compute_residual = [&] {
        std::vector<double> r = target;
        for (std::size_t j = 0; j < ncol; ++j)
            if (x[j] != 0.0)
                for (std::size_t i = 0; i < nrow; ++i) r[i] -= columns[j][i] * x[j];
        return r;
    };

    auto solve_subset = [&](const std::vector<std::size_t>& idx) {
        const std::size_t m = idx.size();
        std::vector<std::vector<double>> ata(m, std::vector<double>(m, 0.0));
        std::vector<double> atb(m, 0.0);
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b2 = a; b2 < m; ++b2) {
                double s = 0.0;
                for (std::size_t i = 0; i < nrow; ++i) s += columns[idx[a]][i] * columns[idx[b2]][i];
                ata[a][b2] = ata[b2][a] = s;
            }
            double s = 0.0;
            for (std::size_t i = 0; i < nrow; ++i) s += columns[idx[a]][i] * target[i];
            atb[a] = s;
            ata[a][a] += 1e-12;  // ridge guard for near-collinear columns
        }
        return solve_dense(ata, atb);
    };

    for (int iter = 0; iter < max_iter; ++iter) {
        // Gradient of 1/2 |Ax-b|^2 restricted to the inactive set.
        std::vector<double> r = compute_residual();
        double best = 1e-10;
        std::ptrdiff_t pick = -1;
        for (std::size_t j = 0; j < ncol; ++j) {
            if (active[j]) continue;
            double g = 0.0;
            for (std::size_t i = 0; i < nrow; ++i) g += columns[j][i] * r[i];
            if (g > best) {
                best = g;
                pick = static_cast<std::ptrdiff_t>(j);
            }
        }
        if (pick < 0) break;
        active[static_cast<std::size_t>(pick)] = true;

        // Inner loop: solve on the active set, walk back any negatives.
        for (;;) {
            std::vector<std::size_t> idx;
            for (std::size_t j = 0; j < ncol; ++j)
                if (active[j]) idx.push_back(j);
            std::vector<double> z = solve_subset(idx);
            bool feasible = true;
            for (double v : z)
                if (v <= 0.0) feasible = false;
            if (feasible) {
                for (std::size_t k = 0; k < idx.size(); ++k) x[idx[k]] = z[k];
                break;
            }
            double alpha = 1.0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                if (z[k] <= 0.0) {
                    const double xk = x[idx[k]];
                    const double a = xk / (xk - z[k]);
                    alpha = std::min(alpha, a);
                }
            }
            for (std::size_t k = 0; k < idx.size(); ++k) {
                x[idx[k]] += alpha * (z[k] - x[idx[k]]);
                if (x[idx[k]] <= 1e-14) {
                    x[idx[k]] = 0.0;
                    active[idx[k]] = false;
                }
            }
        }
    }
    return x;
}

// Run fn(i) for i in [0, n) on up to `jobs` workers. Results must be written
// to pre-sized slots keyed by i so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t chunk = (n + jobs - 1) / jobs;
    for (unsigned w = 0; w < jobs; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail
}  // namespace phasekit
