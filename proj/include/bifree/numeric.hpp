#pragma once

#include "bifree/error.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <span>
#include <thread>
#include <vector>

namespace bifree {

using cplx = std::complex<double>;

inline constexpr double pi = std::numbers::pi;
inline constexpr cplx I{0.0, 1.0};

// ============================================================================
// Grids and quadrature
// ============================================================================

struct UniformGrid {
    double lo = 0.0;
    double hi = 1.0;
    std::size_t n = 2;

    UniformGrid() = default;
    UniformGrid(double lo_, double hi_, std::size_t n_) : lo(lo_), hi(hi_), n(n_) {
        if (!(hi > lo) || n < 2 || !std::isfinite(lo) || !std::isfinite(hi))
            fail(ErrorKind::InvalidInput, "grid needs lo < hi and at least 2 points");
    }

    double step() const { return (hi - lo) / double(n - 1); }
    double operator[](std::size_t i) const { return lo + step() * double(i); }
    std::size_t size() const { return n; }

    std::vector<double> points() const {
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = (*this)[i];
        return p;
    }

    bool contains(double x) const { return x >= lo && x <= hi; }
};

template <class T>
T trapezoid(std::span<const T> f, double h) {
    if (f.size() < 2) return T{};
    T s = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
    return s * h;
}

inline double trapezoid(const std::vector<double>& f, double h) {
    return trapezoid<double>(std::span<const double>(f), h);
}

// Linear interpolation on a uniform grid, zero outside.
inline double interpolate(const UniformGrid& g, const std::vector<double>& v, double x) {
    if (x < g.lo || x > g.hi) return 0.0;
    double t = (x - g.lo) / g.step();
    auto i = static_cast<std::size_t>(std::floor(t));
    if (i >= g.n - 1) return v[g.n - 1];
    double a = t - double(i);
    return (1.0 - a) * v[i] + a * v[i + 1];
}

// log(1+u) accurate for small complex u.
inline cplx log1p(cplx u) {
    if (std::abs(u) < 0.1) {
        cplx term = u, sum = 0.0;
        for (int k = 1; k <= 18; ++k) {
            sum += (k % 2 ? 1.0 : -1.0) * term / double(k);
            term *= u;
        }
        return sum;
    }
    return std::log(1.0 + u);
}

// ============================================================================
// Extrapolation
// ============================================================================

// Neville table evaluated at h = 0 for samples f(h_i).
template <class T>
T neville_at_zero(std::span<const double> h, std::span<const T> f) {
    std::vector<T> p(f.begin(), f.end());
    const std::size_t n = p.size();
    for (std::size_t m = 1; m < n; ++m)
        for (std::size_t i = 0; i + m < n; ++i)
            p[i] = (h[i + m] * p[i] - h[i] * p[i + 1]) / (h[i + m] - h[i]);
    return p[0];
}

struct Extrapolated {
    double value;
    bool fallback;
};

// Extrapolate a limit h -> 0 from samples ordered by decreasing h. The
// polynomial extrapolant is rejected when it leaves the band spanned by the
// samples widened by their spread, and the smallest-h sample is used instead.
// A negative extrapolant from nonnegative samples is clamped to zero.
inline Extrapolated extrapolate_limit(std::span<const double> h, std::span<const double> f,
                                      bool nonnegative) {
    double v = neville_at_zero<double>(h, f);
    auto [mn, mx] = std::minmax_element(f.begin(), f.end());
    double span = *mx - *mn;
    bool bad = !std::isfinite(v) || v < *mn - span || v > *mx + span;
    if (bad) return {f.back(), true};
    if (nonnegative && v < 0.0 && *mn >= 0.0) return {0.0, false};
    return {v, false};
}

// ============================================================================
// Root finding
// ============================================================================

struct NewtonResult {
    cplx root;
    double residual;
    int iterations;
    bool converged;
};

// Complex Newton with step halving on residual growth.
template <class F, class DF>
NewtonResult newton(F&& f, DF&& df, cplx x0, double tol = 1e-12, int max_iter = 100) {
    cplx x = x0;
    cplx fx = f(x);
    double r = std::abs(fx);
    for (int it = 0; it < max_iter; ++it) {
        if (r <= tol) return {x, r, it, true};
        cplx d = df(x);
        if (d == cplx(0.0) || !std::isfinite(std::abs(d))) return {x, r, it, false};
        cplx step = fx / d;
        double lambda = 1.0;
        cplx xn = x - step;
        cplx fn = f(xn);
        for (int k = 0; k < 30 && !(std::abs(fn) < r) && std::isfinite(r); ++k) {
            lambda *= 0.5;
            xn = x - lambda * step;
            fn = f(xn);
        }
        if (!std::isfinite(std::abs(fn))) return {x, r, it, false};
        x = xn;
        fx = fn;
        r = std::abs(fx);
        if (std::abs(step) * lambda <= 1e-16 * std::max(1.0, std::abs(x)) && r > tol)
            return {x, r, it, r <= 10 * tol};
    }
    return {x, r, max_iter, r <= tol};
}

// ============================================================================
// Parallel sweeps
// ============================================================================

inline unsigned thread_count() {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* s = std::getenv("NUM_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(s, &end, 10);
        if (end != s && v > 0) return std::min<unsigned>(unsigned(v), hw);
    }
    return hw;
}

// Runs body(i) for i in [0, n). The first exception raised is rethrown.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
    unsigned nt = std::min<std::size_t>(thread_count(), n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nt);
    for (unsigned t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += nt) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace bifree
