#pragma once

// The acceptance criteria, shared by the `acceptance` test binary and
// `bifree_cli verify`. Tolerances are fixed here.

#include "bifree/additive2d.hpp"
#include "bifree/cumulants.hpp"
#include "bifree/multiplicative2d.hpp"

#include <cstdio>
#include <random>
#include <string>
#include <vector>

namespace bifree::acceptance {

// Closed-form values pinned to 18 digits.
namespace golden {
inline constexpr double cauchy_kernel_origin = 0.318309886183790671;   // 1/π, ℓ=1, r=2
inline constexpr double gaussian_density_origin = 0.135094911523117029; // (a,b,c) = (1,1,1/2)
inline constexpr double gaussian_kernel_origin = 0.424413181578387562;
inline constexpr double levy_kernel_origin = 4.08298816507359657;       // ℓ=0.5, r=1, s=t=0
inline constexpr std::uint64_t catalan[12] = {1, 2, 5, 14, 42, 132, 429, 1430, 4862, 16796, 58786, 208012};
} // namespace golden

struct Part {
    std::string label;
    double residual;
    double tolerance;
    bool ok() const { return residual <= tolerance; }
};

struct Result {
    int id;
    std::string name;
    std::vector<Part> parts;
    std::string error;  // module error name when a pipeline threw

    bool pass() const {
        if (!error.empty()) return false;
        for (const auto& p : parts)
            if (!p.ok()) return false;
        return true;
    }

    std::string line() const {
        std::string s = "criterion " + std::to_string(id) + (pass() ? " PASS " : " FAIL ") + name;
        char buf[160];
        for (std::size_t i = 0; i < parts.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s %s=%.3e (tol %.0e)", i ? ";" : ":", parts[i].label.c_str(),
                          parts[i].residual, parts[i].tolerance);
            s += buf;
        }
        if (!error.empty()) s += " [" + error + "]";
        return s;
    }
};

namespace detail {

inline std::vector<cplx> upper_points(int n, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> re(-5, 5), im(-3, 0.5);
    std::vector<cplx> z;
    for (int i = 0; i < n; ++i) z.emplace_back(re(rng), std::pow(10.0, im(rng)));
    return z;
}

inline std::vector<cplx> far_points(int n, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> rad(3, 10), ang(0.05, pi - 0.05);
    std::bernoulli_distribution flip;
    std::vector<cplx> z;
    for (int i = 0; i < n; ++i) {
        cplx p = std::polar(rad(rng), ang(rng));
        z.push_back(flip(rng) ? std::conj(p) : p);
    }
    return z;
}

inline double moment_error(const JointDensityGrid& f, const CumulantTable<Rational>& t, int order) {
    auto mt = joint_moments_from_table(t, order);
    double worst = 0;
    for (int n = 0; n <= order; ++n)
        for (int m = 0; n + m <= order; ++m) worst = std::max(worst, std::abs(f.moment(n, m) - to_double(mt.joint(n, m))));
    return worst;
}

} // namespace detail

inline Result free_cauchy_kernel() {
    Result r{1, "free Cauchy kernel", {}, {}};
    UniformGrid g(-5, 5, 201);
    auto k = transition_kernel(recover_density_2d(cauchy_process_green(1, 2), g, g));
    double sup = 0;
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) sup = std::max(sup, std::abs(k.at(i, j) - cauchy_kernel(1, 2, g[i], g[j])));
    r.parts.push_back({"sup", sup, 1e-3});
    r.parts.push_back({"k(0,0)", std::abs(k.at(100, 100) - golden::cauchy_kernel_origin), 1e-3});
    return r;
}

inline Result gaussian_density_and_kernel() {
    Result r{2, "bi-free Gaussian density and kernel", {}, {}};
    const double a = 1, b = 1, c = 0.5;
    UniformGrid g(-2.1, 2.1, 257);
    auto f = recover_density_2d(gaussian_green(a, b, c), g, g);
    auto k = transition_kernel(f);
    auto interior = [&](std::size_t i) { return std::abs(g[i]) <= 1.8 + 1e-12; };
    double sf = 0, sk = 0;
    for (std::size_t i = 0; i < g.n; ++i) {
        if (!interior(i)) continue;
        for (std::size_t j = 0; j < g.n; ++j) {
            if (!interior(j)) continue;
            sf = std::max(sf, std::abs(f.at(i, j) - gaussian_joint_density(a, b, c, g[i], g[j])));
            sk = std::max(sk, k.masked[i] ? 1.0 : std::abs(k.at(i, j) - gaussian_kernel(a, b, c, g[i], g[j])));
        }
    }
    r.parts.push_back({"density sup", sf, 1e-3});
    r.parts.push_back({"kernel sup", sk, 1e-3});
    double origin = std::max(std::abs(f.at(128, 128) - golden::gaussian_density_origin),
                             std::abs(k.at(128, 128) - golden::gaussian_kernel_origin));
    r.parts.push_back({"origin", origin, 1e-3});
    return r;
}

inline Result levy_kernel_on_torus() {
    Result r{3, "unitary Levy kernel", {}, {}};
    const std::size_t N = 512;
    const double l = 0.5, rr = 1.0;
    auto k = circle_transition_kernel(recover_density_torus(levy_pair(l, rr), N));
    double sup = 0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
            sup = std::max(sup, k.masked[i] ? 1.0
                                            : std::abs(k.at(i, j) - levy_kernel(l, rr, circle_angle(i, N), circle_angle(j, N))));
    r.parts.push_back({"sup", sup, 5e-3});
    r.parts.push_back({"k(0,0)", std::abs(k.at(0, 0) - golden::levy_kernel_origin), 5e-3});
    return r;
}

inline Result moment_oracles() {
    Result r{4, "quadrature moments vs cumulant tables", {}, {}};
    const std::size_t n = 2048;
    auto fg = recover_density_2d(gaussian_green(1, 1, 0.5), n);
    r.parts.push_back({"gaussian", detail::moment_error(fg, gaussian_table<Rational>(1, 1, Rational(1, 2), 6), 6), 1e-4});
    auto G = green2_increment(RealMeasure::free_poisson(0.4), RealMeasure::free_poisson(0.9));
    auto fp = recover_density_2d(G, n);
    r.parts.push_back(
        {"free poisson", detail::moment_error(fp, free_poisson_pair_table<Rational>(Rational(2, 5), Rational(9, 10), 6), 6),
         1e-3});
    return r;
}

inline Result subordination_residuals() {
    Result r{5, "subordination residuals", {}, {}};
    struct Pair {
        const char* label;
        RealMeasure a, b;
    };
    std::vector<Pair> pairs{{"semi+semi", RealMeasure::semicircle(1), RealMeasure::semicircle(1)},
                            {"semi+poisson", RealMeasure::semicircle(1), RealMeasure::free_poisson(1)},
                            {"cauchy+cauchy", RealMeasure::cauchy(1), RealMeasure::cauchy(2)}};
    for (const auto& p : pairs) {
        double worst = 0;
        for (cplx z : detail::upper_points(100, 11)) worst = std::max(worst, subordinators(p.a, p.b, HalfPlanePoint(z)).residual);
        r.parts.push_back({p.label, worst, 1e-10});
    }
    return r;
}

inline Result exact_combinatorics() {
    Result r{6, "exact combinatorics", {}, {}};
    using R = Rational;
    // Mismatch counts; any nonzero value fails.
    double trip = 0;
    std::vector<R> m;
    for (int i = 1; i <= 10; ++i) m.emplace_back(R(i * i - 3, i + 2));
    trip += cumulants_to_moments(moments_to_cumulants(m)) != m;
    trip += moments_to_cumulants(cumulants_to_moments(m)) != m;
    r.parts.push_back({"round trip", trip, 0});

    double mixed = 0;
    std::vector<R> m1{R(1), R(3), R(2), R(7), R(-1), R(5)}, m2{R(-2), R(1, 2), R(4), R(0), R(3), R(1)};
    std::function<R(const std::vector<int>&)> mom = [&](const std::vector<int>& w) {
        return w.empty() ? R(1) : mixed_moments_free(m1, m2, w);
    };
    for (int L = 2; L <= 6; ++L)
        for (int w = 1; w < (1 << L) - 1; ++w) {
            std::vector<int> word;
            for (int b = 0; b < L; ++b) word.push_back((w >> b & 1) + 1);
            mixed += free_cumulant<R>(word, mom) != 0;
        }
    r.parts.push_back({"mixed cumulants", mixed, 0});

    double cat = 0;
    for (int n = 1; n <= 12; ++n) cat += count_nc(n) != golden::catalan[n - 1];
    r.parts.push_back({"catalan", cat, 0});
    return r;
}

inline Result convolution_identities() {
    Result r{7, "convolution identities", {}, {}};
    auto out = free_add_convolve(RealMeasure::semicircle(1), RealMeasure::semicircle(1));
    const auto& g = out.as<GridDensity>();
    auto ref = RealMeasure::semicircle(2);
    std::vector<double> diff(g.grid.n);
    for (std::size_t i = 0; i < g.grid.n; ++i) diff[i] = std::abs(g.values[i] - density_at(ref, g.grid[i]));
    r.parts.push_back({"semicircle L1", trapezoid(diff, g.grid.step()), 1e-3});

    const double l = 0.3, rr = 0.8;
    auto lv = free_mult_convolve(CircleMeasure::levy(l), CircleMeasure::levy(rr - l));
    double worst = 0;
    for (int a = 1; a <= 10; ++a)
        for (int k = 0; k < 24; ++k) {
            cplx z = std::polar(0.05 * a, 2 * pi * (k + 0.5) / 24);
            worst = std::max(worst, std::abs(psi(lv, DiscPoint(z)) - z / (std::exp(rr) - z)));
        }
    r.parts.push_back({"levy psi", worst, 1e-6});
    return r;
}

inline Result clt_property() {
    Result r{8, "CLT scaling", {}, {}};
    using R = Rational;
    // A centred table that is far from Gaussian.
    auto t = free_poisson_pair_table<R>(R(1, 3), R(5, 4), 8);
    t.at(1, 0) = 0;
    t.at(0, 1) = 0;
    double bad = 0;
    for (std::int64_t s : {1, 2, 3, 7, 100}) {
        auto sc = clt_scaled_table(t, s * s);
        for (int n = 0; n <= 8; ++n)
            for (int m = 0; n + m <= 8; ++m) {
                if (n + m < 2) continue;
                R factor = 1;
                for (int k = 2; k < n + m; ++k) factor /= s;  // (s²)^{1−(n+m)/2}
                bad += sc.at(n, m) != t.at(n, m) * factor;
            }
    }
    r.parts.push_back({"scaling mismatches", bad, 0});
    double lim = clt_limit_table(t) != gaussian_table<R>(t.at(2, 0), t.at(0, 2), t.at(1, 1), 8);
    r.parts.push_back({"limit mismatches", lim, 0});
    return r;
}

inline Result route_equivalence() {
    Result r{9, "analytic vs cumulant-series route", {}, {}};
    struct Case {
        const char* label;
        RealMeasure x, sum;
    };
    std::vector<Case> cases{{"semicircle", RealMeasure::semicircle(1), RealMeasure::semicircle(2)},
                            {"free poisson", RealMeasure::free_poisson(0.4), RealMeasure::free_poisson(0.9)}};
    for (const auto& cs : cases) {
        auto analytic = green2_increment(cs.x, cs.sum);
        auto series = green2_from_reduced_R(cs.x, cs.sum, BivariateSeries::increment(free_cumulant_series(cs.x, 400)));
        auto zs = detail::far_points(50, 21), ws = detail::far_points(50, 22);
        double worst = 0;
        for (int i = 0; i < 50; ++i) {
            cplx a = analytic(zs[i], ws[i]), b = series(zs[i], ws[i]);
            worst = std::max(worst, std::abs(a - b) / std::abs(a));
        }
        r.parts.push_back({std::string(cs.label) + " rel", worst, 1e-8});
    }
    return r;
}

inline constexpr int criterion_count = 9;

inline Result run(int id) {
    using Fn = Result (*)();
    static constexpr Fn table[] = {free_cauchy_kernel,      gaussian_density_and_kernel, levy_kernel_on_torus,
                                   moment_oracles,          subordination_residuals,     exact_combinatorics,
                                   convolution_identities,  clt_property,                route_equivalence};
    if (id < 1 || id > criterion_count) fail(ErrorKind::InvalidInput, "no criterion " + std::to_string(id));
    static const char* names[] = {"free Cauchy kernel", "bi-free Gaussian density and kernel", "unitary Levy kernel",
                                  "quadrature moments vs cumulant tables", "subordination residuals",
                                  "exact combinatorics", "convolution identities", "CLT scaling",
                                  "analytic vs cumulant-series route"};
    try {
        return table[id - 1]();
    } catch (const Error& e) {
        return Result{id, names[id - 1], {}, e.what()};
    }
}

} // namespace bifree::acceptance
