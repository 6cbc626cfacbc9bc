#pragma once

#include "bifree/additive2d.hpp"
#include "bifree/cumulants.hpp"
#include "bifree/transforms1d.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace bifree {

// ψ_{U,V}(z,w) = ∫ zs/(1−zs) · wt/(1−wt) dμ(s,t).
struct JointPsiEvaluator {
    std::function<cplx(cplx, cplx)> fn;
    CircleMeasure marginal_u = CircleMeasure::point_mass(0);
    CircleMeasure marginal_v = CircleMeasure::point_mass(0);
    // fn also holds for |z| > 1 (needed by the torus inversion).
    bool reflects_z = false;
    // Optional w-first evaluation, for sweeps where w is fixed.
    std::function<std::function<cplx(cplx)>(cplx)> partial;

    cplx eval_psi2(DiscPoint z, DiscPoint w) const {
        if (!w.interior()) fail(ErrorKind::InvalidInput, "ψ2 needs |w| < 1");
        if (!z.interior() && !reflects_z) fail(ErrorKind::InvalidInput, "ψ2 evaluator is interior-only");
        return fn(z.value(), w.value());
    }
    cplx operator()(cplx z, cplx w) const { return eval_psi2(DiscPoint(z), DiscPoint(w)); }
    std::function<cplx(cplx)> at_w(cplx w) const {
        if (partial) return partial(w);
        return [f = fn, w](cplx z) { return f(z, w); };
    }
    cplx psi_u(cplx z) const { return detail::psi_raw(marginal_u, z); }
    cplx psi_v(cplx w) const { return detail::psi_raw(marginal_v, w); }
};

inline cplx H_from_psi2(const JointPsiEvaluator& J, DiscPoint z, DiscPoint w) {
    return J.eval_psi2(z, w) + J.psi_u(z.value()) + J.psi_v(w.value()) + 1.0;
}

inline cplx g_from_psi2(const JointPsiEvaluator& J, DiscPoint z, DiscPoint w) {
    return 4.0 * J.eval_psi2(z, w) + 2.0 * (J.psi_u(z.value()) + J.psi_v(w.value())) + 1.0;
}

namespace detail {

inline cplx psi_derivative(const CircleMeasure& m, cplx z) {
    if (std::abs(z) < 1.0) {
        cplx d;
        psi_inside(m, z, &d);
        return d;
    }
    // d/dz [−1 − conj ψ(1/z̄)]
    cplx d;
    psi_inside(m, 1.0 / std::conj(z), &d);
    return std::conj(d) / (z * z);
}

// 1 + (zψ_U(z) − qψ_U(q)) / (z − q), with the removable point z = q.
inline cplx h_diagonal(const CircleMeasure& mU, cplx z, cplx q, cplx psi_q) {
    if (std::abs(z - q) <= 1e-14 * std::max(1.0, std::abs(z)))
        return 1.0 + psi_q + q * psi_derivative(mU, q);
    return 1.0 + (z * psi_raw(mU, z) - q * psi_q) / (z - q);
}

inline void check_disc(cplx w) {
    if (!(std::abs(w) < 1.0)) fail(ErrorKind::InvalidInput, "point outside the unit disc");
}

} // namespace detail

namespace detail {

// q = ψ_U^{-1}(ψ_{VU}(w)) is the subordination function of U at w, so
// |q| ≤ |w|. ψ_U need not be univalent that far out; Newton from w first,
// then continuation from 0, keeping only a root inside |w|.
inline cplx increment_q(const CircleMeasure& mU, cplx w, cplx pv) {
    auto ok = [&](cplx q) {
        return std::abs(q) <= std::abs(w) * (1 + 1e-9) + 1e-15 &&
               std::abs(psi_inside(mU, q) - pv) <= 1e-12 * std::max(1.0, std::abs(pv));
    };
    cplx q = w;
    for (int it = 0; it < 60 && std::abs(q) < 1.0; ++it) {
        cplx d;
        cplx r = psi_inside(mU, q, &d) - pv;
        if (std::abs(r) <= 1e-15 * std::max(1.0, std::abs(pv))) break;
        q -= r / d;
    }
    if (std::abs(q) < 1.0 && ok(q)) return q;
    q = psi_inverse(mU, pv);
    if (ok(q)) return q;
    fail(ErrorKind::InversionFailed, "no preimage of ψ_VU(w) under ψ_U inside |w|");
}

} // namespace detail

// H for (U, VU) with U, V free: q = ψ_U^{-1}(ψ_{VU}(w)).
inline cplx H_increment(const CircleMeasure& mU, const CircleMeasure& mVU, DiscPoint z, DiscPoint w) {
    if (!w.interior()) fail(ErrorKind::InvalidInput, "H_increment needs |w| < 1");
    cplx pv = detail::psi_raw(mVU, w.value());
    cplx q = detail::increment_q(mU, w.value(), pv);
    return detail::h_diagonal(mU, z.value(), q, pv);
}

namespace detail {

inline JointPsiEvaluator from_q(CircleMeasure mU, CircleMeasure mV, std::function<cplx(cplx)> q_of) {
    auto mu = std::make_shared<const CircleMeasure>(mU);
    auto mv = std::make_shared<const CircleMeasure>(mV);
    auto partial = [mu, mv, q_of](cplx w) -> std::function<cplx(cplx)> {
        check_disc(w);
        cplx pv = psi_raw(*mv, w);
        cplx q = q_of(w);
        return [mu, pv, q](cplx z) { return h_diagonal(*mu, z, q, pv) - psi_raw(*mu, z) - pv - 1.0; };
    };
    JointPsiEvaluator J;
    J.fn = [partial](cplx z, cplx w) { return partial(w)(z); };
    J.partial = partial;
    J.marginal_u = std::move(mU);
    J.marginal_v = std::move(mV);
    J.reflects_z = true;
    return J;
}

} // namespace detail

// Pair (U, VU) from the laws of U and VU.
inline JointPsiEvaluator psi2_increment(const CircleMeasure& mU, const CircleMeasure& mVU) {
    detail::first_moment(mU);
    detail::first_moment(mVU);
    auto mu = std::make_shared<const CircleMeasure>(mU);
    auto mvu = std::make_shared<const CircleMeasure>(mVU);
    return detail::from_q(mU, mVU, [mu, mvu](cplx w) { return detail::increment_q(*mu, w, detail::psi_raw(*mvu, w)); });
}

// Pair (U, VU) from the laws of U and of the free increment V; q comes
// from the subordination function of the U factor.
inline JointPsiEvaluator psi2_free_increments(const CircleMeasure& mU, const CircleMeasure& mV,
                                              const ConvolutionOptions& opt = {}) {
    CircleMeasure mVU = free_mult_convolve(mU, mV, opt);
    double a;
    if (detail::is_circle_point_mass(mV, &a) || detail::is_circle_point_mass(mU, &a)) return psi2_increment(mU, mVU);
    auto sub = std::make_shared<MultiplicativeSubordination>(mU, mV, opt.subordination);
    return detail::from_q(mU, mVU, [sub](cplx w) { return sub->solve(w).omega1; });
}

// Pair (U, U).
inline JointPsiEvaluator psi2_diagonal(const CircleMeasure& mU) {
    detail::first_moment(mU);
    return detail::from_q(mU, mU, [](cplx w) { return w; });
}

inline JointPsiEvaluator psi2_product(const CircleMeasure& mU, const CircleMeasure& mV) {
    auto mu = std::make_shared<const CircleMeasure>(mU);
    auto mv = std::make_shared<const CircleMeasure>(mV);
    JointPsiEvaluator J;
    J.fn = [mu, mv](cplx z, cplx w) { return detail::psi_raw(*mu, z) * detail::psi_raw(*mv, w); };
    J.marginal_u = mU;
    J.marginal_v = mV;
    J.reflects_z = true;
    return J;
}

inline void check_time_order(double l, double r) {
    if (!(l >= 0.0) || !(r > l) || !std::isfinite(r))
        fail(ErrorKind::TimeOrderViolation, "need 0 ≤ ℓ < r, got ℓ=" + std::to_string(l) + ", r=" + std::to_string(r));
}

// Free unitary Lévy process at times ℓ < r; q = e^{ℓ−r} w.
inline JointPsiEvaluator levy_pair(double l, double r) {
    check_time_order(l, r);
    double c = std::exp(l - r);
    return detail::from_q(CircleMeasure::levy(l), CircleMeasure::levy(r), [c](cplx w) { return c * w; });
}

// ============================================================================
// Opposite bi-free partial S-transform
// ============================================================================

inline cplx opposite_partial_S_from_H(const std::function<cplx(cplx, cplx)>& H, const CircleMeasure& mU,
                                      const CircleMeasure& mV, cplx z, cplx w) {
    if (z == cplx(0) || w == cplx(0) || std::abs(w + 1.0) < 1e-14)
        fail(ErrorKind::SOpSingularity, "S-op needs z, w ≠ 0 and w ≠ −1");
    cplx h = H(psi_inverse(mU, z), psi_inverse(mV, w));
    cplx den = h - (z + 1.0);
    if (std::abs(den) < 1e-14) fail(ErrorKind::SOpSingularity, "H(ψ⁻¹(z), ψ⁻¹(w)) − (z+1) vanishes");
    return w * (z + 1.0) / (z * (w + 1.0)) * (h - (w + 1.0)) / den;
}

inline cplx opposite_partial_S_from_H(const JointPsiEvaluator& J, cplx z, cplx w) {
    return opposite_partial_S_from_H([&J](cplx x, cplx y) { return H_from_psi2(J, DiscPoint(x), DiscPoint(y)); },
                                     J.marginal_u, J.marginal_v, z, w);
}

// Cumulant route: K(a,b) = Σ κ_{n,m} aⁿ bᵐ at a = (1+z)ψ_U^{-1}(z), b = (1+w)ψ_V^{-1}(w),
// S^op = (1 + K/z) / (1 + K/w).
template <class T>
cplx opposite_partial_S_from_cumulants(const CumulantTable<T>& kappa, const CircleMeasure& mU,
                                       const CircleMeasure& mV, cplx z, cplx w) {
    if (z == cplx(0) || w == cplx(0)) fail(ErrorKind::SOpSingularity, "S-op needs z, w ≠ 0");
    cplx a = (1.0 + z) * psi_inverse(mU, z), b = (1.0 + w) * psi_inverse(mV, w);
    cplx K = 0;
    cplx an = a;
    for (int n = 1; n < kappa.order(); ++n, an *= a) {
        cplx bm = b;
        for (int m = 1; n + m <= kappa.order(); ++m, bm *= b) K += cplx(kappa.mixed(n, m)) * an * bm;
    }
    cplx den = 1.0 + K / w;
    if (std::abs(den) < 1e-14) fail(ErrorKind::SOpSingularity, "1 + K/w vanishes");
    return (1.0 + K / z) / den;
}

// ============================================================================
// Bi-free multiplicative convolution
// ============================================================================

struct MultConvolutionOptions {
    double lattice_radius = 0.5;
    std::size_t lattice = 64;
    int degree = 20;
    ConvolutionOptions marginals;
};

// Pair (U1U2, V1V2). S^op multiplies; H is recovered from S^op on a lattice
// of the bidisc and ψ_{U,V} is fitted by a truncated double series.
inline JointPsiEvaluator bifree_mult_convolve(const JointPsiEvaluator& J1, const JointPsiEvaluator& J2,
                                              const MultConvolutionOptions& opt = {}) {
    for (const auto* m : {&J1.marginal_u, &J1.marginal_v, &J2.marginal_u, &J2.marginal_v}) detail::first_moment(*m);
    if (opt.degree < 0 || std::size_t(opt.degree) >= opt.lattice || !(opt.lattice_radius > 0 && opt.lattice_radius < 1))
        fail(ErrorKind::InvalidInput, "bad lattice options");
    JointPsiEvaluator out;
    out.marginal_u = free_mult_convolve(J1.marginal_u, J2.marginal_u, opt.marginals);
    out.marginal_v = free_mult_convolve(J1.marginal_v, J2.marginal_v, opt.marginals);
    MultiplicativeSubordination su(J1.marginal_u, J2.marginal_u, opt.marginals.subordination);
    MultiplicativeSubordination sv(J1.marginal_v, J2.marginal_v, opt.marginals.subordination);

    const std::size_t L = opt.lattice;
    const double rho = opt.lattice_radius;
    std::vector<cplx> Z(L), W(L);
    std::vector<MultSubordinationResult> ru(L), rv(L);
    for (std::size_t k = 0; k < L; ++k) {
        Z[k] = std::polar(rho, 2 * pi * k / L);
        // Half-step offset keeps the lattice off the diagonal z = w.
        W[k] = std::polar(rho, 2 * pi * (k + 0.5) / L);
    }
    try {
        parallel_for(L, [&](std::size_t k) {
            ru[k] = su.solve(Z[k]);
            rv[k] = sv.solve(W[k]);
        });
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::SubordinationFailed) fail(ErrorKind::ConvolutionFailed, e.what());
        throw;
    }

    std::vector<cplx> psi2(L * L);
    parallel_for(L, [&](std::size_t l) {
        cplx w = rv[l].psi;
        auto h1 = J1.at_w(rv[l].omega1);
        auto h2 = J2.at_w(rv[l].omega2);
        for (std::size_t k = 0; k < L; ++k) {
            cplx z = ru[k].psi;
            cplx H1 = h1(ru[k].omega1) + J1.psi_u(ru[k].omega1) + J1.psi_v(rv[l].omega1) + 1.0;
            cplx H2 = h2(ru[k].omega2) + J2.psi_u(ru[k].omega2) + J2.psi_v(rv[l].omega2) + 1.0;
            cplx c = w * (z + 1.0) / (z * (w + 1.0));
            cplx R1 = (H1 - (w + 1.0)) / (H1 - (z + 1.0));
            cplx R2 = (H2 - (w + 1.0)) / (H2 - (z + 1.0));
            cplx R = c * R1 * R2;
            if (std::abs(R - 1.0) < 1e-14) fail(ErrorKind::SOpSingularity, "lattice point on S-op singular set");
            cplx H = (R * (z + 1.0) - (w + 1.0)) / (R - 1.0);
            psi2[k * L + l] = H - z - w - 1.0;
        }
    });

    // c_{nm} = mean over the lattice of ψ2 Z^{-n} W^{-m}
    const int D = opt.degree;
    auto coef = std::make_shared<std::vector<cplx>>(std::size_t(D + 1) * (D + 1));
    parallel_for(std::size_t(D + 1), [&](std::size_t n) {
        for (int m = 0; m <= D; ++m) {
            cplx s = 0;
            for (std::size_t k = 0; k < L; ++k) {
                cplx zk = std::pow(Z[k], -double(n));
                for (std::size_t l = 0; l < L; ++l) s += psi2[k * L + l] * zk * std::pow(W[l], -double(m));
            }
            (*coef)[n * (D + 1) + m] = s / double(L * L);
        }
    });
    out.fn = [coef, D, rho](cplx z, cplx w) {
        if (std::abs(z) > rho || std::abs(w) > rho)
            fail(ErrorKind::SeriesDomainError, "fitted ψ2 holds for |z|, |w| ≤ " + std::to_string(rho));
        cplx s = 0, zn = 1;
        for (int n = 0; n <= D; ++n, zn *= z) {
            cplx row = 0, wm = 1;
            for (int m = 0; m <= D; ++m, wm *= w) row += (*coef)[n * (D + 1) + m] * wm;
            s += zn * row;
        }
        return s;
    };
    out.reflects_z = false;
    return out;
}

// ============================================================================
// Torus inversion
// ============================================================================

struct TorusInversionOptions {
    std::vector<double> radii{0.99, 0.995, 0.9975};
    double mass_tolerance = 1e-2;
    double negativity_threshold = 1e-5;
};

// Density for normalized Haar measure on T², at (2πk/N, 2πl/N), s-major.
struct TorusDensityGrid {
    std::size_t N = 0;
    std::vector<double> values;
    std::vector<double> marginal_s;
    std::vector<double> marginal_t;
    double raw_mass = 0;
    std::size_t fallbacks = 0;

    double at(std::size_t k, std::size_t l) const { return values[k * N + l]; }
    double per_radian(std::size_t k, std::size_t l) const { return at(k, l) / (4 * pi * pi); }
    double angle(std::size_t k) const { return circle_angle(k, N); }
    UniformGrid angle_grid() const { return UniformGrid(0.0, circle_angle(N - 1, N), N); }

    cplx moment(int n, int m) const {
        std::vector<cplx> es(N), et(N);
        for (std::size_t k = 0; k < N; ++k) {
            es[k] = std::polar(1.0, n * angle(k));
            et[k] = std::polar(1.0, m * angle(k));
        }
        cplx s = 0;
        for (std::size_t k = 0; k < N; ++k) {
            cplx r = 0;
            for (std::size_t l = 0; l < N; ++l) r += at(k, l) * et[l];
            s += es[k] * r;
        }
        return s / double(N * N);
    }
    double mass() const { return moment(0, 0).real(); }
};

// Re[(g(z,w) − g(1/z̄,w))/2] at z = ρ e^{−iθ_s}, w = ρ e^{−iθ_t} is the
// Poisson integral of μ at (s,t). g must accept |z| > 1.
inline TorusDensityGrid recover_density_torus(const std::function<std::function<cplx(cplx)>(cplx)>& g_at_w,
                                              std::size_t N, const TorusInversionOptions& opt = {}) {
    if (N < 4) fail(ErrorKind::InvalidInput, "torus grid too small");
    const std::size_t nr = opt.radii.size();
    std::vector<double> h;
    for (double r : opt.radii) h.push_back(1.0 - r);
    TorusDensityGrid out;
    out.N = N;
    out.values.assign(N * N, 0.0);
    std::vector<double> worst(N, 0.0);
    std::vector<std::size_t> fell(N, 0);
    std::vector<cplx> e(N);
    for (std::size_t k = 0; k < N; ++k) e[k] = std::polar(1.0, -circle_angle(k, N));
    parallel_for(N, [&](std::size_t l) {
        std::vector<double> f(N * nr);
        for (std::size_t j = 0; j < nr; ++j) {
            double r = opt.radii[j];
            auto g = g_at_w(r * e[l]);
            for (std::size_t k = 0; k < N; ++k) {
                cplx z = r * e[k];
                f[k * nr + j] = 0.5 * (g(z) - g(1.0 / std::conj(z))).real();
            }
        }
        std::vector<double> fk(nr);
        for (std::size_t k = 0; k < N; ++k) {
            for (std::size_t j = 0; j < nr; ++j) {
                fk[j] = f[k * nr + j];
                worst[l] = std::min(worst[l], fk[j]);
            }
            Extrapolated x = extrapolate_limit(h, fk, true);
            out.values[k * N + l] = std::max(0.0, x.value);
            fell[l] += x.fallback;
        }
    });
    for (std::size_t l = 0; l < N; ++l) {
        if (worst[l] < -opt.negativity_threshold)
            fail(ErrorKind::NegativityError, "torus density " + std::to_string(worst[l]) + " at t-index " + std::to_string(l));
        out.fallbacks += fell[l];
    }
    out.raw_mass = out.mass();
    if (std::abs(out.raw_mass - 1.0) > opt.mass_tolerance)
        fail(ErrorKind::InversionMassError, "raw torus mass " + std::to_string(out.raw_mass));
    for (double& v : out.values) v /= out.raw_mass;
    out.marginal_s.assign(N, 0.0);
    out.marginal_t.assign(N, 0.0);
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t l = 0; l < N; ++l) {
            out.marginal_s[k] += out.at(k, l) / double(N);
            out.marginal_t[l] += out.at(k, l) / double(N);
        }
    return out;
}

inline TorusDensityGrid recover_density_torus(const JointPsiEvaluator& J, std::size_t N,
                                              const TorusInversionOptions& opt = {}) {
    if (!J.reflects_z) fail(ErrorKind::InvalidInput, "torus inversion needs ψ2 at reflected points");
    auto g_at_w = [&J](cplx w) -> std::function<cplx(cplx)> {
        auto p = J.at_w(w);
        cplx pv = J.psi_v(w);
        return [&J, p, pv](cplx z) { return 4.0 * p(z) + 2.0 * (J.psi_u(z) + pv) + 1.0; };
    };
    return recover_density_torus(g_at_w, N, opt);
}

// ============================================================================
// Kernels
// ============================================================================

// Rows f(s, ·)/f_U(s), densities in t for normalized Haar measure.
inline TransitionKernel circle_transition_kernel(const TorusDensityGrid& f, double threshold = 1e-8) {
    const std::size_t N = f.N;
    UniformGrid g = f.angle_grid();
    TransitionKernel k{g, g, std::vector<double>(N * N, 0.0), std::vector<char>(N, 0), true, {}, true};
    parallel_for(N, [&](std::size_t i) {
        double m = f.marginal_s[i];
        if (!(m >= threshold)) {
            k.masked[i] = 1;
            return;
        }
        double s = 0;
        for (std::size_t j = 0; j < N; ++j) s += f.at(i, j) / m;
        s /= double(N);
        for (std::size_t j = 0; j < N; ++j) k.values[i * N + j] = s > 0 ? f.at(i, j) / m / s : 0.0;
        if (!(s > 0)) k.masked[i] = 1;
    });
    return k;
}

// (1 − e^{2(ℓ−r)}) / |s^{-1}t − e^{ℓ−r}|², angles s, t.
inline double levy_kernel(double l, double r, double s, double t) {
    check_time_order(l, r);
    double c = std::exp(l - r);
    return (1 - c * c) / std::norm(std::polar(1.0, t - s) - c);
}

inline double levy_torus_density(double l, double r, double s, double t) {
    check_time_order(l, r);
    if (l == 0.0) fail(ErrorKind::InvalidInput, "at ℓ = 0 the pair has no torus density");
    double a = std::exp(-l);
    return levy_kernel(l, r, s, t) * (1 - a * a) / std::norm(a - std::polar(1.0, s));
}

} // namespace bifree
