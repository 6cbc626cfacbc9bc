#pragma once

#include "bifree/cumulants.hpp"
#include "bifree/measures.hpp"
#include "bifree/numeric.hpp"

#include <optional>

namespace bifree {

// ============================================================================
// Points
// ============================================================================

class HalfPlanePoint {
public:
    explicit HalfPlanePoint(cplx v) : v_(v) {
        if (v.imag() == 0.0 || !std::isfinite(v.real()) || !std::isfinite(v.imag()))
            fail(ErrorKind::InvalidInput, "half-plane point must have nonzero imaginary part");
    }
    cplx value() const { return v_; }
    bool upper() const { return v_.imag() > 0; }

private:
    cplx v_;
};

class DiscPoint {
public:
    explicit DiscPoint(cplx v) : v_(v) {
        if (std::abs(v) == 1.0 || !std::isfinite(v.real()) || !std::isfinite(v.imag()))
            fail(ErrorKind::InvalidInput, "disc point must not lie on the unit circle");
    }
    cplx value() const { return v_; }
    bool interior() const { return std::abs(v_) < 1.0; }

private:
    cplx v_;
};

struct SubordinationResult {
    cplx omega1;
    cplx omega2;
    cplx G_sum;
    double residual;
};

struct SubordinationOptions {
    double damping = 0.5;
    double tol = 1e-12;
    int max_iter = 10000;
};

struct InversionOptions {
    std::vector<double> eps{1e-2, 5e-3, 2.5e-3, 1.25e-3};
    // Mass the recovered density should carry; nullopt when the window does
    // not cover the support (no mass check and no renormalization then).
    std::optional<double> expected_mass = 1.0;
    double mass_tolerance = 1e-2;
    double negativity_threshold = 1e-6;
};

struct CircleInversionOptions {
    std::vector<double> radii{0.99, 0.995, 0.9975};
    double mass_tolerance = 1e-2;
    double negativity_threshold = 1e-6;
    // Atoms removed from ψ before inversion.
    AtomicOnCircle atoms;
};

struct ConvolutionOptions {
    std::size_t n1d = 2048;
    std::size_t n_circle = 512;
    InversionOptions inversion;
    CircleInversionOptions circle;
    SubordinationOptions subordination;
};

// ============================================================================
// Cauchy transform
// ============================================================================

namespace detail {

inline cplx sqrt_pair(cplx z, double a, double b) {
    // √((z-a)(z-b)) with the cut on [a,b] and ~z at infinity.
    return std::sqrt(z - a) * std::sqrt(z - b);
}

inline cplx atoms_G(const Atomic& a, cplx z, cplx* dG) {
    cplx g = 0;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        cplx r = 1.0 / (z - a.points[i]);
        g += a.weights[i] * r;
        if (dG) *dG -= a.weights[i] * r * r;
    }
    return g;
}

// Exact transform of the piecewise-linear interpolant of the grid density.
inline cplx grid_G(const GridDensity& g, cplx z, cplx* dG) {
    const double h = g.grid.step();
    cplx G = 0, D = 0;
    for (std::size_t k = 0; k + 1 < g.grid.n; ++k) {
        double fa = g.values[k], fb = g.values[k + 1];
        if (fa == 0.0 && fb == 0.0) continue;
        double a = g.grid[k], b = a + h;
        double s = (fb - fa) / h;
        cplx u = h / (z - b);
        cplx L = std::abs(u) < 0.1 ? log1p(u) : std::log(z - a) - std::log(z - b);
        cplx fz = fa + s * (z - a);
        G += fz * L - s * h;
        if (dG) D += s * L + fz * (1.0 / (z - a) - 1.0 / (z - b));
    }
    if (dG) *dG = D;
    return G + atoms_G(g.atoms, z, dG);
}

// G and optionally G' at any nonreal z.
inline cplx G_raw(const RealMeasure& m, cplx z, cplx* dG = nullptr) {
    if (const CauchyEvaluator* t = m.transform()) {
        if (dG) *dG = t->dG(z);
        return t->G(z);
    }
    return std::visit(
        [&](const auto& k) -> cplx {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, Semicircle>) {
                double e = 2 * std::sqrt(k.variance);
                cplx q = sqrt_pair(z, -e, e);
                cplx g = 2.0 / (z + q);
                if (dG) *dG = -g / q;
                return g;
            } else if constexpr (std::is_same_v<T, CauchyLaw>) {
                cplx g = 1.0 / (z - k.location + (z.imag() > 0 ? I : -I) * k.scale);
                if (dG) *dG = -g * g;
                return g;
            } else if constexpr (std::is_same_v<T, FreePoisson>) {
                double lam = k.rate;
                double a = std::pow(1 - std::sqrt(lam), 2), b = std::pow(1 + std::sqrt(lam), 2);
                cplx q = sqrt_pair(z, a, b);
                cplx D = z + 1.0 - lam + q;
                if (dG) {
                    cplx dq = (2.0 * z - a - b) / (2.0 * q);
                    *dG = -2.0 * (1.0 + dq) / (D * D);
                }
                return 2.0 / D;
            } else if constexpr (std::is_same_v<T, Atomic>) {
                if (dG) *dG = 0;
                return atoms_G(k, z, dG);
            } else {
                return grid_G(k, z, dG);
            }
        },
        m.kind());
}

} // namespace detail

inline cplx cauchy_G(const RealMeasure& m, HalfPlanePoint z) { return detail::G_raw(m, z.value()); }

inline cplx cauchy_G_derivative(const RealMeasure& m, HalfPlanePoint z) {
    cplx d;
    detail::G_raw(m, z.value(), &d);
    return d;
}

// Cauchy transform as a plain function of nonreal z.
inline std::function<cplx(cplx)> cauchy_function(const RealMeasure& m) {
    return [m](cplx z) { return detail::G_raw(m, z); };
}

// ============================================================================
// K and R transforms
// ============================================================================

inline cplx inverse_K(const RealMeasure& m, cplx u) {
    if (u == cplx(0) || u.imag() == 0.0) fail(ErrorKind::InvalidInput, "K needs a nonreal argument");
    if (!m.transform()) {
        if (m.is<Semicircle>()) return 1.0 / u + m.as<Semicircle>().variance * u;
        if (m.is<FreePoisson>()) return 1.0 / u + m.as<FreePoisson>().rate / (1.0 - u);
        if (m.is<CauchyLaw>()) {
            const auto& c = m.as<CauchyLaw>();
            return 1.0 / u + c.location + (u.imag() > 0 ? I : -I) * c.scale;
        }
        if (m.is<Atomic>() && m.as<Atomic>().points.size() == 1) return 1.0 / u + m.as<Atomic>().points[0];
    }
    // Newton on G(z) = u in the half-plane opposite to u.
    const double side = u.imag() > 0 ? -1.0 : 1.0;
    double mean = 0.0;
    if (support(m).bounded()) mean = moment(m, 1);
    cplx z = 1.0 / u + mean;
    if (z.imag() * side <= 0) z = cplx(z.real(), side * std::max(1e-3, std::abs(z.imag())));
    for (int it = 0; it < 100; ++it) {
        cplx d;
        cplx r = detail::G_raw(m, z, &d) - u;
        if (std::abs(r) <= 1e-13 * std::max(1.0, std::abs(u))) return z;
        if (d == cplx(0)) break;
        cplx step = r / d;
        double lam = 1.0;
        cplx zn = z - step;
        int halvings = 0;
        while (zn.imag() * side <= 0 || std::abs(detail::G_raw(m, zn) - u) > std::abs(r)) {
            lam *= 0.5;
            zn = z - lam * step;
            if (++halvings > 40) {
                if (zn.imag() * side <= 0) fail(ErrorKind::DomainEscape, "K iterate left the half-plane");
                break;
            }
        }
        z = zn;
    }
    cplx r = detail::G_raw(m, z) - u;
    if (std::abs(r) <= 1e-10) return z;
    fail(ErrorKind::InversionFailed, "Newton for K did not converge");
}

// κ_1..κ_order through the moment-cumulant engine, with the moments taken
// exactly as binary fractions.
inline std::vector<double> r_coefficients(const RealMeasure& m, int order, int max_order = default_max_order) {
    if (order < 1) return {};
    std::vector<Rational> mom;
    for (int n = 1; n <= order; ++n) mom.emplace_back(moment(m, n, max_order));
    std::vector<double> out;
    for (const auto& k : moments_to_cumulants(mom)) out.push_back(to_double(k));
    return out;
}

// Free cumulants for long series: closed forms for the named families,
// the moment route otherwise.
inline std::vector<double> free_cumulant_series(const RealMeasure& m, int order) {
    if (!m.transform()) {
        if (m.is<Semicircle>()) {
            std::vector<double> k(order, 0.0);
            if (order >= 2) k[1] = m.as<Semicircle>().variance;
            return k;
        }
        if (m.is<FreePoisson>()) return std::vector<double>(order, m.as<FreePoisson>().rate);
        if (m.is<Atomic>() && m.as<Atomic>().points.size() == 1) {
            std::vector<double> k(order, 0.0);
            k[0] = m.as<Atomic>().points[0];
            return k;
        }
    }
    if (order > default_max_order) fail(ErrorKind::OrderOverflow, "no closed-form cumulants for this measure");
    return r_coefficients(m, order);
}

// ============================================================================
// Additive subordination
// ============================================================================

class AdditiveSubordination {
public:
    AdditiveSubordination(RealMeasure m1, RealMeasure m2, SubordinationOptions opt = {})
        : m1_(std::move(m1)), m2_(std::move(m2)), opt_(opt) {}

    const RealMeasure& first() const { return m1_; }
    const RealMeasure& second() const { return m2_; }

    SubordinationResult solve(cplx z) const {
        if (z.imag() == 0.0) fail(ErrorKind::InvalidInput, "subordination needs nonreal z");
        const double side = z.imag() > 0 ? 1.0 : -1.0;
        cplx w1 = z;
        auto T = [&](cplx w, cplx& w2) {
            w2 = z + h(m1_, w);
            return z + h(m2_, w2);
        };
        cplx w2;
        for (int it = 0; it < opt_.max_iter; ++it) {
            cplx t = T(w1, w2);
            if (!std::isfinite(t.real()) || !std::isfinite(t.imag())) break;
            cplx next = (1 - opt_.damping) * w1 + opt_.damping * t;
            if (next.imag() * side <= 0) next = cplx(next.real(), side * 0.5 * std::abs(w1.imag()));
            double step = std::abs(next - w1);
            w1 = next;
            if (step <= 1e-6 * std::max(1.0, std::abs(w1))) break;
        }
        // Newton polish on Φ(ω) = ω - z - h2(z + h1(ω)).
        for (int it = 0; it < 50; ++it) {
            cplx d1, d2;
            cplx g1 = detail::G_raw(m1_, w1, &d1);
            w2 = z + 1.0 / g1 - w1;
            cplx g2 = detail::G_raw(m2_, w2, &d2);
            cplx phi = w1 - z - (1.0 / g2 - w2);
            double r = std::abs(phi);
            if (r <= 1e-3 * opt_.tol * std::max(1.0, std::abs(w1))) break;
            cplx hp1 = -d1 / (g1 * g1) - 1.0, hp2 = -d2 / (g2 * g2) - 1.0;
            cplx dphi = 1.0 - hp2 * hp1;
            cplx step = phi / dphi;
            cplx trial = w1 - step;
            double lam = 1.0;
            for (int k = 0; k < 30; ++k) {
                cplx tw2 = z + h(m1_, trial);
                if (trial.imag() * side > 0 && tw2.imag() * side > 0 &&
                    std::abs(trial - z - h(m2_, tw2)) < r)
                    break;
                lam *= 0.5;
                trial = w1 - lam * step;
            }
            if (std::abs(trial - w1) == 0.0) break;
            w1 = trial;
        }
        SubordinationResult res;
        res.omega1 = w1;
        res.omega2 = z + h(m1_, w1);
        res.G_sum = detail::G_raw(m1_, res.omega1);
        cplx g2 = detail::G_raw(m2_, res.omega2);
        cplx lhs = res.omega1 + res.omega2 - z;
        res.residual = std::max(std::abs(lhs - 1.0 / res.G_sum), std::abs(lhs - 1.0 / g2));
        if (!(res.residual <= 1e-9 * std::max(1.0, std::abs(lhs))) || res.omega1.imag() * side <= 0 ||
            res.omega2.imag() * side <= 0)
            fail(ErrorKind::SubordinationFailed, "fixed point not reached");
        return res;
    }

    // G_{X+X'} and its derivative through ω1.
    cplx G(cplx z, cplx* dG = nullptr) const {
        SubordinationResult r = solve(z);
        if (dG) {
            cplx d1, d2;
            cplx g1 = detail::G_raw(m1_, r.omega1, &d1);
            cplx g2 = detail::G_raw(m2_, r.omega2, &d2);
            cplx hp1 = -d1 / (g1 * g1) - 1.0, hp2 = -d2 / (g2 * g2) - 1.0;
            cplx dw1 = (1.0 + hp2) / (1.0 - hp1 * hp2);
            *dG = d1 * dw1;
        }
        return r.G_sum;
    }

private:
    static cplx h(const RealMeasure& m, cplx w) { return 1.0 / detail::G_raw(m, w) - w; }

    RealMeasure m1_, m2_;
    SubordinationOptions opt_;
};

inline SubordinationResult subordinators(const RealMeasure& m1, const RealMeasure& m2, HalfPlanePoint z,
                                         SubordinationOptions opt = {}) {
    return AdditiveSubordination(m1, m2, opt).solve(z.value());
}

// ============================================================================
// Stieltjes inversion
// ============================================================================

struct RecoveredDensity {
    UniformGrid grid;
    std::vector<double> values;
    double raw_mass = 0.0;
    std::size_t fallbacks = 0;
};

inline RealMeasure to_measure(const RecoveredDensity& d, Atomic atoms = {}) {
    return RealMeasure::grid(d.grid, d.values, std::move(atoms), true);
}

inline RecoveredDensity recover_density_1d(const std::function<cplx(cplx)>& G_eval, const UniformGrid& grid,
                                           const InversionOptions& opt = {}) {
    for (double x : {grid.lo, 0.5 * (grid.lo + grid.hi), grid.hi}) {
        cplx g = G_eval(cplx(x, 1.0));
        if (!(g.imag() < 0)) fail(ErrorKind::InvalidInput, "evaluator does not map the upper half-plane down");
    }
    const auto& eps = opt.eps;
    RecoveredDensity out{grid, std::vector<double>(grid.n), 0.0, 0};
    std::vector<char> fell(grid.n, 0);
    std::vector<double> worst(grid.n, 0.0);
    parallel_for(grid.n, [&](std::size_t i) {
        std::vector<double> f(eps.size());
        double x = grid[i];
        for (std::size_t k = 0; k < eps.size(); ++k) {
            f[k] = -G_eval(cplx(x, eps[k])).imag() / pi;
            worst[i] = std::min(worst[i], f[k]);
        }
        Extrapolated e = extrapolate_limit(eps, f, true);
        out.values[i] = std::max(0.0, e.value);
        fell[i] = e.fallback;
    });
    for (std::size_t i = 0; i < grid.n; ++i) {
        if (worst[i] < -opt.negativity_threshold)
            fail(ErrorKind::NegativityError, "density " + std::to_string(worst[i]) + " at x=" + std::to_string(grid[i]));
        out.fallbacks += fell[i];
    }
    out.raw_mass = trapezoid(out.values, grid.step());
    if (opt.expected_mass) {
        double target = *opt.expected_mass;
        if (std::abs(out.raw_mass - target) > opt.mass_tolerance)
            fail(ErrorKind::InversionMassError, "raw mass " + std::to_string(out.raw_mass) + ", expected " +
                                                    std::to_string(target));
        if (out.raw_mass > 0)
            for (double& v : out.values) v *= target / out.raw_mass;
    }
    return out;
}

// ============================================================================
// Free additive convolution
// ============================================================================

namespace detail {

inline bool is_point_mass(const RealMeasure& m, double* c = nullptr) {
    if (m.transform() || !m.is<Atomic>() || m.as<Atomic>().points.size() != 1) return false;
    if (c) *c = m.as<Atomic>().points[0];
    return true;
}

// Atoms of μ1 ⊞ μ2: a = a1 + a2 carries p1 + p2 - 1 when positive.
inline Atomic sum_atoms(const Atomic& a, const Atomic& b) {
    Atomic out;
    for (std::size_t i = 0; i < a.points.size(); ++i)
        for (std::size_t j = 0; j < b.points.size(); ++j) {
            double p = a.weights[i] + b.weights[j] - 1.0;
            if (p > 1e-12) {
                out.points.push_back(a.points[i] + b.points[j]);
                out.weights.push_back(p);
            }
        }
    return out;
}

} // namespace detail

inline RealMeasure free_add_convolve(const RealMeasure& m1, const RealMeasure& m2, const ConvolutionOptions& opt = {}) {
    double c;
    if (detail::is_point_mass(m1, &c) && c == 0.0) return m2;
    if (detail::is_point_mass(m2, &c) && c == 0.0) return m1;
    // Cauchy laws form a closed family under ⊞ (their R-transforms are constants).
    if (m1.is<CauchyLaw>() && m2.is<CauchyLaw>() && !m1.transform() && !m2.transform()) {
        const auto &a = m1.as<CauchyLaw>(), &b = m2.as<CauchyLaw>();
        return RealMeasure::cauchy(a.scale + b.scale, a.location + b.location);
    }
    Interval s1 = support(m1), s2 = support(m2);
    if (!s1.bounded() || !s2.bounded())
        fail(ErrorKind::ConvolutionFailed, "gridded output needs compact supports");

    auto sub = std::make_shared<AdditiveSubordination>(m1, m2, opt.subordination);
    Atomic at = detail::sum_atoms(atoms(m1), atoms(m2));
    double lo = s1.lo + s2.lo, hi = s1.hi + s2.hi;
    CauchyEvaluator ev{[sub](cplx z) { return sub->G(z); },
                       [sub](cplx z) {
                           cplx d;
                           sub->G(z, &d);
                           return d;
                       },
                       lo, hi};

    double w = std::max(hi - lo, 1e-3);
    UniformGrid grid(lo - 0.05 * w, hi + 0.05 * w, opt.n1d);
    InversionOptions io = opt.inversion;
    io.expected_mass = 1.0 - at.mass();
    auto G_ac = [&](cplx z) { return sub->G(z) - detail::atoms_G(at, z, nullptr); };
    RecoveredDensity d;
    try {
        d = recover_density_1d(G_ac, grid, io);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::SubordinationFailed) fail(ErrorKind::ConvolutionFailed, e.what());
        throw;
    }
    return to_measure(d, at).with_transform(std::move(ev));
}

// ============================================================================
// Circle transforms
// ============================================================================

namespace detail {

inline cplx unit(double theta) { return std::polar(1.0, theta); }

inline cplx atoms_psi(const AtomicOnCircle& a, cplx z, cplx* dpsi) {
    cplx p = 0;
    for (std::size_t i = 0; i < a.angles.size(); ++i) {
        cplx s = unit(a.angles[i]);
        cplx q = 1.0 - z * s;
        p += a.weights[i] * z * s / q;
        if (dpsi) *dpsi += a.weights[i] * s / (q * q);
    }
    return p;
}

// ψ for |z| < 1.
inline cplx psi_inside(const CircleMeasure& m, cplx z, cplx* dpsi = nullptr) {
    if (const PsiEvaluator* t = m.transform()) {
        if (dpsi) *dpsi = t->dpsi(z);
        return t->psi(z);
    }
    if (dpsi) *dpsi = 0;
    return std::visit(
        [&](const auto& k) -> cplx {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, PointMass>) {
                return atoms_psi(AtomicOnCircle{{k.angle}, {1.0}}, z, dpsi);
            } else if constexpr (std::is_same_v<T, LevyMarginal>) {
                double e = std::exp(k.time);
                if (dpsi) *dpsi = e / ((e - z) * (e - z));
                return z / (e - z);
            } else if constexpr (std::is_same_v<T, AtomicOnCircle>) {
                return atoms_psi(k, z, dpsi);
            } else {
                const std::size_t N = k.values.size();
                cplx p = 0, d = 0;
                for (std::size_t j = 0; j < N; ++j) {
                    if (k.values[j] == 0.0) continue;
                    cplx s = unit(circle_angle(j, N));
                    cplx q = 1.0 - z * s;
                    p += k.values[j] * z * s / q;
                    d += k.values[j] * s / (q * q);
                }
                p /= double(N);
                if (dpsi) *dpsi = d / double(N);
                return p + atoms_psi(k.atoms, z, dpsi);
            }
        },
        m.kind());
}

// ψ anywhere off the circle; exterior values through ψ(1/z̄) = -1 - conj ψ(z).
inline cplx psi_raw(const CircleMeasure& m, cplx z) {
    if (std::abs(z) < 1.0) return psi_inside(m, z);
    return -1.0 - std::conj(psi_inside(m, 1.0 / std::conj(z)));
}

inline cplx first_moment(const CircleMeasure& m) {
    cplx m1 = circle_moment(m, 1);
    if (std::abs(m1) < 1e-14) fail(ErrorKind::STransformUndefined, "first moment vanishes");
    return m1;
}

} // namespace detail

inline cplx psi(const CircleMeasure& m, DiscPoint z) { return detail::psi_raw(m, z.value()); }

inline cplx eta(const CircleMeasure& m, DiscPoint z) {
    cplx p = psi(m, z);
    return p / (1.0 + p);
}

inline std::function<cplx(cplx)> psi_function(const CircleMeasure& m) {
    return [m](cplx z) { return detail::psi_raw(m, z); };
}

// Solves ψ(x) = w for x in the disc, continuing from w = 0 when needed.
inline cplx psi_inverse(const CircleMeasure& m, cplx w) {
    cplx m1 = detail::first_moment(m);
    if (w == cplx(0)) return 0.0;
    if (!m.transform()) {
        if (m.is<PointMass>()) return w / ((1.0 + w) * detail::unit(m.as<PointMass>().angle));
        if (m.is<LevyMarginal>()) return w * std::exp(m.as<LevyMarginal>().time) / (1.0 + w);
    }
    auto f = [&](cplx x) { return detail::psi_inside(m, x) - w; };
    for (int pieces : {1, 4, 16, 64}) {
        cplx x = 0.0;
        bool ok = true;
        for (int k = 1; k <= pieces && ok; ++k) {
            cplx target = w * (double(k) / pieces);
            if (k == 1) x = target / m1;
            auto g = [&](cplx y) { return detail::psi_inside(m, y) - target; };
            auto dg = [&](cplx y) {
                cplx d;
                detail::psi_inside(m, y, &d);
                return d;
            };
            cplx start = x;
            for (int it = 0; it < 100; ++it) {
                if (std::abs(start) >= 1.0) break;
                cplx r = g(start);
                if (std::abs(r) <= 1e-14 * std::max(1.0, std::abs(target))) break;
                cplx step = r / dg(start);
                cplx nx = start - step;
                double lam = 1.0;
                for (int h = 0; h < 40 && (std::abs(nx) >= 1.0 || std::abs(g(nx)) > std::abs(r)); ++h) {
                    lam *= 0.5;
                    nx = start - lam * step;
                }
                start = nx;
            }
            x = start;
            ok = std::abs(x) < 1.0 && std::abs(g(x)) <= 1e-11 * std::max(1.0, std::abs(target));
        }
        if (ok && std::abs(f(x)) <= 1e-10) return x;
    }
    fail(ErrorKind::InversionFailed, "ψ could not be inverted at the requested value");
}

inline cplx eta_inverse(const CircleMeasure& m, cplx z) { return psi_inverse(m, z / (1.0 - z)); }

inline cplx s_transform(const CircleMeasure& m, cplx z) {
    cplx m1 = detail::first_moment(m);
    if (std::abs(z) < 1e-12) return 1.0 / m1;
    return eta_inverse(m, z) / z;
}

// ============================================================================
// Free multiplicative convolution
// ============================================================================

struct MultSubordinationResult {
    cplx omega1;
    cplx omega2;
    cplx eta;
    cplx psi;
};

// η_{UU'}(z) = η1(ω1(z)) = η2(ω2(z)) with ω1 = z h2(ω2), ω2 = z h1(ω1),
// h(w) = η(w)/w.
class MultiplicativeSubordination {
public:
    MultiplicativeSubordination(CircleMeasure m1, CircleMeasure m2, SubordinationOptions opt = {})
        : m1_(std::move(m1)), m2_(std::move(m2)), opt_(opt) {
        mean1_ = detail::first_moment(m1_);
        mean2_ = detail::first_moment(m2_);
    }

    const CircleMeasure& first() const { return m1_; }
    const CircleMeasure& second() const { return m2_; }

    MultSubordinationResult solve(cplx z) const {
        if (std::abs(z) >= 1.0) fail(ErrorKind::InvalidInput, "multiplicative subordination needs |z| < 1");
        if (z == cplx(0)) return {0.0, 0.0, 0.0, 0.0};
        cplx w1 = z;
        for (int it = 0; it < opt_.max_iter; ++it) {
            cplx w2 = z * h(m1_, mean1_, w1);
            cplx t = z * h(m2_, mean2_, w2);
            cplx next = (1 - opt_.damping) * w1 + opt_.damping * t;
            double step = std::abs(next - w1);
            w1 = next;
            if (step <= 1e-6) break;
        }
        for (int it = 0; it < 50; ++it) {
            cplx dh1, dh2;
            cplx h1 = h(m1_, mean1_, w1, &dh1);
            cplx w2 = z * h1;
            cplx h2 = h(m2_, mean2_, w2, &dh2);
            cplx phi = w1 - z * h2;
            double r = std::abs(phi);
            if (r <= 1e-3 * opt_.tol) break;
            cplx dphi = 1.0 - z * z * dh2 * dh1;
            cplx step = phi / dphi;
            cplx trial = w1 - step;
            double lam = 1.0;
            for (int k = 0; k < 30; ++k) {
                if (std::abs(trial) < 1.0) {
                    cplx tw2 = z * h(m1_, mean1_, trial);
                    if (std::abs(tw2) < 1.0 && std::abs(trial - z * h(m2_, mean2_, tw2)) < r) break;
                }
                lam *= 0.5;
                trial = w1 - lam * step;
            }
            if (trial == w1) break;
            w1 = trial;
        }
        MultSubordinationResult res;
        res.omega1 = w1;
        res.omega2 = z * h(m1_, mean1_, w1);
        cplx e1 = eta_of(m1_, res.omega1), e2 = eta_of(m2_, res.omega2);
        double resid = std::max(std::abs(w1 - z * h(m2_, mean2_, res.omega2)), std::abs(e1 - e2));
        if (!(resid <= 1e-9) || std::abs(res.omega1) >= 1.0 || std::abs(res.omega2) >= 1.0)
            fail(ErrorKind::SubordinationFailed, "multiplicative fixed point not reached");
        res.eta = e1;
        res.psi = e1 / (1.0 - e1);
        return res;
    }

    cplx psi(cplx z, cplx* dpsi = nullptr) const {
        MultSubordinationResult r = solve(z);
        if (dpsi) {
            if (z == cplx(0)) {
                *dpsi = mean1_ * mean2_;
            } else {
                cplx dh1, dh2, de1;
                cplx h1 = h(m1_, mean1_, r.omega1, &dh1);
                cplx h2 = h(m2_, mean2_, r.omega2, &dh2);
                eta_of(m1_, r.omega1, &de1);
                // Φ(ω1, z) = ω1 - z h2(z h1(ω1))
                cplx phi_z = -(h2 + z * dh2 * h1);
                cplx phi_w = 1.0 - z * z * dh2 * dh1;
                cplx dw1 = -phi_z / phi_w;
                cplx de = de1 * dw1;
                *dpsi = de / ((1.0 - r.eta) * (1.0 - r.eta));
            }
        }
        return r.psi;
    }

private:
    static cplx eta_of(const CircleMeasure& m, cplx w, cplx* deta = nullptr) {
        cplx dp;
        cplx p = detail::psi_inside(m, w, &dp);
        if (deta) *deta = dp / ((1.0 + p) * (1.0 + p));
        return p / (1.0 + p);
    }

    static cplx h(const CircleMeasure& m, cplx mean, cplx w, cplx* dh = nullptr) {
        if (std::abs(w) < 1e-10) {
            // η(w) = m1 w + (m2 - m1²) w² + ...
            if (dh) *dh = circle_moment(m, 2) - mean * mean;
            return mean + (circle_moment(m, 2) - mean * mean) * w;
        }
        cplx de;
        cplx e = eta_of(m, w, &de);
        if (dh) *dh = (de * w - e) / (w * w);
        return e / w;
    }

    CircleMeasure m1_, m2_;
    cplx mean1_, mean2_;
    SubordinationOptions opt_;
};

// Density of the measure whose ψ is given, sampled at 2πk/N with respect to
// normalized Haar measure. Re(2ψ(z)+1) at z = r e^{-iθ} is the Poisson
// integral of μ at e^{iθ}.
inline CircleMeasure recover_circle_density(const std::function<cplx(cplx)>& psi_eval, std::size_t N,
                                            const CircleInversionOptions& opt = {}) {
    if (N < 4) fail(ErrorKind::InvalidInput, "circle grid too small");
    std::vector<double> h;
    for (double r : opt.radii) h.push_back(1.0 - r);
    std::vector<double> vals(N), worst(N, 0.0);
    parallel_for(N, [&](std::size_t k) {
        double th = circle_angle(k, N);
        std::vector<double> f(opt.radii.size());
        for (std::size_t j = 0; j < opt.radii.size(); ++j) {
            cplx z = std::polar(opt.radii[j], -th);
            cplx p = psi_eval(z) - detail::atoms_psi(opt.atoms, z, nullptr);
            f[j] = 2 * p.real() + 1.0 - opt.atoms.mass();
            worst[k] = std::min(worst[k], f[j]);
        }
        vals[k] = std::max(0.0, extrapolate_limit(h, f, true).value);
    });
    for (std::size_t k = 0; k < N; ++k)
        if (worst[k] < -opt.negativity_threshold)
            fail(ErrorKind::NegativityError, "circle density " + std::to_string(worst[k]));
    double mass = 0;
    for (double v : vals) mass += v;
    mass /= double(N);
    double target = 1.0 - opt.atoms.mass();
    if (std::abs(mass - target) > opt.mass_tolerance)
        fail(ErrorKind::InversionMassError, "raw circle mass " + std::to_string(mass));
    return CircleMeasure::grid(std::move(vals), true, opt.atoms);
}

namespace detail {

inline bool is_circle_point_mass(const CircleMeasure& m, double* angle) {
    if (m.transform()) return false;
    if (m.is<PointMass>()) {
        *angle = m.as<PointMass>().angle;
        return true;
    }
    if (m.is<LevyMarginal>() && m.as<LevyMarginal>().time == 0.0) {
        *angle = 0.0;
        return true;
    }
    if (m.is<AtomicOnCircle>() && m.as<AtomicOnCircle>().angles.size() == 1) {
        *angle = m.as<AtomicOnCircle>().angles[0];
        return true;
    }
    return false;
}

inline AtomicOnCircle circle_atoms(const CircleMeasure& m) {
    if (m.transform()) {
        if (m.is<GridDensityOnCircle>()) return m.as<GridDensityOnCircle>().atoms;
        return {};
    }
    if (m.is<PointMass>()) return {{m.as<PointMass>().angle}, {1.0}};
    if (m.is<AtomicOnCircle>()) return m.as<AtomicOnCircle>();
    if (m.is<GridDensityOnCircle>()) return m.as<GridDensityOnCircle>().atoms;
    if (m.is<LevyMarginal>() && m.as<LevyMarginal>().time == 0.0) return {{0.0}, {1.0}};
    return {};
}

inline CircleMeasure rotate(const CircleMeasure& m, double alpha) {
    if (!m.transform()) {
        if (m.is<PointMass>()) return CircleMeasure::point_mass(m.as<PointMass>().angle + alpha);
        if (m.is<AtomicOnCircle>()) {
            auto a = m.as<AtomicOnCircle>();
            for (double& t : a.angles) t += alpha;
            return CircleMeasure::atomic(a.angles, a.weights);
        }
    }
    return m;
}

} // namespace detail

inline CircleMeasure free_mult_convolve(const CircleMeasure& m1, const CircleMeasure& m2,
                                        const ConvolutionOptions& opt = {}) {
    detail::first_moment(m1);
    detail::first_moment(m2);
    double a;
    if (detail::is_circle_point_mass(m1, &a) && a == 0.0) return m2;
    if (detail::is_circle_point_mass(m2, &a) && a == 0.0) return m1;
    if (detail::is_circle_point_mass(m1, &a) && (m2.is<PointMass>() || m2.is<AtomicOnCircle>()) && !m2.transform())
        return detail::rotate(m2, a);
    if (detail::is_circle_point_mass(m2, &a) && (m1.is<PointMass>() || m1.is<AtomicOnCircle>()) && !m1.transform())
        return detail::rotate(m1, a);

    auto sub = std::make_shared<MultiplicativeSubordination>(m1, m2, opt.subordination);
    PsiEvaluator ev{[sub](cplx z) { return sub->psi(z); },
                    [sub](cplx z) {
                        cplx d;
                        sub->psi(z, &d);
                        return d;
                    }};
    // Atoms of μ1 ⊠ μ2 sit at products of atoms with mass p1 + p2 - 1.
    AtomicOnCircle at1 = detail::circle_atoms(m1), at2 = detail::circle_atoms(m2), at;
    for (std::size_t i = 0; i < at1.angles.size(); ++i)
        for (std::size_t j = 0; j < at2.angles.size(); ++j) {
            double p = at1.weights[i] + at2.weights[j] - 1.0;
            if (p > 1e-12) {
                at.angles.push_back(at1.angles[i] + at2.angles[j]);
                at.weights.push_back(p);
            }
        }
    CircleInversionOptions co = opt.circle;
    co.atoms = at;
    CircleMeasure out = [&] {
        try {
            return recover_circle_density([sub](cplx z) { return sub->psi(z); }, opt.n_circle, co);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::SubordinationFailed) fail(ErrorKind::ConvolutionFailed, e.what());
            throw;
        }
    }();
    return out.with_transform(std::move(ev));
}

} // namespace bifree
