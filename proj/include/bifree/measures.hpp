#pragma once

#include "bifree/error.hpp"
#include "bifree/numeric.hpp"

#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <variant>
#include <vector>

namespace bifree {

inline constexpr int default_max_order = 16;

// ============================================================================
// Measures on the real line
// ============================================================================

struct Semicircle {
    double variance = 1.0;
};

struct CauchyLaw {
    double scale = 1.0;
    double location = 0.0;
};

struct FreePoisson {
    double rate = 1.0;
};

struct Atomic {
    std::vector<double> points;
    std::vector<double> weights;

    double mass() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }
    bool empty() const { return points.empty(); }
};

struct GridDensity {
    UniformGrid grid;
    std::vector<double> values;
    Atomic atoms;
};

// Analytic Cauchy transform carried by numerically constructed measures, so
// that transform-level queries do not go through the sampled density.
struct CauchyEvaluator {
    std::function<cplx(cplx)> G;
    std::function<cplx(cplx)> dG;
    double lo = 0.0;
    double hi = 0.0;
};

struct Interval {
    double lo;
    double hi;
    bool bounded() const { return std::isfinite(lo) && std::isfinite(hi); }
};

class RealMeasure {
public:
    using Kind = std::variant<Semicircle, CauchyLaw, FreePoisson, Atomic, GridDensity>;

    static RealMeasure semicircle(double variance) {
        if (!(variance > 0)) fail(ErrorKind::InvalidInput, "semicircle variance must be positive");
        return RealMeasure(Semicircle{variance});
    }

    static RealMeasure cauchy(double scale, double location = 0.0) {
        if (!(scale > 0)) fail(ErrorKind::InvalidInput, "cauchy scale must be positive");
        return RealMeasure(CauchyLaw{scale, location});
    }

    static RealMeasure free_poisson(double rate) {
        if (!(rate > 0)) fail(ErrorKind::InvalidInput, "free Poisson rate must be positive");
        return RealMeasure(FreePoisson{rate});
    }

    static RealMeasure atomic(std::vector<double> points, std::vector<double> weights) {
        check_atoms(points, weights, true);
        return RealMeasure(Atomic{std::move(points), std::move(weights)});
    }

    static RealMeasure point_mass(double c) { return atomic({c}, {1.0}); }

    static RealMeasure grid(UniformGrid g, std::vector<double> values, Atomic atoms = {},
                            bool normalize = false) {
        if (values.size() != g.n) fail(ErrorKind::InvalidInput, "grid values do not match grid size");
        check_atoms(atoms.points, atoms.weights, false);
        for (double v : values)
            if (!(v >= 0) || !std::isfinite(v)) fail(ErrorKind::InvalidInput, "grid density must be nonnegative");
        double ac = trapezoid(values, g.step());
        double total = ac + atoms.mass();
        if (normalize) {
            if (!(ac > 0)) fail(ErrorKind::InvalidInput, "grid density has zero mass");
            double target = 1.0 - atoms.mass();
            for (double& v : values) v *= target / ac;
        } else if (std::abs(total - 1.0) > 1e-6) {
            fail(ErrorKind::InvalidInput, "grid density does not integrate to 1");
        }
        return RealMeasure(GridDensity{g, std::move(values), std::move(atoms)});
    }

    // Samples a density function on a grid and normalizes.
    static RealMeasure sampled(const std::function<double(double)>& density, UniformGrid g,
                               Atomic atoms = {}) {
        std::vector<double> v(g.n);
        for (std::size_t i = 0; i < g.n; ++i) v[i] = std::max(0.0, density(g[i]));
        return grid(g, std::move(v), std::move(atoms), true);
    }

    RealMeasure with_transform(CauchyEvaluator t) const {
        RealMeasure m = *this;
        m.transform_ = std::make_shared<const CauchyEvaluator>(std::move(t));
        return m;
    }

    const Kind& kind() const { return kind_; }
    template <class T> bool is() const { return std::holds_alternative<T>(kind_); }
    template <class T> const T& as() const { return std::get<T>(kind_); }
    const CauchyEvaluator* transform() const { return transform_.get(); }

private:
    explicit RealMeasure(Kind k) : kind_(std::move(k)) {}

    static void check_atoms(const std::vector<double>& p, const std::vector<double>& w, bool full) {
        if (p.size() != w.size()) fail(ErrorKind::InvalidInput, "atom points and weights differ in length");
        if (full && p.empty()) fail(ErrorKind::InvalidInput, "atomic measure needs at least one atom");
        double s = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!(w[i] >= 0) || !std::isfinite(p[i])) fail(ErrorKind::InvalidInput, "bad atom");
            s += w[i];
        }
        if (full && std::abs(s - 1.0) > 1e-12) fail(ErrorKind::InvalidInput, "atom weights must sum to 1");
        if (!full && s > 1.0 + 1e-12) fail(ErrorKind::InvalidInput, "atom weights exceed 1");
    }

    Kind kind_;
    std::shared_ptr<const CauchyEvaluator> transform_;
};

inline Interval support(const RealMeasure& m) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return std::visit(
        [&](const auto& k) -> Interval {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, Semicircle>) {
                double e = 2.0 * std::sqrt(k.variance);
                return {-e, e};
            } else if constexpr (std::is_same_v<T, CauchyLaw>) {
                return {-inf, inf};
            } else if constexpr (std::is_same_v<T, FreePoisson>) {
                double a = std::pow(1.0 - std::sqrt(k.rate), 2), b = std::pow(1.0 + std::sqrt(k.rate), 2);
                return {k.rate < 1.0 ? 0.0 : a, b};
            } else if constexpr (std::is_same_v<T, Atomic>) {
                auto [lo, hi] = std::minmax_element(k.points.begin(), k.points.end());
                return {*lo, *hi};
            } else {
                Interval s{k.grid.lo, k.grid.hi};
                for (double p : k.atoms.points) {
                    s.lo = std::min(s.lo, p);
                    s.hi = std::max(s.hi, p);
                }
                return s;
            }
        },
        m.kind());
}

// Point masses of the measure (the density part is excluded).
inline Atomic atoms(const RealMeasure& m) {
    if (m.is<Atomic>()) return m.as<Atomic>();
    if (m.is<GridDensity>()) return m.as<GridDensity>().atoms;
    if (m.is<FreePoisson>() && m.as<FreePoisson>().rate < 1.0)
        return Atomic{{0.0}, {1.0 - m.as<FreePoisson>().rate}};
    return {};
}

// Padded support grid used as the default inversion window.
inline UniformGrid default_grid(const RealMeasure& m, std::size_t n = 2048, double pad = 0.05) {
    Interval s = support(m);
    if (!s.bounded()) {
        const auto& c = m.as<CauchyLaw>();
        return UniformGrid(c.location - 8 * c.scale, c.location + 8 * c.scale, n);
    }
    double w = std::max(s.hi - s.lo, 1e-3);
    return UniformGrid(s.lo - pad * w, s.hi + pad * w, n);
}

namespace detail {

inline double catalan(int k) {
    double c = 1;
    for (int i = 0; i < k; ++i) c = c * 2.0 * (2 * i + 1) / double(i + 2);
    return c;
}

inline double binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    double b = 1;
    for (int i = 1; i <= k; ++i) b = b * double(n - k + i) / double(i);
    return b;
}

inline void check_order(int n, int max_order) {
    if (std::abs(n) > max_order) fail(ErrorKind::OrderOverflow, "order " + std::to_string(n));
}

} // namespace detail

inline double moment(const RealMeasure& m, int n, int max_order = default_max_order) {
    if (n < 0) fail(ErrorKind::InvalidInput, "moment order must be nonnegative");
    detail::check_order(n, max_order);
    if (n == 0) return 1.0;
    if (m.is<CauchyLaw>()) fail(ErrorKind::MomentUndefined, "Cauchy law has no moments of order >= 1");
    if (m.is<Semicircle>()) {
        if (n % 2) return 0.0;
        return detail::catalan(n / 2) * std::pow(m.as<Semicircle>().variance, n / 2);
    }
    if (m.is<FreePoisson>()) {
        // Narayana numbers.
        double lam = m.as<FreePoisson>().rate, s = 0;
        for (int k = 1; k <= n; ++k)
            s += detail::binomial(n, k) * detail::binomial(n, k - 1) / n * std::pow(lam, k);
        return s;
    }
    auto atom_sum = [n](const Atomic& a) {
        double s = 0;
        for (std::size_t i = 0; i < a.points.size(); ++i) s += a.weights[i] * std::pow(a.points[i], n);
        return s;
    };
    if (m.is<Atomic>()) return atom_sum(m.as<Atomic>());

    const auto& g = m.as<GridDensity>();
    if (const CauchyEvaluator* t = m.transform()) {
        // Contour integral of z^n G(z) around the support.
        double c = 0.5 * (t->lo + t->hi);
        double rho = std::max(0.5 * (t->hi - t->lo), 1e-3);
        double R = 1.5 * rho + 0.25;
        const int K = 256;
        cplx s = 0;
        for (int k = 0; k < K; ++k) {
            cplx e = std::polar(1.0, 2 * pi * (k + 0.5) / K);
            cplx z = c + R * e;
            s += std::pow(z, n) * t->G(z) * R * e;
        }
        return s.real() / K;
    }
    std::vector<double> f(g.grid.n);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = g.values[i] * std::pow(g.grid[i], n);
    return trapezoid(f, g.grid.step()) + atom_sum(g.atoms);
}

inline double density_at(const RealMeasure& m, double x) {
    return std::visit(
        [&](const auto& k) -> double {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, Semicircle>) {
                double r = 4 * k.variance - x * x;
                return r > 0 ? std::sqrt(r) / (2 * pi * k.variance) : 0.0;
            } else if constexpr (std::is_same_v<T, CauchyLaw>) {
                double d = x - k.location;
                return k.scale / (pi * (d * d + k.scale * k.scale));
            } else if constexpr (std::is_same_v<T, FreePoisson>) {
                double a = std::pow(1.0 - std::sqrt(k.rate), 2), b = std::pow(1.0 + std::sqrt(k.rate), 2);
                if (x <= a || x >= b) return 0.0;
                return std::sqrt((b - x) * (x - a)) / (2 * pi * x);
            } else if constexpr (std::is_same_v<T, Atomic>) {
                return 0.0;
            } else {
                return interpolate(k.grid, k.values, x);
            }
        },
        m.kind());
}

// ============================================================================
// Measures on the unit circle
// ============================================================================

struct PointMass {
    double angle = 0.0;
};

struct LevyMarginal {
    double time = 0.0;
};

struct AtomicOnCircle {
    std::vector<double> angles;
    std::vector<double> weights;

    double mass() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }
    bool empty() const { return angles.empty(); }
};

// Density values at angles 2πk/N with respect to normalized Haar measure,
// plus an optional atomic part.
struct GridDensityOnCircle {
    std::vector<double> values;
    AtomicOnCircle atoms;
};

// ψ on the open disc, carried by numerically constructed circle measures.
struct PsiEvaluator {
    std::function<cplx(cplx)> psi;
    std::function<cplx(cplx)> dpsi;
};

class CircleMeasure {
public:
    using Kind = std::variant<PointMass, LevyMarginal, AtomicOnCircle, GridDensityOnCircle>;

    static CircleMeasure point_mass(double angle) { return CircleMeasure(PointMass{angle}); }

    static CircleMeasure levy(double t) {
        if (!(t >= 0)) fail(ErrorKind::InvalidInput, "Levy marginal time must be >= 0");
        return CircleMeasure(LevyMarginal{t});
    }

    static CircleMeasure atomic(std::vector<double> angles, std::vector<double> weights) {
        if (angles.size() != weights.size() || angles.empty())
            fail(ErrorKind::InvalidInput, "atom angles and weights differ in length");
        double s = 0;
        for (double w : weights) {
            if (!(w >= 0)) fail(ErrorKind::InvalidInput, "negative atom weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) fail(ErrorKind::InvalidInput, "atom weights must sum to 1");
        return CircleMeasure(AtomicOnCircle{std::move(angles), std::move(weights)});
    }

    static CircleMeasure grid(std::vector<double> values, bool normalize = false, AtomicOnCircle atoms = {}) {
        if (values.size() < 4) fail(ErrorKind::InvalidInput, "circle grid needs at least 4 points");
        if (atoms.angles.size() != atoms.weights.size()) fail(ErrorKind::InvalidInput, "atom angles and weights differ in length");
        for (double w : atoms.weights)
            if (!(w >= 0)) fail(ErrorKind::InvalidInput, "negative atom weight");
        const double am = atoms.mass();
        double s = 0;
        for (double v : values) {
            if (!(v >= 0) || !std::isfinite(v)) fail(ErrorKind::InvalidInput, "circle density must be nonnegative");
            s += v;
        }
        s /= double(values.size());
        if (normalize) {
            if (!(s > 0)) fail(ErrorKind::InvalidInput, "circle density has zero mass");
            for (double& v : values) v *= (1.0 - am) / s;
        } else if (std::abs(s + am - 1.0) > 1e-6) {
            fail(ErrorKind::InvalidInput, "circle density does not integrate to 1");
        }
        return CircleMeasure(GridDensityOnCircle{std::move(values), std::move(atoms)});
    }

    static CircleMeasure haar(std::size_t n = 512) { return grid(std::vector<double>(n, 1.0)); }

    CircleMeasure with_transform(PsiEvaluator t) const {
        CircleMeasure m = *this;
        m.transform_ = std::make_shared<const PsiEvaluator>(std::move(t));
        return m;
    }

    const Kind& kind() const { return kind_; }
    template <class T> bool is() const { return std::holds_alternative<T>(kind_); }
    template <class T> const T& as() const { return std::get<T>(kind_); }
    const PsiEvaluator* transform() const { return transform_.get(); }

private:
    explicit CircleMeasure(Kind k) : kind_(std::move(k)) {}

    Kind kind_;
    std::shared_ptr<const PsiEvaluator> transform_;
};

inline double circle_angle(std::size_t k, std::size_t n) { return 2 * pi * double(k) / double(n); }

inline cplx circle_moment(const CircleMeasure& m, int n, int max_order = default_max_order) {
    detail::check_order(n, max_order);
    if (n == 0) return 1.0;
    if (n < 0) return std::conj(circle_moment(m, -n, max_order));
    if (const PsiEvaluator* t = m.transform()) {
        // Taylor coefficient of ψ by a contour integral on |z| = 1/2.
        const int K = 128;
        const double rho = 0.5;
        cplx s = 0;
        for (int k = 0; k < K; ++k) {
            cplx z = std::polar(rho, 2 * pi * k / K);
            s += t->psi(z) * std::pow(z, -n);
        }
        return s / double(K);
    }
    return std::visit(
        [&](const auto& k) -> cplx {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, PointMass>) {
                return std::polar(1.0, n * k.angle);
            } else if constexpr (std::is_same_v<T, LevyMarginal>) {
                return std::exp(-n * k.time);
            } else if constexpr (std::is_same_v<T, AtomicOnCircle>) {
                cplx s = 0;
                for (std::size_t i = 0; i < k.angles.size(); ++i) s += k.weights[i] * std::polar(1.0, n * k.angles[i]);
                return s;
            } else {
                const std::size_t N = k.values.size();
                cplx s = 0;
                for (std::size_t j = 0; j < N; ++j) s += k.values[j] * std::polar(1.0, n * circle_angle(j, N));
                s /= double(N);
                for (std::size_t i = 0; i < k.atoms.angles.size(); ++i)
                    s += k.atoms.weights[i] * std::polar(1.0, n * k.atoms.angles[i]);
                return s;
            }
        },
        m.kind());
}

// Density with respect to normalized Haar measure at e^{iθ}.
inline double density_at(const CircleMeasure& m, double theta) {
    if (m.is<LevyMarginal>()) {
        double t = m.as<LevyMarginal>().time;
        if (t == 0) return 0.0;
        double q = std::exp(-t);
        return (1 - q * q) / std::norm(std::polar(1.0, theta) - q);
    }
    if (m.is<GridDensityOnCircle>()) {
        const auto& v = m.as<GridDensityOnCircle>().values;
        const std::size_t N = v.size();
        double t = std::fmod(theta, 2 * pi);
        if (t < 0) t += 2 * pi;
        double u = t / (2 * pi) * double(N);
        auto i = static_cast<std::size_t>(std::floor(u)) % N;
        double a = u - std::floor(u);
        return (1 - a) * v[i] + a * v[(i + 1) % N];
    }
    return 0.0;
}

// Same density per unit angle, i.e. with respect to dθ.
inline double density_per_radian(const CircleMeasure& m, double theta) {
    return density_at(m, theta) / (2 * pi);
}

} // namespace bifree
