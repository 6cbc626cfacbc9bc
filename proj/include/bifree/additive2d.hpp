#pragma once

#include "bifree/cumulants.hpp"
#include "bifree/transforms1d.hpp"

#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace bifree {

// ============================================================================
// Two-variable Green's functions
// ============================================================================

enum class GreenRoute { IncrementFree, BifreeSum, ClosedForm, ReducedR };

inline const char* route_name(GreenRoute r) {
    switch (r) {
    case GreenRoute::IncrementFree: return "increment-free";
    case GreenRoute::BifreeSum: return "bi-free-sum";
    case GreenRoute::ClosedForm: return "closed-form";
    case GreenRoute::ReducedR: return "reduced-R";
    }
    return "?";
}

// Part of the joint law living on the line {x = at} (or {y = at}); transform
// is the Cauchy transform of that line measure in the other variable.
struct SingularLine {
    double at;
    double mass;
    std::function<cplx(cplx)> transform;
};

struct JointAtom {
    double x;
    double y;
    double mass;
};

struct JointGreenEvaluator {
    using Fn = std::function<cplx(cplx, cplx)>;
    using Partial = std::function<std::function<cplx(cplx)>(cplx)>;

    JointGreenEvaluator(Fn f, RealMeasure mx, RealMeasure my, GreenRoute r)
        : fn(std::move(f)), marginal_x(std::move(mx)), marginal_y(std::move(my)), route(r) {}

    Fn fn;
    RealMeasure marginal_x;
    RealMeasure marginal_y;
    GreenRoute route;
    // Optional: does the w-only work once and returns z ↦ G(z, w).
    Partial partial;
    std::vector<SingularLine> x_lines;
    std::vector<SingularLine> y_lines;
    std::vector<JointAtom> atoms;

    cplx eval(HalfPlanePoint z, HalfPlanePoint w) const { return fn(z.value(), w.value()); }
    cplx operator()(cplx z, cplx w) const { return fn(z, w); }

    std::function<cplx(cplx)> at_w(cplx w) const {
        if (partial) return partial(w);
        return [f = fn, w](cplx z) { return f(z, w); };
    }
};

namespace detail {

inline cplx perturb(cplx w) { return w + cplx(0.0, w.imag() > 0 ? 1e-9 : -1e-9); }

inline bool near_pole(cplx z, cplx om) { return std::abs(z - om) < 1e-14 * std::max(1.0, std::abs(z)); }

} // namespace detail

// G_{L(X),R(X+Y)}(z,w) = −(G_X(z) − G_S(w)) / (z − K_X(G_S(w))).
inline JointGreenEvaluator green2_increment(const RealMeasure& mX, const RealMeasure& mSum) {
    struct Side {
        cplx gs, om;
    };
    auto side = [mX, mSum](cplx w) {
        cplx gs = detail::G_raw(mSum, w);
        return Side{gs, inverse_K(mX, gs)};
    };
    auto value = [mX, side](cplx z, cplx w, Side s) {
        if (detail::near_pole(z, s.om)) {
            s = side(detail::perturb(w));
            if (detail::near_pole(z, s.om)) fail(ErrorKind::PoleProximity, "z sits on K_X(G_S(w))");
        }
        return -(detail::G_raw(mX, z) - s.gs) / (z - s.om);
    };
    JointGreenEvaluator G([side, value](cplx z, cplx w) { return value(z, w, side(w)); }, mX, mSum,
                          GreenRoute::IncrementFree);
    G.partial = [side, value](cplx w) -> std::function<cplx(cplx)> {
        auto s = side(w);
        return [value, w, s](cplx z) { return value(z, w, s); };
    };

    // Atoms c of X put mass on {x = c}; the residue of the formula at z = c
    // is p / (K_X(G_S(w)) − c).
    Atomic ax = atoms(mX);
    for (std::size_t i = 0; i < ax.points.size(); ++i) {
        double c = ax.points[i], p = ax.weights[i];
        G.x_lines.push_back({c, p, [side, c, p](cplx w) { return p / (side(w).om - c); }});
    }
    // An atom d of X+Y comes from a single pair of atoms, so {y = d} is one
    // joint atom; its x position is the line whose residue at d is largest.
    Atomic as = atoms(mSum);
    for (std::size_t j = 0; j < as.points.size(); ++j) {
        double d = as.points[j], q = as.weights[j];
        if (G.x_lines.empty()) continue;
        std::size_t best = 0;
        double best_r = -1;
        for (std::size_t i = 0; i < G.x_lines.size(); ++i) {
            cplx w(d, 1e-8);
            double r = std::abs(cplx(0, 1e-8) * G.x_lines[i].transform(w));
            if (r > best_r) best_r = r, best = i;
        }
        double c = G.x_lines[best].at;
        G.atoms.push_back({c, d, q});
        G.y_lines.push_back({d, q, [c, q](cplx z) { return q / (z - c); }});
    }
    return G;
}

// Classically independent pair.
inline JointGreenEvaluator product_green(const RealMeasure& mX, const RealMeasure& mY) {
    JointGreenEvaluator G([mX, mY](cplx z, cplx w) { return detail::G_raw(mX, z) * detail::G_raw(mY, w); }, mX, mY,
                          GreenRoute::ClosedForm);
    G.partial = [mX, mY](cplx w) -> std::function<cplx(cplx)> {
        cplx gw = detail::G_raw(mY, w);
        return [mX, gw](cplx z) { return detail::G_raw(mX, z) * gw; };
    };
    Atomic ax = atoms(mX), ay = atoms(mY);
    for (std::size_t i = 0; i < ax.points.size(); ++i)
        G.x_lines.push_back({ax.points[i], ax.weights[i], [mY, p = ax.weights[i]](cplx w) { return p * detail::G_raw(mY, w); }});
    for (std::size_t j = 0; j < ay.points.size(); ++j)
        G.y_lines.push_back({ay.points[j], ay.weights[j], [mX, q = ay.weights[j]](cplx z) { return q * detail::G_raw(mX, z); }});
    for (std::size_t i = 0; i < ax.points.size(); ++i)
        for (std::size_t j = 0; j < ay.points.size(); ++j)
            G.atoms.push_back({ax.points[i], ay.points[j], ax.weights[i] * ay.weights[j]});
    return G;
}

inline void check_gaussian(double a, double b, double c) {
    if (!(a > 0) || !(b > 0)) fail(ErrorKind::InvalidInput, "variances must be positive");
    if (c * c >= a * b) fail(ErrorKind::DegenerateCorrelation, "c^2 >= ab");
}

// Bi-free Gaussian pair: G(Z,W) = g g' / (1 − c g g') with g = G_X(Z), g' = G_Y(W).
inline JointGreenEvaluator gaussian_green(double a, double b, double c) {
    check_gaussian(a, b, c);
    auto mx = RealMeasure::semicircle(a), my = RealMeasure::semicircle(b);
    JointGreenEvaluator G(
        [mx, my, c](cplx z, cplx w) {
            cplx p = detail::G_raw(mx, z) * detail::G_raw(my, w);
            return p / (1.0 - c * p);
        },
        mx, my, GreenRoute::ClosedForm);
    G.partial = [mx, my, c](cplx w) -> std::function<cplx(cplx)> {
        cplx gw = detail::G_raw(my, w);
        return [mx, gw, c](cplx z) {
            cplx p = detail::G_raw(mx, z) * gw;
            return p / (1.0 - c * p);
        };
    };
    return G;
}

// Free Cauchy process at times ℓ < r.
inline JointGreenEvaluator cauchy_process_green(double l, double r) {
    if (!(l > 0) || !(l < r)) fail(ErrorKind::TimeOrderViolation, "need 0 < l < r");
    return green2_increment(RealMeasure::cauchy(l), RealMeasure::cauchy(r));
}

// ============================================================================
// Reduced bi-free partial R-transform
// ============================================================================

// Σ_{n,m≥1} c_{n,m} u^n v^m with n + m ≤ order.
class BivariateSeries {
public:
    explicit BivariateSeries(int order) : order_(order), c_(std::size_t(order + 1) * (order + 1), 0.0) {
        if (order < 2) fail(ErrorKind::InvalidInput, "series order must be at least 2");
    }

    int order() const { return order_; }
    double coeff(int n, int m) const { return n + m <= order_ && n >= 1 && m >= 1 ? c_[idx(n, m)] : 0.0; }
    void set(int n, int m, double v) {
        if (n < 1 || m < 1 || n + m > order_) fail(ErrorKind::OrderOverflow, "series index");
        c_[idx(n, m)] = v;
    }

    static BivariateSeries gaussian(double c) {
        BivariateSeries s(2);
        s.set(1, 1, c);
        return s;
    }

    // κ_{n,m} = κ_{n+m}(X) for the pair (X, X+Y), Y free from X.
    static BivariateSeries increment(const std::vector<double>& kX) {
        BivariateSeries s(int(kX.size()));
        for (int n = 1; n < s.order_; ++n)
            for (int m = 1; n + m <= s.order_; ++m) s.set(n, m, kX[n + m - 1]);
        return s;
    }

    template <class T>
    static BivariateSeries from_table(const CumulantTable<T>& t) {
        BivariateSeries s(t.order());
        for (int n = 1; n < t.order(); ++n)
            for (int m = 1; n + m <= t.order(); ++m) s.set(n, m, to_double(t.mixed(n, m)));
        return s;
    }

    BivariateSeries operator+(const BivariateSeries& o) const {
        BivariateSeries s(std::max(order_, o.order_));
        for (int n = 1; n < s.order_; ++n)
            for (int m = 1; n + m <= s.order_; ++m) s.set(n, m, coeff(n, m) + o.coeff(n, m));
        return s;
    }

    // Sums by total degree; the last degrees estimate the geometric tail.
    cplx eval(cplx u, cplx v) const {
        std::vector<double> size(order_ + 1, 0.0);
        cplx total = 0;
        std::vector<cplx> up(order_ + 1), vp(order_ + 1);
        up[0] = vp[0] = 1;
        for (int k = 1; k <= order_; ++k) up[k] = up[k - 1] * u, vp[k] = vp[k - 1] * v;
        for (int d = 2; d <= order_; ++d) {
            cplx t = 0;
            for (int n = 1; n < d; ++n) t += c_[idx(n, d - n)] * up[n] * vp[d - n];
            size[d] = std::abs(t);
            total += t;
        }
        auto peak = [&](int a, int b) {
            double x = 0;
            for (int d = std::max(a, 2); d <= b; ++d) x = std::max(x, size[d]);
            return x;
        };
        if (order_ >= 6) {
            double last = peak(order_ - 1, order_), prev = peak(order_ - 3, order_ - 2);
            if (last > 0) {
                double rho = prev > 0 ? std::sqrt(last / prev) : 1.0;
                double tail = rho < 1 ? last * rho / (1 - rho) : INFINITY;
                if (!(tail <= 1e-12 * std::max(1.0, std::abs(total))))
                    fail(ErrorKind::SeriesDomainError, "reduced R series does not converge at this point");
            }
        }
        return total;
    }

private:
    std::size_t idx(int n, int m) const { return std::size_t(n) * (order_ + 1) + m; }

    int order_;
    std::vector<double> c_;
};

// G(Z,W) = G_X(Z) G_Y(W) / (1 − R̃(G_X(Z), G_Y(W))).
inline JointGreenEvaluator green2_from_reduced_R(const RealMeasure& mX, const RealMeasure& mY, BivariateSeries Rt) {
    auto R = std::make_shared<const BivariateSeries>(std::move(Rt));
    auto f = [mX, mY, R](cplx z, cplx w) {
        cplx u = detail::G_raw(mX, z), v = detail::G_raw(mY, w);
        return u * v / (1.0 - R->eval(u, v));
    };
    JointGreenEvaluator G(f, mX, mY, GreenRoute::ReducedR);
    G.partial = [mX, mY, R](cplx w) -> std::function<cplx(cplx)> {
        cplx v = detail::G_raw(mY, w);
        return [mX, R, v](cplx z) {
            cplx u = detail::G_raw(mX, z);
            return u * v / (1.0 - R->eval(u, v));
        };
    };
    return G;
}

// ============================================================================
// Bi-free additive convolution
// ============================================================================

// 1/G(z,w) = 1/G1(ω_X1, ω_Y1) + 1/G2(ω_X2, ω_Y2) − 1/(G_{X1+X2}(z) G_{Y1+Y2}(w)).
inline JointGreenEvaluator bifree_add_convolve(const JointGreenEvaluator& G1, const RealMeasure& mX1,
                                               const RealMeasure& mY1, const RealMeasure& mX2,
                                               const RealMeasure& mY2, const JointGreenEvaluator& G2,
                                               const ConvolutionOptions& opt = {}) {
    auto subX = std::make_shared<AdditiveSubordination>(mX1, mX2, opt.subordination);
    auto subY = std::make_shared<AdditiveSubordination>(mY1, mY2, opt.subordination);
    auto g1 = std::make_shared<JointGreenEvaluator>(G1);
    auto g2 = std::make_shared<JointGreenEvaluator>(G2);
    auto combine = [g1, g2](const SubordinationResult& x, const SubordinationResult& y) {
        cplx inv = 1.0 / g1->fn(x.omega1, y.omega1) + 1.0 / g2->fn(x.omega2, y.omega2) - 1.0 / (x.G_sum * y.G_sum);
        return 1.0 / inv;
    };
    JointGreenEvaluator G([subX, subY, combine](cplx z, cplx w) { return combine(subX->solve(z), subY->solve(w)); },
                          free_add_convolve(mX1, mX2, opt), free_add_convolve(mY1, mY2, opt),
                          GreenRoute::BifreeSum);
    G.partial = [subX, subY, combine](cplx w) -> std::function<cplx(cplx)> {
        auto y = subY->solve(w);
        return [subX, combine, y](cplx z) { return combine(subX->solve(z), y); };
    };
    return G;
}

inline JointGreenEvaluator bifree_add_convolve(const JointGreenEvaluator& G1, const JointGreenEvaluator& G2,
                                               const ConvolutionOptions& opt = {}) {
    return bifree_add_convolve(G1, G1.marginal_x, G1.marginal_y, G2.marginal_x, G2.marginal_y, G2, opt);
}

// τ(X^n Y^m) from the Laurent coefficient of z^{-n-1} w^{-m-1}, by the
// trapezoid rule on circles enclosing both supports.
inline double joint_moment(const JointGreenEvaluator& G, int n, int m, int K = 64) {
    Interval sx = support(G.marginal_x), sy = support(G.marginal_y);
    if (!sx.bounded() || !sy.bounded()) fail(ErrorKind::MomentUndefined, "unbounded marginal");
    auto radius = [](Interval s) { return 1.5 * std::max(std::abs(s.lo), std::abs(s.hi)) + 0.25; };
    double Rx = radius(sx), Ry = radius(sy);
    std::vector<cplx> acc(K);
    parallel_for(std::size_t(K), [&](std::size_t j) {
        cplx w = std::polar(Ry, 2 * pi * (j + 0.5) / K);
        auto f = G.at_w(w);
        cplx s = 0;
        for (int k = 0; k < K; ++k) {
            cplx z = std::polar(Rx, 2 * pi * (k + 0.5) / K);
            s += f(z) * std::pow(z, n + 1) * std::pow(w, m + 1);
        }
        acc[j] = s;
    });
    cplx s = 0;
    for (cplx a : acc) s += a;
    return (s / double(K * K)).real();
}

// ============================================================================
// 2D Stieltjes inversion
// ============================================================================

struct Inversion2dOptions {
    std::vector<double> eps{1e-2, 5e-3, 2.5e-3, 1.25e-3};
    // Total mass the grid plus singular parts should carry; nullopt when the
    // window does not cover the support.
    std::optional<double> expected_mass = 1.0;
    double mass_tolerance = 1e-2;
    double negativity_threshold = 1e-5;
};

// Density of a singular line over the other axis.
struct LineDensity {
    double at;
    double mass;
    std::vector<double> values;
    // Part of `mass` the uniform grid misses near a sharp peak; moments put it
    // at the peak node so the values themselves stay unscaled.
    double unresolved = 0;
    std::size_t peak = 0;
};

struct JointDensityGrid {
    UniformGrid x_grid;
    UniformGrid y_grid;
    // Absolutely continuous part, x-major: values[i * ny + j].
    std::vector<double> values;
    std::vector<double> marginal_x;
    std::vector<double> marginal_y;
    std::vector<LineDensity> x_lines;
    std::vector<LineDensity> y_lines;
    std::vector<JointAtom> atoms;
    // The window cuts off part of the support; marginals then come from the
    // 1D transforms instead of from the grid.
    bool truncated = false;
    double raw_mass = 0.0;
    std::size_t fallbacks = 0;

    double at(std::size_t i, std::size_t j) const { return values[i * y_grid.n + j]; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * y_grid.n, y_grid.n}; }

    // ∫∫ x^n y^m dμ over the window, singular parts included.
    double moment(int n, int m) const {
        std::vector<double> inner(x_grid.n);
        for (std::size_t i = 0; i < x_grid.n; ++i) {
            std::vector<double> r(y_grid.n);
            for (std::size_t j = 0; j < y_grid.n; ++j) r[j] = at(i, j) * std::pow(y_grid[j], m);
            inner[i] = trapezoid(r, y_grid.step()) * std::pow(x_grid[i], n);
        }
        double s = trapezoid(inner, x_grid.step());
        auto line = [](const LineDensity& L, const UniformGrid& g, int k) {
            std::vector<double> r(g.n);
            for (std::size_t j = 0; j < g.n; ++j) r[j] = L.values[j] * std::pow(g[j], k);
            return trapezoid(r, g.step()) + L.unresolved * std::pow(g[L.peak], k);
        };
        for (const auto& L : x_lines) s += std::pow(L.at, n) * line(L, y_grid, m);
        for (const auto& L : y_lines) s += std::pow(L.at, m) * line(L, x_grid, n);
        for (const auto& a : atoms) s += a.mass * std::pow(a.x, n) * std::pow(a.y, m);
        return s;
    }

    double mass() const { return moment(0, 0); }
};

namespace detail {

inline double singular_mass(const JointGreenEvaluator& G) {
    double s = 0;
    for (const auto& L : G.x_lines) s += L.mass;
    for (const auto& L : G.y_lines) s += L.mass;
    for (const auto& a : G.atoms) s -= a.mass;
    return s;
}

// Density of a line measure after its atoms are taken out.
inline LineDensity recover_line(const SingularLine& L, const std::vector<JointAtom>& atoms, bool vertical,
                                const UniformGrid& grid, const Inversion2dOptions& opt, bool truncated) {
    Atomic on;
    for (const auto& a : atoms)
        if ((vertical ? a.x : a.y) == L.at) {
            on.points.push_back(vertical ? a.y : a.x);
            on.weights.push_back(a.mass);
        }
    double rest = L.mass - on.mass();
    LineDensity out{L.at, rest, std::vector<double>(grid.n, 0.0)};
    if (rest <= 1e-12) return out;
    InversionOptions io;
    io.eps = opt.eps;
    io.negativity_threshold = opt.negativity_threshold;
    io.expected_mass.reset();
    auto T = L.transform;
    auto d = recover_density_1d([T, on](cplx w) { return T(w) - atoms_G(on, w, nullptr); }, grid, io);
    out.values = std::move(d.values);
    if (truncated || !opt.expected_mass) return out;
    if (std::abs(d.raw_mass - rest) > opt.mass_tolerance)
        fail(ErrorKind::InversionMassError,
             "line x=" + std::to_string(L.at) + " mass " + std::to_string(d.raw_mass) + ", expected " + std::to_string(rest));
    out.peak = std::size_t(std::max_element(out.values.begin(), out.values.end()) - out.values.begin());
    out.unresolved = rest - d.raw_mass;
    return out;
}

} // namespace detail

// f(x,y) = lim (1/π²) Im[(G(x+iε, y+iε) − G(x+iε, y−iε)) / 2i], with the
// evaluator's singular lines and atoms removed first.
inline JointDensityGrid recover_density_2d(const JointGreenEvaluator& G, const UniformGrid& xg, const UniformGrid& yg,
                                           const Inversion2dOptions& opt = {}) {
    const auto& eps = opt.eps;
    const std::size_t nx = xg.n, ny = yg.n, ne = eps.size();
    bool truncated = !support(G.marginal_x).bounded() || !support(G.marginal_y).bounded();
    {
        Interval sx = support(G.marginal_x), sy = support(G.marginal_y);
        if (sx.bounded() && sy.bounded() && (sx.lo < xg.lo || sx.hi > xg.hi || sy.lo < yg.lo || sy.hi > yg.hi))
            truncated = true;
    }
    JointDensityGrid out{xg, yg, std::vector<double>(nx * ny), {}, {}, {}, {}, G.atoms, truncated, 0.0, 0};

    // y-line transforms depend on z only.
    std::vector<cplx> M(G.y_lines.size() * nx * ne);
    parallel_for(nx, [&](std::size_t i) {
        for (std::size_t k = 0; k < ne; ++k)
            for (std::size_t l = 0; l < G.y_lines.size(); ++l)
                M[(l * nx + i) * ne + k] = G.y_lines[l].transform(cplx(xg[i], eps[k]));
    });

    // Off the marginal supports the density is zero and only extrapolation residue remains.
    auto inside = [](const RealMeasure& m, const UniformGrid& g) {
        Interval s = support(m);
        std::vector<char> in(g.n, 1);
        if (s.bounded())
            for (std::size_t i = 0; i < g.n; ++i) in[i] = g[i] >= s.lo && g[i] <= s.hi;
        return in;
    };
    const auto inside_x = inside(G.marginal_x, xg), inside_y = inside(G.marginal_y, yg);

    std::vector<double> col_worst(ny, 0.0);
    std::vector<std::size_t> col_fell(ny, 0);
    parallel_for(ny, [&](std::size_t j) {
        std::vector<double> f(nx * ne);
        for (std::size_t k = 0; k < ne; ++k) {
            for (int s = 0; s < 2; ++s) {
                cplx w(yg[j], s == 0 ? eps[k] : -eps[k]);
                auto g = G.at_w(w);
                std::vector<cplx> Lw(G.x_lines.size());
                for (std::size_t l = 0; l < G.x_lines.size(); ++l) Lw[l] = G.x_lines[l].transform(w);
                for (std::size_t i = 0; i < nx; ++i) {
                    cplx z(xg[i], eps[k]);
                    cplx v = g(z);
                    for (std::size_t l = 0; l < G.x_lines.size(); ++l) v -= Lw[l] / (z - G.x_lines[l].at);
                    for (std::size_t l = 0; l < G.y_lines.size(); ++l)
                        v -= M[(l * nx + i) * ne + k] / (w - G.y_lines[l].at);
                    for (const auto& a : G.atoms) v += a.mass / ((z - a.x) * (w - a.y));
                    // f_ε = −Re(G₊ − G₋) / 2π²
                    double contrib = -v.real() / (2 * pi * pi);
                    f[i * ne + k] += s == 0 ? contrib : -contrib;
                }
            }
        }
        std::vector<double> fk(ne);
        for (std::size_t i = 0; i < nx; ++i) {
            for (std::size_t k = 0; k < ne; ++k) {
                fk[k] = f[i * ne + k];
                col_worst[j] = std::min(col_worst[j], fk[k]);
            }
            if (!inside_x[i] || !inside_y[j]) continue;
            Extrapolated e = extrapolate_limit(eps, fk, true);
            out.values[i * ny + j] = std::max(0.0, e.value);
            col_fell[j] += e.fallback;
        }
    });
    for (std::size_t j = 0; j < ny; ++j) {
        if (col_worst[j] < -opt.negativity_threshold)
            fail(ErrorKind::NegativityError,
                 "joint density " + std::to_string(col_worst[j]) + " at y=" + std::to_string(yg[j]));
        out.fallbacks += col_fell[j];
    }

    for (const auto& L : G.x_lines) out.x_lines.push_back(detail::recover_line(L, G.atoms, true, yg, opt, truncated));
    for (const auto& L : G.y_lines) out.y_lines.push_back(detail::recover_line(L, G.atoms, false, xg, opt, truncated));

    std::vector<double> inner(nx);
    for (std::size_t i = 0; i < nx; ++i) inner[i] = trapezoid(out.row(i), yg.step());
    double ac = trapezoid(inner, xg.step());
    double sing = detail::singular_mass(G);
    out.raw_mass = ac + sing;
    std::optional<double> target = truncated ? std::nullopt : opt.expected_mass;
    if (target) {
        if (std::abs(out.raw_mass - *target) > opt.mass_tolerance)
            fail(ErrorKind::InversionMassError,
                 "raw mass " + std::to_string(out.raw_mass) + ", expected " + std::to_string(*target));
        double want = *target - sing;
        if (ac > 0 && want > 0)
            for (double& v : out.values) v *= want / ac;
    }

    out.marginal_x.assign(nx, 0.0);
    out.marginal_y.assign(ny, 0.0);
    if (!truncated) {
        for (std::size_t i = 0; i < nx; ++i) out.marginal_x[i] = trapezoid(out.row(i), yg.step());
        for (std::size_t j = 0; j < ny; ++j) {
            std::vector<double> c(nx);
            for (std::size_t i = 0; i < nx; ++i) c[i] = out.at(i, j);
            out.marginal_y[j] = trapezoid(c, xg.step());
        }
        for (const auto& L : out.y_lines)
            for (std::size_t i = 0; i < nx; ++i) out.marginal_x[i] += L.values[i];
        for (const auto& L : out.x_lines)
            for (std::size_t j = 0; j < ny; ++j) out.marginal_y[j] += L.values[j];
    } else {
        InversionOptions io;
        io.eps = opt.eps;
        io.expected_mass.reset();
        out.marginal_x = recover_density_1d(cauchy_function(G.marginal_x), xg, io).values;
        out.marginal_y = recover_density_1d(cauchy_function(G.marginal_y), yg, io).values;
    }
    return out;
}

// Smallest rectangle where a coarse recovery exceeds threshold, padded by a
// coarse cell, then recovered at n × n.
inline JointDensityGrid recover_density_2d(const JointGreenEvaluator& G, std::size_t n,
                                           const Inversion2dOptions& opt = {}, double threshold = 1e-6) {
    Interval sx = support(G.marginal_x), sy = support(G.marginal_y);
    if (!sx.bounded() || !sy.bounded())
        fail(ErrorKind::InvalidInput, "unbounded marginal: pass explicit grids");
    auto pad = [](Interval s) {
        double w = std::max(s.hi - s.lo, 1e-3);
        return UniformGrid(s.lo - 0.05 * w, s.hi + 0.05 * w, 64);
    };
    UniformGrid cx = pad(sx), cy = pad(sy);
    Inversion2dOptions coarse = opt;
    coarse.expected_mass.reset();
    JointDensityGrid c = recover_density_2d(G, cx, cy, coarse);
    std::size_t i0 = cx.n, i1 = 0, j0 = cy.n, j1 = 0;
    for (std::size_t i = 0; i < cx.n; ++i)
        for (std::size_t j = 0; j < cy.n; ++j)
            if (c.at(i, j) > threshold) {
                i0 = std::min(i0, i), i1 = std::max(i1, i);
                j0 = std::min(j0, j), j1 = std::max(j1, j);
            }
    double xlo = sx.lo, xhi = sx.hi, ylo = sy.lo, yhi = sy.hi;
    if (i0 <= i1) {
        xlo = cx[i0 ? i0 - 1 : 0], xhi = cx[std::min(i1 + 1, cx.n - 1)];
        ylo = cy[j0 ? j0 - 1 : 0], yhi = cy[std::min(j1 + 1, cy.n - 1)];
    }
    for (const auto& L : G.x_lines) xlo = std::min(xlo, L.at), xhi = std::max(xhi, L.at);
    for (const auto& L : G.y_lines) ylo = std::min(ylo, L.at), yhi = std::max(yhi, L.at);
    return recover_density_2d(G, UniformGrid(xlo, xhi, n), UniformGrid(ylo, yhi, n), opt);
}

// ============================================================================
// Transition kernels
// ============================================================================

struct KernelAtomRow {
    double source;
    double mass;
    std::vector<double> density;
    std::vector<std::pair<double, double>> atoms;  // (y, conditional mass)
};

struct TransitionKernel {
    UniformGrid source_grid;
    UniformGrid target_grid;
    std::vector<double> values;  // source-major
    std::vector<char> masked;
    // Rows were rescaled to unit mass; false on truncated windows.
    bool normalized = true;
    std::vector<KernelAtomRow> atom_rows;
    // Angles on the circle; rows are densities for normalized Haar measure.
    bool periodic = false;

    double at(std::size_t i, std::size_t j) const { return values[i * target_grid.n + j]; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * target_grid.n, target_grid.n}; }
    double row_mass(std::size_t i) const {
        if (!periodic) return trapezoid(row(i), target_grid.step());
        auto r = row(i);
        return std::accumulate(r.begin(), r.end(), 0.0) / double(r.size());
    }
};

// k(x, ·) = f(x, ·) / f_X(x), masked where f_X < threshold.
inline TransitionKernel transition_kernel(const JointDensityGrid& f, double threshold = 1e-8) {
    const std::size_t nx = f.x_grid.n, ny = f.y_grid.n;
    TransitionKernel k{f.x_grid, f.y_grid, std::vector<double>(nx * ny, 0.0), std::vector<char>(nx, 0), !f.truncated, {}};
    parallel_for(nx, [&](std::size_t i) {
        double m = f.marginal_x[i];
        if (!(m >= threshold)) {
            k.masked[i] = 1;
            return;
        }
        for (std::size_t j = 0; j < ny; ++j) k.values[i * ny + j] = f.at(i, j) / m;
        if (k.normalized) {
            double s = trapezoid(k.row(i), f.y_grid.step());
            if (s > 0)
                for (std::size_t j = 0; j < ny; ++j) k.values[i * ny + j] /= s;
            else
                k.masked[i] = 1;
        }
    });
    for (const auto& L : f.x_lines) {
        double total = L.mass;
        KernelAtomRow row{L.at, 0.0, L.values, {}};
        for (const auto& a : f.atoms)
            if (a.x == L.at) total += a.mass;
        if (total <= 0) continue;
        row.mass = total;
        double left = 1;
        for (const auto& a : f.atoms)
            if (a.x == L.at) {
                row.atoms.emplace_back(a.y, a.mass / total);
                left -= a.mass / total;
            }
        double s = trapezoid(row.density, f.y_grid.step());
        double scale = k.normalized && s > 0 ? left / s : 1 / total;
        for (double& v : row.density) v *= scale;
        k.atom_rows.push_back(std::move(row));
    }
    return k;
}

// ============================================================================
// Closed forms
// ============================================================================

namespace detail {

struct GaussianParams {
    double la, lb, lab;
};

inline GaussianParams gaussian_params(double a, double b, double c) {
    check_gaussian(a, b, c);
    double la = std::sqrt(a), lb = std::sqrt(b);
    return {la, lb, c / (la * lb)};
}

inline double gaussian_denominator(const GaussianParams& p, double x, double y) {
    double u = x / p.la, v = y / p.lb, l = p.lab;
    return (1 - l * l) * (1 - l * l) - l * (1 + l * l) * u * v + l * l * (u * u + v * v);
}

} // namespace detail

inline double gaussian_joint_density(double a, double b, double c, double x, double y) {
    auto p = detail::gaussian_params(a, b, c);
    double ex = 4 * a - x * x, ey = 4 * b - y * y;
    if (ex <= 0 || ey <= 0) return 0.0;
    double l = p.lab;
    return (1 - l * l) * std::sqrt(ex) * std::sqrt(ey) / (4 * pi * pi * a * b * detail::gaussian_denominator(p, x, y));
}

inline double gaussian_kernel(double a, double b, double c, double x, double y) {
    auto p = detail::gaussian_params(a, b, c);
    double ey = 4 * b - y * y;
    if (ey <= 0 || x * x >= 4 * a) return 0.0;
    double l = p.lab;
    return (1 - l * l) * std::sqrt(ey) / (2 * pi * b * detail::gaussian_denominator(p, x, y));
}

inline double cauchy_kernel(double l, double r, double x, double y) {
    if (!(l < r)) fail(ErrorKind::TimeOrderViolation, "need l < r");
    if (l < 0) fail(ErrorKind::InvalidInput, "times must be nonnegative");
    double t = r - l;
    return t / (pi * ((x - y) * (x - y) + t * t));
}

} // namespace bifree
