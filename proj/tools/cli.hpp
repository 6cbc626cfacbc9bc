#pragma once

#include "acceptance.hpp"
#include "bifree/io.hpp"

#include <CLI11.hpp>
#include <toml.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace bifree::cli {

using json = nlohmann::ordered_json;

enum ExitCode { Ok = 0, InputFailure = 1, NumericFailure = 2, VerifyFailure = 3 };

[[noreturn]] inline void bad_input(const std::string& what) { fail(ErrorKind::InvalidInput, what); }

// ---------------------------------------------------------------------------
// Spec files: TOML, or JSON by extension. Both become one json tree.

inline json from_toml(const toml::node& n) {
    if (auto t = n.as_table()) {
        json j = json::object();
        for (auto&& [k, v] : *t) j[std::string(k.str())] = from_toml(v);
        return j;
    }
    if (auto a = n.as_array()) {
        json j = json::array();
        for (auto&& v : *a) j.push_back(from_toml(v));
        return j;
    }
    if (auto v = n.as_floating_point()) return v->get();
    if (auto v = n.as_integer()) return v->get();
    if (auto v = n.as_boolean()) return v->get();
    if (auto v = n.as_string()) return v->get();
    bad_input("unsupported TOML value (dates are not accepted)");
}

inline json load_spec(const std::string& path) {
    if (!std::filesystem::exists(path)) bad_input("spec file not found: " + path);
    try {
        if (std::filesystem::path(path).extension() == ".json") {
            std::ifstream is(path);
            return json::parse(is);
        }
        return from_toml(toml::parse_file(path));
    } catch (const toml::parse_error& e) {
        bad_input(std::string("TOML parse error: ") + std::string(e.description()));
    } catch (const json::exception& e) {
        bad_input(std::string("JSON parse error: ") + e.what());
    }
}

inline const json* find(const json& j, const std::string& key) {
    if (!j.is_object()) return nullptr;
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

inline double number(const json& j, const std::string& key) {
    const json* v = find(j, key);
    if (!v) bad_input("missing key '" + key + "'");
    if (!v->is_number()) bad_input("key '" + key + "' must be a number");
    return v->get<double>();
}

inline double number_or(const json& j, const std::string& key, double dflt) { return find(j, key) ? number(j, key) : dflt; }

inline std::vector<double> numbers(const json& j, const std::string& key) {
    const json* v = find(j, key);
    if (!v || !v->is_array()) bad_input("key '" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
        if (!e.is_number()) bad_input("key '" + key + "' must be an array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

inline std::string text(const json& j, const std::string& key) {
    const json* v = find(j, key);
    if (!v || !v->is_string()) bad_input("missing string key '" + key + "'");
    return v->get<std::string>();
}

// ---------------------------------------------------------------------------
// Numerics: grid sizes count intervals, so a symmetric window has a node at 0.

struct Numerics {
    std::size_t n1d = 2048;
    std::size_t n2d = 256;
    double inversion = 1e-5;  // tolerated negativity before extrapolation
    double mass = 1e-2;
    std::optional<double> lo, hi;

    json to_json() const {
        json j{{"grid", {{"n1d", n1d}, {"n2d", n2d}}}, {"tol", {{"inversion", inversion}, {"mass", mass}}}};
        if (lo) j["grid"]["lo"] = *lo, j["grid"]["hi"] = *hi;
        return j;
    }
};

inline std::size_t grid_size(double v, const std::string& key) {
    if (v != std::floor(v) || v < 64 || v > 4096) bad_input(key + " must be a power of two in [64, 4096]");
    auto n = std::size_t(v);
    if (n & (n - 1)) bad_input(key + " must be a power of two in [64, 4096]");
    return n;
}

inline void set_key(Numerics& nu, const std::string& key, double v) {
    if (key == "grid.n1d") nu.n1d = grid_size(v, key);
    else if (key == "grid.n2d") nu.n2d = grid_size(v, key);
    else if (key == "grid.lo") nu.lo = v;
    else if (key == "grid.hi") nu.hi = v;
    else if (key == "tol.inversion") {
        if (!(v > 0)) bad_input("tol.inversion must be positive");
        nu.inversion = v;
    } else if (key == "tol.mass") {
        if (!(v > 0)) bad_input("tol.mass must be positive");
        nu.mass = v;
    } else
        bad_input("unknown config key '" + key + "'");
}

inline Numerics numerics(const json& spec, const std::vector<std::string>& overrides) {
    Numerics nu;
    for (const char* section : {"grid", "tol"})
        if (const json* s = find(spec, section)) {
            if (!s->is_object()) bad_input(std::string("[") + section + "] must be a table");
            for (auto it = s->begin(); it != s->end(); ++it) {
                if (!it->is_number()) bad_input(std::string(section) + "." + it.key() + " must be a number");
                set_key(nu, std::string(section) + "." + it.key(), it->get<double>());
            }
        }
    for (const auto& o : overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos) bad_input("--config expects key=value, got '" + o + "'");
        std::string key = o.substr(0, eq), val = o.substr(eq + 1);
        char* end = nullptr;
        double v = std::strtod(val.c_str(), &end);
        if (val.empty() || *end) bad_input("--config value for " + key + " is not a number");
        set_key(nu, key, v);
    }
    if (nu.lo.has_value() != nu.hi.has_value()) bad_input("grid.lo and grid.hi go together");
    if (nu.lo && !(*nu.lo < *nu.hi)) bad_input("grid.lo must be below grid.hi");
    return nu;
}

// ---------------------------------------------------------------------------
// Measures

inline RealMeasure real_measure(const json& j) {
    std::string t = text(j, "type");
    if (t == "semicircle") return RealMeasure::semicircle(number(j, "variance"));
    if (t == "free_poisson") return RealMeasure::free_poisson(number(j, "rate"));
    if (t == "cauchy") return RealMeasure::cauchy(number(j, "scale"), number_or(j, "location", 0));
    if (t == "atomic") return RealMeasure::atomic(numbers(j, "points"), numbers(j, "weights"));
    if (t == "point_mass") return RealMeasure::point_mass(number(j, "at"));
    bad_input("unknown measure type '" + t + "'");
}

inline CircleMeasure circle_measure(const json& j) {
    std::string t = text(j, "type");
    if (t == "levy") return CircleMeasure::levy(number(j, "time"));
    if (t == "point_mass") return CircleMeasure::point_mass(number(j, "angle"));
    if (t == "atomic") return CircleMeasure::atomic(numbers(j, "angles"), numbers(j, "weights"));
    if (t == "haar") {
        PsiEvaluator zero{[](cplx) { return cplx(0); }, [](cplx) { return cplx(0); }};
        return CircleMeasure::haar(64).with_transform(zero);
    }
    bad_input("unknown circle measure type '" + t + "'");
}

inline const json& section(const json& spec, const std::string& key) {
    const json* s = find(spec, key);
    if (!s || !s->is_object()) bad_input("missing table [" + key + "]");
    return *s;
}

// ---------------------------------------------------------------------------
// Processes

struct Times {
    std::optional<double> l, r;
};

struct Process {
    std::string kind;
    std::string route;
    std::optional<JointGreenEvaluator> G;  // self-adjoint kinds
    std::optional<JointPsiEvaluator> J;    // unitary kinds
    // Exact bi-free cumulants, when the kind has them.
    std::function<CumulantTable<Rational>(int)> exact;
    std::function<CumulantTable<double>(int)> approx;
    bool unitary() const { return J.has_value(); }
};

inline const std::vector<std::string>& kinds() {
    static const std::vector<std::string> k{"self_adjoint_free_increments", "unitary_free_increments", "bifree_sum",
                                            "gaussian_markov", "free_poisson", "cauchy", "levy"};
    return k;
}

inline std::pair<double, double> times(const json& spec, const Times& cli) {
    std::optional<double> l = cli.l, r = cli.r;
    if (!l && find(spec, "l")) l = number(spec, "l");
    if (!r && find(spec, "r")) r = number(spec, "r");
    if (!l || !r) bad_input("times l and r are required (spec keys or --l/--r)");
    if (!(*l < *r)) fail(ErrorKind::TimeOrderViolation, "need l < r");
    return {*l, *r};
}

inline void no_times(const std::string& kind, const Times& cli) {
    if (cli.l || cli.r) bad_input(kind + " takes no --l/--r");
}

inline Rational exact(double v) { return Rational(v); }

inline Process build(const json& spec, const Times& cli, const ConvolutionOptions& copt, int depth = 0);

inline Process gaussian_markov(const json& spec, const Times& cli) {
    double a, b, c;
    if (find(spec, "covariance")) {
        auto ts = numbers(spec, "times");
        const json& cov = *find(spec, "covariance");
        if (!cov.is_array() || cov.size() != ts.size()) bad_input("covariance must be a square matrix over times");
        std::vector<std::vector<double>> C;
        for (const auto& row : cov) {
            json wrap{{"row", row}};
            C.push_back(numbers(wrap, "row"));
            if (C.back().size() != ts.size()) bad_input("covariance must be a square matrix over times");
        }
        for (std::size_t i = 0; i < ts.size(); ++i)
            for (std::size_t j = 0; j < ts.size(); ++j)
                if (C[i][j] != C[j][i]) bad_input("covariance must be symmetric");
        auto [l, r] = times(spec, cli);
        auto index = [&](double t) {
            for (std::size_t i = 0; i < ts.size(); ++i)
                if (ts[i] == t) return i;
            bad_input("time " + io::num(t) + " is not among the covariance samples");
        };
        std::size_t i = index(l), k = index(r);
        a = C[i][i], b = C[k][k], c = C[i][k];
    } else {
        no_times("gaussian_markov with explicit a, b, c", cli);
        a = number(spec, "a"), b = number(spec, "b"), c = number(spec, "c");
    }
    Process p{"gaussian_markov", "closed-form", gaussian_green(a, b, c), {}, {}, {}};
    p.exact = [a, b, c](int order) { return gaussian_table<Rational>(exact(a), exact(b), exact(c), order); };
    return p;
}

inline Process build(const json& spec, const Times& cli, const ConvolutionOptions& copt, int depth) {
    if (!spec.is_object()) bad_input("spec must be a table");
    std::string kind = text(spec, "kind");
    if (kind == "cauchy") {
        auto [l, r] = times(spec, cli);
        return {kind, route_name(GreenRoute::IncrementFree), cauchy_process_green(l, r), {}, {}, {}};
    }
    if (kind == "gaussian_markov") return gaussian_markov(spec, cli);
    if (kind == "free_poisson") {
        auto [l, r] = times(spec, cli);
        double rate = number_or(spec, "rate", 1.0);
        if (!(rate > 0)) bad_input("free Poisson rate must be positive");
        if (!(l > 0)) bad_input("free Poisson times must be positive");
        Process p{kind, route_name(GreenRoute::IncrementFree),
                  green2_increment(RealMeasure::free_poisson(rate * l), RealMeasure::free_poisson(rate * r)), {}, {}, {}};
        p.exact = [a = rate * l, b = rate * r](int order) {
            return free_poisson_pair_table<Rational>(exact(a), exact(b), order);
        };
        return p;
    }
    if (kind == "self_adjoint_free_increments") {
        no_times(kind, cli);
        RealMeasure mX = real_measure(section(spec, "x")), mY = real_measure(section(spec, "increment"));
        RealMeasure mS = free_add_convolve(mX, mY, copt);
        Process p{kind, route_name(GreenRoute::IncrementFree), green2_increment(mX, mS), {}, {}, {}};
        if (support(mX).bounded() && support(mY).bounded())
            p.approx = [mX, mY](int order) {
                return increment_table<double>(r_coefficients(mX, order), r_coefficients(mY, order), order);
            };
        return p;
    }
    if (kind == "bifree_sum") {
        if (depth > 0) bad_input("bifree_sum components cannot nest");
        const json* cs = find(spec, "components");
        if (!cs || !cs->is_array() || cs->size() < 2) bad_input("bifree_sum needs at least two [[components]]");
        std::vector<Process> parts;
        for (const auto& c : *cs) {
            parts.push_back(build(c, cli, copt, depth + 1));
            if (parts.back().unitary()) bad_input("bifree_sum components must be self-adjoint kinds");
        }
        JointGreenEvaluator G = *parts[0].G;
        for (std::size_t i = 1; i < parts.size(); ++i) G = bifree_add_convolve(G, *parts[i].G, copt);
        Process p{kind, route_name(GreenRoute::BifreeSum), G, {}, {}, {}};
        bool all_exact = true, all_tables = true;
        for (const auto& q : parts) {
            all_exact &= bool(q.exact);
            all_tables &= q.exact || q.approx;
        }
        if (all_exact)
            p.exact = [parts](int order) {
                auto t = parts[0].exact(order);
                for (std::size_t i = 1; i < parts.size(); ++i) t = t + parts[i].exact(order);
                return t;
            };
        else if (all_tables)
            p.approx = [parts](int order) {
                CumulantTable<double> t(order);
                for (const auto& q : parts) {
                    auto add = [&](auto&& src) {
                        for (int n = 0; n <= order; ++n)
                            for (int m = 0; n + m <= order; ++m)
                                if (n + m) t.at(n, m) += to_double(src.at(n, m));
                    };
                    if (q.exact) add(q.exact(order));
                    else add(q.approx(order));
                }
                return t;
            };
        return p;
    }
    if (kind == "levy") {
        auto [l, r] = times(spec, cli);
        if (!(l >= 0)) bad_input("Levy times must be nonnegative");
        Process p{kind, "levy closed form", {}, levy_pair(l, r), {}, {}};
        return p;
    }
    if (kind == "unitary_free_increments") {
        no_times(kind, cli);
        CircleMeasure mU = circle_measure(section(spec, "u")), mV = circle_measure(section(spec, "increment"));
        return {kind, "H increment", {}, psi2_free_increments(mU, mV, copt), {}, {}};
    }
    bad_input("unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Pipelines

inline JointDensityGrid real_density(const Process& p, const Numerics& nu) {
    Inversion2dOptions o;
    o.mass_tolerance = nu.mass;
    o.negativity_threshold = nu.inversion;
    const auto& G = *p.G;
    bool bounded = support(G.marginal_x).bounded() && support(G.marginal_y).bounded();
    if (!nu.lo && bounded) return recover_density_2d(G, nu.n2d + 1, o);
    UniformGrid g(nu.lo.value_or(-5), nu.hi.value_or(5), nu.n2d + 1);
    return recover_density_2d(G, g, g, o);
}

inline TorusDensityGrid torus_density(const Process& p, const Numerics& nu) {
    TorusInversionOptions o;
    o.mass_tolerance = nu.mass;
    o.negativity_threshold = nu.inversion;
    return recover_density_torus(*p.J, nu.n2d, o);
}

inline ConvolutionOptions convolution_options(const Numerics& nu) {
    ConvolutionOptions c;
    c.n1d = nu.n1d + 1;
    c.n_circle = nu.n1d;
    c.inversion.mass_tolerance = c.circle.mass_tolerance = nu.mass;
    c.inversion.negativity_threshold = c.circle.negativity_threshold = nu.inversion;
    return c;
}

inline MomentTable<double> to_double_table(const MomentTable<Rational>& t) {
    MomentTable<double> out(t.order());
    for (int n = 0; n <= t.order(); ++n)
        for (int m = 0; n + m <= t.order(); ++m) out.at(n, m) = to_double(t.at(n, m));
    return out;
}

inline MomentTable<double> real_moments(const Process& p, int order) {
    if (p.exact) return to_double_table(joint_moments_from_table(p.exact(order), order));
    if (p.approx) return joint_moments_from_table(p.approx(order), order);
    MomentTable<double> t(order);
    for (int n = 0; n <= order; ++n)
        for (int m = 0; n + m <= order; ++m) t.at(n, m) = n + m ? joint_moment(*p.G, n, m) : 1.0;
    return t;
}

// Taylor coefficients of ψ2 by a DFT on |z| = |w| = 1/2.
inline cplx unitary_moment(const JointPsiEvaluator& J, int n, int m) {
    if (n == 0 && m == 0) return 1.0;
    if (m == 0) return circle_moment(J.marginal_u, n);
    if (n == 0) return circle_moment(J.marginal_v, m);
    const int K = 64;
    const double rho = 0.5;
    cplx s = 0;
    for (int b = 0; b < K; ++b) {
        cplx w = std::polar(rho, 2 * pi * (b + 0.5) / K);
        auto f = J.at_w(w);
        for (int a = 0; a < K; ++a) {
            cplx z = std::polar(rho, 2 * pi * (a + 0.25) / K);
            s += f(z) * std::pow(z, -n) * std::pow(w, -m);
        }
    }
    return s / double(K * K);
}

// ---------------------------------------------------------------------------
// Subcommands

struct Args {
    std::string spec, out, json_out;
    std::vector<std::string> config;
    Times t;
    std::string z, w;
    int max = 4;
    bool all = false;
    std::vector<int> criteria;
};

inline json metadata(const Process& p, const Numerics& nu, const std::string& what) {
    json j{{"output", what}, {"kind", p.kind}, {"route", p.route}};
    j["numerics"] = nu.to_json();
    j["numerics"]["eps"] = Inversion2dOptions{}.eps;
    j["numerics"]["radii"] = TorusInversionOptions{}.radii;
    return j;
}

inline void emit(const Args& a, std::ostream& out, const std::function<void(std::ostream&)>& body) {
    if (a.out.empty() || a.out == "-") body(out);
    else io::write_file(a.out, body);
}

inline cplx parse_point(const std::string& s, const char* flag) {
    auto comma = s.find(',');
    std::string re = s.substr(0, comma), im = comma == std::string::npos ? "0" : s.substr(comma + 1);
    char *e1 = nullptr, *e2 = nullptr;
    double x = std::strtod(re.c_str(), &e1), y = std::strtod(im.c_str(), &e2);
    if (re.empty() || *e1 || im.empty() || *e2) bad_input(std::string(flag) + " expects re,im");
    return {x, y};
}

inline json cjson(cplx v) { return json::array({v.real(), v.imag()}); }

inline int cmd_transform(const Args& a, std::ostream& out) {
    json spec = load_spec(a.spec);
    Numerics nu = numerics(spec, a.config);
    Process p = build(spec, a.t, convolution_options(nu));
    cplx z = parse_point(a.z, "--z");
    json j = metadata(p, nu, "transform");
    j["z"] = cjson(z);
    if (!p.unitary()) {
        HalfPlanePoint hz(z);
        j["G_x"] = cjson(cauchy_G(p.G->marginal_x, hz));
        if (!a.w.empty()) {
            HalfPlanePoint hw(parse_point(a.w, "--w"));
            j["w"] = cjson(hw.value());
            j["G_y"] = cjson(cauchy_G(p.G->marginal_y, hw));
            j["G"] = cjson(p.G->eval(hz, hw));
        }
    } else {
        DiscPoint dz(z);
        j["psi_u"] = cjson(psi(p.J->marginal_u, dz));
        if (!a.w.empty()) {
            DiscPoint dw(parse_point(a.w, "--w"));
            j["w"] = cjson(dw.value());
            j["psi_v"] = cjson(psi(p.J->marginal_v, dw));
            j["psi2"] = cjson(p.J->eval_psi2(dz, dw));
            j["H"] = cjson(H_from_psi2(*p.J, dz, dw));
            j["g"] = cjson(g_from_psi2(*p.J, dz, dw));
        }
    }
    emit(a, out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    return Ok;
}

inline std::vector<json> measure_list(const json& spec) {
    const json* ms = find(spec, "measures");
    if (!ms || !ms->is_array() || ms->size() < 2) bad_input("need at least two [[measures]]");
    return std::vector<json>(ms->begin(), ms->end());
}

inline int cmd_convolve_add(const Args& a, std::ostream& out) {
    json spec = load_spec(a.spec);
    Numerics nu = numerics(spec, a.config);
    auto copt = convolution_options(nu);
    auto ms = measure_list(spec);
    RealMeasure m = real_measure(ms[0]);
    for (std::size_t i = 1; i < ms.size(); ++i) m = free_add_convolve(m, real_measure(ms[i]), copt);
    UniformGrid g = m.is<GridDensity>() ? m.as<GridDensity>().grid : default_grid(m, nu.n1d + 1);
    std::vector<double> f(g.n);
    Atomic at = atoms(m);
    if (m.is<GridDensity>()) f = m.as<GridDensity>().values;
    else
        for (std::size_t i = 0; i < g.n; ++i) f[i] = density_at(m, g[i]);
    emit(a, out, [&](std::ostream& os) { io::write_csv(os, g, f); });
    if (!a.json_out.empty()) {
        json j{{"output", "free additive convolution"}, {"numerics", nu.to_json()}, {"grid", io::grid_json(g)}};
        j["values"] = f;
        j["atoms"] = {{"points", at.points}, {"weights", at.weights}};
        io::write_json(a.json_out, j);
    }
    return Ok;
}

inline int cmd_convolve_mult(const Args& a, std::ostream& out) {
    json spec = load_spec(a.spec);
    Numerics nu = numerics(spec, a.config);
    auto copt = convolution_options(nu);
    auto ms = measure_list(spec);
    CircleMeasure m = circle_measure(ms[0]);
    for (std::size_t i = 1; i < ms.size(); ++i) m = free_mult_convolve(m, circle_measure(ms[i]), copt);
    const std::size_t N = nu.n1d;
    UniformGrid g(0.0, circle_angle(N - 1, N), N);
    std::vector<double> f(N);
    AtomicOnCircle at = detail::circle_atoms(m);
    bool has_density = !(m.is<PointMass>() || m.is<AtomicOnCircle>());
    for (std::size_t k = 0; k < N; ++k) f[k] = has_density ? density_at(m, g[k]) : 0.0;
    emit(a, out, [&](std::ostream& os) { io::write_csv(os, g, f, true); });
    if (!a.json_out.empty()) {
        json j{{"output", "free multiplicative convolution"},
               {"measure", "normalized Haar"},
               {"numerics", nu.to_json()},
               {"N", N}};
        j["values"] = f;
        j["atoms"] = {{"angles", at.angles}, {"weights", at.weights}};
        io::write_json(a.json_out, j);
    }
    return Ok;
}

inline int cmd_joint_density(const Args& a, std::ostream& out) {
    json spec = load_spec(a.spec);
    Numerics nu = numerics(spec, a.config);
    Process p = build(spec, a.t, convolution_options(nu));
    json j = metadata(p, nu, "joint density");
    if (p.unitary()) {
        auto f = torus_density(p, nu);
        emit(a, out, [&](std::ostream& os) { io::write_csv(os, f); });
        j["density"] = io::to_json(f);
    } else {
        auto f = real_density(p, nu);
        emit(a, out, [&](std::ostream& os) { io::write_csv(os, f); });
        j["density"] = io::to_json(f);
    }
    if (!a.json_out.empty()) io::write_json(a.json_out, j);
    return Ok;
}

inline int cmd_kernel(const Args& a, std::ostream& out) {
    json spec = load_spec(a.spec);
    Numerics nu = numerics(spec, a.config);
    Process p = build(spec, a.t, convolution_options(nu));
    TransitionKernel k = p.unitary() ? circle_transition_kernel(torus_density(p, nu)) : transition_kernel(real_density(p, nu));
    emit(a, out, [&](std::ostream& os) { io::write_csv(os, k); });
    if (!a.json_out.empty()) {
        json j = metadata(p, nu, "transition kernel");
        j["kernel"] = io::to_json(k);
        io::write_json(a.json_out, j);
    }
    return Ok;
}

inline void check_max(int max) {
    if (max < 1 || max > nc_default_order) bad_input("--max must be in [1, " + std::to_string(nc_default_order) + "]");
}

inline int cmd_moments(const Args& a, std::ostream& out) {
    check_max(a.max);
    json spec = load_spec(a.spec);
    Numerics nu = numerics(spec, a.config);
    Process p = build(spec, a.t, convolution_options(nu));
    json j = metadata(p, nu, "joint moments");
    j["source"] = p.unitary() ? "psi2 Taylor coefficients" : p.exact ? "exact cumulant table" : p.approx ? "cumulant table" : "contour quadrature";
    json rows = json::array();
    std::ostringstream csv;
    if (p.unitary()) {
        csv << "n,m,re,im\n";
        for (int n = 0; n <= a.max; ++n)
            for (int m = 0; n + m <= a.max; ++m) {
                cplx v = unitary_moment(*p.J, n, m);
                csv << n << ',' << m << ',' << io::num(v.real()) << ',' << io::num(v.imag()) << '\n';
                rows.push_back({{"n", n}, {"m", m}, {"value", cjson(v)}});
            }
    } else {
        auto t = real_moments(p, a.max);
        csv << "n,m,moment\n";
        for (int n = 0; n <= a.max; ++n)
            for (int m = 0; n + m <= a.max; ++m) {
                csv << n << ',' << m << ',' << io::num(t.at(n, m)) << '\n';
                rows.push_back({{"n", n}, {"m", m}, {"value", t.at(n, m)}});
            }
    }
    emit(a, out, [&](std::ostream& os) { os << csv.str(); });
    j["moments"] = rows;
    if (!a.json_out.empty()) io::write_json(a.json_out, j);
    return Ok;
}

inline int cmd_cumulants(const Args& a, std::ostream& out) {
    check_max(a.max);
    json spec = load_spec(a.spec);
    Numerics nu = numerics(spec, a.config);
    Process p = build(spec, a.t, convolution_options(nu));
    if (p.unitary()) bad_input("bi-free cumulant tables are for self-adjoint kinds");
    CumulantTable<double> t(a.max);
    if (p.exact) {
        auto e = p.exact(a.max);
        for (int n = 0; n <= a.max; ++n)
            for (int m = 0; n + m <= a.max; ++m) t.at(n, m) = to_double(e.at(n, m));
    } else if (p.approx) {
        t = p.approx(a.max);
    } else {
        t = table_from_joint_moments(real_moments(p, a.max), a.max);
    }
    json j = metadata(p, nu, "bi-free cumulants");
    json rows = json::array();
    std::ostringstream csv;
    csv << "n,m,cumulant\n";
    for (int n = 0; n <= a.max; ++n)
        for (int m = 0; n + m <= a.max; ++m) {
            if (!(n + m)) continue;
            csv << n << ',' << m << ',' << io::num(t.at(n, m)) << '\n';
            rows.push_back({{"n", n}, {"m", m}, {"value", t.at(n, m)}});
        }
    emit(a, out, [&](std::ostream& os) { os << csv.str(); });
    j["cumulants"] = rows;
    if (!a.json_out.empty()) io::write_json(a.json_out, j);
    return Ok;
}

inline int cmd_verify(const Args& a, std::ostream& out) {
    std::vector<int> ids = a.criteria;
    if (a.all)
        for (int i = 1; i <= acceptance::criterion_count; ++i) ids.push_back(i);
    if (ids.empty()) bad_input("verify needs --all or --criterion");
    int failed = 0;
    json report = json::array();
    for (int id : ids) {
        auto r = acceptance::run(id);
        out << r.line() << std::endl;
        failed += !r.pass();
        json parts = json::array();
        for (const auto& q : r.parts) parts.push_back({{"label", q.label}, {"residual", q.residual}, {"tolerance", q.tolerance}});
        report.push_back({{"criterion", id}, {"name", r.name}, {"pass", r.pass()}, {"parts", parts}, {"error", r.error}});
    }
    out << ids.size() - failed << " of " << ids.size() << " criteria passed" << std::endl;
    if (!a.json_out.empty()) io::write_json(a.json_out, {{"output", "verification"}, {"criteria", report}});
    return failed ? VerifyFailure : Ok;
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Free and bi-free transforms, joint densities and transition kernels"};
    app.require_subcommand(1);
    Args a;
    auto add_common = [&](CLI::App* s, bool times, bool out_required) {
        s->add_option("--spec", a.spec, "process spec (TOML, or JSON by extension)")->required();
        auto* o = s->add_option("--out", a.out, "output file (stdout if omitted)");
        if (out_required) o->required();
        s->add_option("--json", a.json_out, "also write JSON with metadata");
        s->add_option("--config", a.config, "override: grid.n1d, grid.n2d, grid.lo, grid.hi, tol.inversion, tol.mass")
            ->take_all();
        if (times) {
            s->add_option("--l", a.t.l, "earlier time");
            s->add_option("--r", a.t.r, "later time");
        }
    };
    auto* transform = app.add_subcommand("transform", "evaluate one- and two-variable transforms at a point");
    add_common(transform, true, false);
    transform->add_option("--z", a.z, "first variable as re,im")->required();
    transform->add_option("--w", a.w, "second variable as re,im");
    auto* cadd = app.add_subcommand("convolve-add", "free additive convolution of [[measures]]");
    add_common(cadd, false, true);
    auto* cmul = app.add_subcommand("convolve-mult", "free multiplicative convolution of [[measures]] on the circle");
    add_common(cmul, false, true);
    auto* joint = app.add_subcommand("joint-density", "recover the two-time joint density");
    add_common(joint, true, true);
    auto* kern = app.add_subcommand("kernel", "transition kernel from the joint density");
    add_common(kern, true, true);
    auto* mom = app.add_subcommand("moments", "mixed moments for n + m <= max");
    add_common(mom, true, false);
    mom->add_option("--max", a.max, "total order");
    auto* cum = app.add_subcommand("cumulants", "bi-free cumulants for n + m <= max");
    add_common(cum, true, false);
    cum->add_option("--max", a.max, "total order");
    auto* verify = app.add_subcommand("verify", "run the acceptance criteria");
    verify->add_flag("--all", a.all, "every criterion");
    verify->add_option("--criterion", a.criteria, "criterion number (repeatable)");
    verify->add_option("--json", a.json_out, "write the report as JSON");

    std::reverse(argv.begin(), argv.end());
    try {
        argv.pop_back();  // program name
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e, out, err);
        return rc == 0 ? Ok : InputFailure;
    }

    if (const char* s = std::getenv("NUM_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(s, &end, 10);
        if (!*s || *end || v < 1) {
            err << "error: invalid input: NUM_THREADS must be a positive integer\n";
            return InputFailure;
        }
    }

    try {
        if (*transform) return cmd_transform(a, out);
        if (*cadd) return cmd_convolve_add(a, out);
        if (*cmul) return cmd_convolve_mult(a, out);
        if (*joint) return cmd_joint_density(a, out);
        if (*kern) return cmd_kernel(a, out);
        if (*mom) return cmd_moments(a, out);
        if (*cum) return cmd_cumulants(a, out);
        if (*verify) return cmd_verify(a, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return is_input_error(e.kind()) ? InputFailure : NumericFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return NumericFailure;
    }
    return InputFailure;
}

} // namespace bifree::cli
