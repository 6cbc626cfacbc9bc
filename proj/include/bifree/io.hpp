#pragma once

#include "bifree/additive2d.hpp"
#include "bifree/multiplicative2d.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>

namespace bifree::io {

using json = nlohmann::ordered_json;

// 17 significant digits round-trip every double.
inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline json grid_json(const UniformGrid& g) { return {{"lo", g.lo}, {"hi", g.hi}, {"n", g.n}}; }

// ---------------------------------------------------------------------------
// CSV

inline void write_csv(std::ostream& os, const JointDensityGrid& f) {
    os << "x,y,f\n";
    for (std::size_t i = 0; i < f.x_grid.n; ++i)
        for (std::size_t j = 0; j < f.y_grid.n; ++j)
            os << num(f.x_grid[i]) << ',' << num(f.y_grid[j]) << ',' << num(f.at(i, j)) << '\n';
}

inline void write_csv(std::ostream& os, const TorusDensityGrid& f) {
    os << "angle_s,angle_t,f\n";
    for (std::size_t k = 0; k < f.N; ++k)
        for (std::size_t l = 0; l < f.N; ++l)
            os << num(f.angle(k)) << ',' << num(f.angle(l)) << ',' << num(f.at(k, l)) << '\n';
}

// Masked source rows are left out.
inline void write_csv(std::ostream& os, const TransitionKernel& k) {
    os << (k.periodic ? "angle_s,angle_t,k\n" : "x,y,k\n");
    for (std::size_t i = 0; i < k.source_grid.n; ++i) {
        if (k.masked[i]) continue;
        for (std::size_t j = 0; j < k.target_grid.n; ++j)
            os << num(k.source_grid[i]) << ',' << num(k.target_grid[j]) << ',' << num(k.at(i, j)) << '\n';
    }
}

inline void write_csv(std::ostream& os, const UniformGrid& g, const std::vector<double>& f, bool circle = false) {
    os << (circle ? "angle,f\n" : "x,f\n");
    for (std::size_t i = 0; i < g.n; ++i) os << num(g[i]) << ',' << num(f[i]) << '\n';
}

// ---------------------------------------------------------------------------
// JSON, same content plus metadata

inline json to_json(const JointDensityGrid& f) {
    json j;
    j["x_grid"] = grid_json(f.x_grid);
    j["y_grid"] = grid_json(f.y_grid);
    j["truncated"] = f.truncated;
    j["raw_mass"] = f.raw_mass;
    j["fallbacks"] = f.fallbacks;
    j["values"] = f.values;
    j["marginal_x"] = f.marginal_x;
    j["marginal_y"] = f.marginal_y;
    auto lines = [](const std::vector<LineDensity>& ls) {
        json a = json::array();
        for (const auto& L : ls)
            a.push_back({{"at", L.at}, {"mass", L.mass}, {"unresolved", L.unresolved}, {"values", L.values}});
        return a;
    };
    j["x_lines"] = lines(f.x_lines);
    j["y_lines"] = lines(f.y_lines);
    j["atoms"] = json::array();
    for (const auto& a : f.atoms) j["atoms"].push_back({{"x", a.x}, {"y", a.y}, {"mass", a.mass}});
    return j;
}

inline json to_json(const TorusDensityGrid& f) {
    json j;
    j["N"] = f.N;
    j["measure"] = "normalized Haar";
    j["raw_mass"] = f.raw_mass;
    j["fallbacks"] = f.fallbacks;
    j["values"] = f.values;
    j["marginal_s"] = f.marginal_s;
    j["marginal_t"] = f.marginal_t;
    return j;
}

inline json to_json(const TransitionKernel& k) {
    json j;
    j["source_grid"] = grid_json(k.source_grid);
    j["target_grid"] = grid_json(k.target_grid);
    j["periodic"] = k.periodic;
    j["normalized"] = k.normalized;
    std::vector<int> masked(k.masked.begin(), k.masked.end());
    j["masked"] = masked;
    j["values"] = k.values;
    j["atom_rows"] = json::array();
    for (const auto& r : k.atom_rows) {
        json a = json::array();
        for (auto [y, p] : r.atoms) a.push_back({{"y", y}, {"mass", p}});
        j["atom_rows"].push_back({{"source", r.source}, {"mass", r.mass}, {"density", r.density}, {"atoms", a}});
    }
    return j;
}

inline void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::InvalidInput, "cannot open " + path + " for writing");
    body(os);
    if (!os) fail(ErrorKind::InvalidInput, "write to " + path + " failed");
}

inline void write_json(const std::string& path, const json& j) {
    write_file(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

} // namespace bifree::io
