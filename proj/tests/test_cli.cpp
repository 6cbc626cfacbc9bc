#include "cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>

using namespace bifree;

namespace {

const std::string specs = BIFREE_SPEC_DIR;

struct Run {
    int code;
    std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "bifree_cli");
    std::ostringstream out, err;
    int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / ("bifree_" + name)).string(); }

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

std::string write_spec(const std::string& name, const std::string& body) {
    std::string p = tmp(name);
    std::ofstream(p) << body;
    return p;
}

// (n,m) -> value from a moments/cumulants CSV.
std::map<std::pair<int, int>, double> table(const std::string& csv) {
    std::map<std::pair<int, int>, double> t;
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        int n, m;
        double v;
        char c1, c2;
        std::istringstream ls(line);
        ls >> n >> c1 >> m >> c2 >> v;
        t[{n, m}] = v;
    }
    return t;
}

int shell(const std::string& cmd) {
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST(Cli, CauchyKernelAtOrigin) {
    std::string out = tmp("k.csv");
    auto r = run_cli({"kernel", "--spec", specs + "/cauchy.toml", "--l", "1", "--r", "2", "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream is(slurp(out));
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "x,y,k");
    bool found = false;
    while (std::getline(is, line))
        if (line.rfind("0,0,", 0) == 0) {
            EXPECT_NEAR(std::stod(line.substr(4)), 1 / pi, 1e-3);
            found = true;
        }
    EXPECT_TRUE(found);
}

TEST(Cli, GaussianMomentsGiveCovariance) {
    auto r = run_cli({"moments", "--spec", specs + "/gaussian.toml", "--max", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto t = table(r.out);
    EXPECT_EQ(t.at({1, 1}), 0.5);
    EXPECT_EQ(t.at({2, 0}), 1.0);
    EXPECT_EQ(t.at({0, 1}), 0.0);
    // Free Brownian samples: c = min(l, r).
    auto b = table(run_cli({"moments", "--spec", specs + "/gaussian_cov.toml", "--max", "2"}).out);
    EXPECT_EQ(b.at({1, 1}), 1.0);
    EXPECT_EQ(b.at({0, 2}), 2.0);
}

TEST(Cli, JsonSpecMatchesToml) {
    auto a = run_cli({"cumulants", "--spec", specs + "/gaussian.json", "--max", "3"});
    ASSERT_EQ(a.code, 0) << a.err;
    auto t = table(a.out);
    EXPECT_EQ(t.at({2, 0}), 2.0);
    EXPECT_EQ(t.at({1, 1}), 0.25);
    EXPECT_EQ(t.at({2, 1}), 0.0);
    std::string toml = write_spec("g.toml", "kind = \"gaussian_markov\"\na = 2.0\nb = 1.0\nc = 0.25\n");
    EXPECT_EQ(run_cli({"cumulants", "--spec", toml, "--max", "3"}).out, a.out);
}

TEST(Cli, MomentsAgreeAcrossRoutes) {
    // τ(X_l X_r) = τ(X_l²) + τ(X_l)τ(X_r − X_l) for the free Poisson pair.
    auto exact = table(run_cli({"moments", "--spec", specs + "/free_poisson.toml", "--max", "4"}).out);
    EXPECT_NEAR(exact.at({1, 1}), 0.4 + 0.16 + 0.4 * 0.5, 1e-15);
    std::string inc = write_spec("inc.toml", "kind = \"self_adjoint_free_increments\"\n"
                                             "[x]\ntype = \"free_poisson\"\nrate = 0.4\n"
                                             "[increment]\ntype = \"free_poisson\"\nrate = 0.5\n");
    auto r = run_cli({"moments", "--spec", inc, "--max", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto viaTable = table(r.out);
    auto G = green2_increment(RealMeasure::free_poisson(0.4), RealMeasure::free_poisson(0.9));
    for (auto [nm, v] : exact) {
        EXPECT_NEAR(viaTable.at(nm), v, 1e-12 * std::max(1.0, v));
        if (nm.first + nm.second) {
            EXPECT_NEAR(joint_moment(G, nm.first, nm.second), v, 1e-9 * std::max(1.0, v));
        }
    }
    auto levy = run_cli({"moments", "--spec", specs + "/levy.toml", "--max", "3"});
    ASSERT_EQ(levy.code, 0) << levy.err;
    auto lt = table(levy.out);
    for (auto [nm, v] : lt) EXPECT_NEAR(v, std::exp(-0.5 * nm.first - 1.0 * nm.second), 1e-10);
}

TEST(Cli, CsvRoundTripsDoubles) {
    std::string out = tmp("jd.csv"), js = tmp("jd.json");
    auto r = run_cli({"joint-density", "--spec", specs + "/gaussian.toml", "--config", "grid.n2d=64", "--out", out, "--json", js});
    ASSERT_EQ(r.code, 0) << r.err;
    auto f = recover_density_2d(gaussian_green(1, 1, 0.5), 65);
    std::istringstream is(slurp(out));
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "x,y,f");
    std::size_t k = 0;
    while (std::getline(is, line)) {
        double x, y, v;
        char c;
        std::istringstream(line) >> x >> c >> y >> c >> v;
        std::size_t i = k / 65, j = k % 65;
        ASSERT_EQ(x, f.x_grid[i]);
        ASSERT_EQ(y, f.y_grid[j]);
        ASSERT_EQ(v, f.at(i, j));
        ++k;
    }
    EXPECT_EQ(k, 65u * 65u);
    auto j = nlohmann::json::parse(slurp(js));
    EXPECT_EQ(j["kind"], "gaussian_markov");
    EXPECT_EQ(j["route"], "closed-form");
    EXPECT_EQ(j["numerics"]["grid"]["n2d"], 64);
    EXPECT_EQ(j["density"]["values"].size(), 65u * 65u);
    EXPECT_EQ(j["density"]["values"][100].get<double>(), f.values[100]);
}

TEST(Cli, UnitaryKernelRows) {
    std::string out = tmp("lk.csv");
    auto r = run_cli({"kernel", "--spec", specs + "/levy.toml", "--config", "grid.n2d=128", "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream is(slurp(out));
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "angle_s,angle_t,k");
    double worst = 0;
    while (std::getline(is, line)) {
        double s, t, v;
        char c;
        std::istringstream(line) >> s >> c >> t >> c >> v;
        worst = std::max(worst, std::abs(v - levy_kernel(0.5, 1, s, t)));
    }
    EXPECT_LE(worst, 5e-3);
}

TEST(Cli, ConvolutionsWriteDensities) {
    std::string a = tmp("ca.csv"), m = tmp("cm.csv");
    ASSERT_EQ(run_cli({"convolve-add", "--spec", specs + "/semicircle_sum.toml", "--out", a}).code, 0);
    std::istringstream is(slurp(a));
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "x,f");
    auto ref = RealMeasure::semicircle(2);
    while (std::getline(is, line)) {
        double x, v;
        char c;
        std::istringstream(line) >> x >> c >> v;
        EXPECT_NEAR(v, density_at(ref, x), 2e-3) << x;
    }
    ASSERT_EQ(run_cli({"convolve-mult", "--spec", specs + "/levy_product.toml", "--out", m}).code, 0);
    std::istringstream ms(slurp(m));
    std::getline(ms, line);
    EXPECT_EQ(line, "angle,f");
    while (std::getline(ms, line)) {
        double t, v;
        char c;
        std::istringstream(line) >> t >> c >> v;
        EXPECT_NEAR(v, density_at(CircleMeasure::levy(0.8), t), 1e-3) << t;
    }
}

TEST(Cli, TransformPrintsJson) {
    auto r = run_cli({"transform", "--spec", specs + "/gaussian.toml", "--z", "0.3,1", "--w", "-0.2,-0.5"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = nlohmann::json::parse(r.out);
    cplx G(j["G"][0].get<double>(), j["G"][1].get<double>());
    EXPECT_EQ(G, gaussian_green(1, 1, 0.5)(cplx(0.3, 1), cplx(-0.2, -0.5)));
}

TEST(Cli, InputErrorsExitOne) {
    auto bad = [](std::vector<std::string> args) { return run_cli(std::move(args)).code; };
    EXPECT_EQ(bad({}), 1);
    EXPECT_EQ(bad({"frobnicate"}), 1);
    EXPECT_EQ(bad({"moments", "--spec", specs + "/gaussian.toml", "--bogus"}), 1);
    EXPECT_EQ(bad({"moments", "--spec", tmp("missing.toml")}), 1);
    EXPECT_EQ(bad({"moments", "--spec", write_spec("k.toml", "kind = \"brownian\"\n")}), 1);
    EXPECT_EQ(bad({"moments", "--spec", write_spec("p.toml", "kind = [\n")}), 1);
    EXPECT_EQ(bad({"kernel", "--spec", specs + "/cauchy.toml", "--l", "2", "--r", "1", "--out", tmp("x.csv")}), 1);
    EXPECT_EQ(bad({"moments", "--spec", specs + "/gaussian.toml", "--config", "grid.n2d=100"}), 1);
    EXPECT_EQ(bad({"moments", "--spec", specs + "/gaussian.toml", "--config", "grid.n2d=8192"}), 1);
    EXPECT_EQ(bad({"moments", "--spec", specs + "/gaussian.toml", "--config", "tol.speed=1"}), 1);
    EXPECT_EQ(bad({"moments", "--spec", write_spec("n.toml", "kind = \"free_poisson\"\nl = 0.2\nr = 0.5\nrate = -1.0\n")}), 1);
    EXPECT_EQ(bad({"moments", "--spec", write_spec("d.toml", "kind = \"gaussian_markov\"\na = 1.0\nb = 1.0\nc = 1.0\n")}), 1);
    EXPECT_EQ(bad({"moments", "--spec", specs + "/cauchy.toml"}), 1);  // moments undefined
    EXPECT_EQ(bad({"verify"}), 1);
    auto r = run_cli({"moments", "--spec", specs + "/cauchy.toml"});
    EXPECT_NE(r.err.find("moment undefined"), std::string::npos) << r.err;
}

TEST(Cli, NumericFailureExitsTwo) {
    auto r = run_cli({"joint-density", "--spec", specs + "/free_poisson.toml", "--config", "grid.n2d=64", "tol.mass=1e-9", "--out",
                  tmp("fp.csv")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("inversion mass error"), std::string::npos) << r.err;
}

TEST(Cli, VerifySingleCriterion) {
    auto r = run_cli({"verify", "--criterion", "6", "--criterion", "8"});
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("criterion 6 PASS"), std::string::npos);
    EXPECT_NE(r.out.find("2 of 2 criteria passed"), std::string::npos);
}

TEST(CliBinary, DeterministicAcrossRunsAndThreads) {
    const std::string bin = BIFREE_CLI_PATH;
    std::string a = tmp("d1.csv"), b = tmp("d2.csv"), c = tmp("d3.csv");
    std::string args = " kernel --spec " + specs + "/free_poisson.toml --out ";
    ASSERT_EQ(shell(bin + args + a), 0);
    ASSERT_EQ(shell(bin + args + b), 0);
    ASSERT_EQ(shell("NUM_THREADS=3 " + bin + args + c), 0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_EQ(slurp(a), slurp(c));
    EXPECT_EQ(shell("NUM_THREADS=zero " + bin + args + c + " 2>/dev/null"), 1);
}

TEST(CliBinary, VerifyAll) {
    const std::string bin = BIFREE_CLI_PATH;
    std::string report = tmp("verify.txt"), js = tmp("verify.json");
    EXPECT_EQ(shell(bin + " verify --all --json " + js + " > " + report), 0);
    std::string text = slurp(report);
    for (int i = 1; i <= 9; ++i) EXPECT_NE(text.find("criterion " + std::to_string(i) + " PASS"), std::string::npos) << text;
    auto j = nlohmann::json::parse(slurp(js));
    EXPECT_EQ(j["criteria"].size(), 9u);
}
