#include "bifree/multiplicative2d.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace bifree;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::InvalidInput;
}

std::vector<cplx> disc_points(int n, double radius, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> rad(0.05, radius), ang(0, 2 * pi);
    std::vector<cplx> z;
    for (int i = 0; i < n; ++i) z.push_back(std::polar(rad(rng), ang(rng)));
    return z;
}

cplx levy_psi(double t, cplx z) {
    if (std::abs(z) < 1) return z / (std::exp(t) - z);
    cplx u = 1.0 / std::conj(z);
    return -1.0 - std::conj(u / (std::exp(t) - u));
}

// ∫ zs/(1−zs) dμ for atoms, valid on both sides of the circle.
cplx atomic_psi(const std::vector<double>& ang, const std::vector<double>& wt, cplx z) {
    cplx s = 0;
    for (std::size_t i = 0; i < ang.size(); ++i) {
        cplx p = std::polar(1.0, ang[i]);
        s += wt[i] * z * p / (1.0 - z * p);
    }
    return s;
}

std::vector<double> levy_moments(double t, int n) {
    std::vector<double> m;
    for (int k = 1; k <= n; ++k) m.push_back(std::exp(-k * t));
    return m;
}

// Word for τ(Uⁿ (VU)ᵐ) with U ↦ 1, V ↦ 2.
std::string increment_word(int n, int m) {
    std::string w(n, '1');
    for (int k = 0; k < m; ++k) w += "21";
    return w;
}

// Taylor coefficient of a function analytic on the bidisc, by DFT at radius ρ.
cplx taylor(const std::function<cplx(cplx, cplx)>& f, int n, int m, double rho = 0.5, int K = 32) {
    cplx s = 0;
    for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) {
            cplx z = std::polar(rho, 2 * pi * (a + 0.25) / K), w = std::polar(rho, 2 * pi * (b + 0.5) / K);
            s += f(z, w) * std::pow(z, -n) * std::pow(w, -m);
        }
    return s / double(K * K);
}

MomentTable<double> levy_moment_table(double l, double r, int order) {
    MomentTable<double> t(order);
    for (int n = 0; n <= order; ++n)
        for (int m = 0; n + m <= order; ++m) t.at(n, m) = std::exp(-l * n - r * m);
    return t;
}

const std::vector<double> atom_angles{0.3, 1.1, -0.7}, atom_weights{0.5, 0.3, 0.2};

} // namespace

TEST(HAndG, SpecExamples) {
    auto J = levy_pair(0.5, 1);
    EXPECT_EQ(H_from_psi2(J, DiscPoint(0.0), DiscPoint(0.0)), cplx(1.0));
    EXPECT_EQ(g_from_psi2(J, DiscPoint(0.0), DiscPoint(0.0)), cplx(1.0));

    auto A = CircleMeasure::atomic(atom_angles, atom_weights);
    auto D = psi2_diagonal(A);
    for (cplx z : disc_points(20, 0.9, 1))
        for (cplx w : disc_points(3, 0.9, 2)) {
            cplx pz = atomic_psi(atom_angles, atom_weights, z), pw = atomic_psi(atom_angles, atom_weights, w);
            EXPECT_NEAR(std::abs(H_from_psi2(D, DiscPoint(z), DiscPoint(w)) - (1.0 + (z * pz - w * pw) / (z - w))), 0,
                        1e-12);
        }

    auto P = psi2_product(A, CircleMeasure::levy(0.4));
    for (cplx z : disc_points(10, 0.9, 3)) {
        cplx w = 0.7 * std::conj(z) + 0.05;
        cplx pu = atomic_psi(atom_angles, atom_weights, z), pv = levy_psi(0.4, w);
        EXPECT_NEAR(std::abs(H_from_psi2(P, DiscPoint(z), DiscPoint(w)) - (1.0 + pu) * (1.0 + pv)), 0, 1e-13);
        EXPECT_NEAR(std::abs(g_from_psi2(P, DiscPoint(z), DiscPoint(w)) - (2.0 * pu + 1.0) * (2.0 * pv + 1.0)), 0, 1e-13);
    }
}

TEST(HAndG, Interconvert) {
    auto J = levy_pair(0.5, 1);
    cplx z = 0.3, w = 0.2 * I;
    auto conv = [&](cplx a, cplx b) {
        return 4.0 * H_from_psi2(J, DiscPoint(a), DiscPoint(b)) - 2.0 * J.psi_u(a) - 2.0 * J.psi_v(b) - 3.0;
    };
    EXPECT_NEAR(std::abs(g_from_psi2(J, DiscPoint(z), DiscPoint(w)) - conv(z, w)), 0, 1e-12);
    for (cplx a : disc_points(30, 0.99, 4))
        for (cplx b : disc_points(3, 0.99, 5)) {
            EXPECT_NEAR(std::abs(g_from_psi2(J, DiscPoint(a), DiscPoint(b)) - conv(a, b)), 0, 1e-12);
            cplx ra = 1.0 / std::conj(a);
            EXPECT_NEAR(std::abs(g_from_psi2(J, DiscPoint(ra), DiscPoint(b)) - conv(ra, b)), 0, 1e-12);
        }
}

TEST(HAndG, EvaluatorInvariants) {
    std::vector<JointPsiEvaluator> Js{levy_pair(0.2, 0.9), psi2_diagonal(CircleMeasure::atomic(atom_angles, atom_weights)),
                                      psi2_free_increments(CircleMeasure::levy(0.3),
                                                           CircleMeasure::atomic(atom_angles, atom_weights))};
    for (const auto& J : Js)
        for (cplx p : disc_points(10, 0.9, 6)) {
            EXPECT_NEAR(std::abs(J(0.0, p)), 0, 1e-14);
            EXPECT_NEAR(std::abs(J(p, 0.0)), 0, 1e-14);
        }
    // Conjugate symmetry needs real moments.
    auto L = levy_pair(0.2, 0.9);
    for (cplx p : disc_points(10, 0.9, 7)) {
        cplx q = p * cplx(0.4, 0.5);
        EXPECT_NEAR(std::abs(L(std::conj(p), std::conj(q)) - std::conj(L(p, q))), 0, 1e-14);
    }
}

TEST(HIncrement, SpecExamples) {
    auto A = CircleMeasure::atomic(atom_angles, atom_weights);
    // V = 1.
    for (cplx z : disc_points(100, 0.95, 8)) {
        cplx w = z * cplx(-0.6, 0.5);
        cplx pz = atomic_psi(atom_angles, atom_weights, z), pw = atomic_psi(atom_angles, atom_weights, w);
        EXPECT_NEAR(std::abs(H_increment(A, A, DiscPoint(z), DiscPoint(w)) - (1.0 + (z * pz - w * pw) / (z - w))), 0,
                    1e-10);
    }
    // U = 1: μ = δ_1 ⊗ μ_{VU}.
    auto V = CircleMeasure::levy(0.6);
    for (cplx z : disc_points(10, 0.95, 9)) {
        cplx w = 0.8 * std::conj(z);
        EXPECT_NEAR(std::abs(H_increment(CircleMeasure::point_mass(0), V, DiscPoint(z), DiscPoint(w)) -
                             (1.0 + levy_psi(0.6, w)) / (1.0 - z)),
                    0, 1e-12);
    }
    // Lévy process closed form, inside and at reflected points.
    double l = 0.5, r = 1.0, c = std::exp(l - r);
    for (cplx z : disc_points(20, 0.99, 10)) {
        cplx w = 0.9 * z * cplx(0, 1);
        for (cplx x : {z, 1.0 / std::conj(z)}) {
            cplx ref = 1.0 + (x * levy_psi(l, x) - c * w * levy_psi(r, w)) / (x - c * w);
            EXPECT_NEAR(std::abs(H_increment(CircleMeasure::levy(l), CircleMeasure::levy(r), DiscPoint(x), DiscPoint(w)) -
                                 ref),
                        0, 1e-12);
            EXPECT_NEAR(std::abs(H_from_psi2(levy_pair(l, r), DiscPoint(x), DiscPoint(w)) - ref), 0, 1e-12);
        }
    }
}

TEST(HIncrement, RemovablePoint) {
    auto A = CircleMeasure::atomic(atom_angles, atom_weights);
    cplx w(0.3, 0.2);
    cplx at = H_increment(A, A, DiscPoint(w), DiscPoint(w));
    cplx near = H_increment(A, A, DiscPoint(w + 1e-6), DiscPoint(w));
    EXPECT_NEAR(std::abs(at - near), 0, 1e-5);
    EXPECT_TRUE(std::isfinite(at.real()));
}

TEST(LevyPair, MomentsMatchFreeWords) {
    double l = 0.5, r = 1.0;
    auto mu = levy_moments(l, 8), mv = levy_moments(r - l, 8);
    for (int n = 0; n <= 4; ++n)
        for (int m = 0; n + m <= 4; ++m) {
            if (n + m == 0) continue;
            EXPECT_NEAR(mixed_moments_free(mu, mv, increment_word(n, m)), std::exp(-l * n - r * m), 1e-13) << n << "," << m;
        }
}

TEST(HIncrement, TaylorCoefficientsAreWordMoments) {
    // U Lévy, V atomic; the pair's moments τ(Uⁿ(VU)ᵐ) by free word sums.
    auto U = CircleMeasure::levy(0.3);
    auto J = psi2_free_increments(U, CircleMeasure::atomic(atom_angles, atom_weights));
    std::vector<cplx> mu, mv;
    for (int k = 1; k <= 8; ++k) {
        mu.push_back(std::exp(-0.3 * k));
        mv.push_back(circle_moment(CircleMeasure::atomic(atom_angles, atom_weights), k));
    }
    auto H = [&](cplx z, cplx w) { return H_from_psi2(J, DiscPoint(z), DiscPoint(w)); };
    for (int n = 0; n <= 3; ++n)
        for (int m = 0; n + m <= 4; ++m) {
            cplx ref = n + m == 0 ? cplx(1) : mixed_moments_free(mu, mv, increment_word(n, m));
            EXPECT_NEAR(std::abs(taylor(H, n, m) - ref), 0, 1e-9) << n << "," << m;
        }
}

TEST(SOp, SpecExamples) {
    auto V = CircleMeasure::levy(0.7);
    auto one = psi2_product(CircleMeasure::point_mass(0), V);
    for (cplx z : disc_points(10, 0.2, 11)) {
        cplx w = z * cplx(0.3, -0.8);
        EXPECT_NEAR(std::abs(opposite_partial_S_from_H(one, z, w) - 1.0), 0, 1e-12);
    }
    for (const auto& J : {psi2_diagonal(CircleMeasure::atomic(atom_angles, atom_weights)), levy_pair(0.4, 0.4 + 1e-9)})
        for (cplx z : disc_points(10, 0.2, 12)) EXPECT_NEAR(std::abs(opposite_partial_S_from_H(J, z, z) - 1.0), 0, 1e-10);
    EXPECT_EQ(kind_of([&] { opposite_partial_S_from_H(one, 0.0, 0.1); }), ErrorKind::SOpSingularity);
}

TEST(SOp, CumulantRoute) {
    double l = 0.5, r = 1.0;
    auto kappa = table_from_joint_moments(levy_moment_table(l, r, 12), 12);
    auto J = levy_pair(l, r);
    for (cplx z : disc_points(20, 0.1, 13)) {
        cplx w = z * cplx(-0.4, 0.7);
        cplx viaH = opposite_partial_S_from_H(J, z, w);
        cplx viaK = opposite_partial_S_from_cumulants(kappa, J.marginal_u, J.marginal_v, z, w);
        EXPECT_NEAR(std::abs(viaH - viaK), 0, 1e-8) << z << " " << w;
    }
}

TEST(SOp, IncrementPairEqualsDiagonal) {
    auto U = CircleMeasure::levy(0.3);
    auto J = psi2_free_increments(U, CircleMeasure::atomic(atom_angles, atom_weights));
    auto D = psi2_diagonal(U);
    for (cplx z : disc_points(10, 0.15, 14)) {
        cplx w = z * cplx(0.5, 0.5);
        EXPECT_NEAR(std::abs(opposite_partial_S_from_H(J, z, w) - opposite_partial_S_from_H(D, z, w)), 0, 1e-9);
    }
}

TEST(BifreeMult, IdentityPair) {
    auto J1 = levy_pair(0.3, 0.8);
    auto out = bifree_mult_convolve(J1, psi2_product(CircleMeasure::point_mass(0), CircleMeasure::point_mass(0)));
    EXPECT_FALSE(out.reflects_z);
    for (cplx z : disc_points(20, 0.2, 15))
        for (cplx w : disc_points(2, 0.2, 16)) EXPECT_NEAR(std::abs(out(z, w) - J1(z, w)), 0, 1e-10);
    EXPECT_EQ(kind_of([&] { out(0.6, 0.1); }), ErrorKind::SeriesDomainError);
    EXPECT_EQ(kind_of([&] { recover_density_torus(out, 64); }), ErrorKind::InvalidInput);
}

TEST(BifreeMult, ScalarPairRotates) {
    double a = 0.7, b = -1.2;
    auto J1 = levy_pair(0.3, 0.8);
    auto out = bifree_mult_convolve(J1, psi2_product(CircleMeasure::point_mass(a), CircleMeasure::point_mass(b)));
    cplx ea = std::polar(1.0, a), eb = std::polar(1.0, b);
    for (cplx z : disc_points(20, 0.2, 17))
        for (cplx w : disc_points(2, 0.2, 18)) {
            cplx H = H_from_psi2(out, DiscPoint(z), DiscPoint(w));
            EXPECT_NEAR(std::abs(H - H_from_psi2(J1, DiscPoint(z * ea), DiscPoint(w * eb))), 0, 1e-8);
        }
}

TEST(BifreeMult, LevyPairsCompose) {
    auto out = bifree_mult_convolve(levy_pair(0.2, 0.5), levy_pair(0.3, 0.6));
    auto ref = levy_pair(0.5, 1.1);
    for (cplx z : disc_points(20, 0.4, 19))
        for (cplx w : disc_points(2, 0.4, 20))
            EXPECT_NEAR(std::abs(H_from_psi2(out, DiscPoint(z), DiscPoint(w)) - H_from_psi2(ref, DiscPoint(z), DiscPoint(w))),
                        0, 1e-6);
}

TEST(BifreeMult, SOpMultiplies) {
    auto J1 = levy_pair(0.2, 0.5);
    auto J2 = psi2_free_increments(CircleMeasure::levy(0.3), CircleMeasure::atomic(atom_angles, atom_weights));
    auto out = bifree_mult_convolve(J1, J2);
    for (cplx z : disc_points(10, 0.2, 21)) {
        cplx w = z * cplx(0.2, -0.9);
        cplx prod = opposite_partial_S_from_H(J1, z, w) * opposite_partial_S_from_H(J2, z, w);
        EXPECT_NEAR(std::abs(opposite_partial_S_from_H(out, z, w) - prod), 0, 1e-8) << z;
    }
}

TEST(Torus, HaarIsUniform) {
    PsiEvaluator zero{[](cplx) { return cplx(0); }, [](cplx) { return cplx(0); }};
    auto haar = CircleMeasure::haar(64).with_transform(zero);
    auto f = recover_density_torus(psi2_product(haar, haar), 64);
    for (double v : f.values) EXPECT_NEAR(v, 1.0, 1e-12);
    EXPECT_NEAR(f.per_radian(3, 5), 1 / (4 * pi * pi), 1e-14);
}

TEST(Torus, LevyClosedForm) {
    const std::size_t N = 256;
    double l = 0.5, r = 1.0;
    auto f = recover_density_torus(levy_pair(l, r), N);
    EXPECT_NEAR(f.raw_mass, 1.0, 1e-2);
    double sup = 0;
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t j = 0; j < N; ++j)
            sup = std::max(sup, std::abs(f.at(k, j) - levy_torus_density(l, r, f.angle(k), f.angle(j))));
    EXPECT_LE(sup, 5e-3);

    auto one = recover_circle_density(psi_function(CircleMeasure::levy(l)), N);
    for (std::size_t k = 0; k < N; ++k) EXPECT_NEAR(f.marginal_s[k], density_at(one, f.angle(k)), 1e-3);
    for (int n = 0; n <= 4; ++n)
        for (int m = 0; n + m <= 4; ++m)
            EXPECT_NEAR(std::abs(f.moment(n, m) - std::exp(-l * n - r * m)), 0, 1e-3) << n << "," << m;
}

TEST(Torus, ProductFactorizes) {
    const std::size_t N = 128;
    auto a = CircleMeasure::levy(0.4), b = CircleMeasure::levy(0.9);
    auto f = recover_density_torus(psi2_product(a, b), N);
    auto fa = recover_circle_density(psi_function(a), N), fb = recover_circle_density(psi_function(b), N);
    double sup = 0;
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t j = 0; j < N; ++j)
            sup = std::max(sup, std::abs(f.at(k, j) - density_at(fa, f.angle(k)) * density_at(fb, f.angle(j))));
    EXPECT_LE(sup, 1e-3);
}

TEST(Torus, IncrementPairMoments) {
    auto J = psi2_free_increments(CircleMeasure::levy(0.3), CircleMeasure::levy(0.4));
    auto f = recover_density_torus(J, 128);
    for (int n = 0; n <= 4; ++n)
        for (int m = 0; n + m <= 4; ++m)
            EXPECT_NEAR(std::abs(f.moment(n, m) - std::exp(-0.3 * n - 0.7 * m)), 0, 1e-3) << n << "," << m;
}

TEST(Kernel, LevyClosedForm) {
    for (double s : {0.0, 1.0, 4.0})
        for (double t : {0.5, 3.0}) EXPECT_NEAR(levy_kernel(0, 60, s, t), 1.0, 1e-12);
    const int N = 512;
    for (double s : {0.0, 2.0}) {
        double sum = 0;
        for (int k = 0; k < N; ++k) sum += levy_kernel(0.5, 1, s, circle_angle(k, N));
        EXPECT_NEAR(sum / N, 1.0, 1e-6);
    }
    EXPECT_EQ(kind_of([] { levy_kernel(1, 1, 0, 0); }), ErrorKind::TimeOrderViolation);
    EXPECT_EQ(kind_of([] { levy_pair(2, 1); }), ErrorKind::TimeOrderViolation);
    EXPECT_EQ(kind_of([] { levy_torus_density(0, 1, 0, 0); }), ErrorKind::InvalidInput);
}

TEST(Kernel, RecoveredLevyRows) {
    const std::size_t N = 256;
    auto k = circle_transition_kernel(recover_density_torus(levy_pair(0.5, 1), N));
    EXPECT_TRUE(k.periodic);
    double sup = 0;
    for (std::size_t i = 0; i < N; ++i) {
        ASSERT_FALSE(k.masked[i]);
        EXPECT_NEAR(k.row_mass(i), 1.0, 1e-12);
        for (std::size_t j = 0; j < N; ++j)
            sup = std::max(sup, std::abs(k.at(i, j) - levy_kernel(0.5, 1, circle_angle(i, N), circle_angle(j, N))));
    }
    EXPECT_LE(sup, 5e-3);
}
