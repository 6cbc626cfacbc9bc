#include "bifree/cumulants.hpp"
#include "oracle.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace bifree;
using R = Rational;

namespace {

std::vector<R> rats(std::initializer_list<long> v) {
    std::vector<R> out;
    for (long x : v) out.emplace_back(x);
    return out;
}

R catalan(int n) {
    R c = 1;
    for (int i = 0; i < n; ++i) c = c * R(2 * (2 * i + 1)) / R(i + 2);
    return c;
}

} // namespace

TEST(NonCrossing, SmallCounts) {
    EXPECT_EQ(enumerate_nc(1).size(), 1u);
    EXPECT_EQ(enumerate_nc(1)[0].blocks(), (std::vector<std::vector<int>>{{1}}));
    EXPECT_EQ(enumerate_nc(3).size(), 5u);
    EXPECT_EQ(enumerate_nc(4).size(), 14u);
}

TEST(NonCrossing, CatalanUpTo12) {
    for (int n = 1; n <= 12; ++n) EXPECT_EQ(R(count_nc(n)), catalan(n)) << n;
}

TEST(NonCrossing, MatchesBruteForceListing) {
    for (int n = 1; n <= 8; ++n) {
        std::set<std::vector<std::vector<int>>> ours, ref;
        for (const auto& p : enumerate_nc(n)) {
            ASSERT_TRUE(NonCrossingPartition::valid(p.blocks()));
            EXPECT_EQ(p.size(), std::size_t(n));
            ours.insert(p.blocks());
        }
        oracle::nc_partitions(n, [&](const std::vector<int>& a) {
            int nb = 0;
            for (int v : a) nb = std::max(nb, v + 1);
            std::vector<std::vector<int>> b(nb);
            for (int i = 0; i < n; ++i) b[a[i]].push_back(i + 1);
            ref.insert(b);
        });
        EXPECT_EQ(ours, ref) << n;
    }
}

TEST(NonCrossing, RejectsCrossingAndOutOfRange) {
    EXPECT_THROW(NonCrossingPartition({{1, 3}, {2, 4}}), Error);
    EXPECT_NO_THROW(NonCrossingPartition({{1, 4}, {2, 3}}));
    try {
        enumerate_nc(15);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OrderOverflow);
    }
}

TEST(MomentCumulant, SpecExamples) {
    EXPECT_EQ(moments_to_cumulants(rats({0, 1, 0, 2})), rats({0, 1, 0, 0}));
    R l(3, 7);
    auto m = cumulants_to_moments(std::vector<R>{l, l, l});
    EXPECT_EQ(m[0], l);
    EXPECT_EQ(m[1], l + l * l);
    EXPECT_EQ(m[2], l + 3 * l * l + l * l * l);
    R c(-5, 2);
    auto mc = cumulants_to_moments(std::vector<R>{c, 0, 0, 0, 0});
    R p = 1;
    for (int k = 0; k < 5; ++k) {
        p *= c;
        EXPECT_EQ(mc[k], p);
    }
}

TEST(MomentCumulant, AgreesWithPartitionSum) {
    std::vector<R> k{R(1, 2), R(-3), R(2, 5), R(7), R(-1, 3), R(4), R(1, 9), R(-2)};
    auto m = cumulants_to_moments(k);
    for (int n = 1; n <= 8; ++n) {
        R ref = oracle::nc_block_sum<R>(n, [&](const std::vector<int>& b) { return k[b.size() - 1]; });
        EXPECT_EQ(m[n - 1], ref) << n;
    }
}

TEST(MomentCumulant, RoundTripExactToOrder10) {
    std::vector<R> m;
    for (int i = 1; i <= 10; ++i) m.emplace_back(R(i * i - 3, i + 2));
    EXPECT_EQ(cumulants_to_moments(moments_to_cumulants(m)), m);
    EXPECT_EQ(moments_to_cumulants(cumulants_to_moments(m)), m);
}

TEST(BifreeReduction, GaussianPair) {
    R a(2), b(3), c(1, 2);
    auto t = gaussian_table<R>(a, b, c, 6);
    EXPECT_EQ(t.mixed(1, 1), c);
    EXPECT_EQ(t.left(2), a);
    EXPECT_EQ(t.right(2), b);
    for (int n = 0; n <= 6; ++n)
        for (int m = 0; n + m <= 6; ++m)
            if (n + m != 2) {
                EXPECT_EQ(t.at(n, m), 0);
            }
}

TEST(BifreeReduction, FreePoissonPair) {
    R l(2, 5), r(9, 10);
    auto t = free_poisson_pair_table<R>(l, r, 8);
    for (int n = 0; n <= 8; ++n)
        for (int m = 0; n + m <= 8; ++m) {
            if (n + m == 0) continue;
            EXPECT_EQ(t.at(n, m), n > 0 ? l : r);
        }
}

TEST(BifreeReduction, IncrementPair) {
    std::vector<R> kX{R(1), R(2), R(3), R(4)}, kY{R(10), R(20), R(30), R(40)};
    auto t = increment_table<R>(kX, kY, 4);
    EXPECT_EQ(t.at(2, 1), kX[2]);
    EXPECT_EQ(t.at(1, 3), kX[3]);
    EXPECT_EQ(t.at(0, 3), kY[2] + kX[2]);
    EXPECT_EQ(reduce_bifree_cumulant<R>(1, 1, increment_free_cumulant<R>(kX, kY)), kX[1]);
}

TEST(JointMoments, SpecExamples) {
    R a(2), b(3), c(1, 2);
    auto mt = joint_moments_from_table(gaussian_table<R>(a, b, c, 4));
    EXPECT_EQ(mt.joint(1, 1), c);
    EXPECT_EQ(mt.joint(2, 2), a * b + c * c);
    R l(2, 5), r(9, 10);
    auto mp = joint_moments_from_table(free_poisson_pair_table<R>(l, r, 4));
    EXPECT_EQ(mp.joint(1, 1), l + l * r);
    EXPECT_EQ(mp.joint(0, 0), 1);
}

TEST(JointMoments, FreePoissonPairReferenceValues) {
    auto mp = joint_moments_from_table(free_poisson_pair_table<R>(R(2, 5), R(9, 10), 6));
    EXPECT_EQ(mp.joint(1, 1), R(19, 25));
    EXPECT_NEAR(to_double(mp.joint(0, 6)), 91.693791, 1e-6);
    EXPECT_NEAR(to_double(mp.joint(6, 0)), 7.437696, 1e-6);
}

TEST(JointMoments, AgreesWithPartitionSumOverWord) {
    // Arbitrary table so that every block shape matters.
    CumulantTable<R> t(7);
    for (int n = 0; n <= 7; ++n)
        for (int m = 0; n + m <= 7; ++m)
            if (n + m) t.at(n, m) = R(n * 3 + m * 5 + 1, n + 2 * m + 1) * (n % 2 ? -1 : 1);
    auto mt = joint_moments_from_table(t);
    for (int n = 0; n <= 7; ++n)
        for (int m = 0; n + m <= 7; ++m) {
            if (!(n + m)) continue;
            R ref = oracle::nc_block_sum<R>(n + m, [&](const std::vector<int>& blk) {
                int l = 0, r = 0;
                for (int p : blk) (p < n ? l : r)++;
                return t.at(l, r);
            });
            EXPECT_EQ(mt.joint(n, m), ref) << n << "," << m;
        }
    EXPECT_EQ(table_from_joint_moments(mt), t);
}

TEST(MixedMoments, SpecExamples) {
    std::vector<R> semi{0, 1, 0, 2, 0, 5};
    EXPECT_EQ(mixed_moments_free(semi, semi, "1122"), 1);
    std::vector<R> m1{R(2), R(5)}, m2{R(3), R(11)};
    EXPECT_EQ(mixed_moments_free(m1, m2, "12"), R(6));
    R s = 0;
    for (int w = 0; w < 16; ++w) {
        std::vector<int> word;
        for (int b = 0; b < 4; ++b) word.push_back((w >> b & 1) + 1);
        s += mixed_moments_free(semi, semi, word);
    }
    EXPECT_EQ(s, 8);
}

TEST(MixedMoments, MatchesMonochromaticPartitionSum) {
    std::vector<R> m1{R(1), R(3), R(2), R(7), R(-1), R(5)}, m2{R(-2), R(1, 2), R(4), R(0), R(3), R(1)};
    auto k1 = moments_to_cumulants(m1), k2 = moments_to_cumulants(m2);
    std::vector<int> word{1, 2, 2, 1, 2, 1, 1, 2};
    R ref = oracle::nc_block_sum<R>(int(word.size()), [&](const std::vector<int>& blk) {
        int c = word[blk[0]];
        for (int p : blk)
            if (word[p] != c) return R(0);
        return (c == 1 ? k1 : k2)[blk.size() - 1];
    });
    EXPECT_EQ(mixed_moments_free(m1, m2, word), ref);
}

TEST(MixedMoments, MixedCumulantsVanish) {
    std::vector<R> m1{R(1), R(3), R(2), R(7), R(-1), R(5)}, m2{R(-2), R(1, 2), R(4), R(0), R(3), R(1)};
    std::function<R(const std::vector<int>&)> mom = [&](const std::vector<int>& w) {
        return w.empty() ? R(1) : mixed_moments_free(m1, m2, w);
    };
    for (int L = 2; L <= 6; ++L)
        for (int w = 0; w < (1 << L); ++w) {
            std::vector<int> word;
            for (int b = 0; b < L; ++b) word.push_back((w >> b & 1) + 1);
            bool mono = w == 0 || w == (1 << L) - 1;
            R k = free_cumulant<R>(word, mom);
            if (mono) EXPECT_EQ(k, (word[0] == 1 ? moments_to_cumulants(m1) : moments_to_cumulants(m2))[L - 1]);
            else EXPECT_EQ(k, 0) << L << " " << w;
        }
}

TEST(BifreeProduct, SumOfPairsAddsTables) {
    CumulantTable<R> t1 = free_poisson_pair_table<R>(R(1, 3), R(1, 2), 6);
    CumulantTable<R> t2 = gaussian_table<R>(R(2), R(1), R(1, 4), 6) + free_poisson_pair_table<R>(R(1), R(3), 6);
    std::vector<CumulantTable<R>> tabs{t1, t2};
    MomentTable<R> sum(6);
    for (int n = 0; n <= 6; ++n)
        for (int m = 0; n + m <= 6; ++m) {
            if (!(n + m)) continue;
            R s = 0;
            for (int c = 0; c < (1 << (n + m)); ++c) {
                std::vector<Letter> seq;
                for (int i = 0; i < n + m; ++i) seq.push_back({c >> i & 1, i < n ? Face::Left : Face::Right});
                s += bifree_product_moment(tabs, seq);
            }
            sum.at(n, m) = s;
        }
    EXPECT_EQ(table_from_joint_moments(sum), t1 + t2);
}

TEST(Clt, ScalingExamples) {
    CumulantTable<R> t(4);
    t.at(2, 0) = 1;
    t.at(1, 1) = R(1, 2);
    t.at(0, 2) = 3;
    t.at(2, 1) = 1;
    t.at(1, 2) = R(-2, 3);
    t.at(3, 1) = 5;
    EXPECT_EQ(clt_scaled_table(t, 1), t);
    auto t100 = clt_scaled_table(t, 100);
    EXPECT_EQ(t100.at(2, 1), R(1, 10));
    EXPECT_EQ(t100.at(1, 1), R(1, 2));
    EXPECT_EQ(t100.at(3, 1), R(5, 100));
    auto big = clt_scaled_table(t, 10000);
    EXPECT_LE(boost::multiprecision::abs(big.at(2, 1)), boost::multiprecision::abs(t.at(2, 1)) / 100);
    EXPECT_EQ(clt_limit_table(t), gaussian_table<R>(R(1), R(3), R(1, 2), 4));
    t.at(1, 0) = 1;
    try {
        clt_scaled_table(t, 4);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotCentred);
    }
}
