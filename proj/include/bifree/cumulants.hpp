#pragma once

#include "bifree/error.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bifree {

using Rational = boost::multiprecision::cpp_rational;

inline constexpr int nc_default_order = 12;
inline constexpr int nc_hard_max_order = 14;

namespace detail {

inline void check_nc_order(int n, int max = nc_hard_max_order) {
    if (n > max) fail(ErrorKind::OrderOverflow, "order " + std::to_string(n) + " exceeds " + std::to_string(max));
}

template <class T> T zero() { return T(0); }
template <class T> T one() { return T(1); }

} // namespace detail

// ============================================================================
// Non-crossing partitions
// ============================================================================

class NonCrossingPartition {
public:
    // Blocks use 1-based element labels.
    explicit NonCrossingPartition(std::vector<std::vector<int>> blocks) : blocks_(std::move(blocks)) {
        if (!valid(blocks_)) fail(ErrorKind::InvalidInput, "not a non-crossing partition");
    }

    static NonCrossingPartition from_labels(std::span<const std::uint8_t> labels) {
        std::vector<std::vector<int>> b;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= b.size()) b.resize(labels[i] + 1);
            b[labels[i]].push_back(int(i) + 1);
        }
        NonCrossingPartition p;
        p.blocks_ = std::move(b);
        return p;
    }

    const std::vector<std::vector<int>>& blocks() const { return blocks_; }
    std::size_t block_count() const { return blocks_.size(); }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& b : blocks_) n += b.size();
        return n;
    }

    static bool valid(const std::vector<std::vector<int>>& blocks) {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.size();
        std::vector<int> owner(n + 1, -1);
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            if (blocks[k].empty()) return false;
            for (int e : blocks[k]) {
                if (e < 1 || std::size_t(e) > n || owner[e] != -1) return false;
                owner[e] = int(k);
            }
        }
        // a < b < c < d with a,c in one block and b,d in another
        for (std::size_t a = 1; a <= n; ++a)
            for (std::size_t b = a + 1; b <= n; ++b) {
                if (owner[b] == owner[a]) continue;
                for (std::size_t c = b + 1; c <= n; ++c) {
                    if (owner[c] != owner[a]) continue;
                    for (std::size_t d = c + 1; d <= n; ++d)
                        if (owner[d] == owner[b]) return false;
                }
            }
        return true;
    }

private:
    NonCrossingPartition() = default;
    std::vector<std::vector<int>> blocks_;
};

namespace detail {

// Element i either opens a block or joins a block still on the stack; joining
// closes every block opened after it.
template <class Visit>
void nc_recurse(int i, int n, std::vector<std::uint8_t>& labels, std::vector<std::uint8_t>& stack,
                std::uint8_t next, Visit& visit) {
    if (i == n) {
        visit(std::span<const std::uint8_t>(labels));
        return;
    }
    stack.push_back(next);
    labels[i] = next;
    nc_recurse(i + 1, n, labels, stack, std::uint8_t(next + 1), visit);
    stack.pop_back();
    for (std::size_t p = stack.size(); p-- > 0;) {
        std::vector<std::uint8_t> saved(stack.begin() + std::ptrdiff_t(p) + 1, stack.end());
        stack.resize(p + 1);
        labels[i] = stack[p];
        nc_recurse(i + 1, n, labels, stack, next, visit);
        stack.insert(stack.end(), saved.begin(), saved.end());
    }
}

} // namespace detail

// Calls visit(labels) once per non-crossing partition of {1..n}; labels[i] is
// the block index of element i+1, numbered by first appearance.
template <class Visit>
void for_each_nc(int n, Visit&& visit) {
    if (n < 1) fail(ErrorKind::InvalidInput, "partition size must be >= 1");
    detail::check_nc_order(n);
    std::vector<std::uint8_t> labels(n), stack;
    detail::nc_recurse(0, n, labels, stack, std::uint8_t(0), visit);
}

inline std::vector<NonCrossingPartition> enumerate_nc(int n) {
    std::vector<NonCrossingPartition> out;
    for_each_nc(n, [&](std::span<const std::uint8_t> l) { out.push_back(NonCrossingPartition::from_labels(l)); });
    return out;
}

inline std::uint64_t count_nc(int n) {
    std::uint64_t c = 0;
    for_each_nc(n, [&](std::span<const std::uint8_t>) { ++c; });
    return c;
}

// Sum over non-crossing partitions of a sequence of length L of the product
// of block weights. weight(mask) gives the weight of the block whose
// positions are the set bits of mask (zero for forbidden blocks).
template <class T, class Weight>
T nc_sum(int L, Weight&& weight) {
    detail::check_nc_order(L);
    if (L == 0) return detail::one<T>();
    std::vector<std::optional<T>> wcache(std::size_t(1) << L);
    auto w = [&](std::uint32_t mask) -> const T& {
        auto& c = wcache[mask];
        if (!c) c = weight(mask);
        return *c;
    };
    // M[i][j]: sum over the contiguous interval [i, j)
    std::vector<std::vector<T>> M(L + 1, std::vector<T>(L + 1, detail::zero<T>()));
    for (int i = 0; i <= L; ++i) M[i][i] = detail::one<T>();
    for (int len = 1; len <= L; ++len)
        for (int i = 0; i + len <= L; ++i) {
            int j = i + len;
            T s = detail::zero<T>();
            std::uint32_t free_bits = len - 1;
            for (std::uint32_t sub = 0; sub < (1u << free_bits); ++sub) {
                std::uint32_t mask = 1u << i;
                for (std::uint32_t b = 0; b < free_bits; ++b)
                    if (sub >> b & 1u) mask |= 1u << (i + 1 + b);
                const T& wb = w(mask);
                if (wb == detail::zero<T>()) continue;
                T term = wb;
                int prev = i;
                for (int p = i + 1; p <= j; ++p) {
                    if (p == j || (mask >> p & 1u)) {
                        if (p > prev + 1) term *= M[prev + 1][p];
                        prev = p;
                    }
                }
                s += term;
            }
            M[i][j] = s;
        }
    return M[0][L];
}

// ============================================================================
// One-variable moment-cumulant transforms
// ============================================================================

// Lists are aligned from order 1: entry k-1 holds order k.
template <class T>
std::vector<T> cumulants_to_moments(const std::vector<T>& kappa) {
    const int n = int(kappa.size());
    detail::check_nc_order(n, 64);
    std::vector<T> m(n + 1, detail::zero<T>());
    m[0] = detail::one<T>();
    // pw[s][j] = [t^j] M(t)^s, filled as moments become known.
    for (int k = 1; k <= n; ++k) {
        // The block containing the first point has size s; the s gaps after
        // its points hold k-s points in total.
        std::vector<std::vector<T>> pw(k + 1, std::vector<T>(k + 1, detail::zero<T>()));
        pw[0][0] = detail::one<T>();
        for (int s = 1; s <= k; ++s)
            for (int j = 0; j <= k - s; ++j) {
                T acc = detail::zero<T>();
                for (int a = 0; a <= j; ++a) acc += m[a] * pw[s - 1][j - a];
                pw[s][j] = acc;
            }
        T mk = detail::zero<T>();
        for (int s = 1; s <= k; ++s) mk += kappa[s - 1] * pw[s][k - s];
        m[k] = mk;
    }
    return std::vector<T>(m.begin() + 1, m.end());
}

template <class T>
std::vector<T> moments_to_cumulants(const std::vector<T>& mom) {
    const int n = int(mom.size());
    detail::check_nc_order(n, 64);
    std::vector<T> m(n + 1);
    m[0] = detail::one<T>();
    for (int k = 1; k <= n; ++k) m[k] = mom[k - 1];
    std::vector<T> kappa(n, detail::zero<T>());
    for (int k = 1; k <= n; ++k) {
        std::vector<std::vector<T>> pw(k + 1, std::vector<T>(k + 1, detail::zero<T>()));
        pw[0][0] = detail::one<T>();
        for (int s = 1; s < k; ++s)
            for (int j = 0; j <= k - s; ++j) {
                T acc = detail::zero<T>();
                for (int a = 0; a <= j; ++a) acc += m[a] * pw[s - 1][j - a];
                pw[s][j] = acc;
            }
        T rest = detail::zero<T>();
        for (int s = 1; s < k; ++s) rest += kappa[s - 1] * pw[s][k - s];
        kappa[k - 1] = m[k] - rest;
    }
    return kappa;
}

// ============================================================================
// Two-face tables
// ============================================================================

namespace detail {

template <class T>
class TriangularTable {
public:
    TriangularTable() = default;
    explicit TriangularTable(int order) : order_(order), data_(std::size_t(order + 1) * (order + 1), zero<T>()) {
        if (order < 0) fail(ErrorKind::InvalidInput, "negative table order");
    }

    int order() const { return order_; }

    T& at(int n, int m) {
        check(n, m);
        return data_[std::size_t(n) * (order_ + 1) + m];
    }
    const T& at(int n, int m) const {
        check(n, m);
        return data_[std::size_t(n) * (order_ + 1) + m];
    }

    bool operator==(const TriangularTable&) const = default;

protected:
    void check(int n, int m) const {
        if (n < 0 || m < 0 || n + m > order_)
            fail(ErrorKind::OrderOverflow, "index (" + std::to_string(n) + "," + std::to_string(m) + ")");
    }

    int order_ = 0;
    std::vector<T> data_;
};

} // namespace detail

// κ_{n,m}(Z_ℓ, Z_r) for n+m ≤ order; entry (0,0) is unused and zero.
template <class T = Rational>
class CumulantTable : public detail::TriangularTable<T> {
public:
    using detail::TriangularTable<T>::TriangularTable;
    const T& left(int n) const { return this->at(n, 0); }
    const T& right(int m) const { return this->at(0, m); }
    const T& mixed(int n, int m) const { return this->at(n, m); }

    CumulantTable operator+(const CumulantTable& o) const {
        if (o.order() != this->order()) fail(ErrorKind::InvalidInput, "table orders differ");
        CumulantTable r = *this;
        for (std::size_t i = 0; i < r.data_.size(); ++i) r.data_[i] += o.data_[i];
        return r;
    }
};

// τ(X^n Y^m) for n+m ≤ order.
template <class T = Rational>
class MomentTable : public detail::TriangularTable<T> {
public:
    MomentTable() = default;
    explicit MomentTable(int order) : detail::TriangularTable<T>(order) { this->at(0, 0) = detail::one<T>(); }
    const T& joint(int n, int m) const { return this->at(n, m); }
};

enum class Face : std::uint8_t { Left, Right };

// κ_{n,m}(Z_ℓ, Z_r) is the (n+m)-th free cumulant of the word ℓ^n r^m.
template <class T, class FreeCumulant>
T reduce_bifree_cumulant(int n, int m, FreeCumulant&& free_cumulant) {
    if (n < 0 || m < 0 || n + m < 1) fail(ErrorKind::InvalidInput, "need n+m >= 1");
    std::vector<Face> word(n, Face::Left);
    word.insert(word.end(), m, Face::Right);
    return free_cumulant(std::span<const Face>(word));
}

template <class T, class FreeCumulant>
CumulantTable<T> bifree_table(int order, FreeCumulant&& free_cumulant) {
    CumulantTable<T> t(order);
    for (int n = 0; n <= order; ++n)
        for (int m = 0; n + m <= order; ++m)
            if (n + m > 0) t.at(n, m) = reduce_bifree_cumulant<T>(n, m, free_cumulant);
    return t;
}

// Free cumulants of a centred semicircular family with covariance
// ⟨ℓ,ℓ⟩ = a, ⟨r,r⟩ = b, ⟨ℓ,r⟩ = c.
template <class T>
auto gaussian_free_cumulant(T a, T b, T c) {
    return [a, b, c](std::span<const Face> w) -> T {
        if (w.size() != 2) return detail::zero<T>();
        if (w[0] == Face::Left && w[1] == Face::Left) return a;
        if (w[0] == Face::Right && w[1] == Face::Right) return b;
        return c;
    };
}

// Pair (X, X+Y) with Y free from X; kX, kY aligned from order 1.
template <class T>
auto increment_free_cumulant(std::vector<T> kX, std::vector<T> kY) {
    return [kX = std::move(kX), kY = std::move(kY)](std::span<const Face> w) -> T {
        std::size_t L = w.size();
        if (L > kX.size() || L > kY.size()) fail(ErrorKind::OrderOverflow, "cumulant order");
        bool has_left = false;
        for (Face f : w) has_left |= f == Face::Left;
        return has_left ? kX[L - 1] : T(kX[L - 1] + kY[L - 1]);
    };
}

template <class T = Rational>
CumulantTable<T> gaussian_table(T a, T b, T c, int order = nc_default_order) {
    return bifree_table<T>(order, gaussian_free_cumulant<T>(a, b, c));
}

// Free Poisson process at times ℓ < r: increments carry all cumulants r-ℓ.
template <class T = Rational>
CumulantTable<T> free_poisson_pair_table(T l, T r, int order = nc_default_order) {
    return bifree_table<T>(order, increment_free_cumulant<T>(std::vector<T>(order, l), std::vector<T>(order, T(r - l))));
}

template <class T = Rational>
CumulantTable<T> increment_table(const std::vector<T>& kX, const std::vector<T>& kY, int order) {
    return bifree_table<T>(order, increment_free_cumulant<T>(kX, kY));
}

namespace detail {

inline int popcount_range(std::uint32_t mask, int a, int b) {
    int c = 0;
    for (int p = a; p < b; ++p) c += mask >> p & 1u;
    return c;
}

} // namespace detail

// Moments of the commuting pair via the word ℓ^n r^m.
template <class T>
MomentTable<T> joint_moments_from_table(const CumulantTable<T>& t, int max_order = nc_default_order) {
    detail::check_nc_order(t.order(), max_order);
    MomentTable<T> mt(t.order());
    for (int n = 0; n <= t.order(); ++n)
        for (int m = 0; n + m <= t.order(); ++m) {
            if (n + m == 0) continue;
            mt.at(n, m) = nc_sum<T>(n + m, [&](std::uint32_t mask) {
                int l = detail::popcount_range(mask, 0, n);
                int r = detail::popcount_range(mask, n, n + m);
                return t.at(l, r);
            });
        }
    return mt;
}

// Inverse of joint_moments_from_table, solving for the full block each time.
template <class T>
CumulantTable<T> table_from_joint_moments(const MomentTable<T>& mt, int max_order = nc_default_order) {
    detail::check_nc_order(mt.order(), max_order);
    CumulantTable<T> t(mt.order());
    for (int L = 1; L <= mt.order(); ++L)
        for (int n = 0; n <= L; ++n) {
            int m = L - n;
            std::uint32_t full = (1u << L) - 1;
            T rest = nc_sum<T>(L, [&](std::uint32_t mask) {
                if (mask == full) return detail::zero<T>();
                int l = detail::popcount_range(mask, 0, n);
                int r = detail::popcount_range(mask, n, L);
                return t.at(l, r);
            });
            t.at(n, m) = mt.joint(n, m) - rest;
        }
    return t;
}

// ============================================================================
// Free products
// ============================================================================

// A letter of a word: which algebra it comes from and which face it sits on.
struct Letter {
    int algebra;
    Face face = Face::Left;
};

// Moment of a word whose letters come from freely (bi-freely) independent
// commuting pairs. Letters must be listed in the order in which the
// partitions are non-crossing: left letters left to right, then right
// letters right to left. Blocks are monochromatic in the algebra and carry
// κ_{#left,#right} of that algebra.
template <class T>
T bifree_product_moment(const std::vector<CumulantTable<T>>& tables, const std::vector<Letter>& seq) {
    const int L = int(seq.size());
    detail::check_nc_order(L);
    for (const Letter& x : seq)
        if (x.algebra < 0 || std::size_t(x.algebra) >= tables.size())
            fail(ErrorKind::InvalidInput, "letter refers to unknown algebra");
    return nc_sum<T>(L, [&](std::uint32_t mask) {
        int alg = -1, l = 0, r = 0;
        for (int p = 0; p < L; ++p) {
            if (!(mask >> p & 1u)) continue;
            if (alg == -1) alg = seq[p].algebra;
            else if (alg != seq[p].algebra) return detail::zero<T>();
            (seq[p].face == Face::Left ? l : r) += 1;
        }
        const auto& t = tables[alg];
        if (l + r > t.order()) fail(ErrorKind::OrderOverflow, "block exceeds table order");
        return t.at(l, r);
    });
}

// Single-face table holding the free cumulants of a moment list.
template <class T>
CumulantTable<T> one_face_table(const std::vector<T>& moments) {
    auto k = moments_to_cumulants(moments);
    CumulantTable<T> t(int(k.size()));
    for (std::size_t i = 0; i < k.size(); ++i) t.at(int(i) + 1, 0) = k[i];
    return t;
}

// Moment of a word over {1,2} in two free elements with the given moments.
template <class T>
T mixed_moments_free(const std::vector<T>& mom1, const std::vector<T>& mom2, const std::vector<int>& word,
                     int max_order = nc_default_order) {
    detail::check_nc_order(int(word.size()), max_order);
    std::vector<CumulantTable<T>> tables{one_face_table(mom1), one_face_table(mom2)};
    std::vector<Letter> seq;
    for (int c : word) {
        if (c != 1 && c != 2) fail(ErrorKind::InvalidInput, "word letters must be 1 or 2");
        seq.push_back({c - 1, Face::Left});
    }
    return bifree_product_moment(tables, seq);
}

template <class T>
T mixed_moments_free(const std::vector<T>& mom1, const std::vector<T>& mom2, std::string_view word) {
    std::vector<int> w;
    for (char ch : word) w.push_back(ch - '0');
    return mixed_moments_free(mom1, mom2, w);
}

// Multivariate free cumulant κ_L(a_1,...,a_L) from a moment functional on
// words, where the word is a list of labels.
template <class T>
T free_cumulant(const std::vector<int>& word, const std::function<T(const std::vector<int>&)>& moment) {
    const int L = int(word.size());
    detail::check_nc_order(L);
    std::map<std::uint32_t, T> kcache;
    std::function<T(std::uint32_t)> kappa = [&](std::uint32_t sub) -> T {
        if (auto it = kcache.find(sub); it != kcache.end()) return it->second;
        std::vector<int> pos;
        for (int p = 0; p < L; ++p)
            if (sub >> p & 1u) pos.push_back(p);
        const int n = int(pos.size());
        std::vector<int> letters;
        for (int p : pos) letters.push_back(word[p]);
        std::uint32_t full = (1u << n) - 1;
        T rest = nc_sum<T>(n, [&](std::uint32_t mask) {
            if (mask == full) return detail::zero<T>();
            std::uint32_t orig = 0;
            for (int q = 0; q < n; ++q)
                if (mask >> q & 1u) orig |= 1u << pos[q];
            return kappa(orig);
        });
        T k = moment(letters) - rest;
        kcache.emplace(sub, k);
        return k;
    };
    return kappa((1u << L) - 1);
}

// ============================================================================
// Central limit scaling
// ============================================================================

namespace detail {

inline std::optional<std::int64_t> exact_sqrt(std::int64_t N) {
    auto r = static_cast<std::int64_t>(std::llround(std::sqrt(double(N))));
    for (std::int64_t c = std::max<std::int64_t>(0, r - 2); c <= r + 2; ++c)
        if (c * c == N) return c;
    return std::nullopt;
}

} // namespace detail

// Table of (1/√N) Σ of N bi-free copies: κ_{n,m} ↦ N^{1-(n+m)/2} κ_{n,m}.
template <class T>
CumulantTable<T> clt_scaled_table(const CumulantTable<T>& t, std::int64_t N) {
    if (N < 1) fail(ErrorKind::InvalidInput, "N must be positive");
    if (t.order() >= 1 && (t.at(1, 0) != detail::zero<T>() || t.at(0, 1) != detail::zero<T>()))
        fail(ErrorKind::NotCentred, "first-order cumulants must vanish");
    CumulantTable<T> out(t.order());
    if constexpr (std::is_same_v<T, Rational>) {
        auto root = detail::exact_sqrt(N);
        if (!root) fail(ErrorKind::InvalidInput, "exact scaling needs N to be a perfect square");
        for (int n = 0; n <= t.order(); ++n)
            for (int m = 0; n + m <= t.order(); ++m) {
                int k = n + m;
                if (k == 0) continue;
                // N^{1-k/2} = N / root^k
                Rational f(N);
                for (int i = 0; i < k; ++i) f /= Rational(*root);
                out.at(n, m) = t.at(n, m) * f;
            }
    } else {
        for (int n = 0; n <= t.order(); ++n)
            for (int m = 0; n + m <= t.order(); ++m)
                if (n + m > 0) out.at(n, m) = t.at(n, m) * T(std::pow(double(N), 1.0 - 0.5 * (n + m)));
    }
    return out;
}

// N → ∞ limit: only the second-order entries survive.
template <class T>
CumulantTable<T> clt_limit_table(const CumulantTable<T>& t) {
    if (t.order() >= 1 && (t.at(1, 0) != detail::zero<T>() || t.at(0, 1) != detail::zero<T>()))
        fail(ErrorKind::NotCentred, "first-order cumulants must vanish");
    CumulantTable<T> out(t.order());
    for (int n = 0; n <= 2 && n <= t.order(); ++n)
        if (2 - n >= 0 && t.order() >= 2) out.at(n, 2 - n) = t.at(n, 2 - n);
    return out;
}

template <class T>
double to_double(const T& x) {
    if constexpr (std::is_same_v<T, Rational>) return x.template convert_to<double>();
    else return double(x);
}

} // namespace bifree
