#pragma once

// Brute-force reference implementations used only by the tests.

#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

// All set partitions of {0..n-1} as restricted growth strings.
inline void all_partitions(int n, const std::function<void(const std::vector<int>&)>& visit) {
    std::vector<int> a(n, 0);
    std::function<void(int, int)> rec = [&](int i, int mx) {
        if (i == n) {
            visit(a);
            return;
        }
        for (int v = 0; v <= mx + 1; ++v) {
            a[i] = v;
            rec(i + 1, std::max(mx, v));
        }
    };
    if (n == 0) {
        visit(a);
        return;
    }
    a[0] = 0;
    rec(1, 0);
}

inline bool crossing(const std::vector<int>& a) {
    int n = int(a.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (int k = j + 1; k < n; ++k)
                for (int l = k + 1; l < n; ++l)
                    if (a[i] == a[k] && a[j] == a[l] && a[i] != a[j]) return true;
    return false;
}

inline void nc_partitions(int n, const std::function<void(const std::vector<int>&)>& visit) {
    all_partitions(n, [&](const std::vector<int>& a) {
        if (!crossing(a)) visit(a);
    });
}

// Σ over NC(n) of Π_B weight(B), blocks given as lists of positions.
template <class T>
T nc_block_sum(int n, const std::function<T(const std::vector<int>&)>& weight) {
    T total(0);
    nc_partitions(n, [&](const std::vector<int>& a) {
        int nb = 0;
        for (int v : a) nb = std::max(nb, v + 1);
        std::vector<std::vector<int>> blocks(nb);
        for (int i = 0; i < n; ++i) blocks[a[i]].push_back(i);
        T p(1);
        for (auto& b : blocks) p *= weight(b);
        total += p;
    });
    return total;
}

} // namespace oracle
