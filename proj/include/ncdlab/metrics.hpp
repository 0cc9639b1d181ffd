#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "ncdlab/errors.hpp"

namespace ncdlab {

/// Ground-truth labels paired with predicted cluster ids. Ids need not be
/// contiguous; they are compacted internally.
struct LabelPair {
    std::vector<int> y_true;
    std::vector<int> y_pred;

    std::size_t size() const { return y_true.size(); }

    void validate() const {
        if (y_true.empty()) throw argument_error("empty label pair");
        if (y_true.size() != y_pred.size())
            throw argument_error("label vectors must have equal length");
        for (int v : y_true)
            if (v < 0) throw argument_error("negative class id");
        for (int v : y_pred)
            if (v < 0) throw argument_error("negative cluster id");
    }
};

/// counts[r][c] = number of samples with true class r and predicted cluster c.
struct ContingencyTable {
    std::vector<std::vector<std::int64_t>> counts;
    std::vector<std::int64_t> row_sums;  // per true class
    std::vector<std::int64_t> col_sums;  // per predicted cluster
    std::int64_t total = 0;

    static ContingencyTable from(const LabelPair& pair) {
        pair.validate();
        auto compact = [](const std::vector<int>& ids) {
            std::map<int, int> m;
            std::vector<int> out(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i)
                out[i] = m.emplace(ids[i], static_cast<int>(m.size())).first->second;
            return std::pair{out, static_cast<int>(m.size())};
        };
        auto [t, nr] = compact(pair.y_true);
        auto [p, nc] = compact(pair.y_pred);
        ContingencyTable ct;
        ct.counts.assign(nr, std::vector<std::int64_t>(nc, 0));
        ct.row_sums.assign(nr, 0);
        ct.col_sums.assign(nc, 0);
        for (std::size_t i = 0; i < t.size(); ++i) {
            ++ct.counts[t[i]][p[i]];
            ++ct.row_sums[t[i]];
            ++ct.col_sums[p[i]];
            ++ct.total;
        }
        return ct;
    }

    int num_true() const { return static_cast<int>(row_sums.size()); }
    int num_pred() const { return static_cast<int>(col_sums.size()); }
};

namespace detail {

/// O(n^3) Hungarian algorithm (shortest augmenting paths with potentials) on
/// a square cost matrix; returns the column assigned to each row.
inline std::vector<int> hungarian_min_cost(const std::vector<std::vector<std::int64_t>>& cost) {
    const int n = static_cast<int>(cost.size());
    const std::int64_t INF = std::numeric_limits<std::int64_t>::max() / 4;
    std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<std::int64_t> minv(n + 1, INF);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const int i0 = p[j0];
            int j1 = -1;
            std::int64_t delta = INF;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const std::int64_t cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

inline std::int64_t pairs2(std::int64_t k) { return k * (k - 1) / 2; }

// Partitions compared as set partitions (labelings up to renaming).
inline bool partitions_equal(const LabelPair& pair) {
    auto canon = [](const std::vector<int>& ids) {
        std::map<int, int> m;
        std::vector<int> out(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i)
            out[i] = m.emplace(ids[i], static_cast<int>(m.size())).first->second;
        return out;
    };
    return canon(pair.y_true) == canon(pair.y_pred);
}

}  // namespace detail

/// Clustering accuracy under the optimal cluster-to-class assignment.
/// Rectangular contingency tables are zero-padded to square before solving.
inline double cluster_acc(const LabelPair& pair) {
    const ContingencyTable ct = ContingencyTable::from(pair);
    const int n = std::max(ct.num_true(), ct.num_pred());
    std::vector<std::vector<std::int64_t>> cost(n, std::vector<std::int64_t>(n, 0));
    for (int r = 0; r < ct.num_true(); ++r)
        for (int c = 0; c < ct.num_pred(); ++c) cost[c][r] = -ct.counts[r][c];
    const std::vector<int> assign = detail::hungarian_min_cost(cost);
    std::int64_t matched = 0;
    for (int c = 0; c < ct.num_pred(); ++c) {
        const int r = assign[c];
        if (r < ct.num_true()) matched += ct.counts[r][c];
    }
    return static_cast<double>(matched) / static_cast<double>(ct.total);
}

/// Normalized mutual information, MI / sqrt(H(y) H(y_hat)), natural logs.
/// Degenerate rules: both partitions trivial -> 1; exactly one entropy
/// zero -> 0.
inline double nmi(const LabelPair& pair) {
    const ContingencyTable ct = ContingencyTable::from(pair);
    const double n = static_cast<double>(ct.total);
    auto entropy = [&](const std::vector<std::int64_t>& sums) {
        double h = 0;
        for (std::int64_t s : sums) {
            if (s == 0) continue;
            const double p = static_cast<double>(s) / n;
            h -= p * std::log(p);
        }
        return h;
    };
    const double ht = entropy(ct.row_sums);
    const double hp = entropy(ct.col_sums);
    if (ht == 0.0 && hp == 0.0) return 1.0;
    if (ht == 0.0 || hp == 0.0) return 0.0;
    double mi = 0;
    for (int r = 0; r < ct.num_true(); ++r)
        for (int c = 0; c < ct.num_pred(); ++c) {
            const std::int64_t k = ct.counts[r][c];
            if (k == 0) continue;
            const double p = static_cast<double>(k) / n;
            mi += p * std::log(n * static_cast<double>(k) /
                               (static_cast<double>(ct.row_sums[r]) *
                                static_cast<double>(ct.col_sums[c])));
        }
    return mi / std::sqrt(ht * hp);
}

/// Adjusted Rand index via pair counting over the contingency margins.
inline double ari(const LabelPair& pair) {
    pair.validate();
    if (pair.size() < 2) throw argument_error("ari requires at least 2 samples");
    const ContingencyTable ct = ContingencyTable::from(pair);
    std::int64_t s = 0, a = 0, b = 0;
    for (const auto& row : ct.counts)
        for (std::int64_t k : row) s += detail::pairs2(k);
    for (std::int64_t k : ct.row_sums) a += detail::pairs2(k);
    for (std::int64_t k : ct.col_sums) b += detail::pairs2(k);
    const double total_pairs = static_cast<double>(detail::pairs2(ct.total));
    const double expected = static_cast<double>(a) * static_cast<double>(b) / total_pairs;
    const double max_index = 0.5 * static_cast<double>(a + b);
    const double denom = max_index - expected;
    if (denom == 0.0) return detail::partitions_equal(pair) ? 1.0 : 0.0;
    return (static_cast<double>(s) - expected) / denom;
}

struct ClusterScores {
    double acc = 0, nmi = 0, ari = 0;
    std::int64_t n = 0;
    int k_true = 0, k_pred = 0;
};

inline ClusterScores score_clustering(const LabelPair& pair) {
    const ContingencyTable ct = ContingencyTable::from(pair);
    ClusterScores s;
    s.acc = cluster_acc(pair);
    s.nmi = nmi(pair);
    s.ari = ari(pair);
    s.n = ct.total;
    s.k_true = ct.num_true();
    s.k_pred = ct.num_pred();
    return s;
}

}  // namespace ncdlab
