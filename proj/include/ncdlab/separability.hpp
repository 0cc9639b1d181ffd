#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "ncdlab/errors.hpp"
#include "ncdlab/rng.hpp"

namespace ncdlab {

struct LabeledSample {
    std::vector<double> point;
    int label = 0;
};

/// Empirical class-support overlap. tau_hat is the max over class pairs of
/// the estimated probability mass lying in both supports.
struct OverlapEstimate {
    struct PairOverlap {
        int class_a = 0, class_b = 0;
        double overlap = 0;
    };
    double tau_hat = 0;
    std::vector<PairOverlap> pairs;
    int k = 0;
};

namespace detail {

using Points = std::vector<std::vector<double>>;

inline double dist2(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

// Distance from each point to its k-th nearest neighbor within the same set
// (self excluded); k is clamped to the set size minus one.
inline std::vector<double> own_kth_radius(const Points& pts, int k) {
    const std::size_t n = pts.size();
    std::vector<double> radius(n, 0.0);
    if (n < 2) return radius;
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
    std::vector<double> d2(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) d2[m++] = dist2(pts[i], pts[j]);
        std::nth_element(d2.begin(), d2.begin() + (kk - 1), d2.end());
        radius[i] = std::sqrt(d2[kk - 1]);
    }
    return radius;
}

// The support of each class is estimated as the union of balls centered on
// its samples with adaptive radii c * (own k-NN distance); a point is "in
// overlap" when it falls inside the estimated support of the other class.
// c trades support coverage against bleed across boundaries.
constexpr double kBallScale = 0.9;

inline std::size_t count_inside(const Points& probes, const Points& support,
                                const std::vector<double>& radius) {
    std::size_t flagged = 0;
    for (const auto& p : probes) {
        for (std::size_t q = 0; q < support.size(); ++q) {
            const double r = kBallScale * radius[q];
            if (dist2(p, support[q]) <= r * r) {
                ++flagged;
                break;
            }
        }
    }
    return flagged;
}

inline double pair_overlap(const Points& a, const Points& b, int k) {
    const std::vector<double> ra = own_kth_radius(a, k);
    const std::vector<double> rb = own_kth_radius(b, k);
    const std::size_t flagged = count_inside(a, b, rb) + count_inside(b, a, ra);
    return static_cast<double>(flagged) / static_cast<double>(a.size() + b.size());
}

}  // namespace detail

/// Estimates the pairwise support overlap of every class pair and reports
/// the maximum. The estimator approaches the support-intersection mass as
/// sample counts grow (for well-behaved densities); at finite n it is a
/// validated empirical proxy, not the exact measure.
inline OverlapEstimate estimate_tau(const std::vector<LabeledSample>& samples, int k) {
    if (k < 3) throw argument_error("estimate_tau: k must be >= 3");
    if (samples.empty()) throw argument_error("estimate_tau: no samples");
    const std::size_t dim = samples[0].point.size();
    std::map<int, detail::Points> by_class;
    for (const auto& s : samples) {
        if (s.point.size() != dim)
            throw shape_error("estimate_tau: inconsistent point dimensionality");
        by_class[s.label].push_back(s.point);
    }
    if (by_class.size() < 2) throw argument_error("estimate_tau: need at least 2 classes");
    for (const auto& [label, pts] : by_class)
        if (pts.size() < 20)
            throw insufficient_data_error("estimate_tau: class " + std::to_string(label) +
                                          " has fewer than 20 samples");

    OverlapEstimate est;
    est.k = k;
    for (auto it = by_class.begin(); it != by_class.end(); ++it)
        for (auto jt = std::next(it); jt != by_class.end(); ++jt) {
            const double ov = detail::pair_overlap(it->second, jt->second, k);
            est.pairs.push_back({it->first, jt->first, ov});
            est.tau_hat = std::max(est.tau_hat, ov);
        }
    return est;
}

/// Two-set support overlap between labeled-domain and unlabeled-domain style
/// features. Low overlap certifies measurably different style distributions.
inline double disjointness_check(const detail::Points& style_feats_l,
                                 const detail::Points& style_feats_u, int k) {
    if (style_feats_l.empty() || style_feats_u.empty())
        throw argument_error("disjointness_check: empty feature set");
    if (style_feats_l[0].size() != style_feats_u[0].size())
        throw shape_error("disjointness_check: feature dimensions differ");
    for (const auto& p : style_feats_l)
        if (p.size() != style_feats_l[0].size())
            throw shape_error("disjointness_check: inconsistent dimensions");
    for (const auto& p : style_feats_u)
        if (p.size() != style_feats_u[0].size())
            throw shape_error("disjointness_check: inconsistent dimensions");
    if (k < 3) throw argument_error("disjointness_check: k must be >= 3");
    return detail::pair_overlap(style_feats_l, style_feats_u, k);
}

/// Numerical check of the dimension-reduction counterexample: points sampled
/// uniformly from the cube [-1,1]^3 are split by the parabolic sheet z = x^2.
/// In the (x,z) plane the class supports meet only on a measure-zero curve;
/// projected onto the x axis alone they overlap fully.
struct CounterexampleResult {
    double tau_xz = 0;       // overlap estimated on the (x,z) coordinates
    double tau_x = 0;        // overlap estimated on the x coordinate alone
    double class1_fraction = 0;  // mass of the below-sheet class (2/3 in the limit)
};

inline CounterexampleResult counterexample_projection(int n, std::uint64_t seed, int k = 5) {
    if (n < 5000) throw argument_error("counterexample needs n >= 5000");
    Rng rng(mix_seed(seed, 0x636f756e74ull));
    std::vector<LabeledSample> xz, x_only;
    xz.reserve(static_cast<std::size_t>(n));
    x_only.reserve(static_cast<std::size_t>(n));
    std::size_t below = 0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform(-1.0, 1.0);
        [[maybe_unused]] const double y = rng.uniform(-1.0, 1.0);
        const double z = rng.uniform(-1.0, 1.0);
        const int label = z < x * x ? 1 : 0;  // class 1: below the sheet
        below += label;
        xz.push_back({{x, z}, label});
        x_only.push_back({{x}, label});
    }
    CounterexampleResult res;
    res.tau_xz = estimate_tau(xz, k).tau_hat;
    res.tau_x = estimate_tau(x_only, k).tau_hat;
    res.class1_fraction = static_cast<double>(below) / static_cast<double>(n);
    return res;
}

}  // namespace ncdlab
