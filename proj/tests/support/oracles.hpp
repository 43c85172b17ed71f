#pragma once

// Slow, definitional reference implementations used to check the fast paths.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "perflaw/dataset.hpp"
#include "perflaw/laws.hpp"
#include "perflaw/optimize.hpp"

namespace oracle {

struct Window {
    std::size_t seq;
    std::size_t pos;
};

inline std::vector<Window> windows(std::span<const perflaw::InteractionSequence> seqs, int m) {
    std::vector<Window> out;
    for (std::size_t s = 0; s < seqs.size(); ++s) {
        const auto n = seqs[s].size();
        for (std::size_t p = 0; p + static_cast<std::size_t>(m) <= n; ++p) out.push_back({s, p});
    }
    return out;
}

inline bool same(std::span<const perflaw::InteractionSequence> seqs, Window a, Window b, int m) {
    auto x = seqs[a.seq].items();
    auto y = seqs[b.seq].items();
    for (int k = 0; k < m; ++k) {
        if (x[a.pos + static_cast<std::size_t>(k)] != y[b.pos + static_cast<std::size_t>(k)]) return false;
    }
    return true;
}

/// Pairwise comparison of every window against every other: O(W^2 m).
inline std::vector<std::uint64_t> match_counts(std::span<const perflaw::InteractionSequence> seqs, int m) {
    const auto w = windows(seqs, m);
    std::vector<std::uint64_t> counts(w.size(), 0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        for (std::size_t j = 0; j < w.size(); ++j) counts[i] += same(seqs, w[i], w[j], m) ? 1 : 0;
    }
    return counts;
}

/// Phi as the plain mean of ln(C_i), C_i = count_i / W, in window order.
inline double phi(std::span<const std::uint64_t> counts) {
    if (counts.empty()) return 0.0;
    const double total = static_cast<double>(counts.size());
    double sum = 0.0;
    for (auto c : counts) sum += std::log(static_cast<double>(c) / total);
    return sum / total;
}

inline double pooled_apen(std::span<const perflaw::InteractionSequence> seqs, int m) {
    auto cm = match_counts(seqs, m);
    auto cm1 = match_counts(seqs, m + 1);
    return phi(cm) - phi(cm1);
}

/// Every grid point, ties to the smaller n then the smaller d.
struct GridBest {
    int n = 0;
    int d = 0;
    double value = -INFINITY;
};

inline GridBest exhaustive_argmax(const perflaw::PerfLawParams& p, double d_prime, perflaw::IntRange nr,
                                  perflaw::IntRange dr, const std::optional<perflaw::Budget>& budget = {}) {
    GridBest best;
    for (int n = nr.lo; n <= nr.hi; ++n) {
        for (int d = dr.lo; d <= dr.hi; ++d) {
            if (budget && perflaw::budget_value(budget->functional, n, d) > budget->limit) continue;
            const double v = perflaw::eval_perf_law(p, n, d, d_prime);
            if (std::isnan(v)) continue;
            if (v > best.value) best = {n, d, v};
        }
    }
    return best;
}

/// Closed-form simple regression.
struct Ols {
    double slope;
    double intercept;
    double r;
};

inline Ols ols(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    const double cov = sxy - sx * sy / n;
    const double vx = sxx - sx * sx / n;
    const double vy = syy - sy * sy / n;
    const double slope = cov / vx;
    return {slope, (sy - slope * sx) / n, cov / std::sqrt(vx * vy)};
}

/// Central differences of the performance law in each of its 10 parameters.
inline std::array<double, perflaw::PerfLawParams::kSize> numeric_grad(const perflaw::PerfLawParams& p, double n,
                                                                      double d, double dp) {
    std::array<double, perflaw::PerfLawParams::kSize> g{};
    const auto base = p.to_array();
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(base[i]));
        auto up = base, down = base;
        up[i] += h;
        down[i] -= h;
        g[i] = (perflaw::eval_perf_law(perflaw::PerfLawParams::from_array(up), n, d, dp) -
                perflaw::eval_perf_law(perflaw::PerfLawParams::from_array(down), n, d, dp)) /
               (2.0 * h);
    }
    return g;
}

}  // namespace oracle
