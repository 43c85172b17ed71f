#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perflaw/laws.hpp"

namespace perflaw {

struct IntRange {
    int lo = 1;
    int hi = 1;

    std::uint64_t size() const noexcept { return hi >= lo ? static_cast<std::uint64_t>(hi - lo) + 1 : 0; }
};

/// Parses "lo:hi".
IntRange parse_range(std::string_view text);

enum class BudgetFunctional { n_times_d, n_times_d_squared };

struct Budget {
    BudgetFunctional functional = BudgetFunctional::n_times_d;
    double limit = 0.0;
};

/// Parses "n_times_d:512" or "n_times_d_squared:1e6".
Budget parse_budget(std::string_view text);
std::string_view to_string(BudgetFunctional functional);
double budget_value(BudgetFunctional functional, int n, int d);

struct SearchSpace {
    IntRange n_range;
    IntRange d_range;
    std::optional<Budget> budget;
};

struct FrontierPoint {
    int n = 0;
    int d = 0;
    double predicted = 0.0;
};

struct OptResult {
    int argmax_n = 0;
    int argmax_d = 0;
    double predicted = 0.0;
    std::uint64_t evaluated_points = 0;
    std::optional<std::vector<FrontierPoint>> frontier;  // constrained searches only
};

enum class SearchMode {
    automatic,       // exhaustive up to 1e6 grid points, coarse-to-fine beyond
    exhaustive,
    coarse_to_fine,  // stride-8 pass, then a dense +/-16 window around its argmax
};

struct SearchOptions {
    SearchMode mode = SearchMode::automatic;
    unsigned threads = 1;
};

/// Integer-grid argmax of the performance law over (n, d). Ties go to the
/// smaller n, then the smaller d. The space must not carry a budget.
OptResult global_optimum(const PerfLawParams& params, double d_prime, const SearchSpace& space,
                         const SearchOptions& options = {});

/// Exhaustive argmax over the grid points satisfying the budget. The frontier
/// lists, for each n, the largest feasible d whose successor would break the
/// budget.
OptResult constrained_optimum(const PerfLawParams& params, double d_prime, const SearchSpace& space,
                              const SearchOptions& options = {});

// ---------------------------------------------------------------------------
// Scaling-potential comparison across fitted frameworks

struct PotentialEntry {
    std::string label;
    PerfLawParams params;
    std::optional<double> observed;
};

struct PotentialRow {
    std::string label;
    double w1 = 0.0, w2 = 0.0, w3 = 0.0, w4 = 0.0;
    std::optional<double> observed;
    std::string reading;  // how (w3, w4) should be read given the signs of w1, w2
};

struct PotentialReport {
    std::vector<PotentialRow> rows;  // sorted by (w4, w3) descending
    /// Kendall tau-b between the (w4, w3) ordering and observed performance;
    /// present only when every entry has an observation and tau is defined.
    std::optional<double> kendall_tau;
    bool tau_tied = false;  // observations supplied but tau undefined (all pairs tied)
    std::string rule;
};

PotentialReport scaling_potential(std::span<const PotentialEntry> entries);

/// Fixed-width text rendering; numbers use their shortest round-trip form.
std::string render_text(const PotentialReport& report);

}  // namespace perflaw
