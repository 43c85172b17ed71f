#include "perflaw/optimize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <thread>

#include "perflaw/error.hpp"
#include "text_util.hpp"

namespace perflaw {

namespace {

struct Candidate {
    int n = 0;
    int d = 0;
    double value = 0.0;
    bool valid = false;
};

// Larger value wins; equal values go to the smaller n, then the smaller d.
bool better(const Candidate& a, const Candidate& b) {
    if (!a.valid) return false;
    if (!b.valid) return true;
    if (a.value != b.value) return a.value > b.value;
    if (a.n != b.n) return a.n < b.n;
    return a.d < b.d;
}

void offer(Candidate& best, int n, int d, double value) {
    if (std::isnan(value)) return;
    Candidate c{n, d, value, true};
    if (better(c, best)) best = c;
}

void check_space(const SearchSpace& space) {
    if (space.n_range.lo < 1 || space.d_range.lo < 1) throw ValidationError("search ranges must start at >= 1");
    if (space.n_range.size() == 0 || space.d_range.size() == 0) throw ValidationError("search space is empty");
}

double parse_number(std::string_view text, std::string_view what) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ValidationError("invalid " + std::string(what) + " '" + std::string(text) + "'");
    }
    return value;
}

// Row-partitioned exhaustive search; each worker owns a contiguous block of n
// values and the merge uses the same total order, so the result does not
// depend on the partition.
template <typename DRangeFn>
Candidate search_rows(const PerfLawParams& params, double d_prime, IntRange n_range, DRangeFn d_range_for,
                      unsigned threads, std::uint64_t& evaluated) {
    const int rows = n_range.hi - n_range.lo + 1;
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(rows)));
    std::vector<Candidate> best(workers);
    std::vector<std::uint64_t> counts(workers, 0);
    auto work = [&](unsigned w) {
        const int begin = n_range.lo + static_cast<int>(static_cast<long long>(rows) * w / workers);
        const int end = n_range.lo + static_cast<int>(static_cast<long long>(rows) * (w + 1) / workers);
        for (int n = begin; n < end; ++n) {
            auto [d_lo, d_hi] = d_range_for(n);
            for (int d = d_lo; d <= d_hi; ++d) {
                offer(best[w], n, d, eval_perf_law(params, n, d, d_prime));
                ++counts[w];
            }
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }
    Candidate out;
    for (unsigned w = 0; w < workers; ++w) {
        if (better(best[w], out)) out = best[w];
        evaluated += counts[w];
    }
    return out;
}

std::vector<int> coarse_axis(IntRange r, int stride) {
    std::vector<int> axis;
    for (long long v = r.lo; v <= r.hi; v += stride) axis.push_back(static_cast<int>(v));
    if (axis.back() != r.hi) axis.push_back(r.hi);
    return axis;
}

OptResult finish(const PerfLawParams& params, double d_prime, const Candidate& best, std::uint64_t evaluated) {
    if (!best.valid) throw NumericError("performance law is not finite anywhere in the search space");
    OptResult out;
    out.argmax_n = best.n;
    out.argmax_d = best.d;
    out.predicted = eval_perf_law(params, best.n, best.d, d_prime);
    out.evaluated_points = evaluated;
    return out;
}

}  // namespace

IntRange parse_range(std::string_view text) {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) throw ValidationError("range must be lo:hi, got '" + std::string(text) + "'");
    auto lo = parse_number(text.substr(0, colon), "range bound");
    auto hi = parse_number(text.substr(colon + 1), "range bound");
    if (lo != std::floor(lo) || hi != std::floor(hi) || lo < 1 || hi < lo || hi > 2e9) {
        throw ValidationError("range must satisfy 1 <= lo <= hi (integers), got '" + std::string(text) + "'");
    }
    return {static_cast<int>(lo), static_cast<int>(hi)};
}

Budget parse_budget(std::string_view text) {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw ValidationError("budget must be functional:limit, got '" + std::string(text) + "'");
    }
    auto name = text.substr(0, colon);
    Budget b;
    if (name == "n_times_d") {
        b.functional = BudgetFunctional::n_times_d;
    } else if (name == "n_times_d_squared") {
        b.functional = BudgetFunctional::n_times_d_squared;
    } else {
        throw ValidationError("unknown budget functional '" + std::string(name) + "'");
    }
    b.limit = parse_number(text.substr(colon + 1), "budget limit");
    if (!(b.limit > 0.0)) throw ValidationError("budget limit must be positive");
    return b;
}

std::string_view to_string(BudgetFunctional functional) {
    return functional == BudgetFunctional::n_times_d ? "n_times_d" : "n_times_d_squared";
}

double budget_value(BudgetFunctional functional, int n, int d) {
    const double dn = n, dd = d;
    return functional == BudgetFunctional::n_times_d ? dn * dd : dn * dd * dd;
}

OptResult global_optimum(const PerfLawParams& params, double d_prime, const SearchSpace& space,
                         const SearchOptions& options) {
    check_space(space);
    if (space.budget) throw ValidationError("global_optimum takes a space without a budget");
    if (!(d_prime > 0.0)) throw ValidationError("data parameter must be positive");

    const std::uint64_t grid = space.n_range.size() * space.d_range.size();
    SearchMode mode = options.mode;
    if (mode == SearchMode::automatic) mode = grid > 1'000'000 ? SearchMode::coarse_to_fine : SearchMode::exhaustive;

    std::uint64_t evaluated = 0;
    if (mode == SearchMode::exhaustive) {
        auto full_d = [&](int) { return std::pair{space.d_range.lo, space.d_range.hi}; };
        Candidate best = search_rows(params, d_prime, space.n_range, full_d, options.threads, evaluated);
        return finish(params, d_prime, best, evaluated);
    }

    constexpr int kStride = 8;
    constexpr int kWindow = 16;
    Candidate coarse;
    const auto n_axis = coarse_axis(space.n_range, kStride);
    const auto d_axis = coarse_axis(space.d_range, kStride);
    for (int n : n_axis) {
        for (int d : d_axis) {
            offer(coarse, n, d, eval_perf_law(params, n, d, d_prime));
            ++evaluated;
        }
    }
    if (!coarse.valid) throw NumericError("performance law is not finite anywhere on the coarse grid");
    IntRange n_win{std::max(space.n_range.lo, coarse.n - kWindow), std::min(space.n_range.hi, coarse.n + kWindow)};
    IntRange d_win{std::max(space.d_range.lo, coarse.d - kWindow), std::min(space.d_range.hi, coarse.d + kWindow)};
    auto window_d = [&](int) { return std::pair{d_win.lo, d_win.hi}; };
    Candidate fine = search_rows(params, d_prime, n_win, window_d, 1, evaluated);
    return finish(params, d_prime, better(fine, coarse) ? fine : coarse, evaluated);
}

OptResult constrained_optimum(const PerfLawParams& params, double d_prime, const SearchSpace& space,
                              const SearchOptions& options) {
    check_space(space);
    if (!space.budget) throw ValidationError("constrained_optimum needs a budget");
    if (!(d_prime > 0.0)) throw ValidationError("data parameter must be positive");
    const Budget budget = *space.budget;
    if (!(budget.limit > 0.0)) throw ValidationError("budget limit must be positive");

    // Largest d with budget(n, d) <= limit, or 0 when even d = 1 is infeasible.
    auto max_feasible_d = [&](int n) -> long long {
        double guess = budget.functional == BudgetFunctional::n_times_d ? budget.limit / n
                                                                         : std::sqrt(budget.limit / n);
        long long d = static_cast<long long>(std::min(std::floor(guess), 4e9));
        auto fits = [&](long long v) {
            const double dv = static_cast<double>(v);
            const double cost = budget.functional == BudgetFunctional::n_times_d ? n * dv : n * dv * dv;
            return cost <= budget.limit;
        };
        while (d > 0 && !fits(d)) --d;
        while (fits(d + 1) && d < 4'000'000'000LL) ++d;
        return d;
    };

    auto feasible_d = [&](int n) {
        long long cap = max_feasible_d(n);
        int hi = static_cast<int>(std::min<long long>(space.d_range.hi, cap));
        return std::pair{space.d_range.lo, hi};
    };
    std::uint64_t evaluated = 0;
    Candidate best = search_rows(params, d_prime, space.n_range, feasible_d, options.threads, evaluated);
    if (evaluated == 0) {
        throw ValidationError("infeasible budget: no grid point satisfies " + std::string(to_string(budget.functional)) +
                              " <= " + detail::format_double(budget.limit));
    }
    OptResult out = finish(params, d_prime, best, evaluated);

    std::vector<FrontierPoint> frontier;
    for (int n = space.n_range.lo; n <= space.n_range.hi; ++n) {
        long long cap = max_feasible_d(n);
        if (cap >= space.d_range.lo && cap <= space.d_range.hi) {
            int d = static_cast<int>(cap);
            frontier.push_back({n, d, eval_perf_law(params, n, d, d_prime)});
        }
        if (n == space.n_range.hi) break;  // avoid overflow at INT_MAX
    }
    out.frontier = std::move(frontier);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kPotentialRule =
    "Read w3 and w4 as decay exponents of the layer and width terms. When w1 and w2 are negative, "
    "smaller w3 and w4 mean weaker gains from scaling up; when they are positive the reading flips "
    "and smaller w3 and w4 mean stronger gains.";

std::string reading_for(double w1, double w2) {
    if (w1 < 0.0 && w2 < 0.0) return "negative coefficients: smaller w3/w4 -> weaker scaling potential";
    if (w1 > 0.0 && w2 > 0.0) return "positive coefficients: smaller w3/w4 -> stronger scaling potential";
    return "mixed or zero coefficients: rule does not apply";
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

int compare_key(const PotentialRow& a, const PotentialRow& b) {
    if (a.w4 != b.w4) return a.w4 < b.w4 ? -1 : 1;
    if (a.w3 != b.w3) return a.w3 < b.w3 ? -1 : 1;
    return 0;
}

}  // namespace

PotentialReport scaling_potential(std::span<const PotentialEntry> entries) {
    if (entries.size() < 2) throw ValidationError("scaling-potential comparison needs at least 2 fits");
    PotentialReport report;
    report.rule = std::string(kPotentialRule);
    for (const auto& e : entries) {
        validate(e.params);
        report.rows.push_back({e.label, e.params.w1, e.params.w2, e.params.w3, e.params.w4, e.observed,
                               reading_for(e.params.w1, e.params.w2)});
    }
    std::stable_sort(report.rows.begin(), report.rows.end(),
                     [](const PotentialRow& a, const PotentialRow& b) { return compare_key(a, b) > 0; });

    const bool all_observed =
        std::all_of(report.rows.begin(), report.rows.end(), [](const auto& r) { return r.observed.has_value(); });
    if (!all_observed) return report;

    long long concordant = 0, discordant = 0, key_ties = 0, obs_ties = 0, pairs = 0;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        for (std::size_t j = i + 1; j < report.rows.size(); ++j) {
            ++pairs;
            int k = compare_key(report.rows[i], report.rows[j]);
            int o = sign(*report.rows[i].observed - *report.rows[j].observed);
            if (k == 0) ++key_ties;
            if (o == 0) ++obs_ties;
            if (k == 0 || o == 0) continue;
            (k == o ? concordant : discordant)++;
        }
    }
    const double denom = std::sqrt(static_cast<double>(pairs - key_ties) * static_cast<double>(pairs - obs_ties));
    if (denom == 0.0) {
        report.tau_tied = true;
    } else {
        report.kendall_tau = static_cast<double>(concordant - discordant) / denom;
    }
    return report;
}

std::string render_text(const PotentialReport& report) {
    std::ostringstream out;
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    std::size_t label_w = 5;
    for (const auto& r : report.rows) label_w = std::max(label_w, r.label.size());
    out << pad("label", label_w) << "  " << pad("w3", 10) << "  " << pad("w4", 10) << "  " << pad("w1", 10) << "  "
        << pad("w2", 10) << "  " << pad("observed", 10) << "  reading\n";
    for (const auto& r : report.rows) {
        out << pad(r.label, label_w) << "  " << pad(detail::format_double(r.w3), 10) << "  "
            << pad(detail::format_double(r.w4), 10) << "  " << pad(detail::format_double(r.w1), 10) << "  "
            << pad(detail::format_double(r.w2), 10) << "  "
            << pad(r.observed ? detail::format_double(*r.observed) : "-", 10) << "  " << r.reading << '\n';
    }
    if (report.kendall_tau) {
        out << "kendall tau (w4,w3 ordering vs observed): " << detail::format_double(*report.kendall_tau) << '\n';
    } else if (report.tau_tied) {
        out << "kendall tau: undefined (tie)\n";
    }
    out << "rule: " << report.rule << '\n';
    return out.str();
}

}  // namespace perflaw
