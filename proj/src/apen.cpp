#include "perflaw/apen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <unordered_map>

#include "perflaw/error.hpp"
#include "text_util.hpp"

namespace perflaw {

DegenerateApEnError::DegenerateApEnError(double apen)
    : NumericError("degenerate sequence: ApEn ≈ 0 (" + detail::format_double(apen) + "), ApEn' undefined"),
      apen_(apen) {}

namespace {

// Exact equivalence classes of windows, built level by level: a (k+1)-window
// is identified by (class of its k-prefix, next symbol). No hash collisions
// can merge distinct windows.
class WindowIndex {
public:
    explicit WindowIndex(std::span<const InteractionSequence> seqs) {
        std::unordered_map<ItemId, std::uint32_t> dense;
        for (const auto& s : seqs) {
            starts_.push_back(symbols_.size());
            for (ItemId id : s.items()) {
                auto [it, inserted] = dense.try_emplace(id, static_cast<std::uint32_t>(dense.size()));
                symbols_.push_back(it->second);
            }
        }
        starts_.push_back(symbols_.size());
        classes_ = symbols_;
        num_classes_ = dense.size();
        level_ = 1;
    }

    // Moves class labels from windows of length level_ to level_ + 1.
    void extend() {
        std::unordered_map<std::uint64_t, std::uint32_t> ids;
        ids.reserve(classes_.size());
        for (std::size_t s = 0; s + 1 < starts_.size(); ++s) {
            const std::size_t begin = starts_[s], end = starts_[s + 1];
            for (std::size_t pos = begin; pos + level_ < end; ++pos) {
                std::uint64_t key = (static_cast<std::uint64_t>(classes_[pos]) << 32) | symbols_[pos + level_];
                auto [it, inserted] = ids.try_emplace(key, static_cast<std::uint32_t>(ids.size()));
                classes_[pos] = it->second;
            }
        }
        num_classes_ = ids.size();
        ++level_;
    }

    void extend_to(int length) {
        while (level_ < static_cast<std::size_t>(length)) extend();
    }

    template <typename Fn>
    void for_each_window(Fn&& fn) const {
        for (std::size_t s = 0; s + 1 < starts_.size(); ++s) {
            const std::size_t begin = starts_[s], end = starts_[s + 1];
            for (std::size_t pos = begin; pos + level_ <= end; ++pos) fn(classes_[pos]);
        }
    }

    // Window count and per-class multiplicities at the current level.
    std::pair<std::uint64_t, std::vector<std::uint64_t>> class_counts() const {
        std::vector<std::uint64_t> counts(num_classes_, 0);
        std::uint64_t total = 0;
        for_each_window([&](std::uint32_t c) {
            ++counts[c];
            ++total;
        });
        return {total, std::move(counts)};
    }

private:
    std::vector<std::uint32_t> symbols_;
    std::vector<std::uint32_t> classes_;
    std::vector<std::size_t> starts_;
    std::size_t num_classes_ = 0;
    std::size_t level_ = 0;
};

// Mean over windows of ln C_i, grouped by class: (1/W) sum_c c ln(c/W).
// Classes are visited in first-occurrence order, so the sum order is fixed.
double phi(std::uint64_t total, std::span<const std::uint64_t> counts) {
    const double w = static_cast<double>(total);
    double acc = 0.0;
    for (std::uint64_t c : counts) {
        if (c == 0) continue;
        const double dc = static_cast<double>(c);
        acc += dc * std::log(dc / w);
    }
    return acc / w;
}

void check_config(const ApEnConfig& cfg) {
    if (cfg.m < 1) throw ValidationError("ApEn window length m must be >= 1");
    if (!(cfg.r >= 0.0)) throw ValidationError("ApEn tolerance r must be >= 0");
    if (cfg.r > 0.0) throw ValidationError("ApEn tolerance r > 0 is not supported; item ids match exactly");
}

ApEnResult pooled_apen(std::span<const InteractionSequence> seqs, int m) {
    WindowIndex index(seqs);
    index.extend_to(m);
    auto [total_m, counts_m] = index.class_counts();
    index.extend();
    auto [total_m1, counts_m1] = index.class_counts();
    if (total_m1 == 0) {
        throw ValidationError("no sequence is long enough for windows of length " + std::to_string(m + 1));
    }
    ApEnResult r;
    r.windows_m = total_m;
    r.windows_m1 = total_m1;
    r.phi_m = phi(total_m, counts_m);
    r.phi_m1 = phi(total_m1, counts_m1);
    r.apen = r.phi_m - r.phi_m1;
    return r;
}

}  // namespace

Pooling parse_pooling(std::string_view name) {
    if (name == "pooled") return Pooling::pooled;
    if (name == "per_sequence_weighted" || name == "weighted") return Pooling::per_sequence_weighted;
    throw ValidationError("unknown pooling '" + std::string(name) + "' (expected pooled or per_sequence_weighted)");
}

std::string_view to_string(Pooling pooling) {
    return pooling == Pooling::pooled ? "pooled" : "per_sequence_weighted";
}

std::vector<std::uint64_t> window_match_counts(std::span<const InteractionSequence> seqs, int m) {
    if (m < 1) throw ValidationError("window length must be >= 1");
    WindowIndex index(seqs);
    index.extend_to(m);
    auto [total, counts] = index.class_counts();
    std::vector<std::uint64_t> out;
    out.reserve(total);
    index.for_each_window([&](std::uint32_t c) { out.push_back(counts[c]); });
    return out;
}

double phi_from_counts(std::span<const std::uint64_t> counts) {
    if (counts.empty()) throw ValidationError("no windows");
    const double w = static_cast<double>(counts.size());
    double acc = 0.0;
    for (std::uint64_t c : counts) acc += std::log(static_cast<double>(c) / w);
    return acc / w;
}

ApEnResult compute_apen(std::span<const InteractionSequence> seqs, const ApEnConfig& cfg) {
    check_config(cfg);
    if (cfg.pooling == Pooling::pooled) return pooled_apen(seqs, cfg.m);

    // Token-weighted mean of per-sequence ApEn over sequences with at least one
    // (m+1)-window.
    ApEnResult out;
    double weight_sum = 0.0, phi_m = 0.0, phi_m1 = 0.0;
    const auto min_len = static_cast<std::size_t>(cfg.m) + 1;
    for (const auto& s : seqs) {
        if (s.size() < min_len) continue;
        ApEnResult r = pooled_apen(std::span(&s, 1), cfg.m);
        const double w = static_cast<double>(s.size());
        phi_m += w * r.phi_m;
        phi_m1 += w * r.phi_m1;
        weight_sum += w;
        out.windows_m += r.windows_m;
        out.windows_m1 += r.windows_m1;
    }
    if (weight_sum == 0.0) {
        throw ValidationError("no sequence is long enough for windows of length " + std::to_string(cfg.m + 1));
    }
    out.phi_m = phi_m / weight_sum;
    out.phi_m1 = phi_m1 / weight_sum;
    out.apen = out.phi_m - out.phi_m1;
    return out;
}

double apen_prime(double apen, double epsilon) {
    if (!(apen > epsilon)) throw DegenerateApEnError(apen);
    return 1.0 / apen;
}

double data_parameter(std::size_t tokens, double apen, double epsilon) {
    if (tokens < 1) throw ValidationError("token count must be >= 1");
    if (!(apen > epsilon)) throw DegenerateApEnError(apen);
    return static_cast<double>(tokens) / apen;
}

// ---------------------------------------------------------------------------
// Markov chains

MarkovChain::MarkovChain(std::size_t states, std::vector<double> transition,
                         std::optional<std::vector<double>> stationary)
    : states_(states), transition_(std::move(transition)), stationary_(std::move(stationary)) {
    if (states_ == 0) throw ValidationError("Markov chain needs at least one state");
    if (transition_.size() != states_ * states_) {
        throw ValidationError("transition matrix has " + std::to_string(transition_.size()) + " entries, expected " +
                              std::to_string(states_ * states_));
    }
    for (std::size_t x = 0; x < states_; ++x) {
        double row = 0.0;
        for (std::size_t y = 0; y < states_; ++y) {
            double v = p(x, y);
            if (!(v >= 0.0 && v <= 1.0)) {
                throw ValidationError("transition probability out of [0,1] at row " + std::to_string(x));
            }
            row += v;
        }
        if (std::abs(row - 1.0) > 1e-12) {
            throw ValidationError("transition row " + std::to_string(x) + " sums to " + std::to_string(row));
        }
    }
    if (stationary_) {
        const auto& pi = *stationary_;
        if (pi.size() != states_) throw ValidationError("stationary distribution has wrong length");
        double sum = 0.0;
        for (double v : pi) {
            if (!(v >= 0.0)) throw ValidationError("stationary distribution has a negative entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("stationary distribution does not sum to 1");
        for (std::size_t y = 0; y < states_; ++y) {
            double v = 0.0;
            for (std::size_t x = 0; x < states_; ++x) v += pi[x] * p(x, y);
            if (std::abs(v - pi[y]) > 1e-9) throw ValidationError("stationary distribution is not invariant under P");
        }
    }
}

MarkovChain MarkovChain::uniform(std::size_t states) {
    if (states == 0) throw ValidationError("Markov chain needs at least one state");
    std::vector<double> p(states * states, 1.0 / static_cast<double>(states));
    // Rounding can leave a row sum a few ulps away from one; fix the last column.
    for (std::size_t x = 0; x < states; ++x) {
        double rest = 0.0;
        for (std::size_t y = 0; y + 1 < states; ++y) rest += p[x * states + y];
        p[x * states + states - 1] = 1.0 - rest;
    }
    return MarkovChain(states, std::move(p));
}

namespace {

// A stochastic matrix is primitive iff P^k > 0 for k = (n-1)^2 + 1 (Wielandt).
// Rows of P are never all-zero, so positivity of P^j implies it for all higher
// powers and repeated squaring reaches a sufficient exponent.
bool is_primitive(const MarkovChain& chain) {
    const std::size_t n = chain.states();
    std::vector<char> pattern(n * n);
    for (std::size_t i = 0; i < n * n; ++i) pattern[i] = chain.transition()[i] > 0.0;
    const std::size_t bound = (n - 1) * (n - 1) + 1;
    std::size_t power = 1;
    while (true) {
        if (std::all_of(pattern.begin(), pattern.end(), [](char c) { return c != 0; })) return true;
        if (power >= bound) return false;
        std::vector<char> next(n * n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < n; ++k) {
                if (!pattern[i * n + k]) continue;
                for (std::size_t j = 0; j < n; ++j) next[i * n + j] |= pattern[k * n + j];
            }
        }
        pattern.swap(next);
        power *= 2;
    }
}

}  // namespace

std::vector<double> stationary_distribution(const MarkovChain& chain) {
    if (!is_primitive(chain)) {
        throw NumericError("stationary distribution not unique: chain is reducible or periodic");
    }
    const std::size_t n = chain.states();
    std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
    constexpr int kMaxIterations = 10'000'000;
    for (int iter = 0; iter < kMaxIterations; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t x = 0; x < n; ++x) {
            for (std::size_t y = 0; y < n; ++y) next[y] += pi[x] * chain.p(x, y);
        }
        double sum = 0.0;
        for (double v : next) sum += v;
        double residual = 0.0;
        for (std::size_t y = 0; y < n; ++y) {
            next[y] /= sum;
            residual = std::max(residual, std::abs(next[y] - pi[y]));
        }
        pi.swap(next);
        if (residual < 1e-12) return pi;
    }
    throw NumericError("power iteration for the stationary distribution did not converge");
}

double markov_apen(const MarkovChain& chain) {
    const std::vector<double> pi = chain.stationary() ? *chain.stationary() : stationary_distribution(chain);
    double h = 0.0;
    for (std::size_t x = 0; x < chain.states(); ++x) {
        double row = 0.0;
        for (std::size_t y = 0; y < chain.states(); ++y) {
            double p = chain.p(x, y);
            if (p > 0.0) row -= p * std::log(p);
        }
        h += pi[x] * row;
    }
    return h == 0.0 ? 0.0 : h;
}

namespace {

std::size_t sample_index(std::span<const double> probs, double u) {
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // state with nonzero probability.
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) return i;
    }
    return probs.size() - 1;
}

}  // namespace

InteractionSequence generate_markov(const MarkovChain& chain, std::size_t length, std::uint64_t seed,
                                    std::string user_id) {
    if (length < 1) throw ValidationError("sequence length must be >= 1");
    const std::vector<double> pi = chain.stationary() ? *chain.stationary() : stationary_distribution(chain);
    std::mt19937_64 rng(seed);
    auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    const std::size_t k = chain.states();
    std::vector<ItemId> items;
    items.reserve(length);
    std::size_t state = sample_index(pi, uniform());
    items.push_back(static_cast<ItemId>(state + 1));
    for (std::size_t t = 1; t < length; ++t) {
        state = sample_index(chain.transition().subspan(state * k, k), uniform());
        items.push_back(static_cast<ItemId>(state + 1));
    }
    return InteractionSequence(std::move(user_id), std::move(items));
}

EncodingBoundReport verify_encoding_bound(std::span<const InteractionSequence> seqs, const ApEnConfig& cfg,
                                          double epsilon) {
    EncodingBoundReport report;
    const DatasetStats stats = compute_stats(seqs);
    report.num_users = stats.num_users;
    report.tokens = stats.tokens;
    report.s_max = stats.s_max;
    report.users_exceed_s_max = stats.num_users > stats.s_max;
    report.sequence_entropy = sequence_distribution_entropy(seqs);
    report.lhs = static_cast<double>(stats.num_users) * report.sequence_entropy;

    check_config(cfg);
    const auto min_len = static_cast<std::size_t>(cfg.m) + 1;
    if (std::none_of(seqs.begin(), seqs.end(), [&](const auto& s) { return s.size() >= min_len; })) {
        // Every sequence is shorter than m + 1: no ApEn to speak of.
        report.degenerate = true;
        return report;
    }
    report.apen = compute_apen(seqs, cfg).apen;
    if (!(report.apen > epsilon)) {
        report.degenerate = true;
        return report;
    }
    report.rhs = static_cast<double>(stats.tokens) * apen_prime(report.apen, epsilon);
    report.holds = report.lhs >= *report.rhs;
    return report;
}

}  // namespace perflaw
