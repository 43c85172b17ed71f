#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "perflaw/dataset.hpp"

namespace perflaw {

inline constexpr double kDefaultApEnEpsilon = 1e-9;

enum class Pooling { pooled, per_sequence_weighted };

Pooling parse_pooling(std::string_view name);
std::string_view to_string(Pooling pooling);

struct ApEnConfig {
    int m = 1;       // window length
    double r = 0.0;  // match tolerance; only exact matching (r = 0) is supported
    Pooling pooling = Pooling::pooled;
};

/// Approximate entropy of interaction data, in nats. `apen` is always exactly
/// `phi_m - phi_m1`. Small negative values are possible on short inputs.
struct ApEnResult {
    double apen = 0.0;
    std::uint64_t windows_m = 0;
    std::uint64_t windows_m1 = 0;
    double phi_m = 0.0;
    double phi_m1 = 0.0;
};

/// For every length-`m` window of the pooled corpus (sequence order, then
/// position), the number of windows identical to it, itself included.
/// Windows never cross sequence boundaries.
std::vector<std::uint64_t> window_match_counts(std::span<const InteractionSequence> seqs, int m);

/// Mean of ln(count / total) over all windows, from per-window match counts.
double phi_from_counts(std::span<const std::uint64_t> counts);

ApEnResult compute_apen(std::span<const InteractionSequence> seqs, const ApEnConfig& cfg = {});

/// ApEn' = 1 / ApEn. Throws DegenerateApEnError when apen <= epsilon.
double apen_prime(double apen, double epsilon = kDefaultApEnEpsilon);

/// Quality-adjusted data scale D' = tokens * ApEn'.
double data_parameter(std::size_t tokens, double apen, double epsilon = kDefaultApEnEpsilon);

/// First-order Markov chain over states 1..k, row-major transition matrix.
class MarkovChain {
public:
    /// Validates that `transition` is k x k and row-stochastic (1e-12), and, when
    /// given, that `stationary` sums to one and satisfies pi P = pi (1e-9).
    MarkovChain(std::size_t states, std::vector<double> transition,
                std::optional<std::vector<double>> stationary = std::nullopt);

    std::size_t states() const noexcept { return states_; }
    std::span<const double> transition() const noexcept { return transition_; }
    double p(std::size_t from, std::size_t to) const { return transition_[from * states_ + to]; }
    const std::optional<std::vector<double>>& stationary() const noexcept { return stationary_; }

    static MarkovChain uniform(std::size_t states);

private:
    std::size_t states_;
    std::vector<double> transition_;
    std::optional<std::vector<double>> stationary_;
};

/// Power iteration to a 1e-12 residual. Throws NumericError when the chain is
/// not primitive (irreducible and aperiodic).
std::vector<double> stationary_distribution(const MarkovChain& chain);

/// Entropy rate -sum_x pi(x) sum_y p_xy ln p_xy, the limiting ApEn of the chain.
double markov_apen(const MarkovChain& chain);

/// Samples a trajectory; the initial state is drawn from pi. Item ids are 1..k.
InteractionSequence generate_markov(const MarkovChain& chain, std::size_t length, std::uint64_t seed,
                                    std::string user_id = "markov");

struct EncodingBoundReport {
    double lhs = 0.0;            // |U| * H(S)
    std::optional<double> rhs;   // tokens * ApEn'; absent when degenerate
    std::optional<bool> holds;   // lhs >= rhs; absent when degenerate
    bool degenerate = false;
    bool users_exceed_s_max = false;
    double apen = 0.0;
    double sequence_entropy = 0.0;
    std::size_t num_users = 0;
    std::size_t tokens = 0;
    std::size_t s_max = 0;
};

/// Numeric diagnostic for |U| L(C) >= tokens * ApEn', with L(C) replaced by its
/// lower bound, the empirical sequence-distribution entropy. Never throws on
/// degenerate data; reports it instead.
EncodingBoundReport verify_encoding_bound(std::span<const InteractionSequence> seqs, const ApEnConfig& cfg = {},
                                          double epsilon = kDefaultApEnEpsilon);

}  // namespace perflaw
