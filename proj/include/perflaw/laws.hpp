#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace perflaw {

// ---------------------------------------------------------------------------
// Loss law

/// L(N, D) = [(Nc/N)^(alphaN/alphaD) + Dc/D]^alphaD
struct FullLossLaw {
    double n_c = 1.0;
    double d_c = 1.0;
    double alpha_n = 0.5;
    double alpha_d = 0.5;
};

/// L(N, D) = E + A/N^alpha + B/D^beta
struct SimplifiedLossLaw {
    double e = 0.0;
    double a = 1.0;
    double b = 1.0;
    double alpha = 0.5;
    double beta = 0.5;
};

using LossLawParams = std::variant<FullLossLaw, SimplifiedLossLaw>;

enum class LossForm { full, simplified };

LossForm parse_loss_form(std::string_view name);
std::string_view to_string(LossForm form);
LossForm form_of(const LossLawParams& params);

/// Throws ValidationError when decay exponents or scales are not positive.
void validate(const LossLawParams& params);

double eval_loss_law(const LossLawParams& params, double n, double d);

/// Chinchilla fit constants (E, A, B, alpha, beta) = (1.61, 406.4, 410.7, 0.34, 0.28).
SimplifiedLossLaw chinchilla_loss_law();

// ---------------------------------------------------------------------------
// Performance law

/// Generalised performance law
///   w1 (ln N + p1 N^-w3) + w2 (ln d + p2 d^-w4) + w6 (ln D' + p3 D'^-w5) + C
/// with N the layer count, d the embedding width and D' the data parameter.
struct PerfLawParams {
    static constexpr std::size_t kSize = 10;

    double w1 = 0.0, w2 = 0.0, w3 = 0.0, w4 = 0.0, w5 = 0.0, w6 = 0.0;
    double p1 = 0.0, p2 = 0.0, p3 = 0.0;
    double c = 0.0;

    /// Order: w1 w2 w3 w4 w5 w6 p1 p2 p3 C.
    std::array<double, kSize> to_array() const;
    static PerfLawParams from_array(std::span<const double> values);

    friend bool operator==(const PerfLawParams&, const PerfLawParams&) = default;
};

/// Parameter names in to_array() order.
std::span<const std::string_view> perf_param_names();
std::optional<std::size_t> perf_param_index(std::string_view name);

/// The original seven-parameter form: one inner amplitude shared by the N and
/// d groups, unit weight on the data group and no intercept,
///   w1 (ln N + p1 N^-w3) + w2 (ln d + p1 d^-w4) + ln D' + p2 D'^-w5.
struct CanonicalPerfLaw {
    double w1 = 0.0, w2 = 0.0, w3 = 0.0, w4 = 0.0, w5 = 0.0;
    double p1 = 0.0, p2 = 0.0;

    PerfLawParams generalize() const;
    double eval(double n_layers, double d_emb, double d_prime) const;
};

/// Throws ValidationError unless every field is finite.
void validate(const PerfLawParams& params);

double eval_perf_law(const PerfLawParams& params, double n_layers, double d_emb, double d_prime);

/// Analytic partial derivatives with respect to each parameter, in to_array() order.
std::array<double, PerfLawParams::kSize> grad_perf_law(const PerfLawParams& params, double n_layers,
                                                       double d_emb, double d_prime);

/// Performance = 1 - k * loss.
double loss_to_performance(double k, double loss);

/// Amplitude times x^-exponent, evaluated as amplitude * exp(-exponent * ln x).
double decay_term(double amplitude, double exponent, double x);

// ---------------------------------------------------------------------------
// Metrics

enum class Metric { loss, hr, ndcg, mrr };

struct MetricKind {
    Metric kind = Metric::loss;
    std::optional<int> k;

    bool is_ranking() const noexcept { return kind != Metric::loss; }
    friend bool operator==(const MetricKind&, const MetricKind&) = default;
};

/// Accepts "loss", "hr", "ndcg", "mrr", optionally with "@k" (e.g. "hr@10").
MetricKind parse_metric(std::string_view text);
std::string_view metric_name(Metric kind);
/// "hr@10", "loss", ...
std::string to_string(const MetricKind& metric);
/// Throws ValidationError when hr/ndcg lack a cutoff.
void validate(const MetricKind& metric);

// ---------------------------------------------------------------------------
// Flat key -> value maps

using ParamMap = std::map<std::string, double>;

ParamMap to_param_map(const PerfLawParams& params);
ParamMap to_param_map(const LossLawParams& params);
/// Missing keys take `defaults`' values; unknown keys are rejected.
PerfLawParams perf_params_from_map(const ParamMap& values, const PerfLawParams& defaults = {});
LossLawParams loss_params_from_map(LossForm form, const ParamMap& values);

std::span<const std::string_view> loss_param_names(LossForm form);

}  // namespace perflaw
