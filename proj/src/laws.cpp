#include "perflaw/laws.hpp"

#include <charconv>
#include <cmath>

#include "perflaw/error.hpp"

namespace perflaw {

namespace {

constexpr std::array<std::string_view, PerfLawParams::kSize> kPerfNames = {"w1", "w2", "w3", "w4", "w5",
                                                                           "w6", "p1", "p2", "p3", "C"};
constexpr std::array<std::string_view, 5> kSimplifiedNames = {"E", "A", "B", "alpha", "beta"};
constexpr std::array<std::string_view, 4> kFullNames = {"Nc", "Dc", "alphaN", "alphaD"};

void require_positive(double value, const char* name) {
    if (!(value > 0.0) || !std::isfinite(value)) {
        throw ValidationError(std::string(name) + " must be a finite positive number");
    }
}

double lookup(const ParamMap& values, std::string_view key) {
    auto it = values.find(std::string(key));
    if (it == values.end()) throw ValidationError("missing parameter '" + std::string(key) + "'");
    return it->second;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss law

LossForm parse_loss_form(std::string_view name) {
    if (name == "full") return LossForm::full;
    if (name == "simplified") return LossForm::simplified;
    throw ValidationError("unknown loss-law form '" + std::string(name) + "' (expected full or simplified)");
}

std::string_view to_string(LossForm form) { return form == LossForm::full ? "full" : "simplified"; }

LossForm form_of(const LossLawParams& params) {
    return std::holds_alternative<FullLossLaw>(params) ? LossForm::full : LossForm::simplified;
}

void validate(const LossLawParams& params) {
    if (const auto* f = std::get_if<FullLossLaw>(&params)) {
        require_positive(f->n_c, "Nc");
        require_positive(f->d_c, "Dc");
        require_positive(f->alpha_n, "alphaN");
        require_positive(f->alpha_d, "alphaD");
        return;
    }
    const auto& s = std::get<SimplifiedLossLaw>(params);
    require_positive(s.alpha, "alpha");
    require_positive(s.beta, "beta");
    if (!std::isfinite(s.e) || !std::isfinite(s.a) || !std::isfinite(s.b)) {
        throw ValidationError("loss-law coefficients must be finite");
    }
}

double eval_loss_law(const LossLawParams& params, double n, double d) {
    if (!(n > 0.0)) throw ValidationError("model size must be positive");
    if (!(d > 0.0)) throw ValidationError("data scale must be positive");
    if (const auto* f = std::get_if<FullLossLaw>(&params)) {
        return std::pow(std::pow(f->n_c / n, f->alpha_n / f->alpha_d) + f->d_c / d, f->alpha_d);
    }
    const auto& s = std::get<SimplifiedLossLaw>(params);
    return s.e + decay_term(s.a, s.alpha, n) + decay_term(s.b, s.beta, d);
}

SimplifiedLossLaw chinchilla_loss_law() { return {1.61, 406.4, 410.7, 0.34, 0.28}; }

// ---------------------------------------------------------------------------
// Performance law

std::array<double, PerfLawParams::kSize> PerfLawParams::to_array() const {
    return {w1, w2, w3, w4, w5, w6, p1, p2, p3, c};
}

PerfLawParams PerfLawParams::from_array(std::span<const double> v) {
    if (v.size() != kSize) throw ValidationError("performance law needs exactly 10 parameters");
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
}

std::span<const std::string_view> perf_param_names() { return kPerfNames; }

std::optional<std::size_t> perf_param_index(std::string_view name) {
    for (std::size_t i = 0; i < kPerfNames.size(); ++i) {
        if (kPerfNames[i] == name) return i;
    }
    return std::nullopt;
}

PerfLawParams CanonicalPerfLaw::generalize() const {
    PerfLawParams g;
    g.w1 = w1;
    g.w2 = w2;
    g.w3 = w3;
    g.w4 = w4;
    g.w5 = w5;
    g.w6 = 1.0;
    g.p1 = p1;
    g.p2 = p1;
    g.p3 = p2;
    g.c = 0.0;
    return g;
}

double CanonicalPerfLaw::eval(double n_layers, double d_emb, double d_prime) const {
    return w1 * (std::log(n_layers) + decay_term(p1, w3, n_layers)) +
           w2 * (std::log(d_emb) + decay_term(p1, w4, d_emb)) + (std::log(d_prime) + decay_term(p2, w5, d_prime));
}

void validate(const PerfLawParams& params) {
    for (std::size_t i = 0; auto v : params.to_array()) {
        if (!std::isfinite(v)) {
            throw ValidationError("performance-law parameter " + std::string(kPerfNames[i]) + " is not finite");
        }
        ++i;
    }
}

double decay_term(double amplitude, double exponent, double x) {
    if (amplitude == 0.0) return 0.0;
    return amplitude * std::exp(-exponent * std::log(x));
}

namespace {

void check_perf_args(double n_layers, double d_emb, double d_prime) {
    if (!(n_layers > 0.0)) throw ValidationError("layer count must be positive");
    if (!(d_emb > 0.0)) throw ValidationError("embedding dimension must be positive");
    if (!(d_prime > 0.0)) throw ValidationError("data parameter must be positive");
}

}  // namespace

double eval_perf_law(const PerfLawParams& p, double n_layers, double d_emb, double d_prime) {
    check_perf_args(n_layers, d_emb, d_prime);
    return p.w1 * (std::log(n_layers) + decay_term(p.p1, p.w3, n_layers)) +
           p.w2 * (std::log(d_emb) + decay_term(p.p2, p.w4, d_emb)) +
           p.w6 * (std::log(d_prime) + decay_term(p.p3, p.w5, d_prime)) + p.c;
}

std::array<double, PerfLawParams::kSize> grad_perf_law(const PerfLawParams& p, double n_layers, double d_emb,
                                                       double d_prime) {
    check_perf_args(n_layers, d_emb, d_prime);
    const double ln_n = std::log(n_layers), ln_d = std::log(d_emb), ln_dp = std::log(d_prime);
    const double pow_n = std::exp(-p.w3 * ln_n);  // N^-w3
    const double pow_d = std::exp(-p.w4 * ln_d);
    const double pow_dp = std::exp(-p.w5 * ln_dp);
    std::array<double, PerfLawParams::kSize> g{};
    g[0] = ln_n + p.p1 * pow_n;               // w1
    g[1] = ln_d + p.p2 * pow_d;               // w2
    g[2] = -p.w1 * p.p1 * ln_n * pow_n;       // w3
    g[3] = -p.w2 * p.p2 * ln_d * pow_d;       // w4
    g[4] = -p.w6 * p.p3 * ln_dp * pow_dp;     // w5
    g[5] = ln_dp + p.p3 * pow_dp;             // w6
    g[6] = p.w1 * pow_n;                      // p1
    g[7] = p.w2 * pow_d;                      // p2
    g[8] = p.w6 * pow_dp;                     // p3
    g[9] = 1.0;                               // C
    return g;
}

double loss_to_performance(double k, double loss) { return 1.0 - k * loss; }

// ---------------------------------------------------------------------------
// Metrics

MetricKind parse_metric(std::string_view text) {
    MetricKind m;
    std::string_view name = text;
    if (auto at = text.find('@'); at != std::string_view::npos) {
        name = text.substr(0, at);
        auto digits = text.substr(at + 1);
        int k = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
        if (ec != std::errc{} || ptr != digits.data() + digits.size() || k < 1) {
            throw ValidationError("invalid metric cutoff in '" + std::string(text) + "'");
        }
        m.k = k;
    }
    if (name == "loss") {
        m.kind = Metric::loss;
    } else if (name == "hr") {
        m.kind = Metric::hr;
    } else if (name == "ndcg") {
        m.kind = Metric::ndcg;
    } else if (name == "mrr") {
        m.kind = Metric::mrr;
    } else {
        throw ValidationError("unknown metric '" + std::string(name) + "' (expected loss, hr, ndcg or mrr)");
    }
    return m;
}

std::string_view metric_name(Metric kind) {
    switch (kind) {
        case Metric::loss: return "loss";
        case Metric::hr: return "hr";
        case Metric::ndcg: return "ndcg";
        case Metric::mrr: return "mrr";
    }
    return "loss";
}

std::string to_string(const MetricKind& metric) {
    std::string s(metric_name(metric.kind));
    if (metric.k) s += "@" + std::to_string(*metric.k);
    return s;
}

void validate(const MetricKind& metric) {
    if ((metric.kind == Metric::hr || metric.kind == Metric::ndcg) && !metric.k) {
        throw ValidationError(std::string(metric_name(metric.kind)) + " requires a cutoff k");
    }
    if (metric.k && *metric.k < 1) throw ValidationError("metric cutoff must be >= 1");
}

// ---------------------------------------------------------------------------
// Maps

ParamMap to_param_map(const PerfLawParams& params) {
    ParamMap out;
    auto values = params.to_array();
    for (std::size_t i = 0; i < values.size(); ++i) out[std::string(kPerfNames[i])] = values[i];
    return out;
}

ParamMap to_param_map(const LossLawParams& params) {
    if (const auto* f = std::get_if<FullLossLaw>(&params)) {
        return {{"Nc", f->n_c}, {"Dc", f->d_c}, {"alphaN", f->alpha_n}, {"alphaD", f->alpha_d}};
    }
    const auto& s = std::get<SimplifiedLossLaw>(params);
    return {{"E", s.e}, {"A", s.a}, {"B", s.b}, {"alpha", s.alpha}, {"beta", s.beta}};
}

PerfLawParams perf_params_from_map(const ParamMap& values, const PerfLawParams& defaults) {
    auto arr = defaults.to_array();
    for (const auto& [key, value] : values) {
        auto idx = perf_param_index(key);
        if (!idx) throw ValidationError("unknown performance-law parameter '" + key + "'");
        arr[*idx] = value;
    }
    return PerfLawParams::from_array(arr);
}

LossLawParams loss_params_from_map(LossForm form, const ParamMap& values) {
    for (const auto& [key, value] : values) {
        bool known = false;
        for (auto name : loss_param_names(form)) known = known || name == key;
        if (!known) throw ValidationError("unknown " + std::string(to_string(form)) + " loss-law parameter '" + key + "'");
    }
    if (form == LossForm::full) {
        return FullLossLaw{lookup(values, "Nc"), lookup(values, "Dc"), lookup(values, "alphaN"),
                           lookup(values, "alphaD")};
    }
    return SimplifiedLossLaw{lookup(values, "E"), lookup(values, "A"), lookup(values, "B"), lookup(values, "alpha"),
                             lookup(values, "beta")};
}

std::span<const std::string_view> loss_param_names(LossForm form) {
    if (form == LossForm::full) return kFullNames;
    return kSimplifiedNames;
}

}  // namespace perflaw
