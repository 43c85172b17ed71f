#include "perflaw/fitting.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <thread>
#include <tuple>

#include "perflaw/error.hpp"

namespace perflaw {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// How a parameter is bounded and how random starts are drawn for it.
enum class ParamKind {
    coefficient,  // signed, [-1e3, 1e3]
    amplitude,    // signed or non-negative, magnitude log-uniform in [1e-3, 1e3]
    exponent,     // signed or positive, [-32, 32]
    log_scale,    // fitted as its natural log
};

struct ParamSpec {
    std::string name;
    ParamKind kind;
    double lower;
    double upper;
    bool overridden = false;
};

constexpr double kCoefBound = 1e3;
constexpr double kAmpMin = 1e-3;
constexpr double kExpBound = 32.0;
constexpr double kLogScaleLo = -13.8;  // ln 1e-6
constexpr double kLogScaleHi = 46.1;   // ln 1e20

ParamSpec coefficient(std::string name) { return {std::move(name), ParamKind::coefficient, -kCoefBound, kCoefBound}; }
ParamSpec signed_amplitude(std::string name) { return {std::move(name), ParamKind::amplitude, -kCoefBound, kCoefBound}; }
ParamSpec positive_amplitude(std::string name) { return {std::move(name), ParamKind::amplitude, 0.0, kCoefBound}; }
ParamSpec signed_exponent(std::string name) { return {std::move(name), ParamKind::exponent, -kExpBound, kExpBound}; }
ParamSpec positive_exponent(std::string name) { return {std::move(name), ParamKind::exponent, 1e-6, kExpBound}; }
ParamSpec log_scale(std::string name) { return {std::move(name), ParamKind::log_scale, kLogScaleLo, kLogScaleHi}; }

double draw(const ParamSpec& spec, std::mt19937_64& rng) {
    auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    auto log_uniform = [&](double lo, double hi) { return std::exp(std::log(lo) + unit() * (std::log(hi) - std::log(lo))); };
    if (spec.overridden) return spec.lower + unit() * (spec.upper - spec.lower);
    switch (spec.kind) {
        case ParamKind::coefficient:
        case ParamKind::amplitude: {
            double mag = log_uniform(kAmpMin, kCoefBound);
            bool negative = spec.lower < 0.0 && unit() < 0.5;
            return negative ? -mag : mag;
        }
        case ParamKind::exponent: {
            double mag = log_uniform(kAmpMin, kExpBound);
            bool negative = spec.lower < 0.0 && unit() < 0.5;
            return negative ? -mag : std::max(mag, spec.lower);
        }
        case ParamKind::log_scale:
            return spec.lower + unit() * (spec.upper - spec.lower);
    }
    return 0.0;
}

// A law laid out for the solver: parameter specs plus a per-point predictor
// over the internal parameter vector.
struct FitModel {
    std::vector<ParamSpec> specs;
    std::function<VectorXd(const VectorXd&)> predict;
    JacobianFn jacobian;                  // of predictions; empty for finite differences
    std::optional<std::size_t> intercept;  // additive constant, re-centred on each start
};

struct StartOutcome {
    SolveResult solve;
    bool ok = false;
};

struct MultiStartResult {
    SolveResult best;
    std::size_t start_index = 0;
};

MultiStartResult run_multistart(const FitModel& model, const VectorXd& observed, const VectorXd& init,
                                const std::vector<bool>& frozen, const MultiStartOptions& options) {
    const auto n = static_cast<Eigen::Index>(model.specs.size());
    ParamBounds bounds{VectorXd(n), VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        bounds.lower[i] = model.specs[static_cast<std::size_t>(i)].lower;
        bounds.upper[i] = model.specs[static_cast<std::size_t>(i)].upper;
        if (frozen[static_cast<std::size_t>(i)]) bounds.lower[i] = bounds.upper[i] = init[i];
    }
    auto clamp_to_bounds = [&](VectorXd v) {
        for (Eigen::Index i = 0; i < n; ++i) v[i] = std::clamp(v[i], bounds.lower[i], bounds.upper[i]);
        return v;
    };

    ResidualFn residual = [&](const VectorXd& p) -> VectorXd { return model.predict(p) - observed; };
    JacobianFn jacobian;
    if (model.jacobian) jacobian = model.jacobian;

    const auto free_count = static_cast<Eigen::Index>(std::count(frozen.begin(), frozen.end(), false));
    if (observed.size() < free_count) {
        throw ValidationError("underdetermined: " + std::to_string(observed.size()) + " observations for " +
                              std::to_string(free_count) + " free parameters");
    }

    // Starts are drawn up front in index order so threading cannot change them.
    const std::size_t count = std::max<std::size_t>(options.starts, 1);
    std::vector<VectorXd> starts;
    starts.reserve(count);
    std::mt19937_64 rng(options.seed);
    starts.push_back(clamp_to_bounds(init));
    for (std::size_t s = 1; s < count; ++s) {
        VectorXd v = init;
        for (Eigen::Index i = 0; i < n; ++i) {
            double sample = draw(model.specs[static_cast<std::size_t>(i)], rng);
            if (!frozen[static_cast<std::size_t>(i)]) v[i] = sample;
        }
        starts.push_back(clamp_to_bounds(v));
    }
    // Re-centre the intercept so each start begins with zero mean residual.
    if (model.intercept && !frozen[*model.intercept]) {
        const auto ic = static_cast<Eigen::Index>(*model.intercept);
        for (auto& v : starts) {
            VectorXd pred = model.predict(v);
            if (!pred.allFinite()) continue;
            v[ic] = std::clamp(v[ic] - (pred - observed).mean(), bounds.lower[ic], bounds.upper[ic]);
        }
    }

    std::vector<StartOutcome> outcomes(count);
    auto run_one = [&](std::size_t s) {
        try {
            outcomes[s].solve = least_squares(residual, jacobian, starts[s], bounds, frozen, options.solver);
            outcomes[s].ok = std::isfinite(outcomes[s].solve.rss);
        } catch (const Error&) {
            outcomes[s].ok = false;  // start landed where the law is not finite
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(count)));
    if (threads == 1) {
        for (std::size_t s = 0; s < count; ++s) run_one(s);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t s = next++; s < count; s = next++) run_one(s);
            });
        }
    }

    // Lowest RSS wins; results within 1e-12 of the incumbent keep the earlier start.
    std::optional<MultiStartResult> best;
    for (std::size_t s = 0; s < count; ++s) {
        if (!outcomes[s].ok) continue;
        if (!best || outcomes[s].solve.rss < best->best.rss - 1e-12) best = MultiStartResult{outcomes[s].solve, s};
    }
    if (!best) throw NumericError("every multi-start run failed to produce a finite fit");
    return *best;
}

std::vector<bool> frozen_mask(const std::vector<ParamSpec>& specs, const std::map<std::string, double>& frozen,
                              VectorXd& init, const std::vector<std::string>& transformed_logs) {
    std::vector<bool> mask(specs.size(), false);
    for (const auto& [name, value] : frozen) {
        auto it = std::find_if(specs.begin(), specs.end(), [&](const ParamSpec& s) { return s.name == name; });
        if (it == specs.end()) throw ValidationError("cannot freeze unknown parameter '" + name + "'");
        auto i = static_cast<std::size_t>(it - specs.begin());
        mask[i] = true;
        bool is_log = std::find(transformed_logs.begin(), transformed_logs.end(), name) != transformed_logs.end();
        if (is_log && !(value > 0.0)) throw ValidationError("frozen value of '" + name + "' must be positive");
        init[static_cast<Eigen::Index>(i)] = is_log ? std::log(value) : value;
    }
    return mask;
}

void apply_bounds(std::vector<ParamSpec>& specs, const BoundsOverrides& overrides,
                  const std::vector<std::string>& transformed_logs) {
    for (const auto& [name, range] : overrides) {
        const bool is_data = name.rfind("D:", 0) == 0;
        const std::string key = is_data ? "ln" + name : name;
        auto it = std::find_if(specs.begin(), specs.end(), [&](const ParamSpec& s) { return s.name == key; });
        if (it == specs.end()) throw ValidationError("cannot bound unknown parameter '" + name + "'");
        if (!(range.lower <= range.upper) || !std::isfinite(range.lower) || !std::isfinite(range.upper)) {
            throw ValidationError("bounds for '" + name + "' must be finite with lower <= upper");
        }
        const bool is_log = is_data || std::find(transformed_logs.begin(), transformed_logs.end(), name) !=
                                           transformed_logs.end();
        if (is_log) {
            if (!(range.lower > 0.0)) throw ValidationError("bounds for '" + name + "' must be positive");
            it->lower = std::log(range.lower);
            it->upper = std::log(range.upper);
        } else {
            it->lower = range.lower;
            it->upper = range.upper;
        }
        it->overridden = true;
    }
}

std::vector<std::string> dataset_ids(std::span<const RunRecord> runs) {
    std::vector<std::string> ids;
    for (const auto& r : runs) {
        if (std::find(ids.begin(), ids.end(), r.dataset_id) == ids.end()) ids.push_back(r.dataset_id);
    }
    return ids;
}

std::vector<std::size_t> dataset_index(std::span<const RunRecord> runs, const std::vector<std::string>& ids) {
    std::vector<std::size_t> idx;
    idx.reserve(runs.size());
    for (const auto& r : runs) {
        idx.push_back(static_cast<std::size_t>(std::find(ids.begin(), ids.end(), r.dataset_id) - ids.begin()));
    }
    return idx;
}

double initial_log_scale(std::span<const RunRecord> runs, const std::string& id) {
    for (const auto& r : runs) {
        if (r.dataset_id == id && r.d_prime) return std::log(*r.d_prime);
    }
    return std::log(1e6);
}

void require_frozen(const std::map<std::string, double>& frozen, std::initializer_list<const char*> names,
                    const char* why) {
    for (const char* name : names) {
        if (!frozen.contains(name)) {
            throw ValidationError(std::string("fitted data scale requires frozen '") + name + "' (" + why + ")");
        }
    }
}

VectorXd observed_values(std::span<const RunRecord> runs) {
    VectorXd y(static_cast<Eigen::Index>(runs.size()));
    for (std::size_t i = 0; i < runs.size(); ++i) y[static_cast<Eigen::Index>(i)] = runs[i].value;
    return y;
}

// R^2 is undefined on constant data; fail before spending the multi-start budget.
// R^2 of a finished fit. Constant observations leave it undefined; a fit
// that reproduces them within rounding scores 1, anything else 0.
double fit_r_squared(std::span<const double> obs, std::span<const double> prd) {
    const auto [lo, hi] = std::minmax_element(obs.begin(), obs.end());
    if (*lo != *hi) return r_squared(obs, prd);
    double worst = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) worst = std::max(worst, std::abs(obs[i] - prd[i]));
    return worst <= 1e-8 * std::max(1.0, std::abs(*lo)) ? 1.0 : 0.0;
}

std::vector<std::string> frozen_names(const std::map<std::string, double>& frozen) {
    std::vector<std::string> names;
    for (const auto& [k, v] : frozen) names.push_back(k);
    return names;
}

}  // namespace

// ---------------------------------------------------------------------------

void validate(const RunRecord& run) {
    if (run.dataset_id.empty()) throw ValidationError("run has an empty dataset_id");
    if (run.n_layers < 1) throw ValidationError("n_layers must be >= 1");
    if (run.d_emb < 1) throw ValidationError("d_emb must be >= 1");
    validate(run.metric);
    if (!std::isfinite(run.value)) throw ValidationError("run value is not finite");
    if (run.metric.is_ranking() && (run.value < 0.0 || run.value > 1.0)) {
        throw ValidationError(std::string(metric_name(run.metric.kind)) + " value " + std::to_string(run.value) +
                              " outside [0, 1]");
    }
    if (run.d_prime && !(*run.d_prime > 0.0 && std::isfinite(*run.d_prime))) {
        throw ValidationError("d_prime must be a finite positive number");
    }
}

DataScale parse_data_scale(std::string_view name) {
    if (name == "supplied") return DataScale::supplied;
    if (name == "fitted") return DataScale::fitted;
    throw ValidationError("unknown data-scale mode '" + std::string(name) + "' (expected supplied or fitted)");
}

std::string_view to_string(DataScale mode) { return mode == DataScale::supplied ? "supplied" : "fitted"; }

SizeCovariate parse_size_covariate(std::string_view name) {
    if (name == "layers") return SizeCovariate::layers;
    if (name == "layers_d2" || name == "layers_times_d_squared") return SizeCovariate::layers_times_d_squared;
    throw ValidationError("unknown size covariate '" + std::string(name) + "' (expected layers or layers_d2)");
}

std::string_view to_string(SizeCovariate size) {
    return size == SizeCovariate::layers ? "layers" : "layers_d2";
}

double size_value(const RunRecord& run, SizeCovariate size) {
    const double n = run.n_layers;
    if (size == SizeCovariate::layers) return n;
    const double d = run.d_emb;
    return n * d * d;
}

// ---------------------------------------------------------------------------
// Loss law

FitResult fit_loss_law(std::span<const RunRecord> runs, const LossFitOptions& options) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
        validate(runs[i]);
        if (runs[i].metric.kind != Metric::loss) {
            throw ValidationError("run " + std::to_string(i) + " is not a loss record");
        }
        if (options.data_scale == DataScale::supplied && !runs[i].d_prime) {
            throw ValidationError("run " + std::to_string(i) + " has no d_prime");
        }
    }
    if (runs.size() < 6) throw ValidationError("loss-law fit needs at least 6 runs, got " + std::to_string(runs.size()));
    std::set<double> sizes, scales;
    for (const auto& r : runs) {
        sizes.insert(size_value(r, options.size));
        if (r.d_prime) scales.insert(*r.d_prime);
    }
    if (sizes.size() < 2) throw ValidationError("loss-law fit needs at least 2 distinct model sizes");
    if (options.data_scale == DataScale::supplied && scales.size() < 2) {
        throw ValidationError("loss-law fit needs at least 2 distinct data scales");
    }

    const bool full = options.form == LossForm::full;
    if (options.data_scale == DataScale::fitted) {
        if (full) {
            require_frozen(options.frozen, {"Dc"}, "Dc and the data scale are interchangeable");
        } else {
            require_frozen(options.frozen, {"E", "B", "beta"}, "E, B, beta and the data scale are interchangeable");
        }
    }

    const auto ids = dataset_ids(runs);
    const auto ds_index = dataset_index(runs, ids);
    const VectorXd y = observed_values(runs);
    const std::size_t law_size = full ? 4 : 5;

    FitModel model;
    if (full) {
        model.specs = {log_scale("Nc"), log_scale("Dc"), positive_exponent("alphaN"), positive_exponent("alphaD")};
    } else {
        model.specs = {coefficient("E"), positive_amplitude("A"), positive_amplitude("B"), positive_exponent("alpha"),
                       positive_exponent("beta")};
        model.intercept = 0;
    }
    if (options.data_scale == DataScale::fitted) {
        for (const auto& id : ids) model.specs.push_back(log_scale("lnD:" + id));
    }

    std::vector<double> size_cov(runs.size()), data_cov(runs.size(), 0.0);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        size_cov[i] = size_value(runs[i], options.size);
        if (runs[i].d_prime) data_cov[i] = *runs[i].d_prime;
    }

    auto law_from = [full](const VectorXd& p) -> LossLawParams {
        if (full) return FullLossLaw{std::exp(p[0]), std::exp(p[1]), p[2], p[3]};
        return SimplifiedLossLaw{p[0], p[1], p[2], p[3], p[4]};
    };
    const bool fitted = options.data_scale == DataScale::fitted;
    model.predict = [&, law_size, fitted](const VectorXd& p) {
        LossLawParams law = law_from(p);
        VectorXd out(static_cast<Eigen::Index>(runs.size()));
        for (std::size_t i = 0; i < runs.size(); ++i) {
            double d = fitted ? std::exp(p[static_cast<Eigen::Index>(law_size + ds_index[i])]) : data_cov[i];
            out[static_cast<Eigen::Index>(i)] = eval_loss_law(law, size_cov[i], d);
        }
        return out;
    };

    VectorXd init(static_cast<Eigen::Index>(model.specs.size()));
    if (options.init) {
        if (form_of(*options.init) != options.form) throw ValidationError("initial parameters have the wrong form");
        if (full) {
            const auto& f = std::get<FullLossLaw>(*options.init);
            init.head(4) << std::log(f.n_c), std::log(f.d_c), f.alpha_n, f.alpha_d;
        } else {
            const auto& s = std::get<SimplifiedLossLaw>(*options.init);
            init.head(5) << s.e, s.a, s.b, s.alpha, s.beta;
        }
    } else if (full) {
        init.head(4) << std::log(*sizes.begin()), std::log(1e6), 0.5, 0.5;
    } else {
        init.head(5) << y.minCoeff(), 1.0, 1.0, 0.5, 0.5;
    }
    if (options.data_scale == DataScale::fitted) {
        for (std::size_t j = 0; j < ids.size(); ++j) {
            init[static_cast<Eigen::Index>(law_size + j)] = initial_log_scale(runs, ids[j]);
        }
    }
    std::vector<std::string> logs = full ? std::vector<std::string>{"Nc", "Dc"} : std::vector<std::string>{};
    apply_bounds(model.specs, options.bounds, logs);
    auto mask = frozen_mask(model.specs, options.frozen, init, logs);

    MultiStartResult best = run_multistart(model, y, init, mask, options.multistart);

    FitResult fit;
    fit.params = law_from(best.best.params);
    fit.rss = best.best.rss;
    fit.iterations = best.best.iterations;
    fit.converged = best.best.converged;
    fit.grad_norm = best.best.grad_norm;
    fit.start_index = best.start_index;
    fit.num_points = runs.size();
    fit.size = options.size;
    fit.frozen = frozen_names(options.frozen);
    if (fitted) {
        for (std::size_t j = 0; j < ids.size(); ++j) {
            fit.data_parameters[ids[j]] = std::exp(best.best.params[static_cast<Eigen::Index>(law_size + j)]);
        }
    }
    VectorXd pred = model.predict(best.best.params);
    std::vector<double> obs(y.begin(), y.end()), prd(pred.begin(), pred.end());
    fit.r_squared = fit_r_squared(obs, prd);
    return fit;
}

// ---------------------------------------------------------------------------
// Performance law

PerfLawParams default_perf_init() { return PerfLawParams{0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 0.0}; }

FitResult fit_perf_law(std::span<const RunRecord> runs, const PerfFitOptions& options) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
        validate(runs[i]);
        if (!runs[i].metric.is_ranking()) {
            throw ValidationError("run " + std::to_string(i) + " is not a performance (hr/ndcg/mrr) record");
        }
        if (options.data_scale == DataScale::supplied && !runs[i].d_prime) {
            throw ValidationError("run " + std::to_string(i) + " has no d_prime");
        }
        if (!(runs[i].metric == runs[0].metric)) {
            throw ValidationError("run " + std::to_string(i) + " has metric " + to_string(runs[i].metric) +
                                  ", expected " + to_string(runs[0].metric) + " (one metric per fit)");
        }
    }
    if (runs.size() < 10) {
        throw ValidationError("performance-law fit needs at least 10 runs, got " + std::to_string(runs.size()));
    }
    std::set<int> layers, widths;
    for (const auto& r : runs) {
        layers.insert(r.n_layers);
        widths.insert(r.d_emb);
    }
    if (layers.size() < 3) throw ValidationError("performance-law fit needs at least 3 distinct layer counts");
    if (widths.size() < 3) throw ValidationError("performance-law fit needs at least 3 distinct embedding sizes");
    const bool fitted = options.data_scale == DataScale::fitted;
    if (fitted) {
        require_frozen(options.frozen, {"w5", "w6", "p3", "C"}, "the data term and the data scale are interchangeable");
    }

    const auto ids = dataset_ids(runs);
    const auto ds_index = dataset_index(runs, ids);
    const VectorXd y = observed_values(runs);
    constexpr std::size_t k = PerfLawParams::kSize;

    FitModel model;
    model.specs = {coefficient("w1"),      coefficient("w2"),      signed_exponent("w3"), signed_exponent("w4"),
                   signed_exponent("w5"),  coefficient("w6"),      signed_amplitude("p1"), signed_amplitude("p2"),
                   signed_amplitude("p3"), coefficient("C")};
    model.intercept = 9;
    if (fitted) {
        for (const auto& id : ids) model.specs.push_back(log_scale("lnD:" + id));
    }

    auto d_prime_at = [&, fitted](const VectorXd& p, std::size_t i) {
        return fitted ? std::exp(p[static_cast<Eigen::Index>(k + ds_index[i])]) : *runs[i].d_prime;
    };
    model.predict = [&, d_prime_at](const VectorXd& p) {
        PerfLawParams law = PerfLawParams::from_array(std::span(p.data(), k));
        VectorXd out(static_cast<Eigen::Index>(runs.size()));
        for (std::size_t i = 0; i < runs.size(); ++i) {
            out[static_cast<Eigen::Index>(i)] = eval_perf_law(law, runs[i].n_layers, runs[i].d_emb, d_prime_at(p, i));
        }
        return out;
    };
    model.jacobian = [&, d_prime_at, fitted](const VectorXd& p) {
        PerfLawParams law = PerfLawParams::from_array(std::span(p.data(), k));
        MatrixXd jac = MatrixXd::Zero(static_cast<Eigen::Index>(runs.size()), p.size());
        for (std::size_t i = 0; i < runs.size(); ++i) {
            const double dp = d_prime_at(p, i);
            auto g = grad_perf_law(law, runs[i].n_layers, runs[i].d_emb, dp);
            const auto row = static_cast<Eigen::Index>(i);
            for (std::size_t j = 0; j < k; ++j) jac(row, static_cast<Eigen::Index>(j)) = g[j];
            if (fitted) {
                // d/d(ln D') of w6 (ln D' + p3 D'^-w5)
                jac(row, static_cast<Eigen::Index>(k + ds_index[i])) =
                    law.w6 * (1.0 - law.w5 * decay_term(law.p3, law.w5, dp));
            }
        }
        return jac;
    };

    VectorXd init(static_cast<Eigen::Index>(model.specs.size()));
    PerfLawParams start = options.init.value_or(default_perf_init());
    auto arr = start.to_array();
    for (std::size_t j = 0; j < k; ++j) init[static_cast<Eigen::Index>(j)] = arr[j];
    if (fitted) {
        for (std::size_t j = 0; j < ids.size(); ++j) {
            init[static_cast<Eigen::Index>(k + j)] = initial_log_scale(runs, ids[j]);
        }
    }
    apply_bounds(model.specs, options.bounds, {});
    auto mask = frozen_mask(model.specs, options.frozen, init, {});

    MultiStartResult best = run_multistart(model, y, init, mask, options.multistart);

    FitResult fit;
    fit.params = PerfLawParams::from_array(std::span(best.best.params.data(), k));
    fit.rss = best.best.rss;
    fit.iterations = best.best.iterations;
    fit.converged = best.best.converged;
    fit.grad_norm = best.best.grad_norm;
    fit.start_index = best.start_index;
    fit.num_points = runs.size();
    fit.frozen = frozen_names(options.frozen);
    if (fitted) {
        for (std::size_t j = 0; j < ids.size(); ++j) {
            fit.data_parameters[ids[j]] = std::exp(best.best.params[static_cast<Eigen::Index>(k + j)]);
        }
    }
    VectorXd pred = model.predict(best.best.params);
    std::vector<double> obs(y.begin(), y.end()), prd(pred.begin(), pred.end());
    fit.r_squared = fit_r_squared(obs, prd);
    return fit;
}

double predict(const FitResult& fit, const RunRecord& run) {
    double d_prime = 0.0;
    if (auto it = fit.data_parameters.find(run.dataset_id); it != fit.data_parameters.end()) {
        d_prime = it->second;
    } else if (run.d_prime) {
        d_prime = *run.d_prime;
    } else {
        throw ValidationError("run for dataset '" + run.dataset_id + "' has no data parameter");
    }
    if (const auto* perf = std::get_if<PerfLawParams>(&fit.params)) {
        return eval_perf_law(*perf, run.n_layers, run.d_emb, d_prime);
    }
    return eval_loss_law(std::get<LossLawParams>(fit.params), size_value(run, fit.size), d_prime);
}

// ---------------------------------------------------------------------------

double fit_k(std::span<const RunRecord> loss_runs, std::span<const RunRecord> perf_runs) {
    using Key = std::tuple<std::string, int, int>;
    std::map<Key, double> losses;
    for (const auto& r : loss_runs) {
        if (r.metric.kind != Metric::loss) throw ValidationError("fit_k: loss_runs contains a non-loss record");
        if (!losses.emplace(Key{r.dataset_id, r.n_layers, r.d_emb}, r.value).second) {
            throw ValidationError("fit_k: duplicate loss run for dataset '" + r.dataset_id + "'");
        }
    }
    std::optional<MetricKind> kind;
    std::set<Key> seen;
    double num = 0.0, den = 0.0;
    std::size_t pairs = 0;
    for (const auto& r : perf_runs) {
        if (!r.metric.is_ranking()) throw ValidationError("fit_k: perf_runs contains a non-performance record");
        if (kind && !(*kind == r.metric)) throw ValidationError("fit_k: perf_runs mixes metric kinds");
        kind = r.metric;
        Key key{r.dataset_id, r.n_layers, r.d_emb};
        if (!seen.insert(key).second) throw ValidationError("fit_k: duplicate performance run");
        auto it = losses.find(key);
        if (it == losses.end()) continue;
        num += it->second * (1.0 - r.value);
        den += it->second * it->second;
        ++pairs;
    }
    if (pairs == 0) throw ValidationError("fit_k: no (loss, performance) pairs");
    if (den == 0.0) throw NumericError("fit_k: all paired losses are zero");
    return num / den;
}

double r_squared(std::span<const double> observed, std::span<const double> predicted) {
    if (observed.size() != predicted.size()) throw ValidationError("r_squared: length mismatch");
    if (observed.empty()) throw ValidationError("r_squared: empty input");
    const double mean = std::accumulate(observed.begin(), observed.end(), 0.0) / static_cast<double>(observed.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
        ss_tot += (observed[i] - mean) * (observed[i] - mean);
    }
    if (ss_tot == 0.0) throw NumericError("r_squared: observed values have zero variance");
    return 1.0 - ss_res / ss_tot;
}

LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw ValidationError("linear_fit: length mismatch");
    if (xs.size() < 2) throw ValidationError("linear_fit: needs at least 2 points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0) throw ValidationError("linear_fit: all x values are equal");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.pearson_r = syy == 0.0 ? 0.0 : std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    fit.r_squared = fit.pearson_r * fit.pearson_r;
    return fit;
}

}  // namespace perflaw
