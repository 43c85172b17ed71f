#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "perflaw/laws.hpp"

namespace perflaw {

// ---------------------------------------------------------------------------
// Damped least squares

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Box constraints; empty vectors mean unbounded.
struct ParamBounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

struct SolverSettings {
    double rss_rel_tol = 1e-12;  // stop when an accepted step improves RSS by less than this fraction
    double step_rel_tol = 1e-10; // ... and moves the parameters by less than this fraction
    double grad_tol = 1e-10;     // stop when the projected gradient inf-norm falls below this
    int max_iterations = 10'000;
};

struct SolveResult {
    Eigen::VectorXd params;
    double rss = 0.0;
    int iterations = 0;
    bool converged = false;
    double grad_norm = 0.0;  // inf-norm of the projected gradient J^T r at the solution
};

/// Levenberg-Marquardt with gain-ratio damping, projected onto `bounds`.
/// Parameters with frozen[i] set keep their initial value. An empty
/// `jacobian` selects central finite differences.
///
/// Throws ValidationError when there are fewer residuals than free parameters
/// or init lies outside the bounds, NumericError when the residual at init is
/// not finite.
SolveResult least_squares(const ResidualFn& residual, const JacobianFn& jacobian, Eigen::VectorXd init,
                          const ParamBounds& bounds = {}, const std::vector<bool>& frozen = {},
                          const SolverSettings& settings = {});

// ---------------------------------------------------------------------------
// Run records and fits

/// One observed training outcome.
struct RunRecord {
    std::string dataset_id;
    int n_layers = 1;
    int d_emb = 1;
    MetricKind metric;
    double value = 0.0;
    std::optional<double> d_prime;

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

/// Throws ValidationError naming the violated invariant.
void validate(const RunRecord& run);

/// Where the data-scale covariate of each run comes from.
enum class DataScale {
    supplied,  // the run's d_prime
    fitted,    // one free parameter per dataset_id
};

/// Model-size covariate for the loss law.
enum class SizeCovariate { layers, layers_times_d_squared };

DataScale parse_data_scale(std::string_view name);
std::string_view to_string(DataScale mode);
SizeCovariate parse_size_covariate(std::string_view name);
std::string_view to_string(SizeCovariate size);

/// Per-run model-size value under the chosen covariate.
double size_value(const RunRecord& run, SizeCovariate size);

struct MultiStartOptions {
    std::size_t starts = 64;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    SolverSettings solver;
};

/// Replacement box for one parameter, in natural units (Nc, Dc and data
/// scales included; they are transformed internally).
struct ParamRange {
    double lower = 0.0;
    double upper = 0.0;
};

using BoundsOverrides = std::map<std::string, ParamRange>;

struct LossFitOptions {
    LossForm form = LossForm::simplified;
    SizeCovariate size = SizeCovariate::layers;
    DataScale data_scale = DataScale::supplied;
    std::map<std::string, double> frozen;  // parameter name -> pinned value
    std::optional<LossLawParams> init;     // first start; defaults are data-driven
    BoundsOverrides bounds;                // random starts for these are drawn uniformly inside
    MultiStartOptions multistart;
};

/// First start used when PerfFitOptions::init is empty.
PerfLawParams default_perf_init();

struct PerfFitOptions {
    DataScale data_scale = DataScale::supplied;
    std::map<std::string, double> frozen = {{"w6", 1.0}};
    std::optional<PerfLawParams> init;
    BoundsOverrides bounds;
    MultiStartOptions multistart;
};

struct FitResult {
    std::variant<LossLawParams, PerfLawParams> params;
    double r_squared = 0.0;
    double rss = 0.0;
    int iterations = 0;
    bool converged = false;
    std::size_t start_index = 0;
    std::size_t num_points = 0;
    double grad_norm = 0.0;
    std::vector<std::string> frozen;               // names of pinned parameters
    std::map<std::string, double> data_parameters;  // dataset_id -> fitted data scale (fitted mode)
    SizeCovariate size = SizeCovariate::layers;    // loss fits only

    bool is_perf() const noexcept { return std::holds_alternative<PerfLawParams>(params); }
};

/// Multi-start fit of the loss law to loss runs. Needs >= 6 runs with >= 2
/// distinct model sizes and, with supplied data scale, >= 2 distinct D'.
/// In fitted mode the rest of the data term (E, B and beta, or Dc) must be
/// frozen so that each dataset's scale is identifiable.
FitResult fit_loss_law(std::span<const RunRecord> runs, const LossFitOptions& options = {});

/// Multi-start fit of the performance law. Needs >= 10 runs with >= 3 distinct
/// layer counts and >= 3 distinct embedding sizes. In fitted mode w5, w6,
/// p3 and C must be frozen.
FitResult fit_perf_law(std::span<const RunRecord> runs, const PerfFitOptions& options = {});

/// Prediction of a fit for one run; uses the fitted data parameter of the
/// run's dataset when the fit estimated one.
double predict(const FitResult& fit, const RunRecord& run);

/// Slope k of (1 - performance) = k * loss through the origin, over runs paired
/// on (dataset_id, n_layers, d_emb).
double fit_k(std::span<const RunRecord> loss_runs, std::span<const RunRecord> perf_runs);

double r_squared(std::span<const double> observed, std::span<const double> predicted);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double pearson_r = 0.0;  // 0 when ys are constant
    double r_squared = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys);

}  // namespace perflaw
