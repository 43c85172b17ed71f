#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "perflaw/error.hpp"
#include "perflaw/fitting.hpp"
#include "synth.hpp"

using namespace perflaw;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// y = a x + b sampled at x = 0..9.
struct LineProblem {
    std::vector<double> xs, ys;
    LineProblem() {
        for (int i = 0; i < 10; ++i) {
            xs.push_back(i);
            ys.push_back(2.5 * i - 1.0 + ((i % 3) - 1) * 0.1);
        }
    }
    ResidualFn residual() const {
        return [this](const VectorXd& p) {
            VectorXd r(10);
            for (int i = 0; i < 10; ++i) r[i] = p[0] * xs[i] + p[1] - ys[i];
            return r;
        };
    }
    JacobianFn jacobian() const {
        return [this](const VectorXd&) {
            MatrixXd j(10, 2);
            for (int i = 0; i < 10; ++i) j.row(i) << xs[i], 1.0;
            return j;
        };
    }
};

double rms_error(const FitResult& fit, std::span<const RunRecord> runs) {
    double s = 0.0;
    for (const auto& r : runs) s += std::pow(predict(fit, r) - r.value, 2);
    return std::sqrt(s / static_cast<double>(runs.size()));
}

MultiStartOptions quick(std::size_t starts = 16, std::uint64_t seed = 1) {
    MultiStartOptions o;
    o.starts = starts;
    o.seed = seed;
    return o;
}

}  // namespace

TEST_CASE("least squares reproduces closed-form regression") {
    LineProblem lp;
    auto ref = oracle::ols(lp.xs, lp.ys);
    for (bool analytic : {true, false}) {
        auto r = least_squares(lp.residual(), analytic ? lp.jacobian() : JacobianFn{}, VectorXd::Zero(2));
        CHECK(r.converged);
        CHECK(r.params[0] == doctest::Approx(ref.slope).epsilon(1e-10));
        CHECK(r.params[1] == doctest::Approx(ref.intercept).epsilon(1e-10));
    }
}

TEST_CASE("exponential model is recovered from noiseless samples") {
    std::vector<double> xs;
    for (int i = 0; i < 50; ++i) xs.push_back(0.1 * i);
    ResidualFn residual = [&](const VectorXd& p) {
        VectorXd r(50);
        for (int i = 0; i < 50; ++i) r[i] = p[0] * std::exp(p[1] * xs[i]) - 2.0 * std::exp(-0.5 * xs[i]);
        return r;
    };
    VectorXd init(2);
    init << 1.0, 0.0;
    auto r = least_squares(residual, {}, init);
    CHECK(r.converged);
    CHECK(std::abs(r.params[0] - 2.0) < 1e-8);
    CHECK(std::abs(r.params[1] + 0.5) < 1e-8);
}

TEST_CASE("frozen parameters and active bounds") {
    LineProblem lp;
    VectorXd init(2);
    init << 0.0, 3.0;
    auto frozen = least_squares(lp.residual(), lp.jacobian(), init, {}, {false, true});
    CHECK(frozen.params[1] == 3.0);

    ParamBounds box{VectorXd(2), VectorXd(2)};
    box.lower << 0.0, -10.0;
    box.upper << 2.0, 10.0;
    auto bounded = least_squares(lp.residual(), lp.jacobian(), VectorXd::Zero(2), box);
    CHECK(bounded.params[0] == 2.0);
    CHECK(bounded.converged);
}

TEST_CASE("solver preconditions") {
    LineProblem lp;
    ResidualFn tiny = [](const VectorXd& p) { return VectorXd::Constant(1, p[0] + p[1]); };
    CHECK_THROWS_WITH_AS(least_squares(tiny, {}, VectorXd::Zero(2)), doctest::Contains("underdetermined"),
                         ValidationError);
    ParamBounds box{VectorXd::Zero(2), VectorXd::Ones(2)};
    CHECK_THROWS_AS(least_squares(lp.residual(), {}, VectorXd::Constant(2, 5.0), box), ValidationError);
    ResidualFn bad = [](const VectorXd& p) { return VectorXd::Constant(3, std::log(p[0])); };
    CHECK_THROWS_AS(least_squares(bad, {}, VectorXd::Constant(1, -1.0)), NumericError);
}

TEST_CASE("noiseless simplified loss law is recovered") {
    auto runs = synth::loss_runs(synth::reference_loss(), {1, 2, 4, 8, 16, 32}, {1e5, 1e6, 1e7}, 0.0, 0);
    LossFitOptions opt;
    opt.multistart = quick();
    auto fit = fit_loss_law(runs, opt);
    CHECK(rms_error(fit, runs) < 1e-6);
    CHECK(fit.r_squared > 1.0 - 1e-9);
    CHECK(fit.num_points == runs.size());
}

TEST_CASE("noiseless full loss law is recovered") {
    FullLossLaw truth{50.0, 2e5, 0.3, 0.4};
    auto runs = synth::loss_runs(truth, {1, 2, 4, 8, 16, 32}, {1e4, 1e5, 1e6}, 0.0, 0);
    LossFitOptions opt;
    opt.form = LossForm::full;
    opt.multistart = quick(32);
    auto fit = fit_loss_law(runs, opt);
    CHECK(rms_error(fit, runs) < 1e-6);
}

TEST_CASE("constant losses collapse onto E") {
    auto runs = synth::loss_runs(synth::reference_loss(), {1, 2, 4, 8}, {1e5, 1e6}, 0.0, 0);
    for (auto& r : runs) r.value = 2.75;
    LossFitOptions opt;
    opt.multistart = quick(8);
    auto fit = fit_loss_law(runs, opt);
    const auto law = std::get<SimplifiedLossLaw>(std::get<LossLawParams>(fit.params));
    CHECK(rms_error(fit, runs) < 1e-8);
    CHECK(fit.r_squared == 1.0);
    CHECK(law.e == doctest::Approx(2.75).epsilon(0.01));
    CHECK(law.a < 1e-6);
    // Whatever survives of A and B must not vary over the grid.
    for (int n : {1, 8}) CHECK(law.a / std::pow(n, law.alpha) == doctest::Approx(law.a).epsilon(1e-6));
    CHECK(law.e + law.a + law.b / std::pow(1e5, law.beta) == doctest::Approx(2.75).epsilon(1e-8));
}

TEST_CASE("loss fit preconditions") {
    auto runs = synth::loss_runs(synth::reference_loss(), {1, 2, 4}, {1e5, 1e6}, 0.0, 0);
    CHECK_THROWS_AS(fit_loss_law(std::span(runs).first(5)), ValidationError);
    auto one_size = synth::loss_runs(synth::reference_loss(), {4}, {1e5, 1e6, 1e7, 1e8, 1e9, 1e10}, 0.0, 0);
    CHECK_THROWS_WITH_AS(fit_loss_law(one_size), doctest::Contains("model sizes"), ValidationError);
    auto one_scale = synth::loss_runs(synth::reference_loss(), {1, 2, 3, 4, 5, 6}, {1e5}, 0.0, 0);
    CHECK_THROWS_WITH_AS(fit_loss_law(one_scale), doctest::Contains("data scales"), ValidationError);
    LossFitOptions fitted;
    fitted.data_scale = DataScale::fitted;
    CHECK_THROWS_WITH_AS(fit_loss_law(runs, fitted), doctest::Contains("frozen"), ValidationError);
    auto wrong = runs;
    wrong[0].metric = parse_metric("hr@10");
    wrong[0].value = 0.5;
    CHECK_THROWS_AS(fit_loss_law(wrong), ValidationError);
}

TEST_CASE("fitted data scale recovers per-dataset D with the data term pinned") {
    auto truth = synth::reference_loss();
    const std::vector<double> data{2e5, 3e6, 9e7};
    auto runs = synth::loss_runs(truth, {1, 2, 4, 8, 16}, data, 0.0, 0, false);
    LossFitOptions opt;
    opt.data_scale = DataScale::fitted;
    opt.frozen = {{"E", truth.e}, {"B", truth.b}, {"beta", truth.beta}};
    opt.multistart = quick();
    auto fit = fit_loss_law(runs, opt);
    REQUIRE(fit.data_parameters.size() == 3);
    CHECK(fit.data_parameters.at("ds0") == doctest::Approx(data[0]).epsilon(1e-4));
    CHECK(fit.data_parameters.at("ds2") == doctest::Approx(data[2]).epsilon(1e-3));
    CHECK(rms_error(fit, runs) < 1e-6);
}

TEST_CASE("performance law: noiseless recovery, determinism, thread independence") {
    synth::Grid grid{{1, 2, 4, 8, 16}, {8, 32, 128, 512}, {1e5, 1e6, 1e7}};
    auto runs = synth::perf_runs(synth::reference_perf(), grid, 0.0, 0);
    PerfFitOptions opt;
    opt.multistart = quick(24, 7);
    auto a = fit_perf_law(runs, opt);
    CHECK(a.r_squared > 1.0 - 1e-6);
    CHECK(std::get<PerfLawParams>(a.params).w6 == 1.0);
    CHECK(a.frozen == std::vector<std::string>{"w6"});

    auto b = fit_perf_law(runs, opt);
    CHECK(std::get<PerfLawParams>(a.params) == std::get<PerfLawParams>(b.params));
    CHECK(a.rss == b.rss);

    opt.multistart.threads = 3;
    auto c = fit_perf_law(runs, opt);
    CHECK(std::get<PerfLawParams>(a.params) == std::get<PerfLawParams>(c.params));
    CHECK(a.start_index == c.start_index);
}

TEST_CASE("identical metric values give a flat law") {
    synth::Grid grid{{1, 2, 4, 8}, {8, 32, 128}, {1e6}};
    auto runs = synth::perf_runs(synth::reference_perf(), grid, 0.0, 0);
    for (auto& r : runs) r.value = 0.3;
    PerfFitOptions opt;
    opt.multistart = quick(8);
    auto fit = fit_perf_law(runs, opt);
    const auto p = std::get<PerfLawParams>(fit.params);
    CHECK(rms_error(fit, runs) < 1e-9);
    CHECK(fit.r_squared == 1.0);
    CHECK(std::abs(p.w1) < 1e-6);
    CHECK(std::abs(p.w2) < 1e-6);
}

TEST_CASE("performance fit preconditions") {
    synth::Grid grid{{1, 2, 4}, {8, 16, 32, 64}, {1e5}};
    auto runs = synth::perf_runs(synth::reference_perf(), grid, 0.0, 0);
    CHECK_THROWS_AS(fit_perf_law(std::span(runs).first(9)), ValidationError);
    synth::Grid narrow{{1, 2}, {8, 16, 32, 64, 128, 256}, {1e5}};
    CHECK_THROWS_WITH_AS(fit_perf_law(synth::perf_runs(synth::reference_perf(), narrow, 0.0, 0)),
                         doctest::Contains("layer counts"), ValidationError);

    auto mixed = runs;
    mixed[3].metric = parse_metric("ndcg@10");
    CHECK_THROWS_WITH_AS(fit_perf_law(mixed), doctest::Contains("one metric"), ValidationError);

    PerfFitOptions opt;
    opt.frozen["w9"] = 1.0;
    CHECK_THROWS_AS(fit_perf_law(runs, opt), ValidationError);
    opt = {};
    opt.data_scale = DataScale::fitted;
    CHECK_THROWS_WITH_AS(fit_perf_law(runs, opt), doctest::Contains("'w5'"), ValidationError);
    opt = {};
    opt.bounds["w3"] = {2.0, 1.0};
    CHECK_THROWS_AS(fit_perf_law(runs, opt), ValidationError);
}

TEST_CASE("bounds overrides confine the estimate") {
    synth::Grid grid{{1, 2, 4, 8}, {8, 32, 128}, {1e5, 1e6}};
    auto runs = synth::perf_runs(synth::reference_perf(), grid, 0.0, 0);
    PerfFitOptions opt;
    opt.bounds["w3"] = {0.9, 1.1};
    opt.multistart = quick(8);
    auto fit = fit_perf_law(runs, opt);
    const double w3 = std::get<PerfLawParams>(fit.params).w3;
    CHECK(w3 >= 0.9);
    CHECK(w3 <= 1.1);
}

TEST_CASE("fit_k pairs loss and performance runs") {
    std::vector<RunRecord> loss, perf;
    for (int n : {1, 2, 4}) {
        for (int d : {16, 32}) {
            const double l = 2.0 + 1.0 / n + 8.0 / d;
            loss.push_back({"a", n, d, parse_metric("loss"), l, 1e6});
            perf.push_back({"a", n, d, parse_metric("hr@10"), 1.0 - 0.2 * l, 1e6});
        }
    }
    perf.push_back({"b", 1, 16, parse_metric("hr@10"), 0.5, 1e6});  // unpaired, ignored
    CHECK(fit_k(loss, perf) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK_THROWS_AS(fit_k(loss, std::vector<RunRecord>{}), ValidationError);
    auto dup = loss;
    dup.push_back(loss.front());
    CHECK_THROWS_AS(fit_k(dup, perf), ValidationError);
}

TEST_CASE("goodness of fit and linear regression") {
    std::vector<double> y{1, 2, 3, 4}, same{1, 2, 3, 4}, off{1, 2, 3, 5};
    CHECK(r_squared(y, same) == 1.0);
    CHECK(r_squared(y, off) == doctest::Approx(1.0 - 1.0 / 5.0));
    CHECK_THROWS_AS(r_squared(std::vector<double>{2, 2}, std::vector<double>{2, 2}), NumericError);

    std::vector<double> xs{1, 2, 4, 7, 11}, ys{2.1, 3.9, 8.2, 13.8, 22.5};
    auto lf = linear_fit(xs, ys);
    auto ref = oracle::ols(xs, ys);
    CHECK(lf.slope == doctest::Approx(ref.slope).epsilon(1e-12));
    CHECK(lf.intercept == doctest::Approx(ref.intercept).epsilon(1e-12));
    CHECK(lf.pearson_r == doctest::Approx(ref.r).epsilon(1e-12));
    CHECK(lf.r_squared == doctest::Approx(ref.r * ref.r).epsilon(1e-12));
    CHECK(linear_fit(xs, std::vector<double>(5, 3.0)).pearson_r == 0.0);
    CHECK_THROWS_WITH_AS(linear_fit(std::vector<double>(5, 1.0), ys), doctest::Contains("x values"), ValidationError);
}

TEST_CASE("run record invariants") {
    RunRecord r{"a", 2, 16, parse_metric("hr@10"), 1.2, 1e6};
    CHECK_THROWS_AS(validate(r), ValidationError);
    r.value = 0.3;
    CHECK_NOTHROW(validate(r));
    r.d_prime = -1.0;
    CHECK_THROWS_AS(validate(r), ValidationError);
    r.d_prime = 1e6;
    r.n_layers = 0;
    CHECK_THROWS_AS(validate(r), ValidationError);
}
