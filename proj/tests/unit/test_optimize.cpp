#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "perflaw/error.hpp"
#include "perflaw/optimize.hpp"

using namespace perflaw;

namespace {

PerfLawParams random_params(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PerfLawParams p;
    p.w1 = u(rng);
    p.w2 = u(rng);
    p.w3 = 1.5 * u(rng);
    p.w4 = 1.5 * u(rng);
    p.p1 = 20.0 * u(rng);
    p.p2 = 200.0 * u(rng);
    p.w5 = 0.2 * u(rng);
    p.w6 = u(rng);
    p.p3 = u(rng);
    p.c = u(rng);
    return p;
}

PerfLawParams width_peak() {
    // -(ln d + 100/d) peaks at d = 100.
    PerfLawParams p;
    p.w2 = -1.0;
    p.p2 = 100.0;
    p.w4 = 1.0;
    return p;
}

}  // namespace

TEST_CASE("closed-form width optimum") {
    auto r = global_optimum(width_peak(), 1e6, {{1, 8}, {1, 1000}, std::nullopt});
    CHECK(r.argmax_d == 100);
    CHECK(r.argmax_n == 1);  // flat in n; ties go to the smallest
    CHECK(r.evaluated_points == 8000);
    CHECK(r.predicted == eval_perf_law(width_peak(), 1, 100, 1e6));
}

TEST_CASE("a flat law ties everywhere and returns the lower corner") {
    PerfLawParams p;
    p.w6 = 0.0;
    p.c = 0.42;
    auto r = global_optimum(p, 1e6, {{3, 9}, {5, 50}, std::nullopt});
    CHECK(r.argmax_n == 3);
    CHECK(r.argmax_d == 5);
    CHECK(r.predicted == 0.42);
}

TEST_CASE("grid argmax equals exhaustive enumeration") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 25; ++i) {
        auto p = random_params(rng);
        const double dp = 1e6;
        IntRange nr{1, 48}, dr{1, 300};
        auto got = global_optimum(p, dp, {nr, dr, std::nullopt});
        auto want = oracle::exhaustive_argmax(p, dp, nr, dr);
        CHECK(got.argmax_n == want.n);
        CHECK(got.argmax_d == want.d);
        CHECK(got.predicted == want.value);

        Budget b{BudgetFunctional::n_times_d, 512};
        auto cg = constrained_optimum(p, dp, {nr, dr, b});
        auto cw = oracle::exhaustive_argmax(p, dp, nr, dr, b);
        CHECK(cg.argmax_n == cw.n);
        CHECK(cg.argmax_d == cw.d);
        CHECK(cg.predicted <= got.predicted);
    }
}

TEST_CASE("threaded search returns the same point") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 5; ++i) {
        auto p = random_params(rng);
        SearchSpace s{{1, 40}, {1, 200}, std::nullopt};
        SearchOptions four;
        four.threads = 4;
        auto a = global_optimum(p, 1e5, s);
        auto b = global_optimum(p, 1e5, s, four);
        CHECK(a.argmax_n == b.argmax_n);
        CHECK(a.argmax_d == b.argmax_d);
        CHECK(a.evaluated_points == b.evaluated_points);
    }
}

TEST_CASE("restricting the space never raises the optimum") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 10; ++i) {
        auto p = random_params(rng);
        auto big = global_optimum(p, 1e6, {{1, 64}, {1, 256}, std::nullopt});
        auto small = global_optimum(p, 1e6, {{2, 30}, {5, 100}, std::nullopt});
        CHECK(small.predicted <= big.predicted);
    }
}

TEST_CASE("budget frontier and edge cases") {
    PerfLawParams p;
    p.w1 = 0.1;
    p.w2 = 0.1;
    auto r = constrained_optimum(p, 1e6, {{1, 16}, {1, 1024}, Budget{BudgetFunctional::n_times_d, 512}});
    REQUIRE(r.frontier);
    CHECK(r.frontier->size() == 16);
    for (const auto& f : *r.frontier) {
        CHECK(f.n * f.d <= 512);
        CHECK(f.n * (f.d + 1) > 512);
    }
    auto unit = constrained_optimum(p, 1e6, {{1, 16}, {1, 1024}, Budget{BudgetFunctional::n_times_d, 1}});
    CHECK(unit.argmax_n == 1);
    CHECK(unit.argmax_d == 1);
    CHECK(unit.evaluated_points == 1);

    auto sq = constrained_optimum(p, 1e6, {{1, 4}, {1, 1024}, Budget{BudgetFunctional::n_times_d_squared, 1e4}});
    for (const auto& f : *sq.frontier) CHECK(f.d == static_cast<int>(std::floor(std::sqrt(1e4 / f.n))));

    CHECK_THROWS_WITH_AS(constrained_optimum(p, 1e6, {{2, 4}, {1, 8}, Budget{BudgetFunctional::n_times_d, 1}}),
                         doctest::Contains("infeasible"), ValidationError);
    CHECK_THROWS_AS(global_optimum(p, 1e6, {{1, 4}, {1, 8}, Budget{}}), ValidationError);
    CHECK_THROWS_AS(constrained_optimum(p, 1e6, {{1, 4}, {1, 8}, std::nullopt}), ValidationError);
    CHECK_THROWS_AS(global_optimum(p, 1e6, {{0, 4}, {1, 8}, std::nullopt}), ValidationError);
    CHECK_THROWS_AS(global_optimum(p, -1.0, {{1, 4}, {1, 8}, std::nullopt}), ValidationError);
}

TEST_CASE("coarse-to-fine agrees on a unimodal surface and evaluates fewer points") {
    PerfLawParams p = width_peak();
    p.w1 = -1.0;
    p.p1 = 40.0;
    p.w3 = 1.0;  // -(ln n + 40/n) peaks at n = 40
    SearchSpace s{{1, 2000}, {1, 2000}, std::nullopt};
    SearchOptions coarse;
    coarse.mode = SearchMode::coarse_to_fine;
    auto c = global_optimum(p, 1e6, s, coarse);
    CHECK(c.argmax_n == 40);
    CHECK(c.argmax_d == 100);
    CHECK(c.evaluated_points < 200'000);
    auto automatic = global_optimum(p, 1e6, s);  // 4e6 points: switches mode on its own
    CHECK(automatic.evaluated_points == c.evaluated_points);
}

TEST_CASE("range and budget parsing") {
    auto r = parse_range("3:17");
    CHECK(r.lo == 3);
    CHECK(r.hi == 17);
    CHECK_THROWS_AS(parse_range("5:2"), ValidationError);
    CHECK_THROWS_AS(parse_range("0:2"), ValidationError);
    CHECK_THROWS_AS(parse_range("1-2"), ValidationError);
    auto b = parse_budget("n_times_d:512");
    CHECK(b.functional == BudgetFunctional::n_times_d);
    CHECK(b.limit == 512.0);
    CHECK(parse_budget("n_times_d_squared:1e6").limit == 1e6);
    CHECK_THROWS_AS(parse_budget("flops:10"), ValidationError);
    CHECK_THROWS_AS(parse_budget("n_times_d:-3"), ValidationError);
}

TEST_CASE("scaling-potential table, ordering and rank agreement") {
    auto entry = [](std::string label, double w3, double w4, std::optional<double> obs) {
        PerfLawParams p;
        p.w3 = w3;
        p.w4 = w4;
        return PotentialEntry{std::move(label), p, obs};
    };
    // Six frameworks at two precisions.
    std::vector<PotentialEntry> rows{entry("HSTU float32", -1.0403, 0.1425, 0.3322),
                                     entry("LLaMA float32", -1.4638, 0.0359, 0.3459),
                                     entry("SASRec float32", 0.0737, 0.4578, 0.3021),
                                     entry("HSTU bfloat16", -0.3178, 0.2341, 0.3319),
                                     entry("LLaMA bfloat16", -0.4844, 0.2186, 0.3367),
                                     entry("SASRec bfloat16", 1.013, 0.6273, 0.2938)};
    auto report = scaling_potential(rows);
    REQUIRE(report.rows.size() == 6);
    CHECK(report.rows.front().label == "SASRec bfloat16");
    CHECK(report.rows.back().label == "LLaMA float32");
    // One concordant pair out of fifteen.
    REQUIRE(report.kendall_tau);
    CHECK(*report.kendall_tau == doctest::Approx(-13.0 / 15.0).epsilon(1e-15));
    auto text = render_text(report);
    for (auto v : {"-1.0403", "0.1425", "-1.4638", "0.0359", "0.0737", "0.4578", "-0.3178", "0.2341", "-0.4844",
                   "0.2186", "1.013", "0.6273"}) {
        CHECK(text.find(v) != std::string::npos);
    }

    auto two = scaling_potential(std::vector<PotentialEntry>{entry("a", 0.1, 0.2, 0.3), entry("b", 0.1, 0.3, 0.2)});
    REQUIRE(two.kendall_tau);
    CHECK(std::abs(*two.kendall_tau) == 1.0);
    std::vector<PotentialEntry> monotone;
    for (int i = 0; i < 5; ++i) monotone.push_back(entry("f" + std::to_string(i), 0.1 * i, 0.2 * i, 0.25 + 0.01 * i));
    CHECK(scaling_potential(monotone).kendall_tau == 1.0);
    auto same = scaling_potential(std::vector<PotentialEntry>{entry("a", 0.1, 0.2, 0.3), entry("b", 0.1, 0.2, 0.3)});
    CHECK(same.tau_tied);
    auto tie = scaling_potential(std::vector<PotentialEntry>{entry("a", 0.1, 0.2, 0.3), entry("b", 0.1, 0.2, 0.4)});
    CHECK(tie.tau_tied);
    CHECK_FALSE(tie.kendall_tau);
    auto partial = scaling_potential(std::vector<PotentialEntry>{entry("a", 0.1, 0.2, 0.3), entry("b", 0.4, 0.2, {})});
    CHECK_FALSE(partial.kendall_tau);
    CHECK_FALSE(partial.tau_tied);
    CHECK_THROWS_AS(scaling_potential(std::vector<PotentialEntry>{entry("a", 0.1, 0.2, 0.3)}), ValidationError);
}

TEST_CASE("sign-dependent reading of the exponents") {
    PerfLawParams pos, neg, mixed;
    pos.w1 = pos.w2 = 0.1;
    neg.w1 = neg.w2 = -0.1;
    mixed.w1 = 0.1;
    mixed.w2 = -0.1;
    auto r = scaling_potential(std::vector<PotentialEntry>{{"pos", pos, {}}, {"neg", neg, {}}, {"mixed", mixed, {}}});
    for (const auto& row : r.rows) {
        if (row.label == "pos") CHECK(row.reading.find("stronger") != std::string::npos);
        if (row.label == "neg") CHECK(row.reading.find("weaker") != std::string::npos);
        if (row.label == "mixed") CHECK(row.reading.find("does not apply") != std::string::npos);
    }
}
