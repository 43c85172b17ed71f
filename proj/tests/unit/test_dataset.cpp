#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "perflaw/dataset.hpp"
#include "perflaw/error.hpp"

using namespace perflaw;

namespace {

std::vector<ItemId> items_of(const InteractionSequence& s) { return {s.items().begin(), s.items().end()}; }

}  // namespace

TEST_CASE("bundled sample: six tokens over three users") {
    auto seqs = load_sequences(fixtures::path("sample.csv"), SequenceFormat::csv);
    auto s = compute_stats(seqs);
    CHECK(s.num_users == 3);
    CHECK(s.tokens == 6);
    CHECK(s.s_max == 3);
    CHECK(s.s_mean == doctest::Approx(2.0));
    CHECK(s.vocab == 2);
}

TEST_CASE("csv without header, with ratings") {
    auto seqs = parse_sequences("a,1 2 3,5 4 3\nb,9,1\n", SequenceFormat::csv);
    REQUIRE(seqs.size() == 2);
    CHECK(items_of(seqs[0]) == std::vector<ItemId>{1, 2, 3});
    REQUIRE(seqs[0].ratings());
    CHECK(*seqs[0].ratings() == std::vector<int>{5, 4, 3});
}

TEST_CASE("rows of one user are concatenated in file order") {
    auto seqs = parse_sequences("a,1 2\nb,3\na,4\n", SequenceFormat::csv);
    REQUIRE(seqs.size() == 2);
    CHECK(seqs[0].user_id() == "a");
    CHECK(items_of(seqs[0]) == std::vector<ItemId>{1, 2, 4});
}

TEST_CASE("csv errors carry the line number") {
    CHECK_THROWS_WITH_AS(parse_sequences("user_id,items\na,1 2\nb,1 x\n", SequenceFormat::csv),
                         doctest::Contains("line 3"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_sequences("a,0 1\n", SequenceFormat::csv), doctest::Contains("non-positive"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse_sequences("a,1 2,5\n", SequenceFormat::csv), doctest::Contains("ratings length"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse_sequences("a,1,5\na,2\n", SequenceFormat::csv), doctest::Contains("mixes"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse_sequences("user_id,things\n", SequenceFormat::csv), doctest::Contains("header"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse_sequences("\n\n", SequenceFormat::csv), doctest::Contains("no sequences"),
                         ValidationError);
}

TEST_CASE("jsonl parsing and errors") {
    auto seqs = parse_sequences(R"({"user_id":"x","items":[3,1,3]})"
                                "\n"
                                R"({"user_id":"y","items":[2],"ratings":[4]})",
                                SequenceFormat::jsonl);
    REQUIRE(seqs.size() == 2);
    CHECK(items_of(seqs[0]) == std::vector<ItemId>{3, 1, 3});
    CHECK(seqs[1].ratings().has_value());
    CHECK_THROWS_WITH_AS(parse_sequences("{\"user_id\":\"x\",\"items\":[1]}\n{\"user_id\":", SequenceFormat::jsonl),
                         doctest::Contains("line 2"), ValidationError);
}

TEST_CASE("write then load is the identity, both formats") {
    fixtures::TempDir tmp("dataset");
    std::vector<InteractionSequence> seqs{InteractionSequence("u1", {4, 5, 4}, std::vector<int>{1, 2, 3}),
                                          InteractionSequence("u2", {7}, std::vector<int>{5})};
    for (auto fmt : {SequenceFormat::csv, SequenceFormat::jsonl}) {
        auto file = tmp / (fmt == SequenceFormat::csv ? "s.csv" : "s.jsonl");
        write_sequences(file, seqs, fmt);
        CHECK(load_sequences(file, fmt) == seqs);
    }
}

TEST_CASE("missing file is an I/O error") {
    CHECK_THROWS_AS(load_sequences("/nonexistent/perflaw.csv", SequenceFormat::csv), IoError);
}

TEST_CASE("format from extension") {
    CHECK(format_from_extension("a/b.csv") == SequenceFormat::csv);
    CHECK(format_from_extension("b.jsonl") == SequenceFormat::jsonl);
    CHECK_FALSE(format_from_extension("b.txt").has_value());
    CHECK_THROWS_AS(parse_sequence_format("xml"), ValidationError);
}

TEST_CASE("truncation keeps each user's most recent items") {
    auto seqs = load_sequences(fixtures::path("sample.csv"), SequenceFormat::csv);
    auto cut = truncate(seqs, 2);
    CHECK(items_of(cut[0]) == std::vector<ItemId>{7, 5});
    CHECK(items_of(cut[1]) == std::vector<ItemId>{7});
    CHECK(compute_stats(cut).tokens == 5);
    CHECK(truncate(seqs, 25) == seqs);
    CHECK_THROWS_AS(truncate(seqs, 0), ValidationError);
}

TEST_CASE("invalid sequences are rejected at construction") {
    CHECK_THROWS_AS(InteractionSequence("u", {}), ValidationError);
    CHECK_THROWS_AS(InteractionSequence("u", {1, -2}), ValidationError);
    CHECK_THROWS_AS(InteractionSequence("u", {1, 2}, std::vector<int>{1}), ValidationError);
}

TEST_CASE("sequence-distribution entropy") {
    // Multiplicities {2, 1, 1}: -(1/2 ln 1/2 + 2 * 1/4 ln 1/4).
    std::vector<InteractionSequence> seqs{InteractionSequence("a", {1, 2}), InteractionSequence("b", {1, 2}),
                                          InteractionSequence("c", {2, 1}), InteractionSequence("d", {3})};
    const double expected = -(0.5 * std::log(0.5) + 0.5 * std::log(0.25));
    CHECK(sequence_distribution_entropy(seqs) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(1.0397207708).epsilon(1e-10));

    std::vector<InteractionSequence> same{InteractionSequence("a", {5}), InteractionSequence("b", {5})};
    CHECK(sequence_distribution_entropy(same) == 0.0);
    CHECK_FALSE(std::signbit(sequence_distribution_entropy(same)));
}
