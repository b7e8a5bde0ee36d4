#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "test_support.hpp"
#include "xling/ingest.hpp"
#include "xling/io.hpp"

using namespace xling;
using xling::testing::brute_force_filter;
using xling::testing::random_group;
using xling::testing::random_record;

namespace {

ActivationRecord rec(double max_value, std::int64_t ordinal = 0, std::string lang = "en") {
    return ActivationRecord::make(3, 16, std::move(lang), {"a", "b"}, {max_value, 0.0}, ordinal);
}

ActivationRecord ramp(std::size_t n, std::size_t peak) {
    std::vector<std::string> tokens;
    std::vector<double> acts;
    for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back("w" + std::to_string(i));
        acts.push_back(i == peak ? 9.0 : 1.0);
    }
    return ActivationRecord::make(0, 0, "en", tokens, acts, 0);
}

std::vector<double> max_values(const std::vector<ActivationRecord>& rs) {
    std::vector<double> v;
    for (const auto& r : rs) v.push_back(r.max_value);
    return v;
}

}  // namespace

TEST_SUITE("ingest") {
    TEST_CASE("select_top_phrases keeps values strictly above 80 percent of the max") {
        const auto kept = select_top_phrases({rec(10), rec(8.5), rec(7.9)});
        CHECK(max_values(kept) == std::vector<double>{10, 8.5});
        CHECK(select_top_phrases({rec(4)}).size() == 1);
        // Exactly at the threshold is dropped in strict mode, kept in inclusive mode.
        CHECK(select_top_phrases({rec(10), rec(8)}).size() == 1);
        CHECK(select_top_phrases({rec(10), rec(8)}, 0.8, ThresholdMode::Inclusive).size() == 2);
        CHECK_THROWS_AS(select_top_phrases({}), ValidationError);
        CHECK_THROWS_AS(select_top_phrases({rec(1)}, 0.0), ValidationError);
    }

    TEST_CASE("select_top_phrases equals a brute-force filter on random groups") {
        Rng rng(21);
        for (int g = 0; g < 1000; ++g) {
            const auto group = random_group(rng, 1 + rng.below(15));
            CHECK(select_top_phrases(group) == brute_force_filter(group, 0.8));
        }
    }

    TEST_CASE("select_top_phrases is invariant under positive rescaling") {
        Rng rng(22);
        for (int g = 0; g < 200; ++g) {
            auto group = random_group(rng, 1 + rng.below(10));
            const double c = 4.0;  // a power of two keeps the comparison exact
            auto scaled = group;
            for (auto& r : scaled) {
                for (double& a : r.token_activations) a *= c;
                r.max_value *= c;
            }
            const auto a = select_top_phrases(group), b = select_top_phrases(scaled);
            REQUIRE(a.size() == b.size());
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].phrase_ordinal == b[i].phrase_ordinal);
        }
    }

    TEST_CASE("extract_window examples") {
        const auto mid = extract_window(ramp(10, 5));
        CHECK(mid.start == 2);
        CHECK(mid.window_tokens.size() == 7);
        CHECK(mid.argmax_offset == 3);
        const auto left = extract_window(ramp(10, 0));
        CHECK(left.start == 0);
        CHECK(left.window_tokens.size() == 4);
        const auto flat = extract_window(ActivationRecord::make(0, 0, "en", {"a", "b", "c", "d", "e", "f"},
                                                                {1, 1, 1, 1, 1, 1}, 0));
        CHECK(flat.start == 0);
        CHECK(flat.argmax_offset == 0);
        CHECK(flat.window_tokens.size() == 4);
    }

    TEST_CASE("windows hold at most 7 tokens and always contain the argmax") {
        Rng rng(23);
        for (int i = 0; i < 2000; ++i) {
            const auto r = random_record(rng, 1, 1, "en", 0, 20);
            const auto w = extract_window(r);
            const std::size_t am = argmax_index(r.token_activations);
            CHECK(!w.window_tokens.empty());
            CHECK(w.window_tokens.size() <= 7);
            CHECK(w.start + w.argmax_offset == am);
            CHECK(w.max_value() == r.max_value);
        }
    }

    TEST_CASE("sample_feature_indices") {
        const auto idx = sample_feature_indices(16384, 16, 1000);
        REQUIRE(idx.size() == 1000);
        CHECK(idx.front() == 0);
        CHECK(idx[1] == 16);
        CHECK(idx.back() == 15984);
        CHECK(sample_feature_indices(10, 1, 3) == std::vector<std::size_t>{0, 1, 2});
        CHECK_THROWS_AS(sample_feature_indices(100, 16, 7), ValidationError);
        CHECK_THROWS_AS(sample_feature_indices(100, 0, 1), ValidationError);
    }

    TEST_CASE("parse_records handles empty input and rejects bad rows individually") {
        const auto empty = parse_records_text("", RecordFormat::Jsonl);
        CHECK(empty.records.empty());
        CHECK(empty.errors.empty());
        const std::string text =
            R"({"layer":1,"feature_index":2,"language":"en","tokens":["a","b"],"token_activations":[1,2],"max_value":2,"phrase_ordinal":0})"
            "\n"
            R"({"layer":1,"feature_index":2,"language":"en","tokens":["a","b","c","d","e"],"token_activations":[1,2,3,4],"max_value":4,"phrase_ordinal":1})"
            "\n"
            "not json\n"
            R"({"layer":1,"feature_index":2,"language":"ml","tokens":["x"],"token_activations":[0.5],"max_value":0.5,"phrase_ordinal":0})"
            "\n";
        const auto rep = parse_records_text(text, RecordFormat::Jsonl);
        CHECK(rep.records.size() == 2);
        REQUIRE(rep.errors.size() == 2);
        CHECK(rep.errors[0].line == 2);
        CHECK(rep.errors[1].line == 3);
    }

    TEST_CASE("records validate max_value, ranges and tags") {
        auto r = ActivationRecord::make(1, 2, "en", {"a"}, {1.0}, 0);
        CHECK(r.validation_error().empty());
        r.max_value = 2.0;
        CHECK(!r.validation_error().empty());
        r = ActivationRecord::make(26, 2, "en", {"a"}, {1.0}, 0);
        CHECK(!r.validation_error().empty());
        r = ActivationRecord::make(1, 16384, "en", {"a"}, {1.0}, 0);
        CHECK(!r.validation_error().empty());
        r = ActivationRecord::make(1, 2, "e n", {"a"}, {1.0}, 0);
        CHECK(!r.validation_error().empty());
        r = ActivationRecord::make(1, 2, "en", {"a"}, {-1.0}, 0);
        CHECK(!r.validation_error().empty());
    }

    TEST_CASE("jsonl and csv round trips are the identity") {
        Rng rng(24);
        std::vector<ActivationRecord> rs;
        for (int i = 0; i < 3; ++i) rs.push_back(random_record(rng, 4, 32, i == 2 ? "ml" : "en", i));
        rs[0].tokens[0] = "comma, \"quoted\" token";
        rs[0].token_activations[0] = 0.1 + 0.2;  // not exactly representable in short decimal
        rs[0].max_value = *std::max_element(rs[0].token_activations.begin(), rs[0].token_activations.end());
        for (auto fmt : {RecordFormat::Jsonl, RecordFormat::Csv}) {
            const auto rep = parse_records_text(serialize_records(rs, fmt), fmt);
            CHECK(rep.errors.empty());
            CHECK(rep.records == rs);
        }
        const auto path = std::filesystem::temp_directory_path() / "xling_records.jsonl";
        write_records(path, rs, RecordFormat::Jsonl);
        CHECK(parse_records(path, record_format_for_path(path)).records == rs);
        std::filesystem::remove(path);
    }

    TEST_CASE("csv with a malformed header and unreadable paths throw") {
        CHECK_THROWS_AS(parse_records_text("a,b,c\n1,2,3\n", RecordFormat::Csv), ValidationError);
        CHECK_THROWS_AS(parse_records("/nonexistent/records.jsonl", RecordFormat::Jsonl), Error);
    }

    TEST_CASE("assemble_parallel groups by feature and drops orphans") {
        const auto en_only = assemble_parallel({rec(1, 0), rec(2, 1)});
        REQUIRE(en_only.sets.size() == 1);
        CHECK(en_only.sets[0].phrases.size() == 1);
        CHECK(en_only.sets[0].phrases.at("en").size() == 2);

        const auto pair = assemble_parallel({rec(1, 7), rec(0.5, 7, "ml")});
        REQUIRE(pair.sets.size() == 1);
        CHECK(pair.sets[0].phrases.at("ml").contains(7));

        const auto orphan = assemble_parallel({rec(1, 7), rec(0.5, 8, "ml")});
        CHECK(orphan.dropped_without_reference == 1);
        CHECK(!orphan.sets[0].phrases.contains("ml"));
    }

    TEST_CASE("assemble_parallel is permutation invariant") {
        Rng rng(25);
        std::vector<ActivationRecord> rs;
        for (int f = 0; f < 5; ++f)
            for (std::int64_t o = 0; o < 6; ++o)
                for (const char* lang : {"en", "ml", "hi"})
                    if (rng.uniform() < 0.8) rs.push_back(random_record(rng, 2, 16 * f, lang, o));
        const auto base = assemble_parallel(rs);
        for (int t = 0; t < 20; ++t) {
            auto shuffled = rs;
            rng.shuffle(shuffled);
            const auto got = assemble_parallel(shuffled);
            CHECK(got.sets == base.sets);
            CHECK(got.dropped_without_reference == base.dropped_without_reference);
        }
    }
}
