#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "test_support.hpp"
#include "xling/eval.hpp"
#include "xling/fixtures.hpp"
#include "xling/io.hpp"

using namespace xling;
using xling::testing::HashScorer;
using xling::testing::OracleScorer;
using xling::testing::RiggedScorer;
using xling::testing::UniformScorer;

namespace {

McqItem item(std::vector<TokenId> prompt, std::vector<std::vector<TokenId>> choices, std::size_t gold,
             std::string lang = "en") {
    McqItem it;
    it.language = std::move(lang);
    it.prompt = std::move(prompt);
    it.choices = std::move(choices);
    it.gold_index = gold;
    return it;
}

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
    const auto p = std::filesystem::temp_directory_path() / name;
    write_text_file(p, content);
    return p;
}

}  // namespace

TEST_SUITE("eval") {
    TEST_CASE("rigged model scores its choice at 0 and the others at the floor") {
        const McqItem it = item({1, 2}, {{3, 4}, {5, 6}, {7}}, 0);
        const RiggedScorer model(10, it.context(), {3, 4});
        const auto raw = score_choices(model, it, ScoringMode::RawLoglik);
        CHECK(raw[0] == 0.0);
        CHECK(raw[1] == 2 * kLogProbFloor);
        CHECK(raw[2] == kLogProbFloor);
        const auto norm = score_choices(model, it, ScoringMode::PerTokenNormalized);
        CHECK(norm[1] == kLogProbFloor);
    }

    TEST_CASE("identical choices score identically") {
        const HashScorer model(20);
        const auto s = score_choices(model, item({1, 2, 3}, {{4, 5}, {4, 5}}, 1), ScoringMode::RawLoglik);
        CHECK(s[0] == s[1]);
    }

    TEST_CASE("scores match a token-by-token recomputation") {
        const HashScorer model(30);
        Rng rng(41);
        auto items = make_random_items(50, 4, 30, 3, "en", rng);
        for (auto& it : items) it.shots = {{1, 2}, {3}};
        for (const auto& it : items) {
            const auto raw = score_choices(model, it, ScoringMode::RawLoglik);
            const auto norm = score_choices(model, it, ScoringMode::PerTokenNormalized);
            for (std::size_t c = 0; c < it.choices.size(); ++c) {
                std::vector<TokenId> ctx;
                for (const auto& s : it.shots) ctx.insert(ctx.end(), s.begin(), s.end());
                ctx.insert(ctx.end(), it.prompt.begin(), it.prompt.end());
                double total = 0;
                for (TokenId t : it.choices[c]) {
                    total += model.next_token_log_probs(ctx)[static_cast<std::size_t>(t)];
                    ctx.push_back(t);
                }
                CHECK(std::abs(raw[c] - total) < 1e-10);
                CHECK(std::abs(norm[c] - total / static_cast<double>(it.choices[c].size())) < 1e-10);
            }
            // Equal-length choices: both modes pick the same answer.
            CHECK(pick_choice(raw).index == pick_choice(norm).index);
        }
    }

    TEST_CASE("items validate choices, gold index and vocabulary") {
        CHECK_THROWS_AS(item({1}, {{2}}, 0).validate(10), ValidationError);
        CHECK_THROWS_AS(item({1}, {{2}, {3}}, 2).validate(10), ValidationError);
        CHECK_THROWS_AS(item({1}, {{2}, {}}, 0).validate(10), ValidationError);
        CHECK_THROWS_AS(item({1}, {{2}, {30}}, 0).validate(10), ValidationError);
    }

    TEST_CASE("pick_choice breaks ties toward the lowest index") {
        const auto p = pick_choice(std::vector<double>{1.0, 3.0, 3.0});
        CHECK(p.index == 1);
        CHECK(p.tied);
        CHECK(!pick_choice(std::vector<double>{2.0, 1.0}).tied);
    }

    TEST_CASE("uniform model lands near chance and the oracle at 100 percent") {
        Rng rng(42);
        const auto items = make_random_items(2000, 4, 1000, 2, "en", rng);
        const auto uni = evaluate(UniformScorer(1000), items, ScoringMode::PerTokenNormalized);
        CHECK(std::abs(uni.per_language[0].accuracy - 25.0) <= 3.0);
        CHECK(uni.ties == 2000);
        const auto oracle = evaluate(OracleScorer(1000, items), items, ScoringMode::RawLoglik);
        CHECK(oracle.per_language[0].accuracy == 100.0);
    }

    TEST_CASE("accuracy is exact, per language, and order independent") {
        Rng rng(43);
        auto items = make_random_items(30, 3, 40, 2, "en", rng);
        auto more = make_random_items(17, 3, 40, 2, "ml", rng);
        items.insert(items.end(), more.begin(), more.end());
        const HashScorer model(40);
        const auto rep = evaluate(model, items, ScoringMode::RawLoglik);
        REQUIRE(rep.per_language.size() == 2);
        for (const auto& a : rep.per_language)
            CHECK(a.accuracy == 100.0 * static_cast<double>(a.correct) / static_cast<double>(a.item_count));
        auto shuffled = items;
        rng.shuffle(shuffled);
        const auto rep2 = evaluate(model, shuffled, ScoringMode::RawLoglik);
        for (std::size_t i = 0; i < 2; ++i) CHECK(rep2.per_language[i].correct == rep.per_language[i].correct);
        CHECK_THROWS_AS(evaluate(model, {}, ScoringMode::RawLoglik), ValidationError);
    }

    TEST_CASE("argmax is invariant under per-item positive affine score maps") {
        Rng rng(44);
        std::vector<McqItem> items = make_random_items(1000, 4, 50, 2, "en", rng);
        std::vector<std::vector<double>> scores, mapped;
        for (std::size_t i = 0; i < items.size(); ++i) {
            std::vector<double> s(4);
            for (double& v : s) v = rng.normal();
            const double a = rng.uniform(0.01, 10.0), b = rng.uniform(-100.0, 100.0);
            std::vector<double> m(4);
            for (int c = 0; c < 4; ++c) m[c] = a * s[c] + b;
            scores.push_back(s);
            mapped.push_back(m);
        }
        const auto x = aggregate_scores(items, scores, ScoringMode::RawLoglik);
        const auto y = aggregate_scores(items, mapped, ScoringMode::RawLoglik);
        CHECK(x.per_language[0].correct == y.per_language[0].correct);
    }

    TEST_CASE("item files round trip") {
        Rng rng(45);
        auto items = make_random_items(5, 3, 20, 2, "ml", rng);
        items[0].shots = {{1, 2, 3}};
        const auto p = temp_file("xling_items.jsonl", serialize_items(items));
        const auto back = load_items(p);
        REQUIRE(back.size() == items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            CHECK(back[i].prompt == items[i].prompt);
            CHECK(back[i].choices == items[i].choices);
            CHECK(back[i].shots == items[i].shots);
            CHECK(back[i].gold_index == items[i].gold_index);
            CHECK(back[i].language == items[i].language);
        }
        std::filesystem::remove(p);
    }

    TEST_CASE("accuracy fixtures load, validate and round trip") {
        const auto arc = load_accuracy_fixture(fixture_path("table3"));
        CHECK(arc.size() == 10);
        CHECK(arc.at("en") == 53.67);
        const auto p = temp_file("xling_acc.csv", accuracy_csv(arc));
        CHECK(load_accuracy_fixture(p) == arc);
        write_text_file(p, "");
        CHECK_THROWS_AS(load_accuracy_fixture(p), ValidationError);
        write_text_file(p, "language,accuracy\nen,50\nen,51\n");
        CHECK_THROWS_AS(load_accuracy_fixture(p), ValidationError);
        write_text_file(p, "language,accuracy\nen,150\n");
        CHECK_THROWS_AS(load_accuracy_fixture(p), ValidationError);
        std::filesystem::remove(p);
    }
}
