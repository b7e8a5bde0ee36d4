#include <filesystem>

#include "doctest.h"
#include "xling/io.hpp"
#include "xling/pipeline.hpp"

using namespace xling;
using nlohmann::json;

TEST_SUITE("pipeline") {
    TEST_CASE("defaults validate and survive a JSON round trip") {
        const auto d = PipelineConfig::defaults();
        CHECK_NOTHROW(d.validate());
        const json j = config_to_json(d);
        const auto back = config_from_json(j);
        CHECK(config_to_json(back) == j);
        CHECK(config_hash(back) == config_hash(d));
    }

    TEST_CASE("alignment defaults follow the published recipe") {
        const auto d = PipelineConfig::defaults();
        CHECK(d.align.alpha == 1.0);
        CHECK(d.align.iterations == 2);
        CHECK(d.align.sample_count == 4000);
        CHECK(d.align.tuned_last <= d.align.target_layer);
        CHECK(d.ingest.threshold_fraction == 0.8);
        CHECK(d.ingest.stride == 16);
        CHECK(d.ingest.n_indices == 1000);
        CHECK(d.groups.high == std::vector<std::string>{"en", "zh", "ru", "es", "it"});
        CHECK(d.groups.medlow == std::vector<std::string>{"id", "ca", "mr", "ml", "hi"});
    }

    TEST_CASE("partial documents keep defaults and overrides apply") {
        const auto c = config_from_json(json::parse(R"({"align": {"alpha": 0.5}, "output": {"emit_svg": false}})"));
        CHECK(c.align.alpha == 0.5);
        CHECK(!c.output.emit_svg);
        CHECK(c.align.iterations == PipelineConfig::defaults().align.iterations);
    }

    TEST_CASE("unknown keys are rejected with their path") {
        try {
            config_from_json(json::parse(R"({"align": {"alpah": 0.5}})"));
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("align.alpah") != std::string::npos);
        }
        CHECK_THROWS_AS(config_from_json(json::parse(R"({"bogus": 1})")), ValidationError);
        CHECK_THROWS_AS(config_from_json(json::parse(R"({"toy": {"model": {"depth": 3}}})")), ValidationError);
    }

    TEST_CASE("type errors and invalid values are validation errors") {
        CHECK_THROWS_AS(config_from_json(json::parse(R"({"align": {"alpha": "one"}})")), ValidationError);
        CHECK_THROWS_AS(config_from_json(json::parse(R"({"align": {"alpha": -1}})")), ValidationError);
        CHECK_THROWS_AS(config_from_json(json::parse(R"({"align": {"tuned_layers": [0, 7]}})")), ValidationError);
        CHECK_THROWS_AS(config_from_json(json::parse(R"({"eval": {"mode": "best"}})")), ValidationError);
    }

    TEST_CASE("config files load and hash changes with content") {
        const auto p = std::filesystem::temp_directory_path() / "xling_config.json";
        write_text_file(p, R"({"sae": {"seed": 5}})");
        const auto c = load_config(p);
        CHECK(c.sae.train.seed == 5);
        CHECK(config_hash(c) != config_hash(PipelineConfig::defaults()));
        CHECK(config_hash(c).size() == 64);
        std::filesystem::remove(p);
    }

    TEST_CASE("groups restricted to the corpus languages") {
        LanguageGroups g;
        const auto r = groups_for_languages(g, {"en", "ml"});
        CHECK(r.high == std::vector<std::string>{"en"});
        CHECK(r.medlow == std::vector<std::string>{"ml"});
        const auto synthetic = groups_for_languages(g, {"en", "xx", "yy"});
        CHECK(synthetic.high == std::vector<std::string>{"en"});
        CHECK(synthetic.medlow == std::vector<std::string>{"xx", "yy"});
    }

    TEST_CASE("record-file ingestion keeps top reference phrases and their translations") {
        auto rec = [](const std::string& lang, std::int64_t ordinal, double peak) {
            std::vector<std::string> tokens;
            std::vector<double> acts;
            for (int i = 0; i < 12; ++i) {
                tokens.push_back(lang + std::to_string(i));
                acts.push_back(i == 9 ? peak : 0.1);
            }
            return ActivationRecord::make(4, 32, lang, tokens, acts, ordinal);
        };
        const std::vector<ActivationRecord> records{rec("en", 0, 10), rec("en", 1, 9),  rec("en", 2, 5),
                                                    rec("en", 3, 1),  rec("en", 4, 8.5), rec("ml", 0, 2),
                                                    rec("ml", 2, 3),  rec("ml", 4, 1),   rec("ml", 7, 6)};
        IngestSection ingest;
        const auto w = window_records(records, ingest, "en");
        CHECK(w.groups == 1);
        CHECK(w.dropped_below_threshold == 2);
        CHECK(w.dropped_without_reference == 2);
        REQUIRE(w.records.size() == 5);
        std::vector<std::pair<std::string, std::int64_t>> kept;
        for (const auto& r : w.records) {
            kept.emplace_back(r.language, r.phrase_ordinal);
            CHECK(r.tokens.size() == 6);  // peak at 9 of 12: indices 6..11
            CHECK(r.tokens.front() == r.language + "6");
        }
        CHECK(kept == std::vector<std::pair<std::string, std::int64_t>>{{"en", 0}, {"en", 1}, {"en", 4}, {"ml", 0}, {"ml", 4}});
        ingest.window_radius = 1;
        for (const auto& r : window_records(records, ingest, "en").records) CHECK(r.tokens.size() == 3);
    }

    TEST_CASE("toy ingest options follow the config") {
        auto cfg = PipelineConfig::defaults();
        cfg.toy.feature_stride = 4;
        cfg.toy.n_features = 1000;
        const auto opts = toy_ingest_options(cfg, 64);
        CHECK(opts.layer == cfg.align.target_layer);
        CHECK(opts.feature_indices.size() == 16);
        CHECK(opts.feature_indices.back() == 60);
    }
}
