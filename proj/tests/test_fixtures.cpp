#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "xling/fixtures.hpp"
#include "xling/io.hpp"
#include "xling/numerics.hpp"

using namespace xling;

TEST_SUITE("fixtures") {
    TEST_CASE("every pinned fixture loads") {
        for (const auto& id : fixture_ids()) {
            CAPTURE(id);
            const auto t = load_fixture(id);
            CHECK(!t.rows.empty());
            CHECK(!t.provenance.empty());
        }
        CHECK_THROWS_AS(load_fixture("table2"), ValidationError);
    }

    TEST_CASE("table1 layer 6 gap") {
        for (const auto& row : load_layer_fixture("table1"))
            if (row.layer == 6) CHECK(row.value == 26.27);
    }

    TEST_CASE("table8 Marathi ratio") {
        bool found = false;
        for (const auto& row : load_ratio_fixture())
            if (row.language == "mr") {
                found = true;
                CHECK(row.mean == 0.05);
                CHECK(row.std == 0.17);
            }
        CHECK(found);
    }

    TEST_CASE("table11 ARC-C gain is 1.43, within 0.015 of the quoted 1.44") {
        double original = 0, tuned = 0;
        for (const auto& b : load_benchmark_fixture()) {
            if (b.benchmark != "arc_c") continue;
            if (b.score_type == "original") original = b.accuracy;
            if (b.score_type == "fine_tuned") tuned = b.accuracy;
        }
        const double gain = tuned - original;
        CHECK(std::abs(gain - 1.43) < 1e-9);
        CHECK(std::abs(gain - 1.44) <= 0.015);
    }

    TEST_CASE("an edited fixture fails its checksum") {
        const auto dir = std::filesystem::temp_directory_path() / "xling_fixture_tamper";
        std::filesystem::create_directories(dir);
        for (const auto& id : fixture_ids())
            std::filesystem::copy_file(fixture_path(id), dir / fixture_path(id).filename(),
                                       std::filesystem::copy_options::overwrite_existing);
        CHECK_NOTHROW(load_fixture("table3", dir));
        std::string text = read_text_file(dir / "table3.csv");
        text.replace(text.find("53.67"), 5, "53.68");
        write_text_file(dir / "table3.csv", text);
        CHECK_THROWS_AS(load_fixture("table3", dir), ValidationError);
        std::filesystem::remove_all(dir);
    }
}
