#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xling/io.hpp"

namespace xling {

// Published-table fixtures shipped under fixtures/v1. Every file is pinned
// by SHA-256; a mismatch is an error.
struct FixtureTable {
    std::string id;
    std::string provenance;
    std::vector<std::string> columns;
    std::vector<CsvRow> rows;

    // Column lookup by header name.
    std::size_t column(const std::string& name) const;
    double number(std::size_t row, const std::string& name) const;
    const std::string& text(std::size_t row, const std::string& name) const;
};

struct LayerValue {
    std::size_t layer;
    double value;
};

struct LanguageMeanStd {
    std::string language;
    double mean;
    double std;
};

struct BenchmarkScore {
    std::string benchmark;
    std::string score_type;
    double accuracy;
};

// Directory holding the versioned fixture CSVs. Resolution order: explicit
// argument, XLING_FIXTURES_DIR environment variable, compiled-in default.
std::filesystem::path fixtures_dir(const std::filesystem::path& override_dir = {});

std::vector<std::string> fixture_ids();
std::filesystem::path fixture_path(const std::string& table_id, const std::filesystem::path& dir = {});

// Throws ValidationError for an unknown id or a checksum mismatch.
FixtureTable load_fixture(const std::string& table_id, const std::filesystem::path& dir = {});

// table1, table9, table10.
std::vector<LayerValue> load_layer_fixture(const std::string& table_id,
                                           const std::filesystem::path& dir = {});
// table3..table7: language -> value.
std::map<std::string, double> load_language_fixture(const std::string& table_id,
                                                    const std::filesystem::path& dir = {});
// table8.
std::vector<LanguageMeanStd> load_ratio_fixture(const std::filesystem::path& dir = {});
// table11.
std::vector<BenchmarkScore> load_benchmark_fixture(const std::filesystem::path& dir = {});

}  // namespace xling
