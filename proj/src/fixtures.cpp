#include "xling/fixtures.hpp"

#include <algorithm>
#include <cstdlib>

#include "xling/numerics.hpp"

#ifndef XLING_DEFAULT_FIXTURES_DIR
#define XLING_DEFAULT_FIXTURES_DIR "fixtures/v1"
#endif

namespace xling {

namespace {

struct FixtureSpec {
    const char* id;
    const char* file;
    const char* sha256;
    const char* provenance;
};

constexpr FixtureSpec kFixtures[] = {
    {"table1", "table1.csv", "1e7ab70a874ead2451004ef573437898d0369bfa58cf438c74e8ac50a661f85f",
     "Table 1: activation difference (%) between high and medium-to-low resource groups, layers 0-25"},
    {"table3", "table3.csv", "6f11cc053d3d15338d8cf892e8d5c07fa08a359240a232c8eb921ca922fb8f9b",
     "Table 3: ARC-Challenge accuracy (%) of the base model"},
    {"table4", "table4.csv", "4991af33fcb0071e2135666fabafcdb91e4a0d7c8e95bb784d220cda93077b1c",
     "Table 4: HellaSwag accuracy (%) of the base model"},
    {"table5", "table5.csv", "3c569a67f13340eedfec5f68d7762de1bf8f3b5f6ce3d04d57af186093758144",
     "Table 5: MMLU accuracy (%) of the base model"},
    {"table6", "table6.csv", "4d9b7bcaaa75e49d008e76eb4f1e3fc784b42f9b040a4174a88d2761033a1e1c",
     "Table 6: layer-20 activation improvement (%) after alignment tuning"},
    {"table7", "table7.csv", "58ee33f8216bfc1574d25a955d0da92724900e1b2a7b17ea54a98b80e6478909",
     "Table 7: English activation retention (%) after alignment tuning"},
    {"table8", "table8.csv", "516c19d45f7f017588c8e5cedebe595b1fec28ee330f0bd3ef967b31c91fd6dc",
     "Table 8: mean and std of activation ratio to English over all layers"},
    {"table9", "table9.csv", "92182d9b5599268e3ddc10fc03cf2b925f22d54777b830a55c86e244737d3e37",
     "Table 9: Malayalam activation improvement (%) per layer"},
    {"table10", "table10.csv", "1e914525ce15dcba0251cbf6018318d261a0e5cb06b3e3859734eeebd3f40db7",
     "Table 10: English activation retention (%) per layer"},
    {"table11", "table11.csv", "892af3f091b70639fc947fc93d7eec867eaaa3ffdf013e55881e4a37b5a87a1e",
     "Table 11: Malayalam benchmark accuracy (%) before and after tuning"},
};

const FixtureSpec& find_spec(const std::string& id) {
    for (const auto& s : kFixtures)
        if (id == s.id) return s;
    throw ValidationError("unknown fixture table id '" + id + "'");
}

}  // namespace

std::size_t FixtureTable::column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ValidationError(id + ": no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
}

double FixtureTable::number(std::size_t row, const std::string& name) const {
    return parse_double(rows.at(row).at(column(name)), id + ":" + name);
}

const std::string& FixtureTable::text(std::size_t row, const std::string& name) const {
    return rows.at(row).at(column(name));
}

std::filesystem::path fixtures_dir(const std::filesystem::path& override_dir) {
    if (!override_dir.empty()) return override_dir;
    if (const char* env = std::getenv("XLING_FIXTURES_DIR"); env && *env) return env;
    return XLING_DEFAULT_FIXTURES_DIR;
}

std::vector<std::string> fixture_ids() {
    std::vector<std::string> out;
    for (const auto& s : kFixtures) out.emplace_back(s.id);
    return out;
}

std::filesystem::path fixture_path(const std::string& table_id, const std::filesystem::path& dir) {
    return fixtures_dir(dir) / find_spec(table_id).file;
}

FixtureTable load_fixture(const std::string& table_id, const std::filesystem::path& dir) {
    const auto& spec = find_spec(table_id);
    const auto path = fixtures_dir(dir) / spec.file;
    const std::string text = read_text_file(path);
    const std::string digest = sha256_hex(text);
    if (digest != spec.sha256) {
        throw ValidationError("fixture " + table_id + " checksum mismatch: " + path.string() +
                              " has sha256 " + digest);
    }
    auto lines = parse_csv(text);
    if (lines.empty()) throw ValidationError("fixture " + table_id + " is empty");
    FixtureTable t;
    t.id = spec.id;
    t.provenance = spec.provenance;
    t.columns = std::move(lines.front().cells);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].cells.size() != t.columns.size())
            throw ValidationError("fixture " + table_id + " line " +
                                  std::to_string(lines[i].line_number) + " has wrong cell count");
        t.rows.push_back(std::move(lines[i].cells));
    }
    return t;
}

std::vector<LayerValue> load_layer_fixture(const std::string& table_id,
                                           const std::filesystem::path& dir) {
    const auto t = load_fixture(table_id, dir);
    if (t.columns.size() != 2 || t.columns[0] != "layer")
        throw ValidationError(table_id + " is not a per-layer table");
    std::vector<LayerValue> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        out.push_back({static_cast<std::size_t>(t.number(r, "layer")), t.number(r, t.columns[1])});
    return out;
}

std::map<std::string, double> load_language_fixture(const std::string& table_id,
                                                    const std::filesystem::path& dir) {
    const auto t = load_fixture(table_id, dir);
    if (t.columns.size() != 2 || t.columns[0] != "language")
        throw ValidationError(table_id + " is not a per-language table");
    std::map<std::string, double> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        out.emplace(t.text(r, "language"), t.number(r, t.columns[1]));
    return out;
}

std::vector<LanguageMeanStd> load_ratio_fixture(const std::filesystem::path& dir) {
    const auto t = load_fixture("table8", dir);
    std::vector<LanguageMeanStd> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        out.push_back({t.text(r, "language"), t.number(r, "mean"), t.number(r, "std")});
    return out;
}

std::vector<BenchmarkScore> load_benchmark_fixture(const std::filesystem::path& dir) {
    const auto t = load_fixture("table11", dir);
    std::vector<BenchmarkScore> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        out.push_back({t.text(r, "benchmark"), t.text(r, "score_type"), t.number(r, "accuracy")});
    return out;
}

}  // namespace xling
