#include "xling/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "xling/io.hpp"
#include "xling/numerics.hpp"

namespace xling {

namespace {

bool valid_language_tag(const std::string& tag) {
    if (tag.empty() || tag.size() > 35) return false;
    return std::all_of(tag.begin(), tag.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '_';
    });
}

const char* kCsvHeader[] = {"layer",      "feature_index", "language",      "tokens",
                            "token_activations", "max_value", "phrase_ordinal"};
constexpr std::size_t kCsvColumns = std::size(kCsvHeader);

nlohmann::json record_to_json(const ActivationRecord& r) {
    nlohmann::json j;
    j["layer"] = r.layer;
    j["feature_index"] = r.feature_index;
    j["language"] = r.language;
    j["tokens"] = r.tokens;
    j["token_activations"] = r.token_activations;
    j["max_value"] = r.max_value;
    j["phrase_ordinal"] = r.phrase_ordinal;
    return j;
}

std::size_t as_count(const nlohmann::json& j, const char* field) {
    const auto& v = j.at(field);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ValidationError(std::string(field) + " must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

ActivationRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("row is not a JSON object");
    ActivationRecord r;
    r.layer = as_count(j, "layer");
    r.feature_index = as_count(j, "feature_index");
    r.language = j.at("language").get<std::string>();
    r.tokens = j.at("tokens").get<std::vector<std::string>>();
    r.token_activations = j.at("token_activations").get<std::vector<double>>();
    r.max_value = j.at("max_value").get<double>();
    const auto& ord = j.at("phrase_ordinal");
    if (!ord.is_number_integer()) throw ValidationError("phrase_ordinal must be an integer");
    r.phrase_ordinal = ord.get<std::int64_t>();
    return r;
}

std::size_t parse_count_cell(const std::string& s, const char* field) {
    const double v = parse_double(s, field);
    if (v < 0 || v != std::floor(v)) throw ValidationError(std::string(field) + " must be a non-negative integer");
    return static_cast<std::size_t>(v);
}

void check_record(const ActivationRecord& r) {
    if (auto err = r.validation_error(); !err.empty()) throw ValidationError(err);
}

}  // namespace

ActivationRecord ActivationRecord::make(std::size_t layer, std::size_t feature_index,
                                        std::string language, std::vector<std::string> tokens,
                                        std::vector<double> activations,
                                        std::int64_t phrase_ordinal) {
    ActivationRecord r;
    r.layer = layer;
    r.feature_index = feature_index;
    r.language = std::move(language);
    r.tokens = std::move(tokens);
    r.token_activations = std::move(activations);
    r.phrase_ordinal = phrase_ordinal;
    if (!r.token_activations.empty())
        r.max_value = *std::max_element(r.token_activations.begin(), r.token_activations.end());
    return r;
}

std::string ActivationRecord::validation_error() const {
    if (layer > kMaxLayer) return "layer " + std::to_string(layer) + " outside 0-25";
    if (feature_index > kMaxFeatureIndex)
        return "feature_index " + std::to_string(feature_index) + " outside 0-16383";
    if (!valid_language_tag(language)) return "invalid language tag '" + language + "'";
    if (tokens.empty()) return "record has no tokens";
    if (tokens.size() != token_activations.size())
        return std::to_string(tokens.size()) + " tokens but " +
               std::to_string(token_activations.size()) + " activations";
    for (std::size_t i = 0; i < token_activations.size(); ++i) {
        const double a = token_activations[i];
        if (!std::isfinite(a) || a < 0.0)
            return "activation " + std::to_string(i) + " is negative or non-finite";
    }
    if (phrase_ordinal < 0) return "phrase_ordinal must be >= 0";
    const double mx = *std::max_element(token_activations.begin(), token_activations.end());
    if (!std::isfinite(max_value) || std::abs(max_value - mx) > 1e-9)
        return "max_value " + format_double(max_value) + " does not match max activation " +
               format_double(mx);
    return {};
}

std::size_t argmax_index(const std::vector<double>& activations) {
    if (activations.empty()) throw ValidationError("argmax of empty activation list");
    std::size_t best = 0;
    for (std::size_t i = 1; i < activations.size(); ++i)
        if (activations[i] > activations[best]) best = i;
    return best;
}

PhraseWindow window_at(const ActivationRecord& record, std::size_t start, std::size_t length) {
    if (length == 0 || start + length > record.tokens.size()) {
        throw ValidationError("window [" + std::to_string(start) + ", " +
                              std::to_string(start + length) + ") outside record of " +
                              std::to_string(record.tokens.size()) + " tokens");
    }
    PhraseWindow w;
    w.layer = record.layer;
    w.feature_index = record.feature_index;
    w.language = record.language;
    w.phrase_ordinal = record.phrase_ordinal;
    w.start = start;
    w.window_tokens.assign(record.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                           record.tokens.begin() + static_cast<std::ptrdiff_t>(start + length));
    w.window_activations.assign(
        record.token_activations.begin() + static_cast<std::ptrdiff_t>(start),
        record.token_activations.begin() + static_cast<std::ptrdiff_t>(start + length));
    w.argmax_offset = argmax_index(w.window_activations);
    return w;
}

PhraseWindow extract_window(const ActivationRecord& record, std::size_t radius) {
    check_record(record);
    const std::size_t peak = argmax_index(record.token_activations);
    const std::size_t first = peak >= radius ? peak - radius : 0;
    const std::size_t last = std::min(record.tokens.size() - 1, peak + radius);
    return window_at(record, first, last - first + 1);
}

ActivationRecord to_record(const PhraseWindow& w) {
    return ActivationRecord::make(w.layer, w.feature_index, w.language, w.window_tokens,
                                  w.window_activations, w.phrase_ordinal);
}

std::vector<ActivationRecord> select_top_phrases(const std::vector<ActivationRecord>& group,
                                                 double threshold_fraction, ThresholdMode mode) {
    if (group.empty()) throw ValidationError("select_top_phrases: empty group");
    if (!(threshold_fraction > 0.0 && threshold_fraction <= 1.0))
        throw ValidationError("threshold_fraction must be in (0, 1]");
    const auto layer = group.front().layer;
    const auto feature = group.front().feature_index;
    double group_max = group.front().max_value;
    for (const auto& r : group) {
        if (r.layer != layer || r.feature_index != feature)
            throw ValidationError("select_top_phrases: group mixes (layer, feature) keys");
        group_max = std::max(group_max, r.max_value);
    }
    const double cut = threshold_fraction * group_max;
    std::vector<ActivationRecord> kept;
    for (const auto& r : group) {
        const bool keep = mode == ThresholdMode::Strict ? r.max_value > cut : r.max_value >= cut;
        if (keep) kept.push_back(r);
    }
    return kept;
}

std::vector<std::size_t> sample_feature_indices(std::size_t total, std::size_t stride, std::size_t n) {
    if (stride < 1) throw ValidationError("sample_feature_indices: stride must be >= 1");
    if (n > 0 && n > total / stride) {
        throw ValidationError("sample_feature_indices: " + std::to_string(n) + " x stride " +
                              std::to_string(stride) + " exceeds " + std::to_string(total) +
                              " features");
    }
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = stride * i;
    return out;
}

RecordFormat parse_record_format(const std::string& s) {
    if (s == "jsonl") return RecordFormat::Jsonl;
    if (s == "csv") return RecordFormat::Csv;
    throw ValidationError("unknown record format '" + s + "' (expected jsonl or csv)");
}

RecordFormat record_format_for_path(const std::filesystem::path& p) {
    return p.extension() == ".csv" ? RecordFormat::Csv : RecordFormat::Jsonl;
}

ParseReport parse_records_text(const std::string& text, RecordFormat format) {
    ParseReport report;
    if (format == RecordFormat::Jsonl) {
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            try {
                ActivationRecord r = record_from_json(nlohmann::json::parse(line));
                check_record(r);
                report.records.push_back(std::move(r));
            } catch (const nlohmann::json::exception& e) {
                report.errors.push_back({line_no, e.what()});
            } catch (const ValidationError& e) {
                report.errors.push_back({line_no, e.what()});
            }
        }
        return report;
    }

    const auto rows = parse_csv(text);
    if (rows.empty()) return report;
    const auto& header = rows.front().cells;
    if (header.size() != kCsvColumns ||
        !std::equal(header.begin(), header.end(), std::begin(kCsvHeader))) {
        throw ValidationError("malformed CSV header: expected "
                              "layer,feature_index,language,tokens,token_activations,max_value,"
                              "phrase_ordinal");
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        try {
            if (row.cells.size() != kCsvColumns)
                throw ValidationError("expected " + std::to_string(kCsvColumns) + " cells, got " +
                                      std::to_string(row.cells.size()));
            ActivationRecord r;
            r.layer = parse_count_cell(row.cells[0], "layer");
            r.feature_index = parse_count_cell(row.cells[1], "feature_index");
            r.language = row.cells[2];
            r.tokens = nlohmann::json::parse(row.cells[3]).get<std::vector<std::string>>();
            r.token_activations = nlohmann::json::parse(row.cells[4]).get<std::vector<double>>();
            r.max_value = parse_double(row.cells[5], "max_value");
            const double ord = parse_double(row.cells[6], "phrase_ordinal");
            if (ord != std::floor(ord)) throw ValidationError("phrase_ordinal must be an integer");
            r.phrase_ordinal = static_cast<std::int64_t>(ord);
            check_record(r);
            report.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            report.errors.push_back({row.line_number, e.what()});
        } catch (const ValidationError& e) {
            report.errors.push_back({row.line_number, e.what()});
        }
    }
    return report;
}

ParseReport parse_records(const std::filesystem::path& path, RecordFormat format) {
    return parse_records_text(read_text_file(path), format);
}

std::string serialize_records(const std::vector<ActivationRecord>& records, RecordFormat format) {
    std::string out;
    if (format == RecordFormat::Jsonl) {
        for (const auto& r : records) out += record_to_json(r).dump() + "\n";
        return out;
    }
    out += format_csv_row(CsvRow(std::begin(kCsvHeader), std::end(kCsvHeader)));
    for (const auto& r : records) {
        out += format_csv_row({std::to_string(r.layer), std::to_string(r.feature_index), r.language,
                               nlohmann::json(r.tokens).dump(),
                               nlohmann::json(r.token_activations).dump(),
                               nlohmann::json(r.max_value).dump(), std::to_string(r.phrase_ordinal)});
    }
    return out;
}

void write_records(const std::filesystem::path& path, const std::vector<ActivationRecord>& records,
                   RecordFormat format) {
    write_text_file(path, serialize_records(records, format));
}

AssemblyResult assemble_parallel(const std::vector<ActivationRecord>& records,
                                 const std::string& reference_language, std::size_t radius) {
    // Canonical order first so every downstream choice is input-order free.
    std::vector<const ActivationRecord*> sorted;
    sorted.reserve(records.size());
    for (const auto& r : records) sorted.push_back(&r);
    auto key = [](const ActivationRecord* r) {
        return std::tie(r->layer, r->feature_index, r->language, r->phrase_ordinal);
    };
    std::sort(sorted.begin(), sorted.end(), [&](const ActivationRecord* a, const ActivationRecord* b) {
        if (key(a) != key(b)) return key(a) < key(b);
        // Duplicates: strongest first, then tokens, so the kept one is fixed.
        if (a->max_value != b->max_value) return a->max_value > b->max_value;
        if (a->tokens != b->tokens) return a->tokens < b->tokens;
        return a->token_activations < b->token_activations;
    });

    AssemblyResult result;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        const auto layer = sorted[i]->layer;
        const auto feature = sorted[i]->feature_index;
        while (j < sorted.size() && sorted[j]->layer == layer && sorted[j]->feature_index == feature) ++j;

        ParallelPhraseSet set;
        set.layer = layer;
        set.feature_index = feature;
        for (std::size_t k = i; k < j; ++k) {
            const auto* r = sorted[k];
            if (r->language != reference_language) continue;
            auto& slot = set.phrases[r->language];
            if (!slot.emplace(r->phrase_ordinal, extract_window(*r, radius)).second) ++result.dropped_duplicates;
        }
        const auto ref_it = set.phrases.find(reference_language);
        for (std::size_t k = i; k < j; ++k) {
            const auto* r = sorted[k];
            if (r->language == reference_language) continue;
            if (ref_it == set.phrases.end() || !ref_it->second.contains(r->phrase_ordinal)) {
                ++result.dropped_without_reference;
                continue;
            }
            auto& slot = set.phrases[r->language];
            if (!slot.emplace(r->phrase_ordinal, extract_window(*r, radius)).second) ++result.dropped_duplicates;
        }
        if (!set.phrases.empty()) result.sets.push_back(std::move(set));
        i = j;
    }
    return result;
}

}  // namespace xling
