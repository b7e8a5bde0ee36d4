#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace xling {

inline constexpr std::size_t kMaxLayer = 25;
inline constexpr std::size_t kMaxFeatureIndex = 16383;
inline constexpr std::size_t kWindowRadius = 3;
inline constexpr double kDefaultThresholdFraction = 0.8;

// One phrase's per-token activation trace for a (layer, feature, language).
struct ActivationRecord {
    std::size_t layer = 0;
    std::size_t feature_index = 0;
    std::string language;
    std::vector<std::string> tokens;
    std::vector<double> token_activations;
    double max_value = 0.0;
    std::int64_t phrase_ordinal = 0;

    // Builds a record and fills max_value from the activations.
    static ActivationRecord make(std::size_t layer, std::size_t feature_index, std::string language,
                                 std::vector<std::string> tokens, std::vector<double> activations,
                                 std::int64_t phrase_ordinal);

    // Empty string when valid, otherwise the first violated invariant.
    std::string validation_error() const;

    friend bool operator==(const ActivationRecord&, const ActivationRecord&) = default;
};

// Index of the largest activation; ties go to the lowest index.
std::size_t argmax_index(const std::vector<double>& activations);

struct PhraseWindow {
    std::size_t layer = 0;
    std::size_t feature_index = 0;
    std::string language;
    std::int64_t phrase_ordinal = 0;
    std::size_t start = 0;  // first token index in the source record
    std::vector<std::string> window_tokens;
    std::vector<double> window_activations;
    std::size_t argmax_offset = 0;  // within the window

    double max_value() const { return window_activations.at(argmax_offset); }
    std::size_t end() const { return start + window_tokens.size(); }

    friend bool operator==(const PhraseWindow&, const PhraseWindow&) = default;
};

// Tokens [argmax - radius, argmax + radius] clipped to the record bounds.
PhraseWindow extract_window(const ActivationRecord& record, std::size_t radius = kWindowRadius);
// The same span applied to another (aligned) record, e.g. a translation.
PhraseWindow window_at(const ActivationRecord& record, std::size_t start, std::size_t length);
// A record restricted to its window.
ActivationRecord to_record(const PhraseWindow& w);

enum class ThresholdMode { Strict, Inclusive };

// Keeps records whose max_value exceeds threshold_fraction x (group max).
// All records must share one (layer, feature_index).
std::vector<ActivationRecord> select_top_phrases(const std::vector<ActivationRecord>& group,
                                                 double threshold_fraction = kDefaultThresholdFraction,
                                                 ThresholdMode mode = ThresholdMode::Strict);

// {stride * i | i in [0, n)}.
std::vector<std::size_t> sample_feature_indices(std::size_t total, std::size_t stride, std::size_t n);

enum class RecordFormat { Jsonl, Csv };
RecordFormat parse_record_format(const std::string& s);
RecordFormat record_format_for_path(const std::filesystem::path& p);

struct RowError {
    std::size_t line = 0;
    std::string message;
};

struct ParseReport {
    std::vector<ActivationRecord> records;
    std::vector<RowError> errors;
};

// Per-row failures are collected; unreadable files and malformed CSV headers
// throw ValidationError.
ParseReport parse_records(const std::filesystem::path& path, RecordFormat format);
ParseReport parse_records_text(const std::string& text, RecordFormat format);
std::string serialize_records(const std::vector<ActivationRecord>& records, RecordFormat format);
void write_records(const std::filesystem::path& path, const std::vector<ActivationRecord>& records,
                   RecordFormat format);

struct ParallelPhraseSet {
    std::size_t layer = 0;
    std::size_t feature_index = 0;
    // language -> phrase ordinal -> window
    std::map<std::string, std::map<std::int64_t, PhraseWindow>> phrases;

    friend bool operator==(const ParallelPhraseSet&, const ParallelPhraseSet&) = default;
};

struct AssemblyResult {
    std::vector<ParallelPhraseSet> sets;  // sorted by (layer, feature_index)
    std::size_t dropped_without_reference = 0;
    std::size_t dropped_duplicates = 0;
};

// Groups records by (layer, feature). Each record is windowed with
// extract_window(record, radius). Non-reference phrases with no reference phrase of the same
// ordinal are dropped and counted.
AssemblyResult assemble_parallel(const std::vector<ActivationRecord>& records,
                                 const std::string& reference_language = "en",
                                 std::size_t radius = kWindowRadius);

struct LanguageGroups {
    std::vector<std::string> high{"en", "zh", "ru", "es", "it"};
    std::vector<std::string> medlow{"id", "ca", "mr", "ml", "hi"};
    std::string reference = "en";
};

}  // namespace xling
