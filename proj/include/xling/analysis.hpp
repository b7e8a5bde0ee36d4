#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xling/ingest.hpp"
#include "xling/numerics.hpp"

namespace xling {

// Elementwise mean of equal-length vectors.
Vector mean_pool(const std::vector<Vector>& token_vectors);
Vector mean_pool(const Matrix& token_rows);

// u.v / (|u||v|) clamped to [-1, 1]. Throws ValidationError for a zero-norm
// input; try_cosine returns nullopt instead.
double cosine(std::span<const double> u, std::span<const double> v);
std::optional<double> try_cosine(std::span<const double> u, std::span<const double> v);

// A phrase's pooled vector at one layer (residual stream or SAE features).
struct PooledPhrase {
    std::size_t layer = 0;
    std::string language;
    std::int64_t phrase_ordinal = 0;
    Vector vector;
};

struct SimilarityProfile {
    std::string language;
    std::string source = "residual";  // or "sae"
    // One entry per layer; nullopt where no pair exists.
    std::vector<std::optional<double>> per_layer_cosine;
    std::vector<std::size_t> pair_counts;
    std::size_t skipped_zero_norm = 0;
};

// Pairs every `language` phrase with the reference phrase of the same
// (layer, ordinal) and averages the cosines per layer.
SimilarityProfile layer_similarity(const std::vector<PooledPhrase>& phrases,
                                   const std::string& language, std::size_t n_layers,
                                   const std::string& reference_language = "en");

struct FeatureActivationStats {
    std::size_t layer = 0;
    std::size_t feature_index = 0;
    std::string language;
    double mean_activation = 0.0;
    std::size_t phrase_count = 0;

    friend bool operator==(const FeatureActivationStats&, const FeatureActivationStats&) = default;
};

// Per-phrase scalar fed into the means.
enum class PhraseScalar { MaxValue, WindowMean };

// Mean of the per-phrase scalar per (layer, feature, language), sorted by key.
std::vector<FeatureActivationStats> mean_activation_per_index(
    const std::vector<ActivationRecord>& records, PhraseScalar scalar = PhraseScalar::MaxValue);

enum class GapStatus { Ok, MissingGroup, UndefinedZeroHigh };
std::string to_string(GapStatus s);

struct LayerGapReport {
    std::size_t layer = 0;
    double mean_high = 0.0;
    double mean_medlow = 0.0;
    double gap_percent = 0.0;
    GapStatus status = GapStatus::Ok;
};

// (high - medlow) / high x 100 with both means taken over member languages
// (each language weighted equally; a language's mean is the mean of its
// per-feature stats at that layer).
double gap_percent(double mean_high, double mean_medlow);

// Per-language mean activation at each layer.
std::map<std::size_t, std::map<std::string, double>> language_means_by_layer(
    const std::vector<FeatureActivationStats>& stats);

std::vector<LayerGapReport> activation_gap(const std::vector<FeatureActivationStats>& stats,
                                           const LanguageGroups& groups);

struct RatioStats {
    std::string language;
    double mean_ratio = 0.0;
    double std_ratio = 0.0;  // population standard deviation
    std::size_t count = 0;
};

struct RatioEntry {
    std::size_t layer = 0;
    std::size_t feature_index = 0;
    std::string language;
    double ratio = 0.0;
};

struct RatioReport {
    std::vector<RatioStats> per_language;  // sorted by language
    std::vector<RatioEntry> table;         // sorted by (layer, index, language)
    std::size_t excluded_zero_reference = 0;
};

RatioReport activation_ratio(const std::vector<FeatureActivationStats>& stats,
                             const std::string& reference_language = "en");

// Sample Pearson correlation. Throws ValidationError for length mismatch,
// fewer than 3 points or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

enum class GapConvention { Ratio, Difference };
GapConvention parse_gap_convention(const std::string& s);

struct CorrelationResult {
    std::string benchmark;
    double r = 0.0;
    std::size_t n = 0;
    std::vector<std::string> languages;
};

// Correlates per-language activation (ratio, or 1 - ratio for Difference)
// with accuracy over the languages present in both maps, excluding the
// reference language.
CorrelationResult correlate(const std::map<std::string, double>& mean_ratio,
                            const std::map<std::string, double>& accuracy,
                            const std::string& benchmark, GapConvention convention,
                            const std::string& reference_language = "en");

// CSV report writers (header + rows).
std::string layer_gap_csv(const std::vector<LayerGapReport>& rows);
std::string similarity_csv(const std::vector<SimilarityProfile>& profiles);
std::string ratios_csv(const std::vector<RatioStats>& rows);
std::string correlation_csv(const std::vector<CorrelationResult>& rows);

// language -> mean ratio from a ratios.csv-shaped file (language,mean,std).
std::map<std::string, double> load_ratio_means(const std::filesystem::path& path);

}  // namespace xling
