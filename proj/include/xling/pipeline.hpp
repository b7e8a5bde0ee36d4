#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xling/align.hpp"
#include "xling/analysis.hpp"
#include "xling/eval.hpp"
#include "xling/ingest.hpp"
#include "xling/sae.hpp"
#include "xling/toy_model.hpp"

namespace xling {

inline constexpr const char* kVersion = "0.1.0";

struct IngestSection {
    std::vector<std::string> inputs;
    std::string format = "auto";  // auto | jsonl | csv
    double threshold_fraction = kDefaultThresholdFraction;
    bool inclusive_threshold = false;
    std::size_t stride = 16;
    std::size_t n_indices = 1000;
    std::size_t window_radius = kWindowRadius;
    PhraseScalar phrase_scalar = PhraseScalar::MaxValue;
};

struct SaeSection {
    SaeTrainConfig train;
    // Residual rows used for SAE training in toy runs (evenly strided).
    std::size_t max_training_rows = 16000;
};

struct ToySection {
    SyntheticCorpusConfig corpus;
    ToyModelConfig model;
    ToyTrainConfig train;
    // Feature sampling for toy ingestion: stride * i for i < n_features.
    std::size_t feature_stride = 1;
    std::size_t n_features = 512;
};

struct EvalSection {
    ScoringMode mode = ScoringMode::PerTokenNormalized;
    std::size_t items_per_language = 200;
    // Tokens per language of the held-out corpus used for perplexity and
    // eval items in toy runs.
    std::size_t heldout_tokens = 2000;
    std::size_t n_choices = 4;
    std::size_t n_shots = 0;
    std::uint64_t seed = 11;
};

struct OutputSection {
    std::string directory = "xling-out";
    bool emit_svg = true;
};

struct PipelineConfig {
    IngestSection ingest;
    LanguageGroups groups;
    SaeSection sae;
    ToySection toy;
    AlignmentConfig align;
    EvalSection eval;
    OutputSection output;

    // Defaults sized for the toy model (8 layers): target layer 6, blocks 0-6.
    static PipelineConfig defaults();
    void validate() const;
};

nlohmann::json config_to_json(const PipelineConfig& cfg);
// Missing keys keep their defaults; unknown keys throw ValidationError with
// the full key path.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
// SHA-256 of the canonical JSON dump.
std::string config_hash(const PipelineConfig& cfg);

// Restricts groups to the given languages. Empty groups fall back to
// {reference} / the remaining languages.
LanguageGroups groups_for_languages(const LanguageGroups& groups, const std::vector<std::string>& languages);

// ---------------------------------------------------------------------------
// Toy-model stages
// ---------------------------------------------------------------------------

// Residuals at `layer` for every corpus token, evenly strided down to at most
// `max_rows` rows.
Matrix toy_layer_activations(const ToyModelParams& model, const SyntheticCorpus& corpus, std::size_t layer,
                             std::size_t max_rows, const AdapterSet* adapters = nullptr);

struct ToyIngestOptions {
    std::size_t layer = 0;
    std::vector<std::size_t> feature_indices;
    double threshold_fraction = kDefaultThresholdFraction;
    ThresholdMode threshold_mode = ThresholdMode::Strict;
    std::size_t window_radius = kWindowRadius;
    std::string reference_language = "en";
};

// Builds phrase-window records from the toy model. For each feature, the
// reference language's aligned sentences are scored, the top phrases kept
// and windowed around their peak token; each window is then read off the
// translated sentences at the same positions. Selection always uses the base
// model; activations are measured through `adapters` when given, so pre- and
// post-tuning records cover identical windows.
std::vector<ActivationRecord> toy_records(const ToyModelParams& model, const AdapterSet* adapters,
                                          const SyntheticCorpus& corpus, const SaeParams& sae,
                                          const ToyIngestOptions& opts);

// Toy ingestion settings from the config: the target layer and a strided
// sample of the SAE's features.
ToyIngestOptions toy_ingest_options(const PipelineConfig& cfg, std::size_t d_features);

// Record-file ingestion. Per (layer, feature), the reference language's
// phrases are filtered by the threshold rule; translations of the kept
// ordinals are retained and every phrase is cut to its window.
struct WindowedRecords {
    std::vector<ActivationRecord> records;
    std::size_t groups = 0;
    std::size_t dropped_below_threshold = 0;
    std::size_t dropped_without_reference = 0;
    std::size_t dropped_duplicates = 0;
};
WindowedRecords window_records(const std::vector<ActivationRecord>& records, const IngestSection& ingest,
                               const std::string& reference_language);

// Per-layer cosine between each language's mean-pooled residual and the
// reference phrase's, over aligned sentences.
std::vector<SimilarityProfile> toy_similarity(const ToyModelParams& model, const AdapterSet* adapters,
                                              const SyntheticCorpus& corpus, const std::string& reference);

// Aligned sentence pairs (reference, other language) for alignment tuning.
std::vector<AlignmentPair> toy_alignment_pairs(const SyntheticCorpus& corpus, const std::string& reference);

struct AnalysisReport {
    std::vector<FeatureActivationStats> stats;
    std::vector<LayerGapReport> gaps;
    RatioReport ratios;
};

AnalysisReport analyze_records(const std::vector<ActivationRecord>& records, const LanguageGroups& groups,
                               PhraseScalar scalar);

std::optional<double> gap_at_layer(const std::vector<LayerGapReport>& gaps, std::size_t layer);

struct ToyRunResult {
    SyntheticCorpus corpus;
    SyntheticCorpus heldout;
    ToyModelParams model;
    std::vector<double> toy_loss;
    std::map<std::string, double> perplexity_pre;
    std::map<std::string, double> perplexity_post;
    SaeParams sae;
    SaeTrainLog sae_log;
    LanguageGroups groups;
    std::vector<ActivationRecord> records_pre;
    std::vector<ActivationRecord> records_post;
    AnalysisReport analysis_pre;
    AnalysisReport analysis_post;
    std::vector<SimilarityProfile> similarity_pre;
    std::vector<SimilarityProfile> similarity_post;
    AdapterSet adapters;
    AlignmentOutcome alignment;
    std::vector<EvalReport> eval_pre;   // one per scoring mode
    std::vector<EvalReport> eval_post;
    std::optional<double> target_gap_pre;
    std::optional<double> target_gap_post;
};

// Eval items drawn from held-out sentences with the eval section's settings.
std::vector<McqItem> toy_eval_items(const PipelineConfig& cfg, const SyntheticCorpus& heldout);

// corpus -> toy model -> SAE at the target layer -> records -> gap analysis
// -> alignment tuning -> re-measured records -> gap analysis, plus eval.
ToyRunResult run_toy_pipeline(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string eval_modes_csv(const std::vector<EvalReport>& pre, const std::vector<EvalReport>& post);
std::string loss_curve_csv(const std::vector<double>& values, const std::string& column);

// Writes every CSV (and SVG when enabled) of a toy run plus manifest.json.
// Returns the written file names.
std::vector<std::string> write_toy_reports(const ToyRunResult& run, const PipelineConfig& cfg,
                                           const std::filesystem::path& dir);

// manifest.json: command, config hash, config, seeds, version, outputs and
// the SHA-256 of every input file.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const PipelineConfig& cfg,
                    const std::vector<std::string>& outputs,
                    const std::vector<std::filesystem::path>& inputs = {});

}  // namespace xling
