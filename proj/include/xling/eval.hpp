#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xling/numerics.hpp"

namespace xling {

using TokenId = int;

// Anything that can produce next-token log-probabilities.
class TokenScorer {
public:
    virtual ~TokenScorer() = default;
    virtual std::size_t vocab_size() const = 0;
    // Log-probabilities over the vocabulary for the token following
    // `context` (non-empty).
    virtual Vector next_token_log_probs(std::span<const TokenId> context) const = 0;
};

// Per-token log-probabilities are clamped at this floor so a zero-probability
// token yields a finite, very low score.
inline constexpr double kLogProbFloor = -1.0e4;

struct McqItem {
    std::string language;
    std::vector<std::vector<TokenId>> shots;  // k-shot exemplars, prepended in order
    std::vector<TokenId> prompt;
    std::vector<std::vector<TokenId>> choices;
    std::size_t gold_index = 0;

    void validate(std::size_t vocab_size) const;
    std::vector<TokenId> context() const;
};

enum class ScoringMode { RawLoglik, PerTokenNormalized };
std::string to_string(ScoringMode m);
ScoringMode parse_scoring_mode(const std::string& s);

// Sum of choice-token log-probabilities given shots + prompt (+ earlier
// choice tokens); divided by the choice length in normalized mode.
std::vector<double> score_choices(const TokenScorer& model, const McqItem& item, ScoringMode mode);

struct ChoicePick {
    std::size_t index = 0;
    bool tied = false;
};

// Argmax with ties going to the lowest index.
ChoicePick pick_choice(std::span<const double> scores);

struct LanguageAccuracy {
    std::string language;
    std::size_t correct = 0;
    std::size_t item_count = 0;
    std::size_t ties = 0;
    double accuracy = 0.0;  // 100 * correct / item_count
};

struct EvalReport {
    ScoringMode scoring_mode = ScoringMode::PerTokenNormalized;
    std::vector<LanguageAccuracy> per_language;  // sorted by language
    std::size_t item_count = 0;
    std::size_t ties = 0;
};

EvalReport evaluate(const TokenScorer& model, const std::vector<McqItem>& items, ScoringMode mode);
// Aggregates precomputed per-item scores; shared by evaluate and tests.
EvalReport aggregate_scores(const std::vector<McqItem>& items,
                            const std::vector<std::vector<double>>& scores, ScoringMode mode);

std::string eval_report_csv(const std::vector<EvalReport>& reports);

std::vector<McqItem> load_items(const std::filesystem::path& path);
std::string serialize_items(const std::vector<McqItem>& items);

// language,accuracy CSV. Rejects duplicates, values outside [0, 100] and
// files without rows.
std::map<std::string, double> load_accuracy_fixture(const std::filesystem::path& path);
std::string accuracy_csv(const std::map<std::string, double>& acc);

// Items with random prompts/choices over [0, vocab) and a uniform gold index.
std::vector<McqItem> make_random_items(std::size_t n, std::size_t n_choices, std::size_t vocab,
                                       std::size_t choice_len, const std::string& language, Rng& rng);

}  // namespace xling
