#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xling/eval.hpp"
#include "xling/lora.hpp"
#include "xling/numerics.hpp"

namespace xling {

// ---------------------------------------------------------------------------
// Synthetic multilingual corpus
// ---------------------------------------------------------------------------

// Every language realizes the same latent concept stream through its own
// disjoint slice of the vocabulary: token id = language_index *
// shared_concept_count + concept. Concept streams come from a Markov chain
// (a fixed successor with probability `successor_probability`, otherwise a
// Zipf draw over concepts). Text is cut into sentences of `phrase_length`
// concepts; sentence k is the same concept sequence in every language, and
// each language realizes sentences 0, 1, ... until its token budget is
// spent (the last sentence may be truncated).
struct SyntheticCorpusConfig {
    std::vector<std::string> languages{"en", "xx"};
    std::size_t shared_concept_count = 64;
    std::map<std::string, std::size_t> tokens_per_language{{"en", 20000}, {"xx", 2000}};
    double zipf_exponent = 1.0;
    // Fraction of the sentences realized in full by every language that are
    // emitted as aligned parallel phrases.
    double parallel_fraction = 1.0;
    std::size_t phrase_length = 8;
    double successor_probability = 0.75;
    // 0 means "exactly languages x concepts".
    std::size_t vocab_size = 0;
    std::uint64_t seed = 1;

    void validate() const;
};

struct CorpusSequence {
    std::string language;
    std::vector<TokenId> tokens;
    std::vector<int> concept_ids;
    std::int64_t phrase_ordinal = 0;
    bool aligned = false;

    friend bool operator==(const CorpusSequence&, const CorpusSequence&) = default;
};

struct SyntheticCorpus {
    std::vector<std::string> languages;
    std::size_t concept_count = 0;
    std::size_t vocab_size = 0;
    std::vector<CorpusSequence> sequences;  // grouped by language, ordinal ascending

    std::size_t language_index(const std::string& lang) const;
    TokenId token_id(const std::string& lang, int concept_id) const;
    std::string token_name(TokenId id) const;
    std::size_t token_count(const std::string& lang) const;
    // Ordinals of aligned phrases (present in every language).
    std::vector<std::int64_t> aligned_ordinals() const;
    const CorpusSequence& sequence(const std::string& lang, std::int64_t ordinal) const;

    friend bool operator==(const SyntheticCorpus&, const SyntheticCorpus&) = default;
};

SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg);

// Fresh sentences from the same process (same successor map and Zipf law),
// drawn after every training sentence: `tokens_per_language` tokens in each
// language, all parallel. Ordinals continue after the training sentences.
SyntheticCorpus generate_heldout_corpus(const SyntheticCorpusConfig& cfg, std::size_t tokens_per_language);

// JSONL: a header object {format_version, languages, concept_count,
// vocab_size} followed by one {language, tokens, concept_ids,
// phrase_ordinal, aligned} object per sequence.
std::string serialize_corpus(const SyntheticCorpus& corpus);
SyntheticCorpus parse_corpus(const std::string& text);
void save_corpus(const std::filesystem::path& path, const SyntheticCorpus& corpus);
SyntheticCorpus load_corpus(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Attention-free residual MLP language model
// ---------------------------------------------------------------------------

struct ToyModelConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t d_hidden = 128;
    std::size_t n_layers = 8;
    // h_0 = embedding_multiplier * E[token]. Sets the units of the residual
    // stream (and so of SAE feature activations).
    double embedding_multiplier = 8.0;
};

// h_0 = m E[token]; h_{l+1} = h_l + W_out relu(W_in h_l + b_in) + b_out;
// logits = U h_L + c. The residual stream at layer l is h_l (the input of
// block l), so layer 0 is the post-embedding stream.
struct ToyBlock {
    Matrix w_in;   // d_hidden x d_model
    Vector b_in;   // d_hidden
    Matrix w_out;  // d_model x d_hidden
    Vector b_out;  // d_model
};

struct ToyModelParams {
    ToyModelConfig config;
    Matrix embedding;    // vocab x d_model
    std::vector<ToyBlock> blocks;
    Matrix unembedding;  // vocab x d_model
    Vector unembedding_bias;

    static ToyModelParams initialize(const ToyModelConfig& cfg, Rng& rng);
    void validate() const;
    std::size_t n_layers() const { return blocks.size(); }
    // "blocks.<l>.w_in" / "blocks.<l>.w_out".
    const Matrix& weight(const std::string& weight_id) const;
    std::vector<std::string> weight_ids() const;

    friend bool operator==(const ToyModelParams& a, const ToyModelParams& b);
};

std::string weight_id(std::size_t layer, bool input_projection);

// Intermediate values kept for backpropagation.
struct ForwardCache {
    std::vector<TokenId> tokens;
    std::vector<Matrix> residual;   // residual[l] = h_l, l in [0, computed layers]
    std::vector<Matrix> pre_relu;   // per block
    std::vector<Matrix> hidden;     // relu output per block
    std::vector<Matrix> proj_in;    // x down^T for adapters on w_in (empty if none)
    std::vector<Matrix> proj_out;   // for adapters on w_out
};

// Runs embedding and the first `n_blocks` blocks (all when nullopt).
ForwardCache forward(const ToyModelParams& model, std::span<const TokenId> tokens,
                     const AdapterSet* adapters = nullptr,
                     std::optional<std::size_t> n_blocks = std::nullopt);

Matrix logits(const ToyModelParams& model, const ForwardCache& cache);

// Summed next-token cross-entropy of `logits` rows against `targets`. When
// `grad` is non-null it receives (softmax - onehot) * scale.
double softmax_cross_entropy(const Matrix& logits, std::span<const TokenId> targets, double scale,
                             Matrix* grad);

struct ToyModelGrads {
    Matrix embedding;
    std::vector<ToyBlock> blocks;
    Matrix unembedding;
    Vector unembedding_bias;
};

// Zero gradients shaped like `m`.
ToyModelGrads zero_grads(const ToyModelParams& m);

// Backpropagates `grad_h` (gradient w.r.t. residual[from_layer]) down to the
// embedding. Base-weight gradients go to `base` (may be null); adapter
// gradients to `adapter_grads` (may be null).
void backward_blocks(const ToyModelParams& model, const ForwardCache& cache, Matrix grad_h,
                     std::size_t from_layer, const AdapterSet* adapters, ToyModelGrads* base,
                     std::map<std::string, LoraGrads>* adapter_grads);

// Residual stream per layer: n_layers entries of seq_len x d_model.
std::vector<Matrix> capture_residuals(const ToyModelParams& model, std::span<const TokenId> tokens,
                                      const AdapterSet* adapters = nullptr);

struct ToyTrainConfig {
    std::size_t epochs = 4;
    double learning_rate = 3e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 7;
};

struct ToyTrainResult {
    ToyModelParams params;
    std::vector<double> loss_curve;  // mean cross-entropy per epoch
};

// Next-token cross-entropy over all (token, next token) pairs of every
// sequence, shuffled per epoch. Throws ValidationError with the step index on
// a non-finite loss.
ToyTrainResult train_toy_model(const SyntheticCorpus& corpus, const ToyModelConfig& model_cfg,
                               const ToyTrainConfig& cfg);
ToyTrainResult train_toy_model(const SyntheticCorpus& corpus, ToyModelParams initial,
                               const ToyTrainConfig& cfg);

// exp(mean next-token cross-entropy) over one language's sequences.
double perplexity(const ToyModelParams& model, const SyntheticCorpus& corpus,
                  const std::string& language, const AdapterSet* adapters = nullptr);

// TokenScorer over a trained model. The model is attention-free, so only the
// last context token matters.
class ToyScorer : public TokenScorer {
public:
    explicit ToyScorer(const ToyModelParams& model, const AdapterSet* adapters = nullptr)
        : model_(model), adapters_(adapters) {}
    std::size_t vocab_size() const override { return model_.config.vocab_size; }
    Vector next_token_log_probs(std::span<const TokenId> context) const override;

private:
    const ToyModelParams& model_;
    const AdapterSet* adapters_;
};

// Multiple-choice items from aligned corpus sentences: the prompt is a
// sentence prefix, the gold choice its true continuation token, distractors
// are other concepts in the same language.
std::vector<McqItem> make_corpus_items(const SyntheticCorpus& corpus, std::size_t items_per_language,
                                       std::size_t n_choices, std::size_t n_shots, Rng& rng);

inline constexpr int kToyModelFormatVersion = 1;
void save_toy_model(const std::filesystem::path& path, const ToyModelParams& model);
ToyModelParams load_toy_model(const std::filesystem::path& path);

}  // namespace xling
