#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xling/lora.hpp"
#include "xling/numerics.hpp"
#include "xling/sae.hpp"
#include "xling/toy_model.hpp"

namespace xling {

// How the gradient crosses the SAE gate when backpropagating the alignment
// loss. Exact uses d f / d pre = 1[pre > theta]. Relu passes the gradient
// wherever pre > 0, so features sitting below their JumpReLU threshold can
// still be pulled up.
enum class GateGradient { Exact, Relu };
std::string to_string(GateGradient g);
GateGradient parse_gate_gradient(const std::string& s);

// Reduction of per-token SAE features to one phrase vector: the token mean,
// or the per-feature max over tokens (the per-phrase max used by the
// activation analysis).
enum class PhrasePooling { Mean, Max };
std::string to_string(PhrasePooling p);
PhrasePooling parse_phrase_pooling(const std::string& s);

struct AlignmentConfig {
    double alpha = 1.0;
    std::size_t target_layer = 20;
    std::size_t tuned_first = 0;
    std::size_t tuned_last = 20;
    std::size_t iterations = 2;
    std::size_t sample_count = 4000;
    std::size_t rank = 8;
    double scale = 1.0;
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    GateGradient gate_gradient = GateGradient::Relu;
    PhrasePooling pooling = PhrasePooling::Mean;
    // Weight of an optional next-token loss on both sides of each pair
    // (0 = pure alignment objective).
    double lm_weight = 0.0;
    std::string reference_language = "en";
    std::uint64_t seed = 0;

    // Throws ValidationError for a bad range or when the model has fewer
    // layers than the config needs.
    void validate(std::size_t n_layers) const;
};

// sum_i |u_i - v_i| + alpha * sum_i (u_i - u_orig_i)^2
double alignment_loss(std::span<const double> u, std::span<const double> v,
                      std::span<const double> u_orig, double alpha);
// Row-wise loss averaged over the batch (rows of U, V, U_orig).
double alignment_loss(const Matrix& u, const Matrix& v, const Matrix& u_orig, double alpha);

struct AlignmentGrad {
    Vector du;
    Vector dv;
};

// d/du = sign(u - v) + 2 alpha (u - u_orig), d/dv = -sign(u - v), sign(0) = 0.
AlignmentGrad alignment_grad(std::span<const double> u, std::span<const double> v,
                             std::span<const double> u_orig, double alpha);

// One adapter per weight matrix of blocks tuned_first..tuned_last.
AdapterSet attach_adapters(const ToyModelParams& model, const AlignmentConfig& cfg, Rng& rng);

// A reference phrase and its translation.
struct AlignmentPair {
    std::string language;
    std::int64_t phrase_ordinal = 0;
    std::vector<TokenId> reference_tokens;
    std::vector<TokenId> target_tokens;
};

// Pooled SAE features of `tokens` at the target layer.
Vector pooled_features(const ToyModelParams& model, const AdapterSet* adapters, const SaeParams& sae,
                       std::size_t target_layer, std::span<const TokenId> tokens,
                       PhrasePooling pooling = PhrasePooling::Mean);

struct AlignmentMetrics {
    std::map<std::string, double> improvement_percent;  // non-reference languages
    double retention_percent = 100.0;
    std::vector<std::string> excluded_zero_pre;
};

// improvement = (post - pre) / pre * 100; retention = post_ref / pre_ref * 100.
// Languages with a zero pre mean are excluded and listed.
AlignmentMetrics improvement_and_retention(const std::map<std::string, double>& pre,
                                           const std::map<std::string, double>& post,
                                           const std::string& reference);

struct AlignmentOutcome {
    std::vector<double> loss_curve;  // mean batch loss per step
    std::map<std::string, double> pre_means;
    std::map<std::string, double> post_means;
    AlignmentMetrics metrics;
    std::size_t steps = 0;
    std::size_t skipped_pairs = 0;
};

// Mean activation per language over the pairs' phrases (reference side for
// the reference language): the mean over phrases of the mean pooled feature.
std::map<std::string, double> language_mean_activations(const ToyModelParams& model,
                                                        const AdapterSet* adapters, const SaeParams& sae,
                                                        const std::vector<AlignmentPair>& pairs,
                                                        const AlignmentConfig& cfg);

// Trains only the adapters. For `iterations` passes, draws `sample_count`
// pairs (cycling through a seeded shuffle), pools target-layer SAE features
// for both sides through the adapted model and takes Adam steps on the
// batch-averaged alignment loss. English snapshots u_orig come from the
// model with the adapters as passed in. Pairs with an empty side are skipped
// and counted. A non-finite loss aborts with the step index.
AlignmentOutcome run_alignment(const ToyModelParams& model, AdapterSet& adapters,
                               const std::vector<AlignmentPair>& pairs, const SaeParams& sae,
                               const AlignmentConfig& cfg);

std::string alignment_outcome_csv(const AlignmentOutcome& outcome, const std::string& reference);

}  // namespace xling
