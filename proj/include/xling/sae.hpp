#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xling/numerics.hpp"

namespace xling {

enum class SaeVariant { ReluL1, JumpRelu };

std::string to_string(SaeVariant v);
SaeVariant parse_sae_variant(const std::string& s);

// Sparse autoencoder over residual activations.
//
//   pre = (x - b_dec) W_enc + b_enc
//   f_j = pre_j  if pre_j > theta_j, else 0      (theta == 0 for ReluL1)
//   x_hat = f W_dec + b_dec
//
// Rows of w_dec are the feature directions and are kept at unit norm.
struct SaeParams {
    std::size_t d_model = 0;
    std::size_t d_features = 0;
    Matrix w_enc;  // d_model x d_features
    Vector b_enc;  // d_features
    Matrix w_dec;  // d_features x d_model
    Vector b_dec;  // d_model
    Vector thresholds;
    SaeVariant variant = SaeVariant::JumpRelu;

    // Random unit decoder rows, w_enc = w_dec^T, zero biases, theta = 0.001
    // (0 for ReluL1).
    static SaeParams initialize(std::size_t d_model, std::size_t d_features, SaeVariant variant,
                                Rng& rng);

    // Throws ShapeError / ValidationError when the invariants do not hold.
    void validate() const;
};

struct SaeTrainConfig {
    SaeVariant variant = SaeVariant::JumpRelu;
    std::size_t d_features = 512;
    double sparsity_coefficient = 0.03;
    // When set, the sparsity coefficient is steered multiplicatively each
    // step so that the batch L0 tracks this target, starting from
    // controller_initial_coefficient instead of sparsity_coefficient. A small
    // start lets the coefficient ramp up to its equilibrium; starting high
    // overshoots and pushes thresholds past the point MSE can recover from.
    std::optional<double> target_l0;
    double l0_controller_rate = 0.01;
    double controller_initial_coefficient = 1e-4;
    std::size_t batch_size = 64;
    std::size_t steps = 2000;
    double learning_rate = 1e-3;
    double ste_bandwidth = 1e-3;
    // Train on inputs divided by their centered RMS (per dimension) and fold
    // the scale back into the biases and thresholds, so lr, init and
    // ste_bandwidth act in unit-variance coordinates whatever the input units.
    bool normalize_input = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SaeTrainLog {
    std::vector<double> mse;
    std::vector<double> mean_l0;
    std::vector<double> sparsity_coefficient;
};

struct SaeTrainResult {
    SaeParams params;
    SaeTrainLog log;
};

Vector encode(const SaeParams& sae, std::span<const double> x);
Vector decode(const SaeParams& sae, std::span<const double> f);
// Row-wise versions over a batch (one sample per row).
Matrix encode_batch(const SaeParams& sae, const Matrix& x);
Matrix decode_batch(const SaeParams& sae, const Matrix& f);
// Pre-activations (x - b_dec) W_enc + b_enc, used by gradient code.
Matrix pre_activations(const SaeParams& sae, const Matrix& x);

// Trains on the rows of `activations`. Mini-batches are drawn by walking a
// seeded shuffle of the rows, reshuffling at each pass.
SaeTrainResult train_sae(const Matrix& activations, const SaeTrainConfig& cfg);

// Mean count of strictly positive features per input row.
double mean_l0(const SaeParams& sae, const Matrix& activations);

double reconstruction_mse(const SaeParams& sae, const Matrix& activations);

struct SyntheticDictionaryData {
    Matrix dictionary;  // n_atoms x d_model, unit rows
    Matrix samples;     // n_samples x d_model
};

// Each sample is a non-negative combination (coefficients in [0.5, 1.5]) of
// `active_per_sample` distinct atoms drawn uniformly from a random unit-norm
// dictionary.
SyntheticDictionaryData make_synthetic_dictionary_data(std::size_t d_model, std::size_t n_atoms,
                                                       std::size_t active_per_sample,
                                                       std::size_t n_samples, Rng& rng);

// Mean over true atoms of the best cosine against any learned row.
double dictionary_recovery(const Matrix& learned_rows, const Matrix& true_rows);

inline constexpr int kSaeFormatVersion = 1;

void save_sae(const std::filesystem::path& path, const SaeParams& sae,
              const std::optional<SaeTrainConfig>& cfg = std::nullopt);
SaeParams load_sae(const std::filesystem::path& path);

}  // namespace xling
