#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "xling/numerics.hpp"

namespace xling {

// Low-rank delta on a frozen weight W (d_out x d_in):
//   W_eff = W + scale * up * down
// with down: rank x d_in and up: d_out x rank. `up` starts at zero so the
// adapted layer is the base layer until the first update.
struct LoraAdapter {
    std::string target_weight_id;
    std::size_t rank = 0;
    Matrix down;
    Matrix up;
    double scale = 1.0;

    static LoraAdapter create(std::string target_weight_id, std::size_t d_out, std::size_t d_in,
                              std::size_t rank, double scale, Rng& rng);

    std::size_t d_out() const { return up.rows(); }
    std::size_t d_in() const { return down.cols(); }
    Matrix delta() const;
};

struct LoraGrads {
    Matrix down;
    Matrix up;
};

// Adapters keyed by weight id ("blocks.<layer>.w_in" / "blocks.<layer>.w_out").
struct AdapterSet {
    std::map<std::string, LoraAdapter> adapters;

    const LoraAdapter* find(const std::string& weight_id) const;
    bool empty() const { return adapters.empty(); }
};

// y = x W^T (+ bias added by the caller) with the adapter contribution when
// `adapter` is non-null. `projected` receives x down^T for the backward pass.
Matrix linear_forward(const Matrix& x, const Matrix& weight, const LoraAdapter* adapter,
                      Matrix* projected);

void save_adapters(const std::filesystem::path& path, const AdapterSet& set);
AdapterSet load_adapters(const std::filesystem::path& path);

}  // namespace xling
