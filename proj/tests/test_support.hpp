#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "xling/analysis.hpp"
#include "xling/eval.hpp"
#include "xling/ingest.hpp"
#include "xling/numerics.hpp"

namespace xling::testing {

// A valid record with 1..max_len random tokens.
inline ActivationRecord random_record(Rng& rng, std::size_t layer, std::size_t feature, const std::string& language,
                                      std::int64_t ordinal, std::size_t max_len = 12) {
    const std::size_t n = 1 + rng.below(max_len);
    std::vector<std::string> tokens;
    std::vector<double> acts;
    for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back("t" + std::to_string(rng.below(50)));
        // Coarse values so ties occur.
        acts.push_back(static_cast<double>(rng.below(20)) * 0.25);
    }
    return ActivationRecord::make(layer, feature, language, std::move(tokens), std::move(acts), ordinal);
}

// A group of records sharing one (layer, feature).
inline std::vector<ActivationRecord> random_group(Rng& rng, std::size_t size) {
    const std::size_t layer = rng.below(26), feature = rng.below(16384);
    std::vector<ActivationRecord> g;
    for (std::size_t i = 0; i < size; ++i)
        g.push_back(random_record(rng, layer, feature, "en", static_cast<std::int64_t>(i)));
    return g;
}

// Brute-force strict filter: keep max_value > fraction * group max.
inline std::vector<ActivationRecord> brute_force_filter(const std::vector<ActivationRecord>& g, double fraction) {
    double mx = g.front().max_value;
    for (const auto& r : g) mx = std::max(mx, r.max_value);
    std::vector<ActivationRecord> out;
    for (const auto& r : g)
        if (r.max_value > fraction * mx) out.push_back(r);
    return out;
}

// Random per-(layer, feature, language) stats over the given languages.
inline std::vector<FeatureActivationStats> random_stats(Rng& rng, const std::vector<std::string>& languages,
                                                        std::size_t layers, std::size_t features) {
    std::vector<FeatureActivationStats> stats;
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t f = 0; f < features; ++f)
            for (const auto& lang : languages)
                stats.push_back({l, f * 16, lang, rng.uniform(0.05, 5.0), 1 + rng.below(9)});
    return stats;
}

// Direct recomputation of the group gap at one layer: per-language means,
// then the equal-weight mean per group.
inline double direct_gap(const std::vector<FeatureActivationStats>& stats, std::size_t layer,
                         const LanguageGroups& groups) {
    auto lang_mean = [&](const std::string& lang) {
        double s = 0;
        int n = 0;
        for (const auto& st : stats)
            if (st.layer == layer && st.language == lang) {
                s += st.mean_activation;
                ++n;
            }
        return s / n;
    };
    double hi = 0, lo = 0;
    for (const auto& l : groups.high) hi += lang_mean(l);
    for (const auto& l : groups.medlow) lo += lang_mean(l);
    hi /= static_cast<double>(groups.high.size());
    lo /= static_cast<double>(groups.medlow.size());
    return (hi - lo) / hi * 100.0;
}

// Same logits for every token: every choice ties.
class UniformScorer : public TokenScorer {
public:
    explicit UniformScorer(std::size_t vocab) : vocab_(vocab) {}
    std::size_t vocab_size() const override { return vocab_; }
    Vector next_token_log_probs(std::span<const TokenId>) const override {
        return Vector(vocab_, -std::log(static_cast<double>(vocab_)));
    }

private:
    std::size_t vocab_;
};

// Puts all probability on the continuation of one chosen token sequence: if
// the context ends in a prefix of `target`, the next target token gets
// log-prob 0 and everything else the floor.
class RiggedScorer : public TokenScorer {
public:
    RiggedScorer(std::size_t vocab, std::vector<TokenId> base, std::vector<TokenId> target)
        : vocab_(vocab), base_(std::move(base)), target_(std::move(target)) {}
    std::size_t vocab_size() const override { return vocab_; }
    Vector next_token_log_probs(std::span<const TokenId> context) const override {
        Vector lp(vocab_, -1.0e6);
        const std::size_t k = context.size() - base_.size();
        if (k < target_.size()) lp[static_cast<std::size_t>(target_[k])] = 0.0;
        return lp;
    }

private:
    std::size_t vocab_;
    std::vector<TokenId> base_;
    std::vector<TokenId> target_;
};

// Deterministic pseudo-random log-softmax depending on the whole context.
class HashScorer : public TokenScorer {
public:
    explicit HashScorer(std::size_t vocab) : vocab_(vocab) {}
    std::size_t vocab_size() const override { return vocab_; }
    Vector next_token_log_probs(std::span<const TokenId> context) const override {
        std::uint64_t h = 1469598103934665603ULL;
        for (TokenId t : context) h = (h ^ static_cast<std::uint64_t>(t)) * 1099511628211ULL;
        Rng rng(h);
        Vector z(vocab_);
        double mx = -1e300;
        for (double& v : z) {
            v = 3.0 * rng.normal();
            mx = std::max(mx, v);
        }
        double s = 0;
        for (double v : z) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (double& v : z) v -= lse;
        return z;
    }

private:
    std::size_t vocab_;
};

// Knows every item's gold answer: puts all probability on the gold
// continuation of whichever item's context the query extends.
class OracleScorer : public TokenScorer {
public:
    OracleScorer(std::size_t vocab, const std::vector<McqItem>& items) : vocab_(vocab) {
        for (const auto& item : items) gold_[item.context()] = item.choices[item.gold_index];
    }
    std::size_t vocab_size() const override { return vocab_; }
    Vector next_token_log_probs(std::span<const TokenId> context) const override {
        Vector lp(vocab_, -1.0e6);
        for (std::size_t k = 0; k <= context.size(); ++k) {
            const std::vector<TokenId> base(context.begin(), context.end() - static_cast<std::ptrdiff_t>(k));
            auto it = gold_.find(base);
            if (it == gold_.end() || k >= it->second.size()) continue;
            if (!std::equal(context.end() - static_cast<std::ptrdiff_t>(k), context.end(), it->second.begin())) continue;
            lp[static_cast<std::size_t>(it->second[k])] = 0.0;
            break;
        }
        return lp;
    }

private:
    std::size_t vocab_;
    std::map<std::vector<TokenId>, std::vector<TokenId>> gold_;
};

}  // namespace xling::testing
