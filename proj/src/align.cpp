#include "xling/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "xling/io.hpp"

namespace xling {

std::string to_string(GateGradient g) { return g == GateGradient::Exact ? "exact" : "relu"; }

GateGradient parse_gate_gradient(const std::string& s) {
    if (s == "exact") return GateGradient::Exact;
    if (s == "relu") return GateGradient::Relu;
    throw ValidationError("unknown gate gradient '" + s + "' (expected exact or relu)");
}

std::string to_string(PhrasePooling p) { return p == PhrasePooling::Mean ? "mean" : "max"; }

PhrasePooling parse_phrase_pooling(const std::string& s) {
    if (s == "mean") return PhrasePooling::Mean;
    if (s == "max") return PhrasePooling::Max;
    throw ValidationError("unknown phrase pooling '" + s + "' (expected mean or max)");
}

void AlignmentConfig::validate(std::size_t n_layers) const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("align: alpha must be finite and >= 0");
    if (target_layer >= n_layers)
        throw ValidationError("align: target_layer " + std::to_string(target_layer) + " does not exist in a " +
                              std::to_string(n_layers) + "-layer model");
    if (tuned_first > tuned_last)
        throw ValidationError("align: tuned layer range " + std::to_string(tuned_first) + "-" +
                              std::to_string(tuned_last) + " is empty");
    if (tuned_last > target_layer)
        throw ValidationError("align: tuned layers must not extend above target_layer " +
                              std::to_string(target_layer));
    if (rank < 1) throw ValidationError("align: rank must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("align: learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("align: batch_size must be >= 1");
    if (iterations > 0 && sample_count < 1) throw ValidationError("align: sample_count must be >= 1");
    if (!(lm_weight >= 0.0)) throw ValidationError("align: lm_weight must be >= 0");
}

namespace {

void check_lengths(std::size_t u, std::size_t v, std::size_t o) {
    if (u != v || u != o)
        throw ShapeError("alignment: lengths differ (u " + std::to_string(u) + ", v " + std::to_string(v) +
                         ", u_orig " + std::to_string(o) + ")");
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double alignment_loss(std::span<const double> u, std::span<const double> v, std::span<const double> u_orig,
                      double alpha) {
    check_lengths(u.size(), v.size(), u_orig.size());
    double l1 = 0.0, l2 = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        l1 += std::abs(u[i] - v[i]);
        const double d = u[i] - u_orig[i];
        l2 += d * d;
    }
    return l1 + alpha * l2;
}

double alignment_loss(const Matrix& u, const Matrix& v, const Matrix& u_orig, double alpha) {
    if (u.rows() != v.rows() || u.rows() != u_orig.rows())
        throw ShapeError("alignment: batch shapes " + u.shape_string() + ", " + v.shape_string() + ", " +
                         u_orig.shape_string());
    if (u.rows() == 0) throw ValidationError("alignment: empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < u.rows(); ++r) total += alignment_loss(u.row(r), v.row(r), u_orig.row(r), alpha);
    return total / static_cast<double>(u.rows());
}

AlignmentGrad alignment_grad(std::span<const double> u, std::span<const double> v, std::span<const double> u_orig,
                             double alpha) {
    check_lengths(u.size(), v.size(), u_orig.size());
    AlignmentGrad g{Vector(u.size()), Vector(u.size())};
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double s = sign(u[i] - v[i]);
        g.du[i] = s + 2.0 * alpha * (u[i] - u_orig[i]);
        g.dv[i] = -s;
    }
    return g;
}

AdapterSet attach_adapters(const ToyModelParams& model, const AlignmentConfig& cfg, Rng& rng) {
    cfg.validate(model.n_layers());
    AdapterSet set;
    for (std::size_t l = cfg.tuned_first; l <= cfg.tuned_last; ++l) {
        for (bool input : {true, false}) {
            const std::string id = weight_id(l, input);
            const Matrix& w = model.weight(id);
            set.adapters.emplace(id, LoraAdapter::create(id, w.rows(), w.cols(), cfg.rank, cfg.scale, rng));
        }
    }
    return set;
}

namespace {

struct SideForward {
    ForwardCache cache;
    Matrix pre;     // tokens x features
    Vector pooled;  // pooled gated features
    std::vector<std::size_t> argmax;  // per feature, for max pooling
};

SideForward run_side(const ToyModelParams& model, const AdapterSet* adapters, const SaeParams& sae,
                     std::size_t target_layer, std::span<const TokenId> tokens, bool full, PhrasePooling pooling) {
    if (tokens.empty()) throw ValidationError("alignment: empty phrase");
    SideForward s;
    s.cache = forward(model, tokens, adapters, full ? std::nullopt : std::optional<std::size_t>(target_layer));
    s.pre = pre_activations(sae, s.cache.residual[target_layer]);
    s.pooled.assign(sae.d_features, 0.0);
    s.argmax.assign(sae.d_features, 0);
    for (std::size_t r = 0; r < s.pre.rows(); ++r) {
        auto row = s.pre.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double f = row[j] > sae.thresholds[j] ? row[j] : 0.0;
            if (pooling == PhrasePooling::Mean) {
                s.pooled[j] += f;
            } else if (r == 0 || row[j] > s.pre(s.argmax[j], j)) {
                s.argmax[j] = r;
                s.pooled[j] = f;
            }
        }
    }
    if (pooling == PhrasePooling::Mean)
        for (double& x : s.pooled) x /= static_cast<double>(s.pre.rows());
    return s;
}

// Gradient w.r.t. the target-layer residual from a gradient on the pooled
// feature vector.
Matrix residual_grad(const SaeParams& sae, const SideForward& s, std::span<const double> g_pooled,
                     const AlignmentConfig& cfg, double scale) {
    Matrix g_pre(s.pre.rows(), s.pre.cols());
    const bool mean = cfg.pooling == PhrasePooling::Mean;
    const double per_token = mean ? scale / static_cast<double>(s.pre.rows()) : scale;
    for (std::size_t r = 0; r < s.pre.rows(); ++r) {
        auto pre = s.pre.row(r);
        auto out = g_pre.row(r);
        for (std::size_t j = 0; j < pre.size(); ++j) {
            if (!mean && s.argmax[j] != r) continue;
            const double cut = cfg.gate_gradient == GateGradient::Exact ? sae.thresholds[j] : 0.0;
            if (pre[j] > cut) out[j] = g_pooled[j] * per_token;
        }
    }
    return matmul_bt(g_pre, sae.w_enc);
}

double lm_side(const ToyModelParams& model, const AdapterSet& adapters, const SideForward& s, double weight,
               std::map<std::string, LoraGrads>& grads) {
    const auto& toks = s.cache.tokens;
    if (toks.size() < 2) return 0.0;
    const std::size_t n = toks.size() - 1;
    Matrix l = logits(model, s.cache);
    // Drop the last row: it has no next token.
    Matrix head(n, l.cols(), std::vector<double>(l.data().begin(), l.data().begin() + static_cast<std::ptrdiff_t>(n * l.cols())));
    std::vector<TokenId> targets(toks.begin() + 1, toks.end());
    Matrix g_head;
    const double loss = softmax_cross_entropy(head, targets, weight / static_cast<double>(n), &g_head);
    Matrix g_logits(l.rows(), l.cols());
    std::copy(g_head.data().begin(), g_head.data().end(), g_logits.data().begin());
    backward_blocks(model, s.cache, matmul(g_logits, model.unembedding), model.n_layers(), &adapters, nullptr,
                    &grads);
    return weight * loss / static_cast<double>(n);
}

void check_sae(const SaeParams& sae, const ToyModelParams& model) {
    sae.validate();
    if (sae.d_model != model.config.d_model)
        throw ShapeError("alignment: SAE input width " + std::to_string(sae.d_model) +
                         " does not match model width " + std::to_string(model.config.d_model));
}

}  // namespace

Vector pooled_features(const ToyModelParams& model, const AdapterSet* adapters, const SaeParams& sae,
                       std::size_t target_layer, std::span<const TokenId> tokens, PhrasePooling pooling) {
    check_sae(sae, model);
    if (target_layer >= model.n_layers()) throw ValidationError("pooled_features: no such layer");
    return run_side(model, adapters, sae, target_layer, tokens, false, pooling).pooled;
}

AlignmentMetrics improvement_and_retention(const std::map<std::string, double>& pre,
                                           const std::map<std::string, double>& post,
                                           const std::string& reference) {
    std::set<std::string> a, b;
    for (const auto& [k, _] : pre) a.insert(k);
    for (const auto& [k, _] : post) b.insert(k);
    if (a != b) throw ValidationError("improvement_and_retention: pre and post cover different languages");
    if (!pre.contains(reference))
        throw ValidationError("improvement_and_retention: no reference language '" + reference + "'");
    AlignmentMetrics m;
    for (const auto& [lang, p] : pre) {
        if (p == 0.0) {
            m.excluded_zero_pre.push_back(lang);
            continue;
        }
        const double q = post.at(lang);
        if (lang == reference)
            m.retention_percent = q / p * 100.0;
        else
            m.improvement_percent[lang] = (q - p) / p * 100.0;
    }
    if (pre.at(reference) == 0.0) m.retention_percent = std::numeric_limits<double>::quiet_NaN();
    return m;
}

std::map<std::string, double> language_mean_activations(const ToyModelParams& model, const AdapterSet* adapters,
                                                        const SaeParams& sae,
                                                        const std::vector<AlignmentPair>& pairs,
                                                        const AlignmentConfig& cfg) {
    check_sae(sae, model);
    std::map<std::string, std::pair<double, std::size_t>> acc;
    std::set<std::int64_t> seen_reference;
    auto add = [&](const std::string& lang, std::span<const TokenId> toks) {
        const Vector f = run_side(model, adapters, sae, cfg.target_layer, toks, false, cfg.pooling).pooled;
        double m = 0.0;
        for (double x : f) m += x;
        auto& [sum, n] = acc[lang];
        sum += m / static_cast<double>(f.size());
        n += 1;
    };
    for (const auto& p : pairs) {
        if (p.reference_tokens.empty() || p.target_tokens.empty()) continue;
        if (seen_reference.insert(p.phrase_ordinal).second) add(cfg.reference_language, p.reference_tokens);
        add(p.language, p.target_tokens);
    }
    std::map<std::string, double> out;
    for (const auto& [lang, sn] : acc) out[lang] = sn.first / static_cast<double>(sn.second);
    return out;
}

AlignmentOutcome run_alignment(const ToyModelParams& model, AdapterSet& adapters,
                               const std::vector<AlignmentPair>& pairs, const SaeParams& sae,
                               const AlignmentConfig& cfg) {
    cfg.validate(model.n_layers());
    check_sae(sae, model);
    for (const auto& [id, a] : adapters.adapters) {
        const Matrix& w = model.weight(id);
        if (a.d_out() != w.rows() || a.d_in() != w.cols())
            throw ShapeError("adapter " + id + " does not match weight " + w.shape_string());
    }

    AlignmentOutcome out;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].reference_tokens.empty() || pairs[i].target_tokens.empty() ||
            pairs[i].language == cfg.reference_language)
            ++out.skipped_pairs;
        else
            usable.push_back(i);
    }
    out.pre_means = language_mean_activations(model, &adapters, sae, pairs, cfg);
    if (usable.empty() || cfg.iterations == 0) {
        out.post_means = out.pre_means;
        if (!out.pre_means.empty() && out.pre_means.contains(cfg.reference_language))
            out.metrics = improvement_and_retention(out.pre_means, out.post_means, cfg.reference_language);
        return out;
    }

    // Frozen English snapshots.
    std::vector<Vector> u_orig(pairs.size());
    for (std::size_t i : usable)
        u_orig[i] = run_side(model, &adapters, sae, cfg.target_layer, pairs[i].reference_tokens, false, cfg.pooling).pooled;

    std::map<std::string, std::pair<AdamState, AdamState>> adam;
    for (const auto& [id, a] : adapters.adapters)
        adam.emplace(id, std::make_pair(AdamState::like(a.down, cfg.learning_rate),
                                        AdamState::like(a.up, cfg.learning_rate)));

    Rng rng(cfg.seed);
    std::vector<std::size_t> order = usable;
    std::size_t cursor = order.size();
    auto next_pair = [&] {
        if (cursor == order.size()) {
            rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    };

    const bool full = cfg.lm_weight > 0.0;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        for (std::size_t done = 0; done < cfg.sample_count;) {
            const std::size_t batch = std::min(cfg.batch_size, cfg.sample_count - done);
            const double inv_b = 1.0 / static_cast<double>(batch);
            std::map<std::string, LoraGrads> grads;
            double loss = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const AlignmentPair& p = pairs[next_pair()];
                const std::size_t idx = static_cast<std::size_t>(&p - pairs.data());
                SideForward su = run_side(model, &adapters, sae, cfg.target_layer, p.reference_tokens, full, cfg.pooling);
                SideForward sv = run_side(model, &adapters, sae, cfg.target_layer, p.target_tokens, full, cfg.pooling);
                loss += alignment_loss(su.pooled, sv.pooled, u_orig[idx], cfg.alpha) * inv_b;
                const AlignmentGrad g = alignment_grad(su.pooled, sv.pooled, u_orig[idx], cfg.alpha);
                backward_blocks(model, su.cache, residual_grad(sae, su, g.du, cfg, inv_b),
                                cfg.target_layer, &adapters, nullptr, &grads);
                backward_blocks(model, sv.cache, residual_grad(sae, sv, g.dv, cfg, inv_b),
                                cfg.target_layer, &adapters, nullptr, &grads);
                if (full) {
                    loss += lm_side(model, adapters, su, cfg.lm_weight * inv_b, grads);
                    loss += lm_side(model, adapters, sv, cfg.lm_weight * inv_b, grads);
                }
            }
            if (!std::isfinite(loss))
                throw ValidationError("align: non-finite loss at step " + std::to_string(out.steps) +
                                      " (iteration " + std::to_string(it) + ")");
            out.loss_curve.push_back(loss);
            for (auto& [id, a] : adapters.adapters) {
                auto git = grads.find(id);
                if (git == grads.end()) continue;
                auto& [s_down, s_up] = adam.at(id);
                if (git->second.down.size()) adam_step(a.down, git->second.down, s_down);
                if (git->second.up.size()) adam_step(a.up, git->second.up, s_up);
            }
            ++out.steps;
            done += batch;
        }
    }
    out.post_means = language_mean_activations(model, &adapters, sae, pairs, cfg);
    out.metrics = improvement_and_retention(out.pre_means, out.post_means, cfg.reference_language);
    return out;
}

std::string alignment_outcome_csv(const AlignmentOutcome& outcome, const std::string& reference) {
    std::string csv = format_csv_row({"language", "pre_mean", "post_mean", "improvement_percent", "retention_percent"});
    for (const auto& [lang, pre] : outcome.pre_means) {
        const double post = outcome.post_means.count(lang) ? outcome.post_means.at(lang) : pre;
        std::string imp, ret;
        if (lang == reference) {
            ret = format_double(outcome.metrics.retention_percent);
        } else if (auto it = outcome.metrics.improvement_percent.find(lang);
                   it != outcome.metrics.improvement_percent.end()) {
            imp = format_double(it->second);
        }
        csv += format_csv_row({lang, format_double(pre), format_double(post), imp, ret});
    }
    return csv;
}

}  // namespace xling
