#include "xling/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "xling/io.hpp"
#include "xling/lora.hpp"
#include "xling/svg.hpp"

namespace xling {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

PipelineConfig PipelineConfig::defaults() {
    PipelineConfig c;
    c.toy.corpus.languages = {"en", "ml"};
    c.toy.corpus.tokens_per_language = {{"en", 20000}, {"ml", 2000}};
    c.toy.model.vocab_size = 128;
    c.align.target_layer = 6;
    c.align.tuned_first = 0;
    c.align.tuned_last = 6;
    c.sae.train.target_l0 = 16.0;
    c.sae.train.ste_bandwidth = 0.05;
    c.sae.train.learning_rate = 3e-3;
    c.sae.train.steps = 3000;
    c.align.pooling = PhrasePooling::Max;
    c.align.learning_rate = 2e-3;
    return c;
}

void PipelineConfig::validate() const {
    if (!(ingest.threshold_fraction > 0.0 && ingest.threshold_fraction <= 1.0))
        throw ValidationError("ingest.threshold_fraction must be in (0, 1]");
    if (ingest.stride < 1) throw ValidationError("ingest.stride must be >= 1");
    if (ingest.format != "auto") parse_record_format(ingest.format);
    if (groups.reference.empty()) throw ValidationError("groups.reference must be set");
    sae.train.validate();
    toy.corpus.validate();
    if (toy.feature_stride < 1 || toy.n_features < 1)
        throw ValidationError("toy.feature_stride and toy.n_features must be >= 1");
    if (toy.model.n_layers < 1) throw ValidationError("toy.model.n_layers must be >= 1");
    align.validate(toy.model.n_layers);
    if (eval.heldout_tokens < 1) throw ValidationError("eval.heldout_tokens must be >= 1");
    if (eval.n_choices < 2) throw ValidationError("eval.n_choices must be >= 2");
    if (output.directory.empty()) throw ValidationError("output.directory must be set");
}

namespace {

std::string phrase_scalar_name(PhraseScalar s) { return s == PhraseScalar::MaxValue ? "max_value" : "window_mean"; }

PhraseScalar parse_phrase_scalar(const std::string& s) {
    if (s == "max_value") return PhraseScalar::MaxValue;
    if (s == "window_mean") return PhraseScalar::WindowMean;
    throw ValidationError("unknown phrase scalar '" + s + "' (expected max_value or window_mean)");
}

// Reads keys from one JSON object and rejects anything it did not consume.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError("config: '" + path_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ValidationError("config: " + where(key) + ": " + e.what());
        }
    }

    template <typename T>
    void get_optional(const char* key, std::optional<T>& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        if (j_.at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        get(key, v);
        out = v;
    }

    template <typename E>
    void get_enum(const char* key, E& out, E (*parse)(const std::string&)) {
        std::string s;
        get(key, s);
        if (!j_.contains(key)) return;
        try {
            out = parse(s);
        } catch (const ValidationError& e) {
            throw ValidationError("config: " + where(key) + ": " + e.what());
        }
    }

    std::optional<Section> sub(const char* key) {
        used_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return Section(j_.at(key), where(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.contains(k)) throw ValidationError("config: unknown key '" + where(k) + "'");
    }

private:
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

}  // namespace

json config_to_json(const PipelineConfig& c) {
    json j;
    j["ingest"] = {{"inputs", c.ingest.inputs},
                   {"format", c.ingest.format},
                   {"threshold_fraction", c.ingest.threshold_fraction},
                   {"inclusive_threshold", c.ingest.inclusive_threshold},
                   {"stride", c.ingest.stride},
                   {"n_indices", c.ingest.n_indices},
                   {"window_radius", c.ingest.window_radius},
                   {"phrase_scalar", phrase_scalar_name(c.ingest.phrase_scalar)}};
    j["groups"] = {{"high", c.groups.high}, {"medlow", c.groups.medlow}, {"reference", c.groups.reference}};
    const auto& s = c.sae.train;
    j["sae"] = {{"variant", to_string(s.variant)},
                {"d_features", s.d_features},
                {"sparsity_coefficient", s.sparsity_coefficient},
                {"target_l0", s.target_l0 ? json(*s.target_l0) : json(nullptr)},
                {"l0_controller_rate", s.l0_controller_rate},
                {"controller_initial_coefficient", s.controller_initial_coefficient},
                {"batch_size", s.batch_size},
                {"steps", s.steps},
                {"learning_rate", s.learning_rate},
                {"ste_bandwidth", s.ste_bandwidth},
                {"normalize_input", s.normalize_input},
                {"seed", s.seed},
                {"max_training_rows", c.sae.max_training_rows}};
    const auto& k = c.toy.corpus;
    j["toy"] = {{"corpus",
                 {{"languages", k.languages},
                  {"shared_concept_count", k.shared_concept_count},
                  {"tokens_per_language", k.tokens_per_language},
                  {"zipf_exponent", k.zipf_exponent},
                  {"parallel_fraction", k.parallel_fraction},
                  {"phrase_length", k.phrase_length},
                  {"successor_probability", k.successor_probability},
                  {"vocab_size", k.vocab_size},
                  {"seed", k.seed}}},
                {"model",
                 {{"vocab_size", c.toy.model.vocab_size},
                  {"d_model", c.toy.model.d_model},
                  {"d_hidden", c.toy.model.d_hidden},
                  {"n_layers", c.toy.model.n_layers},
                  {"embedding_multiplier", c.toy.model.embedding_multiplier}}},
                {"train",
                 {{"epochs", c.toy.train.epochs},
                  {"learning_rate", c.toy.train.learning_rate},
                  {"batch_size", c.toy.train.batch_size},
                  {"seed", c.toy.train.seed}}},
                {"feature_stride", c.toy.feature_stride},
                {"n_features", c.toy.n_features}};
    const auto& a = c.align;
    j["align"] = {{"alpha", a.alpha},
                  {"target_layer", a.target_layer},
                  {"tuned_layers", {a.tuned_first, a.tuned_last}},
                  {"iterations", a.iterations},
                  {"sample_count", a.sample_count},
                  {"rank", a.rank},
                  {"scale", a.scale},
                  {"learning_rate", a.learning_rate},
                  {"batch_size", a.batch_size},
                  {"gate_gradient", to_string(a.gate_gradient)},
                  {"pooling", to_string(a.pooling)},
                  {"lm_weight", a.lm_weight},
                  {"seed", a.seed}};
    j["eval"] = {{"mode", to_string(c.eval.mode)},
                 {"items_per_language", c.eval.items_per_language},
                 {"heldout_tokens", c.eval.heldout_tokens},
                 {"n_choices", c.eval.n_choices},
                 {"n_shots", c.eval.n_shots},
                 {"seed", c.eval.seed}};
    j["output"] = {{"directory", c.output.directory}, {"emit_svg", c.output.emit_svg}};
    return j;
}

PipelineConfig config_from_json(const json& j) {
    PipelineConfig c = PipelineConfig::defaults();
    Section root(j, "");
    if (auto s = root.sub("ingest")) {
        s->get("inputs", c.ingest.inputs);
        s->get("format", c.ingest.format);
        s->get("threshold_fraction", c.ingest.threshold_fraction);
        s->get("inclusive_threshold", c.ingest.inclusive_threshold);
        s->get("stride", c.ingest.stride);
        s->get("n_indices", c.ingest.n_indices);
        s->get("window_radius", c.ingest.window_radius);
        s->get_enum("phrase_scalar", c.ingest.phrase_scalar, &parse_phrase_scalar);
        s->finish();
    }
    if (auto s = root.sub("groups")) {
        s->get("high", c.groups.high);
        s->get("medlow", c.groups.medlow);
        s->get("reference", c.groups.reference);
        s->finish();
    }
    if (auto s = root.sub("sae")) {
        auto& t = c.sae.train;
        s->get_enum("variant", t.variant, &parse_sae_variant);
        s->get("d_features", t.d_features);
        s->get("sparsity_coefficient", t.sparsity_coefficient);
        s->get_optional("target_l0", t.target_l0);
        s->get("l0_controller_rate", t.l0_controller_rate);
        s->get("controller_initial_coefficient", t.controller_initial_coefficient);
        s->get("batch_size", t.batch_size);
        s->get("steps", t.steps);
        s->get("learning_rate", t.learning_rate);
        s->get("ste_bandwidth", t.ste_bandwidth);
        s->get("normalize_input", t.normalize_input);
        s->get("seed", t.seed);
        s->get("max_training_rows", c.sae.max_training_rows);
        s->finish();
    }
    if (auto s = root.sub("toy")) {
        if (auto k = s->sub("corpus")) {
            auto& cc = c.toy.corpus;
            k->get("languages", cc.languages);
            k->get("shared_concept_count", cc.shared_concept_count);
            k->get("tokens_per_language", cc.tokens_per_language);
            k->get("zipf_exponent", cc.zipf_exponent);
            k->get("parallel_fraction", cc.parallel_fraction);
            k->get("phrase_length", cc.phrase_length);
            k->get("successor_probability", cc.successor_probability);
            k->get("vocab_size", cc.vocab_size);
            k->get("seed", cc.seed);
            k->finish();
        }
        if (auto m = s->sub("model")) {
            m->get("vocab_size", c.toy.model.vocab_size);
            m->get("d_model", c.toy.model.d_model);
            m->get("d_hidden", c.toy.model.d_hidden);
            m->get("n_layers", c.toy.model.n_layers);
            m->get("embedding_multiplier", c.toy.model.embedding_multiplier);
            m->finish();
        }
        if (auto t = s->sub("train")) {
            t->get("epochs", c.toy.train.epochs);
            t->get("learning_rate", c.toy.train.learning_rate);
            t->get("batch_size", c.toy.train.batch_size);
            t->get("seed", c.toy.train.seed);
            t->finish();
        }
        s->get("feature_stride", c.toy.feature_stride);
        s->get("n_features", c.toy.n_features);
        s->finish();
    }
    if (auto s = root.sub("align")) {
        auto& a = c.align;
        s->get("alpha", a.alpha);
        s->get("target_layer", a.target_layer);
        std::vector<std::size_t> range{a.tuned_first, a.tuned_last};
        s->get("tuned_layers", range);
        if (range.size() != 2) throw ValidationError("config: align.tuned_layers must be [first, last]");
        a.tuned_first = range[0];
        a.tuned_last = range[1];
        s->get("iterations", a.iterations);
        s->get("sample_count", a.sample_count);
        s->get("rank", a.rank);
        s->get("scale", a.scale);
        s->get("learning_rate", a.learning_rate);
        s->get("batch_size", a.batch_size);
        s->get_enum("gate_gradient", a.gate_gradient, &parse_gate_gradient);
        s->get_enum("pooling", a.pooling, &parse_phrase_pooling);
        s->get("lm_weight", a.lm_weight);
        s->get("seed", a.seed);
        s->finish();
    }
    if (auto s = root.sub("eval")) {
        s->get_enum("mode", c.eval.mode, &parse_scoring_mode);
        s->get("items_per_language", c.eval.items_per_language);
        s->get("heldout_tokens", c.eval.heldout_tokens);
        s->get("n_choices", c.eval.n_choices);
        s->get("n_shots", c.eval.n_shots);
        s->get("seed", c.eval.seed);
        s->finish();
    }
    if (auto s = root.sub("output")) {
        s->get("directory", c.output.directory);
        s->get("emit_svg", c.output.emit_svg);
        s->finish();
    }
    root.finish();
    c.align.reference_language = c.groups.reference;
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_json(parse_json_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(config_to_json(cfg).dump()); }

LanguageGroups groups_for_languages(const LanguageGroups& groups, const std::vector<std::string>& languages) {
    const std::set<std::string> present(languages.begin(), languages.end());
    LanguageGroups out;
    out.reference = groups.reference;
    out.high.clear();
    out.medlow.clear();
    for (const auto& l : groups.high)
        if (present.contains(l)) out.high.push_back(l);
    for (const auto& l : groups.medlow)
        if (present.contains(l)) out.medlow.push_back(l);
    if (out.high.empty() && present.contains(groups.reference)) out.high = {groups.reference};
    if (out.medlow.empty()) {
        for (const auto& l : languages)
            if (std::find(out.high.begin(), out.high.end(), l) == out.high.end()) out.medlow.push_back(l);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Toy stages
// ---------------------------------------------------------------------------

Matrix toy_layer_activations(const ToyModelParams& model, const SyntheticCorpus& corpus, std::size_t layer,
                             std::size_t max_rows, const AdapterSet* adapters) {
    if (layer >= model.n_layers()) throw ValidationError("no layer " + std::to_string(layer) + " in the toy model");
    std::size_t total = 0;
    for (const auto& s : corpus.sequences) total += s.tokens.size();
    if (total == 0) throw ValidationError("toy_layer_activations: empty corpus");
    const std::size_t stride = max_rows == 0 ? 1 : std::max<std::size_t>(1, (total + max_rows - 1) / max_rows);
    std::vector<double> data;
    std::size_t rows = 0, index = 0;
    for (const auto& s : corpus.sequences) {
        const ForwardCache cache = forward(model, s.tokens, adapters, layer);
        const Matrix& h = cache.residual[layer];
        for (std::size_t r = 0; r < h.rows(); ++r, ++index) {
            if (index % stride != 0) continue;
            auto row = h.row(r);
            data.insert(data.end(), row.begin(), row.end());
            ++rows;
        }
    }
    return Matrix(rows, model.config.d_model, std::move(data));
}

namespace {

std::vector<std::string> token_names(const SyntheticCorpus& corpus, const std::vector<TokenId>& tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back(corpus.token_name(t));
    return out;
}

Matrix features_at(const ToyModelParams& model, const AdapterSet* adapters, const SaeParams& sae,
                   std::size_t layer, const std::vector<TokenId>& tokens) {
    const ForwardCache cache = forward(model, tokens, adapters, layer);
    return encode_batch(sae, cache.residual[layer]);
}

}  // namespace

std::vector<ActivationRecord> toy_records(const ToyModelParams& model, const AdapterSet* adapters,
                                          const SyntheticCorpus& corpus, const SaeParams& sae,
                                          const ToyIngestOptions& opts) {
    if (opts.layer >= model.n_layers()) throw ValidationError("toy ingest: no such layer");
    if (sae.d_model != model.config.d_model) throw ShapeError("toy ingest: SAE width does not match the model");
    for (std::size_t j : opts.feature_indices)
        if (j >= sae.d_features) throw ValidationError("toy ingest: feature index " + std::to_string(j) + " out of range");
    corpus.language_index(opts.reference_language);

    const auto ordinals = corpus.aligned_ordinals();
    if (ordinals.empty()) throw ValidationError("toy ingest: corpus has no aligned phrases");
    // Base features decide selection; measured features may include adapters.
    std::map<std::int64_t, Matrix> ref_base;
    std::map<std::pair<std::string, std::int64_t>, Matrix> measured;
    for (std::int64_t k : ordinals) {
        const auto& ref_seq = corpus.sequence(opts.reference_language, k);
        ref_base[k] = features_at(model, nullptr, sae, opts.layer, ref_seq.tokens);
        for (const auto& lang : corpus.languages) {
            const auto& seq = corpus.sequence(lang, k);
            if (seq.tokens.size() != ref_seq.tokens.size())
                throw ValidationError("toy ingest: aligned phrase " + std::to_string(k) + " differs in length");
            measured[{lang, k}] = (adapters == nullptr && lang == opts.reference_language)
                                      ? ref_base[k]
                                      : features_at(model, adapters, sae, opts.layer, seq.tokens);
        }
    }

    std::vector<ActivationRecord> out;
    for (std::size_t j : opts.feature_indices) {
        std::vector<ActivationRecord> group;
        bool any_active = false;
        for (std::int64_t k : ordinals) {
            const Matrix& f = ref_base.at(k);
            std::vector<double> acts(f.rows());
            for (std::size_t t = 0; t < f.rows(); ++t) acts[t] = f(t, j);
            any_active = any_active || std::any_of(acts.begin(), acts.end(), [](double v) { return v > 0.0; });
            const auto& seq = corpus.sequence(opts.reference_language, k);
            group.push_back(ActivationRecord::make(opts.layer, j, opts.reference_language, token_names(corpus, seq.tokens),
                                                   std::move(acts), k));
        }
        if (!any_active) continue;  // dead feature: nothing to compare
        for (const auto& top : select_top_phrases(group, opts.threshold_fraction, opts.threshold_mode)) {
            const PhraseWindow w = extract_window(top, opts.window_radius);
            for (const auto& lang : corpus.languages) {
                const auto& seq = corpus.sequence(lang, top.phrase_ordinal);
                const Matrix& f = measured.at({lang, top.phrase_ordinal});
                std::vector<std::string> toks;
                std::vector<double> acts;
                for (std::size_t t = w.start; t < w.end(); ++t) {
                    toks.push_back(corpus.token_name(seq.tokens[t]));
                    acts.push_back(f(t, j));
                }
                out.push_back(ActivationRecord::make(opts.layer, j, lang, std::move(toks), std::move(acts),
                                                     top.phrase_ordinal));
            }
        }
    }
    return out;
}

std::vector<SimilarityProfile> toy_similarity(const ToyModelParams& model, const AdapterSet* adapters,
                                              const SyntheticCorpus& corpus, const std::string& reference) {
    corpus.language_index(reference);
    std::vector<PooledPhrase> phrases;
    for (std::int64_t k : corpus.aligned_ordinals()) {
        for (const auto& lang : corpus.languages) {
            const auto layers = capture_residuals(model, corpus.sequence(lang, k).tokens, adapters);
            for (std::size_t l = 0; l < layers.size(); ++l) phrases.push_back({l, lang, k, mean_pool(layers[l])});
        }
    }
    std::vector<SimilarityProfile> out;
    for (const auto& lang : corpus.languages)
        if (lang != reference) out.push_back(layer_similarity(phrases, lang, model.n_layers(), reference));
    return out;
}

std::vector<AlignmentPair> toy_alignment_pairs(const SyntheticCorpus& corpus, const std::string& reference) {
    std::vector<AlignmentPair> pairs;
    for (std::int64_t k : corpus.aligned_ordinals()) {
        const auto& ref = corpus.sequence(reference, k);
        for (const auto& lang : corpus.languages) {
            if (lang == reference) continue;
            pairs.push_back({lang, k, ref.tokens, corpus.sequence(lang, k).tokens});
        }
    }
    return pairs;
}

AnalysisReport analyze_records(const std::vector<ActivationRecord>& records, const LanguageGroups& groups,
                               PhraseScalar scalar) {
    if (records.empty()) throw ValidationError("analyze: no activation records");
    AnalysisReport rep;
    rep.stats = mean_activation_per_index(records, scalar);
    rep.gaps = activation_gap(rep.stats, groups);
    rep.ratios = activation_ratio(rep.stats, groups.reference);
    return rep;
}

std::optional<double> gap_at_layer(const std::vector<LayerGapReport>& gaps, std::size_t layer) {
    for (const auto& g : gaps)
        if (g.layer == layer && g.status == GapStatus::Ok) return g.gap_percent;
    return std::nullopt;
}

ToyIngestOptions toy_ingest_options(const PipelineConfig& cfg, std::size_t d_features) {
    ToyIngestOptions opts;
    opts.layer = cfg.align.target_layer;
    opts.feature_indices = sample_feature_indices(d_features, cfg.toy.feature_stride,
                                                  std::min(cfg.toy.n_features, d_features / cfg.toy.feature_stride));
    opts.threshold_fraction = cfg.ingest.threshold_fraction;
    opts.threshold_mode = cfg.ingest.inclusive_threshold ? ThresholdMode::Inclusive : ThresholdMode::Strict;
    opts.window_radius = cfg.ingest.window_radius;
    opts.reference_language = cfg.groups.reference;
    return opts;
}

WindowedRecords window_records(const std::vector<ActivationRecord>& records, const IngestSection& ingest,
                               const std::string& reference_language) {
    const ThresholdMode mode = ingest.inclusive_threshold ? ThresholdMode::Inclusive : ThresholdMode::Strict;
    std::map<std::pair<std::size_t, std::size_t>, std::vector<ActivationRecord>> reference_groups;
    for (const auto& r : records)
        if (r.language == reference_language) reference_groups[{r.layer, r.feature_index}].push_back(r);

    WindowedRecords out;
    out.groups = reference_groups.size();
    std::set<std::tuple<std::size_t, std::size_t, std::int64_t>> kept;
    for (const auto& [key, group] : reference_groups) {
        const auto top = select_top_phrases(group, ingest.threshold_fraction, mode);
        out.dropped_below_threshold += group.size() - top.size();
        for (const auto& r : top) kept.insert({key.first, key.second, r.phrase_ordinal});
    }
    std::vector<ActivationRecord> selected;
    for (const auto& r : records) {
        if (kept.contains({r.layer, r.feature_index, r.phrase_ordinal})) selected.push_back(r);
        else if (r.language != reference_language) ++out.dropped_without_reference;
    }
    const auto assembled = assemble_parallel(selected, reference_language, ingest.window_radius);
    out.dropped_without_reference += assembled.dropped_without_reference;
    out.dropped_duplicates = assembled.dropped_duplicates;
    for (const auto& set : assembled.sets)
        for (const auto& [lang, phrases] : set.phrases)
            for (const auto& [ordinal, w] : phrases) out.records.push_back(to_record(w));
    return out;
}

std::vector<McqItem> toy_eval_items(const PipelineConfig& cfg, const SyntheticCorpus& heldout) {
    Rng rng(cfg.eval.seed);
    return make_corpus_items(heldout, cfg.eval.items_per_language, cfg.eval.n_choices, cfg.eval.n_shots, rng);
}

ToyRunResult run_toy_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    ToyRunResult run;
    const std::string& ref = cfg.groups.reference;
    const std::size_t target = cfg.align.target_layer;

    run.corpus = generate_corpus(cfg.toy.corpus);
    if (run.corpus.vocab_size > cfg.toy.model.vocab_size)
        throw ValidationError("toy: corpus needs " + std::to_string(run.corpus.vocab_size) +
                              " tokens but the model vocabulary is " + std::to_string(cfg.toy.model.vocab_size));
    run.corpus.language_index(ref);
    run.groups = groups_for_languages(cfg.groups, run.corpus.languages);
    run.heldout = generate_heldout_corpus(cfg.toy.corpus, cfg.eval.heldout_tokens);

    auto trained = train_toy_model(run.corpus, cfg.toy.model, cfg.toy.train);
    run.model = std::move(trained.params);
    run.toy_loss = std::move(trained.loss_curve);
    for (const auto& lang : run.corpus.languages) run.perplexity_pre[lang] = perplexity(run.model, run.heldout, lang);

    const Matrix acts = toy_layer_activations(run.model, run.corpus, target, cfg.sae.max_training_rows);
    auto sae = train_sae(acts, cfg.sae.train);
    run.sae = std::move(sae.params);
    run.sae_log = std::move(sae.log);

    const ToyIngestOptions opts = toy_ingest_options(cfg, run.sae.d_features);

    run.records_pre = toy_records(run.model, nullptr, run.corpus, run.sae, opts);
    run.analysis_pre = analyze_records(run.records_pre, run.groups, cfg.ingest.phrase_scalar);
    run.target_gap_pre = gap_at_layer(run.analysis_pre.gaps, target);
    run.similarity_pre = toy_similarity(run.model, nullptr, run.corpus, ref);

    AlignmentConfig acfg = cfg.align;
    acfg.reference_language = ref;
    Rng adapter_rng(acfg.seed);
    run.adapters = attach_adapters(run.model, acfg, adapter_rng);
    run.alignment = run_alignment(run.model, run.adapters, toy_alignment_pairs(run.corpus, ref), run.sae, acfg);

    run.records_post = toy_records(run.model, &run.adapters, run.corpus, run.sae, opts);
    run.analysis_post = analyze_records(run.records_post, run.groups, cfg.ingest.phrase_scalar);
    run.target_gap_post = gap_at_layer(run.analysis_post.gaps, target);
    run.similarity_post = toy_similarity(run.model, &run.adapters, run.corpus, ref);
    for (const auto& lang : run.corpus.languages)
        run.perplexity_post[lang] = perplexity(run.model, run.heldout, lang, &run.adapters);

    const auto items = toy_eval_items(cfg, run.heldout);
    const ToyScorer base(run.model);
    const ToyScorer tuned(run.model, &run.adapters);
    for (ScoringMode mode : {cfg.eval.mode, cfg.eval.mode == ScoringMode::RawLoglik ? ScoringMode::PerTokenNormalized
                                                                                    : ScoringMode::RawLoglik}) {
        run.eval_pre.push_back(evaluate(base, items, mode));
        run.eval_post.push_back(evaluate(tuned, items, mode));
    }
    return run;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string eval_modes_csv(const std::vector<EvalReport>& pre, const std::vector<EvalReport>& post) {
    std::string out = format_csv_row({"phase", "language", "scoring_mode", "accuracy", "correct", "items", "ties"});
    auto emit = [&](const char* phase, const std::vector<EvalReport>& reps) {
        for (const auto& rep : reps)
            for (const auto& a : rep.per_language)
                out += format_csv_row({phase, a.language, to_string(rep.scoring_mode), format_double(a.accuracy),
                                       std::to_string(a.correct), std::to_string(a.item_count),
                                       std::to_string(a.ties)});
    };
    emit("pre", pre);
    emit("post", post);
    return out;
}

std::string loss_curve_csv(const std::vector<double>& values, const std::string& column) {
    std::string out = format_csv_row({"step", column});
    for (std::size_t i = 0; i < values.size(); ++i) out += format_csv_row({std::to_string(i), format_double(values[i])});
    return out;
}

namespace {

std::string optional_number(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string summary_csv(const ToyRunResult& run, const PipelineConfig& cfg) {
    std::string out = format_csv_row({"metric", "value"});
    auto row = [&](const std::string& k, const std::string& v) { out += format_csv_row({k, v}); };
    row("target_layer", std::to_string(cfg.align.target_layer));
    row("gap_percent_pre", optional_number(run.target_gap_pre));
    row("gap_percent_post", optional_number(run.target_gap_post));
    if (run.target_gap_pre && run.target_gap_post && *run.target_gap_pre != 0.0)
        row("gap_reduction_percent",
            format_double((*run.target_gap_pre - *run.target_gap_post) / *run.target_gap_pre * 100.0));
    row("reference_retention_percent", format_double(run.alignment.metrics.retention_percent));
    for (const auto& [lang, v] : run.alignment.metrics.improvement_percent) row("improvement_percent_" + lang, std::isnan(v) ? "" : format_double(v));
    row("alignment_steps", std::to_string(run.alignment.steps));
    row("records_pre", std::to_string(run.records_pre.size()));
    row("records_post", std::to_string(run.records_post.size()));
    row("sae_final_mse", run.sae_log.mse.empty() ? "" : format_double(run.sae_log.mse.back()));
    row("sae_final_l0", run.sae_log.mean_l0.empty() ? "" : format_double(run.sae_log.mean_l0.back()));
    return out;
}

std::string perplexity_csv(const ToyRunResult& run) {
    std::string out = format_csv_row({"language", "perplexity_pre", "perplexity_post"});
    for (const auto& [lang, p] : run.perplexity_pre)
        out += format_csv_row({lang, format_double(p), format_double(run.perplexity_post.at(lang))});
    return out;
}

ChartSeries similarity_series(const SimilarityProfile& p, const std::string& name) {
    ChartSeries s{name, {}, {}};
    for (std::size_t l = 0; l < p.per_layer_cosine.size(); ++l) {
        if (!p.per_layer_cosine[l]) continue;
        s.x.push_back(static_cast<double>(l));
        s.y.push_back(*p.per_layer_cosine[l]);
    }
    return s;
}

ChartSeries curve_series(const std::vector<double>& v, const std::string& name) {
    ChartSeries s{name, {}, {}};
    for (std::size_t i = 0; i < v.size(); ++i) {
        s.x.push_back(static_cast<double>(i));
        s.y.push_back(v[i]);
    }
    return s;
}

}  // namespace

std::vector<std::string> write_toy_reports(const ToyRunResult& run, const PipelineConfig& cfg,
                                           const std::filesystem::path& dir) {
    std::vector<std::string> files;
    auto put = [&](const std::string& name, const std::string& content) {
        write_text_file(dir / name, content);
        files.push_back(name);
    };
    put("summary.csv", summary_csv(run, cfg));
    put("similarity_pre.csv", similarity_csv(run.similarity_pre));
    put("similarity_post.csv", similarity_csv(run.similarity_post));
    put("layer_gap_pre.csv", layer_gap_csv(run.analysis_pre.gaps));
    put("layer_gap_post.csv", layer_gap_csv(run.analysis_post.gaps));
    put("ratios_pre.csv", ratios_csv(run.analysis_pre.ratios.per_language));
    put("ratios_post.csv", ratios_csv(run.analysis_post.ratios.per_language));
    put("alignment.csv", alignment_outcome_csv(run.alignment, cfg.groups.reference));
    put("alignment_loss.csv", loss_curve_csv(run.alignment.loss_curve, "loss"));
    put("toy_loss.csv", loss_curve_csv(run.toy_loss, "cross_entropy"));
    put("perplexity.csv", perplexity_csv(run));
    put("eval.csv", eval_modes_csv(run.eval_pre, run.eval_post));
    put("records_pre.jsonl", serialize_records(run.records_pre, RecordFormat::Jsonl));
    put("records_post.jsonl", serialize_records(run.records_post, RecordFormat::Jsonl));
    put("corpus.jsonl", serialize_corpus(run.corpus));
    save_toy_model(dir / "model.json", run.model);
    files.push_back("model.json");
    save_sae(dir / "sae.json", run.sae, cfg.sae.train);
    files.push_back("sae.json");
    save_adapters(dir / "adapters.json", run.adapters);
    files.push_back("adapters.json");

    if (cfg.output.emit_svg) {
        std::vector<ChartSeries> sim;
        for (const auto& p : run.similarity_pre) sim.push_back(similarity_series(p, p.language + " pre"));
        for (const auto& p : run.similarity_post) sim.push_back(similarity_series(p, p.language + " post"));
        if (!sim.empty())
            put("similarity.svg", line_chart_svg({"Residual similarity to " + cfg.groups.reference, "layer", "cosine"}, sim));
        if (!run.alignment.loss_curve.empty())
            put("alignment_loss.svg",
                line_chart_svg({"Alignment loss", "step", "loss"}, {curve_series(run.alignment.loss_curve, "loss")}));
        put("toy_loss.svg", line_chart_svg({"Toy model training", "epoch", "cross-entropy"},
                                           {curve_series(run.toy_loss, "loss")}));
    }
    write_manifest(dir, "toy pipeline", cfg, files);
    return files;
}

void write_manifest(const std::filesystem::path& dir, const std::string& command, const PipelineConfig& cfg,
                    const std::vector<std::string>& outputs, const std::vector<std::filesystem::path>& inputs) {
    json m;
    m["tool"] = "xling";
    m["version"] = kVersion;
    m["command"] = command;
    m["config_hash"] = config_hash(cfg);
    m["config"] = config_to_json(cfg);
    m["seeds"] = {{"corpus", cfg.toy.corpus.seed},
                  {"toy_train", cfg.toy.train.seed},
                  {"sae", cfg.sae.train.seed},
                  {"align", cfg.align.seed},
                  {"eval", cfg.eval.seed}};
    m["rng"] = "mt19937_64";
    m["outputs"] = outputs;
    m["inputs"] = json::array();
    for (const auto& p : inputs) m["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_hex(read_text_file(p))}});
    write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace xling
