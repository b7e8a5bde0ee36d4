#include "xling/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xling/io.hpp"

namespace xling {

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

void SyntheticCorpusConfig::validate() const {
    if (languages.empty()) throw ValidationError("corpus: no languages");
    std::set<std::string> seen;
    for (const auto& l : languages) {
        if (l.empty()) throw ValidationError("corpus: empty language tag");
        if (!seen.insert(l).second) throw ValidationError("corpus: duplicate language " + l);
        auto it = tokens_per_language.find(l);
        if (it == tokens_per_language.end())
            throw ValidationError("corpus: no token budget for language " + l);
        if (it->second < 1) throw ValidationError("corpus: token budget for " + l + " must be >= 1");
    }
    for (const auto& [l, n] : tokens_per_language)
        if (!seen.contains(l)) throw ValidationError("corpus: budget given for unknown language " + l);
    if (shared_concept_count < 2) throw ValidationError("corpus: need at least 2 concepts");
    if (!(zipf_exponent > 0.0)) throw ValidationError("corpus: zipf_exponent must be > 0");
    if (!(parallel_fraction >= 0.0 && parallel_fraction <= 1.0))
        throw ValidationError("corpus: parallel_fraction must be in [0, 1]");
    if (phrase_length < 2) throw ValidationError("corpus: phrase_length must be >= 2");
    if (!(successor_probability >= 0.0 && successor_probability <= 1.0))
        throw ValidationError("corpus: successor_probability must be in [0, 1]");
    const std::size_t needed = languages.size() * shared_concept_count;
    if (vocab_size != 0 && vocab_size < needed) {
        throw ValidationError("corpus: vocabulary of " + std::to_string(vocab_size) +
                              " cannot hold " + std::to_string(languages.size()) +
                              " disjoint partitions of " + std::to_string(shared_concept_count) +
                              " concepts");
    }
}

std::size_t SyntheticCorpus::language_index(const std::string& lang) const {
    auto it = std::find(languages.begin(), languages.end(), lang);
    if (it == languages.end()) throw ValidationError("corpus has no language '" + lang + "'");
    return static_cast<std::size_t>(it - languages.begin());
}

TokenId SyntheticCorpus::token_id(const std::string& lang, int concept_id) const {
    return static_cast<TokenId>(language_index(lang) * concept_count + static_cast<std::size_t>(concept_id));
}

std::string SyntheticCorpus::token_name(TokenId id) const {
    const auto u = static_cast<std::size_t>(id);
    const std::size_t lang = u / concept_count;
    if (lang >= languages.size()) return "<unk:" + std::to_string(id) + ">";
    return languages[lang] + ":" + std::to_string(u % concept_count);
}

std::size_t SyntheticCorpus::token_count(const std::string& lang) const {
    std::size_t n = 0;
    for (const auto& s : sequences)
        if (s.language == lang) n += s.tokens.size();
    return n;
}

std::vector<std::int64_t> SyntheticCorpus::aligned_ordinals() const {
    std::set<std::int64_t> ords;
    for (const auto& s : sequences)
        if (s.aligned) ords.insert(s.phrase_ordinal);
    return {ords.begin(), ords.end()};
}

const CorpusSequence& SyntheticCorpus::sequence(const std::string& lang, std::int64_t ordinal) const {
    for (const auto& s : sequences)
        if (s.language == lang && s.phrase_ordinal == ordinal) return s;
    throw ValidationError("corpus has no sequence " + std::to_string(ordinal) + " for " + lang);
}

namespace {

// Draws the successor map, then `n_sentences` concept sentences, in that
// order, so a longer draw extends a shorter one.
std::vector<std::vector<int>> sentence_pool(const SyntheticCorpusConfig& cfg, std::size_t n_sentences) {
    Rng rng(cfg.seed);
    const std::size_t n_concepts = cfg.shared_concept_count;
    std::vector<double> cdf(n_concepts);
    double acc = 0.0;
    for (std::size_t c = 0; c < n_concepts; ++c) {
        acc += 1.0 / std::pow(static_cast<double>(c + 1), cfg.zipf_exponent);
        cdf[c] = acc;
    }
    auto zipf = [&] {
        const double u = rng.uniform() * acc;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), n_concepts - 1));
    };
    std::vector<int> successor(n_concepts);
    std::iota(successor.begin(), successor.end(), 0);
    rng.shuffle(successor);

    std::vector<std::vector<int>> pool(n_sentences);
    for (auto& sentence : pool) {
        sentence.resize(cfg.phrase_length);
        sentence[0] = zipf();
        for (std::size_t i = 1; i < cfg.phrase_length; ++i)
            sentence[i] = rng.uniform() < cfg.successor_probability
                              ? successor[static_cast<std::size_t>(sentence[i - 1])]
                              : zipf();
    }
    return pool;
}

std::size_t training_sentence_count(const SyntheticCorpusConfig& cfg) {
    std::size_t max_budget = 0;
    for (const auto& l : cfg.languages) max_budget = std::max(max_budget, cfg.tokens_per_language.at(l));
    return (max_budget + cfg.phrase_length - 1) / cfg.phrase_length;
}

// Emits sentences first, first+1, ... of `pool` for one language until
// `budget` tokens are spent.
void realize(SyntheticCorpus& corpus, const std::vector<std::vector<int>>& pool, std::size_t first,
             std::size_t language_index, std::size_t budget, std::size_t phrase_length, std::size_t n_aligned) {
    const std::string& lang = corpus.languages[language_index];
    std::size_t remaining = budget;
    for (std::size_t k = first; remaining > 0; ++k) {
        const std::size_t len = std::min(phrase_length, remaining);
        CorpusSequence seq;
        seq.language = lang;
        seq.phrase_ordinal = static_cast<std::int64_t>(k);
        seq.aligned = k - first < n_aligned;
        seq.concept_ids.assign(pool[k].begin(), pool[k].begin() + static_cast<std::ptrdiff_t>(len));
        for (int c : seq.concept_ids)
            seq.tokens.push_back(
                static_cast<TokenId>(language_index * corpus.concept_count + static_cast<std::size_t>(c)));
        corpus.sequences.push_back(std::move(seq));
        remaining -= len;
    }
}

}  // namespace

SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg) {
    cfg.validate();
    std::size_t min_full_sentences = std::numeric_limits<std::size_t>::max();
    for (const auto& l : cfg.languages)
        min_full_sentences = std::min(min_full_sentences, cfg.tokens_per_language.at(l) / cfg.phrase_length);
    const auto pool = sentence_pool(cfg, training_sentence_count(cfg));
    const auto n_aligned = static_cast<std::size_t>(
        std::llround(cfg.parallel_fraction * static_cast<double>(min_full_sentences)));

    SyntheticCorpus corpus;
    corpus.languages = cfg.languages;
    corpus.concept_count = cfg.shared_concept_count;
    corpus.vocab_size = cfg.vocab_size ? cfg.vocab_size : cfg.languages.size() * cfg.shared_concept_count;
    for (std::size_t li = 0; li < cfg.languages.size(); ++li)
        realize(corpus, pool, 0, li, cfg.tokens_per_language.at(cfg.languages[li]), cfg.phrase_length, n_aligned);
    return corpus;
}

SyntheticCorpus generate_heldout_corpus(const SyntheticCorpusConfig& cfg, std::size_t tokens_per_language) {
    cfg.validate();
    if (tokens_per_language < 1) throw ValidationError("held-out corpus needs at least one token per language");
    const std::size_t first = training_sentence_count(cfg);
    const std::size_t count = (tokens_per_language + cfg.phrase_length - 1) / cfg.phrase_length;
    const auto pool = sentence_pool(cfg, first + count);
    SyntheticCorpus corpus;
    corpus.languages = cfg.languages;
    corpus.concept_count = cfg.shared_concept_count;
    corpus.vocab_size = cfg.vocab_size ? cfg.vocab_size : cfg.languages.size() * cfg.shared_concept_count;
    for (std::size_t li = 0; li < cfg.languages.size(); ++li)
        realize(corpus, pool, first, li, tokens_per_language, cfg.phrase_length, tokens_per_language / cfg.phrase_length);
    return corpus;
}

std::string serialize_corpus(const SyntheticCorpus& corpus) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["languages"] = corpus.languages;
    header["concept_count"] = corpus.concept_count;
    header["vocab_size"] = corpus.vocab_size;
    std::string out = header.dump() + "\n";
    for (const auto& s : corpus.sequences) {
        nlohmann::json j;
        j["language"] = s.language;
        j["tokens"] = s.tokens;
        j["concept_ids"] = s.concept_ids;
        j["phrase_ordinal"] = s.phrase_ordinal;
        j["aligned"] = s.aligned;
        out += j.dump() + "\n";
    }
    return out;
}

SyntheticCorpus parse_corpus(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    SyntheticCorpus corpus;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!have_header) {
                if (j.at("format_version").get<int>() != 1)
                    throw ValidationError("unsupported corpus format_version");
                corpus.languages = j.at("languages").get<std::vector<std::string>>();
                corpus.concept_count = j.at("concept_count").get<std::size_t>();
                corpus.vocab_size = j.at("vocab_size").get<std::size_t>();
                have_header = true;
                continue;
            }
            CorpusSequence s;
            s.language = j.at("language").get<std::string>();
            s.tokens = j.at("tokens").get<std::vector<TokenId>>();
            s.concept_ids = j.at("concept_ids").get<std::vector<int>>();
            s.phrase_ordinal = j.at("phrase_ordinal").get<std::int64_t>();
            s.aligned = j.value("aligned", false);
            if (s.tokens.size() != s.concept_ids.size() || s.tokens.empty())
                throw ValidationError("tokens and concept_ids must be equal, non-empty lists");
            corpus.sequences.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_header) throw ValidationError("corpus file has no header line");
    return corpus;
}

void save_corpus(const std::filesystem::path& path, const SyntheticCorpus& corpus) {
    write_text_file(path, serialize_corpus(corpus));
}

SyntheticCorpus load_corpus(const std::filesystem::path& path) {
    return parse_corpus(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

std::string weight_id(std::size_t layer, bool input_projection) {
    return "blocks." + std::to_string(layer) + (input_projection ? ".w_in" : ".w_out");
}

ToyModelParams ToyModelParams::initialize(const ToyModelConfig& cfg, Rng& rng) {
    if (cfg.vocab_size == 0 || cfg.d_model == 0 || cfg.d_hidden == 0 || cfg.n_layers == 0)
        throw ValidationError("toy model dims must be positive");
    if (!(cfg.embedding_multiplier > 0.0)) throw ValidationError("embedding_multiplier must be > 0");
    ToyModelParams p;
    p.config = cfg;
    const double d = static_cast<double>(cfg.d_model);
    const double h = static_cast<double>(cfg.d_hidden);
    const double l = static_cast<double>(cfg.n_layers);
    p.embedding = random_normal(cfg.vocab_size, cfg.d_model, 1.0, rng);
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        ToyBlock b;
        b.w_in = random_normal(cfg.d_hidden, cfg.d_model, 1.0 / std::sqrt(d), rng);
        b.b_in.assign(cfg.d_hidden, 0.0);
        b.w_out = random_normal(cfg.d_model, cfg.d_hidden, 1.0 / std::sqrt(h * l), rng);
        b.b_out.assign(cfg.d_model, 0.0);
        p.blocks.push_back(std::move(b));
    }
    p.unembedding = random_normal(cfg.vocab_size, cfg.d_model, 1.0 / (std::sqrt(d) * cfg.embedding_multiplier), rng);
    p.unembedding_bias.assign(cfg.vocab_size, 0.0);
    return p;
}

void ToyModelParams::validate() const {
    const auto& c = config;
    auto expect = [](const Matrix& m, std::size_t r, std::size_t k, const std::string& what) {
        if (m.rows() != r || m.cols() != k)
            throw ShapeError(what + " is " + m.shape_string() + ", expected " + std::to_string(r) +
                             "x" + std::to_string(k));
    };
    expect(embedding, c.vocab_size, c.d_model, "embedding");
    expect(unembedding, c.vocab_size, c.d_model, "unembedding");
    if (unembedding_bias.size() != c.vocab_size) throw ShapeError("unembedding bias length");
    if (blocks.size() != c.n_layers) throw ShapeError("block count does not match n_layers");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        expect(blocks[i].w_in, c.d_hidden, c.d_model, weight_id(i, true));
        expect(blocks[i].w_out, c.d_model, c.d_hidden, weight_id(i, false));
        if (blocks[i].b_in.size() != c.d_hidden || blocks[i].b_out.size() != c.d_model)
            throw ShapeError("block " + std::to_string(i) + " bias length");
    }
}

const Matrix& ToyModelParams::weight(const std::string& id) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (id == weight_id(i, true)) return blocks[i].w_in;
        if (id == weight_id(i, false)) return blocks[i].w_out;
    }
    throw ValidationError("unknown weight id '" + id + "'");
}

std::vector<std::string> ToyModelParams::weight_ids() const {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        ids.push_back(weight_id(i, true));
        ids.push_back(weight_id(i, false));
    }
    return ids;
}

bool operator==(const ToyModelParams& a, const ToyModelParams& b) {
    if (a.blocks.size() != b.blocks.size()) return false;
    for (std::size_t i = 0; i < a.blocks.size(); ++i) {
        const auto& x = a.blocks[i];
        const auto& y = b.blocks[i];
        if (x.w_in != y.w_in || x.b_in != y.b_in || x.w_out != y.w_out || x.b_out != y.b_out) return false;
    }
    return a.config.vocab_size == b.config.vocab_size && a.config.d_model == b.config.d_model &&
           a.config.d_hidden == b.config.d_hidden && a.config.n_layers == b.config.n_layers &&
           a.config.embedding_multiplier == b.config.embedding_multiplier &&
           a.embedding == b.embedding && a.unembedding == b.unembedding &&
           a.unembedding_bias == b.unembedding_bias;
}

ForwardCache forward(const ToyModelParams& model, std::span<const TokenId> tokens,
                     const AdapterSet* adapters, std::optional<std::size_t> n_blocks) {
    const std::size_t blocks = n_blocks.value_or(model.n_layers());
    if (blocks > model.n_layers()) throw ValidationError("forward: more blocks than layers");
    const std::size_t d = model.config.d_model;
    ForwardCache cache;
    cache.tokens.assign(tokens.begin(), tokens.end());
    Matrix h(tokens.size(), d);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const TokenId t = tokens[i];
        if (t < 0 || static_cast<std::size_t>(t) >= model.config.vocab_size)
            throw ValidationError("token " + std::to_string(t) + " outside vocabulary of " +
                                  std::to_string(model.config.vocab_size));
        auto src = model.embedding.row(static_cast<std::size_t>(t));
        auto dst = h.row(i);
        for (std::size_t c = 0; c < d; ++c) dst[c] = model.config.embedding_multiplier * src[c];
    }
    cache.residual.push_back(h);
    for (std::size_t l = 0; l < blocks; ++l) {
        const auto& b = model.blocks[l];
        const LoraAdapter* a_in = adapters ? adapters->find(weight_id(l, true)) : nullptr;
        const LoraAdapter* a_out = adapters ? adapters->find(weight_id(l, false)) : nullptr;
        Matrix p_in, p_out;
        Matrix z = linear_forward(cache.residual.back(), b.w_in, a_in, &p_in);
        add_row_vector(z, b.b_in);
        Matrix a = z;
        for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
        Matrix next = linear_forward(a, b.w_out, a_out, &p_out);
        add_row_vector(next, b.b_out);
        add_inplace(next, cache.residual.back());
        cache.pre_relu.push_back(std::move(z));
        cache.hidden.push_back(std::move(a));
        cache.proj_in.push_back(std::move(p_in));
        cache.proj_out.push_back(std::move(p_out));
        cache.residual.push_back(std::move(next));
    }
    return cache;
}

Matrix logits(const ToyModelParams& model, const ForwardCache& cache) {
    if (cache.residual.size() != model.n_layers() + 1)
        throw ValidationError("logits: forward pass did not run every block");
    Matrix out = matmul_bt(cache.residual.back(), model.unembedding);
    add_row_vector(out, model.unembedding_bias);
    return out;
}

namespace {

void accumulate_adapter_grads(const LoraAdapter& a, const Matrix& grad_y, const Matrix& x,
                              const Matrix& projected, LoraGrads& g) {
    // y += scale * (x down^T) up^T
    Matrix gu = matmul_at(grad_y, projected);        // d_out x r
    Matrix gyu = matmul(grad_y, a.up);               // B x r
    Matrix gd = matmul_at(gyu, x);                   // r x d_in
    if (g.up.size() == 0) g.up = Matrix(a.up.rows(), a.up.cols());
    if (g.down.size() == 0) g.down = Matrix(a.down.rows(), a.down.cols());
    add_inplace(g.up, gu, a.scale);
    add_inplace(g.down, gd, a.scale);
}

// grad_x = grad_y W (+ scale (grad_y up) down)
Matrix linear_backward_input(const Matrix& grad_y, const Matrix& weight, const LoraAdapter* a) {
    Matrix gx = matmul(grad_y, weight);
    if (a) add_inplace(gx, matmul(matmul(grad_y, a->up), a->down), a->scale);
    return gx;
}

}  // namespace

void backward_blocks(const ToyModelParams& model, const ForwardCache& cache, Matrix grad_h,
                     std::size_t from_layer, const AdapterSet* adapters, ToyModelGrads* base,
                     std::map<std::string, LoraGrads>* adapter_grads) {
    if (from_layer >= cache.residual.size())
        throw ValidationError("backward: layer beyond the forward pass");
    for (std::size_t l = from_layer; l-- > 0;) {
        const auto& b = model.blocks[l];
        const LoraAdapter* a_in = adapters ? adapters->find(weight_id(l, true)) : nullptr;
        const LoraAdapter* a_out = adapters ? adapters->find(weight_id(l, false)) : nullptr;
        const Matrix& x = cache.residual[l];
        const Matrix& hidden = cache.hidden[l];
        const Matrix& z = cache.pre_relu[l];

        Matrix g_hidden = linear_backward_input(grad_h, b.w_out, a_out);
        if (base) {
            add_inplace(base->blocks[l].w_out, matmul_at(grad_h, hidden));
            const Vector gb = column_sums(grad_h);
            for (std::size_t i = 0; i < gb.size(); ++i) base->blocks[l].b_out[i] += gb[i];
        }
        if (a_out && adapter_grads)
            accumulate_adapter_grads(*a_out, grad_h, hidden, cache.proj_out[l], (*adapter_grads)[a_out->target_weight_id]);

        for (std::size_t i = 0; i < g_hidden.size(); ++i)
            if (!(z.data()[i] > 0.0)) g_hidden.data()[i] = 0.0;

        if (base) {
            add_inplace(base->blocks[l].w_in, matmul_at(g_hidden, x));
            const Vector gb = column_sums(g_hidden);
            for (std::size_t i = 0; i < gb.size(); ++i) base->blocks[l].b_in[i] += gb[i];
        }
        if (a_in && adapter_grads)
            accumulate_adapter_grads(*a_in, g_hidden, x, cache.proj_in[l], (*adapter_grads)[a_in->target_weight_id]);

        add_inplace(grad_h, linear_backward_input(g_hidden, b.w_in, a_in));
    }
    if (base) {
        for (std::size_t i = 0; i < cache.tokens.size(); ++i) {
            auto dst = base->embedding.row(static_cast<std::size_t>(cache.tokens[i]));
            auto src = grad_h.row(i);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += model.config.embedding_multiplier * src[c];
        }
    }
}

std::vector<Matrix> capture_residuals(const ToyModelParams& model, std::span<const TokenId> tokens,
                                      const AdapterSet* adapters) {
    if (tokens.empty()) throw ValidationError("capture_residuals: empty token sequence");
    ForwardCache cache = forward(model, tokens, adapters, model.n_layers() - 1);
    return std::move(cache.residual);
}

ToyModelGrads zero_grads(const ToyModelParams& m) {
    ToyModelGrads g;
    g.embedding = Matrix(m.embedding.rows(), m.embedding.cols());
    for (const auto& b : m.blocks) {
        g.blocks.push_back({Matrix(b.w_in.rows(), b.w_in.cols()), Vector(b.b_in.size(), 0.0),
                            Matrix(b.w_out.rows(), b.w_out.cols()), Vector(b.b_out.size(), 0.0)});
    }
    g.unembedding = Matrix(m.unembedding.rows(), m.unembedding.cols());
    g.unembedding_bias.assign(m.unembedding_bias.size(), 0.0);
    return g;
}

double softmax_cross_entropy(const Matrix& logit, std::span<const TokenId> targets, double scale, Matrix* grad) {
    if (targets.size() != logit.rows())
        throw ShapeError("cross-entropy: " + std::to_string(targets.size()) + " targets for " +
                         logit.shape_string() + " logits");
    for (TokenId t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= logit.cols())
            throw ValidationError("cross-entropy: target " + std::to_string(t) + " outside vocabulary");
    double loss = 0.0;
    if (grad) *grad = Matrix(logit.rows(), logit.cols());
    for (std::size_t r = 0; r < logit.rows(); ++r) {
        auto row = logit.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double log_z = mx + std::log(z);
        const auto t = static_cast<std::size_t>(targets[r]);
        loss += log_z - row[t];
        if (grad) {
            auto g = grad->row(r);
            for (std::size_t c = 0; c < row.size(); ++c) g[c] = std::exp(row[c] - log_z) * scale;
            g[t] -= scale;
        }
    }
    return loss;
}

namespace {

void adam_vector(Vector& v, const Vector& g, AdamState& s) {
    Matrix p(1, v.size(), v);
    adam_step(p, Matrix(1, g.size(), g), s);
    v = std::move(p.data());
}

struct ToyOptimizer {
    AdamState embedding, unembedding, unembedding_bias;
    std::vector<AdamState> w_in, b_in, w_out, b_out;

    ToyOptimizer(const ToyModelParams& m, double lr)
        : embedding(AdamState::like(m.embedding, lr)),
          unembedding(AdamState::like(m.unembedding, lr)),
          unembedding_bias(1, m.unembedding_bias.size(), lr) {
        for (const auto& b : m.blocks) {
            w_in.push_back(AdamState::like(b.w_in, lr));
            b_in.emplace_back(1, b.b_in.size(), lr);
            w_out.push_back(AdamState::like(b.w_out, lr));
            b_out.emplace_back(1, b.b_out.size(), lr);
        }
    }

    void step(ToyModelParams& m, const ToyModelGrads& g) {
        adam_step(m.embedding, g.embedding, embedding);
        adam_step(m.unembedding, g.unembedding, unembedding);
        adam_vector(m.unembedding_bias, g.unembedding_bias, unembedding_bias);
        for (std::size_t l = 0; l < m.blocks.size(); ++l) {
            adam_step(m.blocks[l].w_in, g.blocks[l].w_in, w_in[l]);
            adam_vector(m.blocks[l].b_in, g.blocks[l].b_in, b_in[l]);
            adam_step(m.blocks[l].w_out, g.blocks[l].w_out, w_out[l]);
            adam_vector(m.blocks[l].b_out, g.blocks[l].b_out, b_out[l]);
        }
    }
};

}  // namespace

ToyTrainResult train_toy_model(const SyntheticCorpus& corpus, const ToyModelConfig& model_cfg,
                               const ToyTrainConfig& cfg) {
    Rng init_rng(cfg.seed);
    return train_toy_model(corpus, ToyModelParams::initialize(model_cfg, init_rng), cfg);
}

ToyTrainResult train_toy_model(const SyntheticCorpus& corpus, ToyModelParams model,
                               const ToyTrainConfig& cfg) {
    model.validate();
    if (cfg.batch_size < 1) throw ValidationError("toy training batch_size must be >= 1");
    std::vector<std::pair<TokenId, TokenId>> pairs;
    for (const auto& s : corpus.sequences)
        for (std::size_t i = 0; i + 1 < s.tokens.size(); ++i) pairs.emplace_back(s.tokens[i], s.tokens[i + 1]);
    if (pairs.empty()) throw ValidationError("train_toy_model: corpus has no token pairs");
    for (const auto& [a, b] : pairs) {
        if (a < 0 || b < 0 || static_cast<std::size_t>(std::max(a, b)) >= model.config.vocab_size)
            throw ValidationError("train_toy_model: corpus token outside model vocabulary");
    }

    ToyTrainResult result;
    ToyOptimizer opt(model, cfg.learning_rate);
    Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::size_t step = 0;
    std::vector<TokenId> inputs, targets;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(pairs);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
            inputs.clear();
            targets.clear();
            for (std::size_t i = start; i < end; ++i) {
                inputs.push_back(pairs[i].first);
                targets.push_back(pairs[i].second);
            }
            const double scale = 1.0 / static_cast<double>(inputs.size());
            ForwardCache cache = forward(model, inputs);
            Matrix logit = logits(model, cache);
            Matrix g_logit;
            const double loss = softmax_cross_entropy(logit, targets, scale, &g_logit);
            if (!std::isfinite(loss))
                throw ValidationError("train_toy_model: non-finite loss at step " + std::to_string(step));
            epoch_loss += loss;

            ToyModelGrads grads = zero_grads(model);
            grads.unembedding = matmul_at(g_logit, cache.residual.back());
            grads.unembedding_bias = column_sums(g_logit);
            Matrix g_h = matmul(g_logit, model.unembedding);
            backward_blocks(model, cache, std::move(g_h), model.n_layers(), nullptr, &grads, nullptr);
            opt.step(model, grads);
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(pairs.size()));
    }
    result.params = std::move(model);
    return result;
}

double perplexity(const ToyModelParams& model, const SyntheticCorpus& corpus, const std::string& language,
                  const AdapterSet* adapters) {
    std::vector<TokenId> inputs, targets;
    for (const auto& s : corpus.sequences) {
        if (s.language != language) continue;
        for (std::size_t i = 0; i + 1 < s.tokens.size(); ++i) {
            inputs.push_back(s.tokens[i]);
            targets.push_back(s.tokens[i + 1]);
        }
    }
    if (inputs.empty()) throw ValidationError("perplexity: no token pairs for " + language);
    const ForwardCache cache = forward(model, inputs, adapters);
    const double loss = softmax_cross_entropy(logits(model, cache), targets, 1.0, nullptr);
    return std::exp(loss / static_cast<double>(inputs.size()));
}

Vector ToyScorer::next_token_log_probs(std::span<const TokenId> context) const {
    if (context.empty()) throw ValidationError("ToyScorer: empty context");
    const TokenId last = context.back();
    const ForwardCache cache = forward(model_, std::span<const TokenId>(&last, 1), adapters_);
    Matrix l = logits(model_, cache);
    auto row = l.row(0);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    Vector out(row.begin(), row.end());
    for (double& v : out) v -= log_z;
    return out;
}

std::vector<McqItem> make_corpus_items(const SyntheticCorpus& corpus, std::size_t items_per_language,
                                       std::size_t n_choices, std::size_t n_shots, Rng& rng) {
    if (n_choices < 2 || n_choices > corpus.concept_count)
        throw ValidationError("make_corpus_items: invalid choice count");
    std::vector<McqItem> items;
    for (const auto& lang : corpus.languages) {
        std::vector<const CorpusSequence*> pool;
        for (const auto& s : corpus.sequences)
            if (s.language == lang && s.tokens.size() >= 2) pool.push_back(&s);
        if (pool.empty()) continue;
        auto pick_qa = [&](std::vector<TokenId>& prompt, TokenId& answer) {
            const auto* s = pool[static_cast<std::size_t>(rng.below(pool.size()))];
            const std::size_t cut = 1 + static_cast<std::size_t>(rng.below(s->tokens.size() - 1));
            prompt.assign(s->tokens.begin(), s->tokens.begin() + static_cast<std::ptrdiff_t>(cut));
            answer = s->tokens[cut];
        };
        for (std::size_t n = 0; n < items_per_language; ++n) {
            McqItem item;
            item.language = lang;
            for (std::size_t k = 0; k < n_shots; ++k) {
                std::vector<TokenId> shot;
                TokenId ans = 0;
                pick_qa(shot, ans);
                shot.push_back(ans);
                item.shots.push_back(std::move(shot));
            }
            TokenId gold = 0;
            pick_qa(item.prompt, gold);
            std::vector<TokenId> options{gold};
            while (options.size() < n_choices) {
                const TokenId t = corpus.token_id(lang, static_cast<int>(rng.below(corpus.concept_count)));
                if (std::find(options.begin(), options.end(), t) == options.end()) options.push_back(t);
            }
            item.gold_index = static_cast<std::size_t>(rng.below(n_choices));
            std::swap(options[0], options[item.gold_index]);
            for (TokenId t : options) item.choices.push_back({t});
            items.push_back(std::move(item));
        }
    }
    return items;
}

void save_toy_model(const std::filesystem::path& path, const ToyModelParams& model) {
    model.validate();
    nlohmann::json j;
    j["format_version"] = kToyModelFormatVersion;
    j["vocab_size"] = model.config.vocab_size;
    j["d_model"] = model.config.d_model;
    j["d_hidden"] = model.config.d_hidden;
    j["n_layers"] = model.config.n_layers;
    j["embedding_multiplier"] = model.config.embedding_multiplier;
    j["embedding"] = model.embedding.data();
    j["unembedding"] = model.unembedding.data();
    j["unembedding_bias"] = model.unembedding_bias;
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : model.blocks) {
        j["blocks"].push_back({{"w_in", b.w_in.data()},
                               {"b_in", b.b_in},
                               {"w_out", b.w_out.data()},
                               {"b_out", b.b_out}});
    }
    write_text_file(path, j.dump() + "\n");
}

ToyModelParams load_toy_model(const std::filesystem::path& path) {
    const auto j = parse_json_file(path);
    try {
        if (j.at("format_version").get<int>() != kToyModelFormatVersion)
            throw ValidationError(path.string() + ": unsupported model format_version");
        ToyModelParams m;
        m.config.vocab_size = j.at("vocab_size").get<std::size_t>();
        m.config.d_model = j.at("d_model").get<std::size_t>();
        m.config.d_hidden = j.at("d_hidden").get<std::size_t>();
        m.config.n_layers = j.at("n_layers").get<std::size_t>();
        m.config.embedding_multiplier = j.at("embedding_multiplier").get<double>();
        const auto& c = m.config;
        m.embedding = Matrix(c.vocab_size, c.d_model, j.at("embedding").get<Vector>());
        m.unembedding = Matrix(c.vocab_size, c.d_model, j.at("unembedding").get<Vector>());
        m.unembedding_bias = j.at("unembedding_bias").get<Vector>();
        for (const auto& b : j.at("blocks")) {
            m.blocks.push_back({Matrix(c.d_hidden, c.d_model, b.at("w_in").get<Vector>()),
                                b.at("b_in").get<Vector>(),
                                Matrix(c.d_model, c.d_hidden, b.at("w_out").get<Vector>()),
                                b.at("b_out").get<Vector>()});
        }
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": malformed model checkpoint: " + e.what());
    }
}

}  // namespace xling
