#include "xling/sae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "xling/io.hpp"

namespace xling {

std::string to_string(SaeVariant v) { return v == SaeVariant::ReluL1 ? "relu_l1" : "jumprelu"; }

SaeVariant parse_sae_variant(const std::string& s) {
    if (s == "relu_l1" || s == "relu") return SaeVariant::ReluL1;
    if (s == "jumprelu" || s == "jump_relu") return SaeVariant::JumpRelu;
    throw ValidationError("unknown SAE variant '" + s + "' (expected relu_l1 or jumprelu)");
}

namespace {

void normalize_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double n = norm2(row);
        if (n > 0.0)
            for (double& v : row) v /= n;
    }
}

void check_finite(const Matrix& m, const char* what) {
    const auto& d = m.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i])) {
            throw ValidationError(std::string(what) + ": non-finite value at row " +
                                  std::to_string(i / std::max<std::size_t>(m.cols(), 1)));
        }
    }
}

}  // namespace

SaeParams SaeParams::initialize(std::size_t d_model, std::size_t d_features, SaeVariant variant,
                                Rng& rng) {
    if (d_model == 0 || d_features == 0) throw ValidationError("SAE dims must be positive");
    SaeParams p;
    p.d_model = d_model;
    p.d_features = d_features;
    p.variant = variant;
    p.w_dec = random_normal(d_features, d_model, 1.0, rng);
    normalize_rows(p.w_dec);
    p.w_enc = p.w_dec.transposed();
    p.b_enc.assign(d_features, 0.0);
    p.b_dec.assign(d_model, 0.0);
    p.thresholds.assign(d_features, variant == SaeVariant::JumpRelu ? 0.001 : 0.0);
    return p;
}

void SaeParams::validate() const {
    if (w_enc.rows() != d_model || w_enc.cols() != d_features)
        throw ShapeError("w_enc is " + w_enc.shape_string() + ", expected " + std::to_string(d_model) +
                         "x" + std::to_string(d_features));
    if (w_dec.rows() != d_features || w_dec.cols() != d_model)
        throw ShapeError("w_dec is " + w_dec.shape_string() + ", expected " +
                         std::to_string(d_features) + "x" + std::to_string(d_model));
    if (b_enc.size() != d_features || thresholds.size() != d_features)
        throw ShapeError("b_enc/thresholds length must equal d_features");
    if (b_dec.size() != d_model) throw ShapeError("b_dec length must equal d_model");
    for (double t : thresholds) {
        if (!(t >= 0.0)) throw ValidationError("thresholds must be >= 0");
        if (variant == SaeVariant::ReluL1 && t != 0.0)
            throw ValidationError("ReluL1 SAE must have zero thresholds");
    }
}

void SaeTrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("sae batch_size must be >= 1");
    if (steps < 1) throw ValidationError("sae steps must be >= 1");
    if (d_features < 1) throw ValidationError("sae d_features must be >= 1");
    if (!(sparsity_coefficient >= 0.0)) throw ValidationError("sparsity coefficient must be >= 0");
    if (!(learning_rate > 0.0)) throw ValidationError("sae learning rate must be > 0");
    if (!(ste_bandwidth > 0.0)) throw ValidationError("ste bandwidth must be > 0");
    if (target_l0 && !(*target_l0 > 0.0)) throw ValidationError("target_l0 must be > 0");
    if (!(controller_initial_coefficient > 0.0))
        throw ValidationError("controller_initial_coefficient must be > 0");
}

Matrix pre_activations(const SaeParams& sae, const Matrix& x) {
    if (x.cols() != sae.d_model) {
        throw ShapeError("SAE input width " + std::to_string(x.cols()) + " vs d_model " +
                         std::to_string(sae.d_model));
    }
    Matrix centered = x;
    for (std::size_t r = 0; r < centered.rows(); ++r) {
        auto row = centered.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] -= sae.b_dec[c];
    }
    Matrix pre = matmul(centered, sae.w_enc);
    add_row_vector(pre, sae.b_enc);
    return pre;
}

Matrix encode_batch(const SaeParams& sae, const Matrix& x) {
    Matrix f = pre_activations(sae, x);
    for (std::size_t r = 0; r < f.rows(); ++r) {
        auto row = f.row(r);
        for (std::size_t j = 0; j < row.size(); ++j)
            if (!(row[j] > sae.thresholds[j])) row[j] = 0.0;
    }
    return f;
}

Vector encode(const SaeParams& sae, std::span<const double> x) {
    if (x.size() != sae.d_model) {
        throw ShapeError("encode: input length " + std::to_string(x.size()) + " vs d_model " +
                         std::to_string(sae.d_model));
    }
    Matrix m(1, x.size(), Vector(x.begin(), x.end()));
    return encode_batch(sae, m).data();
}

Matrix decode_batch(const SaeParams& sae, const Matrix& f) {
    if (f.cols() != sae.d_features) {
        throw ShapeError("decode: feature width " + std::to_string(f.cols()) + " vs d_features " +
                         std::to_string(sae.d_features));
    }
    Matrix out = matmul(f, sae.w_dec);
    add_row_vector(out, sae.b_dec);
    return out;
}

Vector decode(const SaeParams& sae, std::span<const double> f) {
    if (f.size() != sae.d_features) {
        throw ShapeError("decode: feature length " + std::to_string(f.size()) + " vs d_features " +
                         std::to_string(sae.d_features));
    }
    Matrix m(1, f.size(), Vector(f.begin(), f.end()));
    return decode_batch(sae, m).data();
}

double mean_l0(const SaeParams& sae, const Matrix& activations) {
    if (activations.rows() == 0) throw ValidationError("mean_l0: empty batch");
    const Matrix f = encode_batch(sae, activations);
    std::size_t active = 0;
    for (double v : f.data())
        if (v > 0.0) ++active;
    return static_cast<double>(active) / static_cast<double>(activations.rows());
}

double reconstruction_mse(const SaeParams& sae, const Matrix& activations) {
    if (activations.rows() == 0) throw ValidationError("reconstruction_mse: empty batch");
    const Matrix recon = decode_batch(sae, encode_batch(sae, activations));
    double s = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        const double d = recon.data()[i] - activations.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(recon.size());
}

SaeTrainResult train_sae(const Matrix& activations, const SaeTrainConfig& cfg) {
    cfg.validate();
    if (activations.rows() == 0 || activations.cols() == 0)
        throw ValidationError("train_sae: empty activation stream");
    check_finite(activations, "train_sae");

    Rng rng(cfg.seed);
    const std::size_t d = activations.cols();
    const std::size_t m = cfg.d_features;
    SaeParams sae = SaeParams::initialize(d, m, cfg.variant, rng);
    const bool jump = cfg.variant == SaeVariant::JumpRelu;

    Vector mean = column_sums(activations);
    for (double& v : mean) v /= static_cast<double>(activations.rows());
    double scale = 1.0;
    if (cfg.normalize_input) {
        double ss = 0.0;
        for (std::size_t r = 0; r < activations.rows(); ++r) {
            auto row = activations.row(r);
            for (std::size_t c = 0; c < d; ++c) ss += (row[c] - mean[c]) * (row[c] - mean[c]);
        }
        const double rms = std::sqrt(ss / static_cast<double>(activations.rows() * d));
        if (rms > 0.0) scale = rms;
    }
    const double inv_scale = 1.0 / scale;
    // Start the decoder bias at the data mean so early steps fit directions,
    // not the offset.
    sae.b_dec = mean;
    for (double& v : sae.b_dec) v *= inv_scale;

    Matrix w_enc = sae.w_enc;
    Matrix w_dec = sae.w_dec;
    Matrix b_enc(1, m, sae.b_enc);
    Matrix b_dec(1, d, sae.b_dec);
    Matrix theta(1, m, sae.thresholds);
    AdamState s_w_enc = AdamState::like(w_enc, cfg.learning_rate);
    AdamState s_w_dec = AdamState::like(w_dec, cfg.learning_rate);
    AdamState s_b_enc = AdamState::like(b_enc, cfg.learning_rate);
    AdamState s_b_dec = AdamState::like(b_dec, cfg.learning_rate);
    AdamState s_theta = AdamState::like(theta, cfg.learning_rate);

    std::vector<std::size_t> order(activations.rows());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::size_t cursor = 0;

    const std::size_t bs = cfg.batch_size;
    const double eps = cfg.ste_bandwidth;
    double lambda = cfg.target_l0 ? cfg.controller_initial_coefficient : cfg.sparsity_coefficient;
    SaeTrainLog log;
    log.mse.reserve(cfg.steps);
    log.mean_l0.reserve(cfg.steps);

    Matrix x(bs, d);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t b = 0; b < bs; ++b) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            auto src = activations.row(order[cursor++]);
            auto dst = x.row(b);
            for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] * inv_scale;
        }

        // Forward.
        Matrix xc = x;
        for (std::size_t b = 0; b < bs; ++b) {
            auto row = xc.row(b);
            for (std::size_t c = 0; c < d; ++c) row[c] -= b_dec(0, c);
        }
        Matrix pre = matmul(xc, w_enc);
        add_row_vector(pre, b_enc.row(0));
        Matrix f = pre;
        std::size_t active = 0;
        for (std::size_t b = 0; b < bs; ++b) {
            auto row = f.row(b);
            for (std::size_t j = 0; j < m; ++j) {
                if (row[j] > theta(0, j)) {
                    ++active;
                } else {
                    row[j] = 0.0;
                }
            }
        }
        Matrix recon = matmul(f, w_dec);
        add_row_vector(recon, b_dec.row(0));

        const double inv_n = 1.0 / static_cast<double>(bs * d);
        Matrix g_out(bs, d);
        double mse = 0.0;
        for (std::size_t i = 0; i < g_out.size(); ++i) {
            const double r = recon.data()[i] - x.data()[i];
            mse += r * r;
            g_out.data()[i] = 2.0 * r * inv_n;
        }
        mse *= inv_n;
        const double l0 = static_cast<double>(active) / static_cast<double>(bs);
        if (!std::isfinite(mse)) {
            throw ValidationError("train_sae: non-finite loss at step " + std::to_string(step));
        }
        log.mse.push_back(mse * scale * scale);
        log.mean_l0.push_back(l0);
        log.sparsity_coefficient.push_back(lambda);

        // Backward.
        Matrix g_w_dec = matmul_at(f, g_out);
        Vector g_b_dec = column_sums(g_out);
        Matrix g_f = matmul_bt(g_out, w_dec);
        Matrix g_theta(1, m);
        Matrix g_pre(bs, m);
        const double inv_b = 1.0 / static_cast<double>(bs);
        for (std::size_t b = 0; b < bs; ++b) {
            for (std::size_t j = 0; j < m; ++j) {
                const double z = pre(b, j);
                const double th = theta(0, j);
                const bool on = z > th;
                double gf = g_f(b, j);
                if (on) {
                    double gp = gf;
                    if (!jump) gp += lambda * inv_b;  // d|f|/df on the active branch
                    g_pre(b, j) = gp;
                }
                if (jump && std::abs(z - th) < 0.5 * eps) {
                    // Rectangle-kernel pseudo-derivatives w.r.t. theta:
                    //   d/dtheta [z H(z - theta)] ~ -(theta/eps)
                    //   d/dtheta H(z - theta)     ~ -(1/eps)
                    g_theta(0, j) += gf * (-th / eps) + lambda * inv_b * (-1.0 / eps);
                }
            }
        }
        Matrix g_w_enc = matmul_at(xc, g_pre);
        Vector g_b_enc = column_sums(g_pre);
        Matrix g_xc = matmul_bt(g_pre, w_enc);
        Vector g_xc_sum = column_sums(g_xc);
        for (std::size_t c = 0; c < d; ++c) g_b_dec[c] -= g_xc_sum[c];

        adam_step(w_enc, g_w_enc, s_w_enc);
        adam_step(w_dec, g_w_dec, s_w_dec);
        adam_step(b_enc, Matrix(1, m, g_b_enc), s_b_enc);
        adam_step(b_dec, Matrix(1, d, g_b_dec), s_b_dec);
        if (jump) {
            adam_step(theta, g_theta, s_theta);
            for (double& t : theta.data()) t = std::max(t, 0.0);
        }
        normalize_rows(w_dec);

        if (cfg.target_l0) {
            const double err = (l0 - *cfg.target_l0) / *cfg.target_l0;
            lambda *= std::exp(cfg.l0_controller_rate * std::clamp(err, -1.0, 1.0));
        }
    }

    // Back to input units: f(x) = scale * f'(x / scale).
    sae.w_enc = std::move(w_enc);
    sae.w_dec = std::move(w_dec);
    sae.b_enc = b_enc.data();
    sae.b_dec = b_dec.data();
    sae.thresholds = theta.data();
    for (double& v : sae.b_enc) v *= scale;
    for (double& v : sae.b_dec) v *= scale;
    for (double& v : sae.thresholds) v *= scale;
    sae.validate();
    return {std::move(sae), std::move(log)};
}

SyntheticDictionaryData make_synthetic_dictionary_data(std::size_t d_model, std::size_t n_atoms,
                                                       std::size_t active_per_sample,
                                                       std::size_t n_samples, Rng& rng) {
    if (active_per_sample > n_atoms) throw ValidationError("more active atoms than dictionary size");
    SyntheticDictionaryData out;
    out.dictionary = random_normal(n_atoms, d_model, 1.0, rng);
    normalize_rows(out.dictionary);
    out.samples = Matrix(n_samples, d_model);
    std::vector<std::size_t> atoms(n_atoms);
    for (std::size_t s = 0; s < n_samples; ++s) {
        std::iota(atoms.begin(), atoms.end(), 0);
        // Partial Fisher-Yates: first `active_per_sample` entries are distinct.
        for (std::size_t k = 0; k < active_per_sample; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng.below(n_atoms - k));
            std::swap(atoms[k], atoms[j]);
        }
        auto row = out.samples.row(s);
        for (std::size_t k = 0; k < active_per_sample; ++k) {
            const double coef = rng.uniform(0.5, 1.5);
            auto atom = out.dictionary.row(atoms[k]);
            for (std::size_t c = 0; c < d_model; ++c) row[c] += coef * atom[c];
        }
    }
    return out;
}

double dictionary_recovery(const Matrix& learned_rows, const Matrix& true_rows) {
    if (learned_rows.cols() != true_rows.cols())
        throw ShapeError("dictionary_recovery: " + learned_rows.shape_string() + " vs " +
                         true_rows.shape_string());
    if (true_rows.rows() == 0 || learned_rows.rows() == 0)
        throw ValidationError("dictionary_recovery: empty dictionary");
    double total = 0.0;
    for (std::size_t t = 0; t < true_rows.rows(); ++t) {
        auto tr = true_rows.row(t);
        const double tn = norm2(tr);
        double best = -1.0;
        for (std::size_t l = 0; l < learned_rows.rows(); ++l) {
            auto lr = learned_rows.row(l);
            const double ln = norm2(lr);
            if (ln == 0.0 || tn == 0.0) continue;
            best = std::max(best, dot(tr, lr) / (tn * ln));
        }
        total += best;
    }
    return total / static_cast<double>(true_rows.rows());
}

namespace {

nlohmann::json config_to_json(const SaeTrainConfig& c) {
    nlohmann::json j;
    j["variant"] = to_string(c.variant);
    j["d_features"] = c.d_features;
    j["sparsity_coefficient"] = c.sparsity_coefficient;
    j["target_l0"] = c.target_l0 ? nlohmann::json(*c.target_l0) : nlohmann::json(nullptr);
    j["l0_controller_rate"] = c.l0_controller_rate;
    j["controller_initial_coefficient"] = c.controller_initial_coefficient;
    j["batch_size"] = c.batch_size;
    j["steps"] = c.steps;
    j["learning_rate"] = c.learning_rate;
    j["ste_bandwidth"] = c.ste_bandwidth;
    j["normalize_input"] = c.normalize_input;
    j["seed"] = c.seed;
    return j;
}

}  // namespace

void save_sae(const std::filesystem::path& path, const SaeParams& sae,
              const std::optional<SaeTrainConfig>& cfg) {
    sae.validate();
    nlohmann::json j;
    j["format_version"] = kSaeFormatVersion;
    j["d_model"] = sae.d_model;
    j["d_features"] = sae.d_features;
    j["variant"] = to_string(sae.variant);
    j["w_enc"] = sae.w_enc.data();
    j["b_enc"] = sae.b_enc;
    j["w_dec"] = sae.w_dec.data();
    j["b_dec"] = sae.b_dec;
    j["thresholds"] = sae.thresholds;
    j["train_config"] = cfg ? config_to_json(*cfg) : nlohmann::json(nullptr);
    write_text_file(path, j.dump() + "\n");
}

SaeParams load_sae(const std::filesystem::path& path) {
    const nlohmann::json j = parse_json_file(path);
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kSaeFormatVersion) {
            throw ValidationError("SAE checkpoint format_version " + std::to_string(version) +
                                  " is not supported");
        }
        SaeParams p;
        p.d_model = j.at("d_model").get<std::size_t>();
        p.d_features = j.at("d_features").get<std::size_t>();
        p.variant = parse_sae_variant(j.at("variant").get<std::string>());
        p.w_enc = Matrix(p.d_model, p.d_features, j.at("w_enc").get<Vector>());
        p.b_enc = j.at("b_enc").get<Vector>();
        p.w_dec = Matrix(p.d_features, p.d_model, j.at("w_dec").get<Vector>());
        p.b_dec = j.at("b_dec").get<Vector>();
        p.thresholds = j.at("thresholds").get<Vector>();
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": malformed SAE checkpoint: " + e.what());
    }
}

}  // namespace xling
