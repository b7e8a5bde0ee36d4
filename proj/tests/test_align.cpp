#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "xling/align.hpp"
#include "xling/io.hpp"
#include "xling/pipeline.hpp"

using namespace xling;

namespace {

Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
    Vector v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

double oracle_loss(const Vector& u, const Vector& v, const Vector& o, double alpha) {
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) s += std::abs(u[i] - v[i]) + alpha * (u[i] - o[i]) * (u[i] - o[i]);
    return s;
}

// A small trained model, SAE and sentence pairs shared by the run_alignment cases.
struct SmallSetup {
    ToyModelParams model;
    SaeParams sae;
    std::vector<AlignmentPair> pairs;
    AlignmentConfig cfg;

    SmallSetup() {
        SyntheticCorpusConfig cc;
        cc.languages = {"en", "xx"};
        cc.tokens_per_language = {{"en", 4000}, {"xx", 400}};
        cc.shared_concept_count = 16;
        const auto corpus = generate_corpus(cc);
        ToyModelConfig mc;
        mc.vocab_size = 32;
        mc.d_model = 16;
        mc.d_hidden = 24;
        mc.n_layers = 4;
        ToyTrainConfig tc;
        tc.epochs = 2;
        model = train_toy_model(corpus, mc, tc).params;
        SaeTrainConfig sc;
        sc.d_features = 32;
        sc.steps = 400;
        sc.learning_rate = 3e-3;
        sc.ste_bandwidth = 0.05;
        sae = train_sae(toy_layer_activations(model, corpus, 2, 4000), sc).params;
        pairs = toy_alignment_pairs(corpus, "en");
        cfg.target_layer = 2;
        cfg.tuned_first = 0;
        cfg.tuned_last = 2;
        cfg.iterations = 2;
        cfg.sample_count = 64;
        cfg.batch_size = 8;
        cfg.learning_rate = 5e-3;
        cfg.pooling = PhrasePooling::Max;
    }
};

// Mean L1 distance between pooled reference and target features over pairs.
double pair_distance(const SmallSetup& s, const AdapterSet* adapters) {
    double total = 0;
    for (const auto& p : s.pairs) {
        const auto u = pooled_features(s.model, adapters, s.sae, s.cfg.target_layer, p.reference_tokens, s.cfg.pooling);
        const auto v = pooled_features(s.model, adapters, s.sae, s.cfg.target_layer, p.target_tokens, s.cfg.pooling);
        for (std::size_t i = 0; i < u.size(); ++i) total += std::abs(u[i] - v[i]);
    }
    return total / static_cast<double>(s.pairs.size());
}

}  // namespace

TEST_SUITE("align") {
    TEST_CASE("alignment_loss examples and scalar oracle") {
        const Vector u{1, 2};
        CHECK(alignment_loss(u, u, u, 1.0) == 0.0);
        CHECK(alignment_loss(u, Vector{0.5, 1.5}, u, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK_THROWS_AS(alignment_loss(u, Vector{1}, u, 1.0), ShapeError);
        Rng rng(51);
        for (int t = 0; t < 200; ++t) {
            const Vector a = random_vector(10, rng), b = random_vector(10, rng), o = random_vector(10, rng);
            const double alpha = rng.uniform(0.0, 2.0);
            const double got = alignment_loss(a, b, o, alpha);
            CHECK(std::abs(got - oracle_loss(a, b, o, alpha)) < 1e-12);
            CHECK(got >= 0.0);
        }
    }

    TEST_CASE("batch loss is the row mean") {
        Rng rng(52);
        Matrix u(3, 4), v(3, 4), o(3, 4);
        for (auto* m : {&u, &v, &o})
            for (double& x : m->data()) x = rng.normal();
        double want = 0;
        for (std::size_t r = 0; r < 3; ++r)
            want += oracle_loss(Vector(u.row(r).begin(), u.row(r).end()), Vector(v.row(r).begin(), v.row(r).end()),
                                Vector(o.row(r).begin(), o.row(r).end()), 0.5);
        CHECK(std::abs(alignment_loss(u, v, o, 0.5) - want / 3.0) < 1e-12);
    }

    TEST_CASE("loss is zero only at u = v = u_orig") {
        Rng rng(53);
        const Vector u = random_vector(5, rng);
        Vector v = u, o = u;
        CHECK(alignment_loss(u, v, o, 1.0) == 0.0);
        v[2] += 1e-3;
        CHECK(alignment_loss(u, v, o, 1.0) > 0.0);
        v = u;
        o[1] += 1e-3;
        CHECK(alignment_loss(u, v, o, 1.0) > 0.0);
    }

    TEST_CASE("alignment_grad conventions") {
        const Vector u{1, 2, 3};
        const auto g = alignment_grad(u, u, u, 1.0);
        for (double x : g.dv) CHECK(x == 0.0);
        for (double x : g.du) CHECK(x == 0.0);
        Rng rng(54);
        const Vector a = random_vector(6, rng), b = random_vector(6, rng), o = random_vector(6, rng);
        const auto g0 = alignment_grad(a, b, o, 0.0);
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(std::abs(g0.du[i]) == 1.0);
            CHECK(g0.dv[i] == -g0.du[i]);
        }
    }

    TEST_CASE("alignment_grad matches central differences") {
        Rng rng(55);
        for (double alpha : {0.0, 0.5, 1.0}) {
            for (int t = 0; t < 50; ++t) {
                const Vector u = random_vector(8, rng), v = random_vector(8, rng), o = random_vector(8, rng);
                bool kink = false;
                for (std::size_t i = 0; i < 8; ++i) kink |= std::abs(u[i] - v[i]) <= 1e-3;
                if (kink) continue;
                const auto g = alignment_grad(u, v, o, alpha);
                const double h = 1e-6;
                for (std::size_t i = 0; i < 8; ++i) {
                    Vector up = u, dn = u;
                    up[i] += h;
                    dn[i] -= h;
                    const double du = (alignment_loss(up, v, o, alpha) - alignment_loss(dn, v, o, alpha)) / (2 * h);
                    CHECK(std::abs(du - g.du[i]) <= 1e-5 * std::max(1.0, std::abs(du)));
                    Vector vu = v, vd = v;
                    vu[i] += h;
                    vd[i] -= h;
                    const double dv = (alignment_loss(u, vu, o, alpha) - alignment_loss(u, vd, o, alpha)) / (2 * h);
                    CHECK(std::abs(dv - g.dv[i]) <= 1e-5 * std::max(1.0, std::abs(dv)));
                }
            }
        }
    }

    TEST_CASE("a small step against the gradient shrinks |u - v| when alpha is 0") {
        Rng rng(56);
        for (int t = 0; t < 100; ++t) {
            const Vector u = random_vector(6, rng), v = random_vector(6, rng);
            const auto g = alignment_grad(u, v, u, 0.0);
            Vector stepped = u;
            for (std::size_t i = 0; i < 6; ++i) stepped[i] -= 1e-4 * g.du[i];
            CHECK(alignment_loss(stepped, v, u, 0.0) < alignment_loss(u, v, u, 0.0));
        }
    }

    TEST_CASE("adapters cover exactly the tuned layers with matching shapes") {
        ToyModelConfig mc;
        mc.vocab_size = 32;
        mc.n_layers = 8;
        Rng rng(57);
        const auto model = ToyModelParams::initialize(mc, rng);
        AlignmentConfig cfg;
        cfg.rank = 4;
        cfg.target_layer = 6;
        cfg.tuned_first = 0;
        cfg.tuned_last = 6;
        const auto set = attach_adapters(model, cfg, rng);
        CHECK(set.adapters.size() == 14);
        for (std::size_t l = 0; l < 8; ++l)
            for (bool in : {true, false}) {
                const auto* a = set.find(weight_id(l, in));
                if (l > 6) {
                    CHECK(a == nullptr);
                    continue;
                }
                REQUIRE(a != nullptr);
                const Matrix& w = model.weight(weight_id(l, in));
                CHECK(a->delta().rows() == w.rows());
                CHECK(a->delta().cols() == w.cols());
                CHECK(a->rank == 4);
            }
        cfg.tuned_last = 7;
        CHECK_THROWS_AS(attach_adapters(model, cfg, rng), ValidationError);
        cfg.tuned_last = 6;
        cfg.target_layer = 8;
        CHECK_THROWS_AS(attach_adapters(model, cfg, rng), ValidationError);
    }

    TEST_CASE("zero-initialized adapters leave the forward pass bit-identical") {
        ToyModelConfig mc;
        mc.vocab_size = 32;
        Rng rng(58);
        const auto model = ToyModelParams::initialize(mc, rng);
        AlignmentConfig cfg;
        cfg.target_layer = 6;
        cfg.tuned_last = 6;
        const auto set = attach_adapters(model, cfg, rng);
        for (int t = 0; t < 20; ++t) {
            std::vector<TokenId> tokens(1 + rng.below(8));
            for (auto& x : tokens) x = static_cast<TokenId>(rng.below(32));
            const auto a = forward(model, tokens), b = forward(model, tokens, &set);
            CHECK(logits(model, a) == logits(model, b));
            CHECK(a.residual == b.residual);
        }
    }

    TEST_CASE("improvement and retention metrics") {
        const std::map<std::string, double> pre{{"en", 2.0}, {"ml", 0.5}, {"hi", 0.0}};
        const auto same = improvement_and_retention(pre, pre, "en");
        CHECK(same.improvement_percent.at("ml") == 0.0);
        CHECK(same.retention_percent == 100.0);
        CHECK(same.excluded_zero_pre == std::vector<std::string>{"hi"});

        const auto ml = improvement_and_retention({{"en", 1.0}, {"ml", 0.5}}, {{"en", 0.91}, {"ml", 0.9385}}, "en");
        CHECK(ml.improvement_percent.at("ml") == doctest::Approx(87.7).epsilon(1e-12));
        CHECK(ml.retention_percent == doctest::Approx(91.0).epsilon(1e-12));

        Rng rng(59);
        for (int t = 0; t < 100; ++t) {
            std::map<std::string, double> a, b;
            for (const char* l : {"en", "zh", "ml", "hi"}) {
                a[l] = rng.uniform(0.1, 3.0);
                b[l] = rng.uniform(0.1, 3.0);
            }
            const auto m = improvement_and_retention(a, b, "en");
            for (const auto& [l, v] : m.improvement_percent) CHECK(std::abs(v - (b[l] - a[l]) / a[l] * 100.0) < 1e-12);
            CHECK(std::abs(m.retention_percent - b["en"] / a["en"] * 100.0) < 1e-12);
        }
        CHECK_THROWS_AS(improvement_and_retention({{"en", 1.0}}, {{"ml", 1.0}}, "en"), ValidationError);
    }

    TEST_CASE("run_alignment behaviour on a small trained model") {
        static const SmallSetup s;

        SUBCASE("zero iterations: no improvement, full retention") {
            auto cfg = s.cfg;
            cfg.iterations = 0;
            Rng rng(1);
            auto adapters = attach_adapters(s.model, cfg, rng);
            const auto out = run_alignment(s.model, adapters, s.pairs, s.sae, cfg);
            CHECK(out.metrics.improvement_percent.at("xx") == 0.0);
            CHECK(out.metrics.retention_percent == 100.0);
            CHECK(out.steps == 0);
        }

        SUBCASE("training pulls pairs together and never touches base weights") {
            const std::string before = [&] {
                const auto p = std::filesystem::temp_directory_path() / "xling_align_base.json";
                save_toy_model(p, s.model);
                auto text = read_text_file(p);
                std::filesystem::remove(p);
                return sha256_hex(text);
            }();
            Rng rng(2);
            auto adapters = attach_adapters(s.model, s.cfg, rng);
            const double before_distance = pair_distance(s, nullptr);
            const auto out = run_alignment(s.model, adapters, s.pairs, s.sae, s.cfg);
            const double after_distance = pair_distance(s, &adapters);
            MESSAGE("mean pair L1 distance " << before_distance << " -> " << after_distance);
            CHECK(after_distance < before_distance);
            CHECK(out.loss_curve.size() == out.steps);
            const auto p = std::filesystem::temp_directory_path() / "xling_align_base.json";
            save_toy_model(p, s.model);
            CHECK(sha256_hex(read_text_file(p)) == before);
            std::filesystem::remove(p);
        }

        SUBCASE("a huge alpha pins the reference language") {
            auto cfg = s.cfg;
            cfg.alpha = 1e6;
            Rng rng(3);
            auto adapters = attach_adapters(s.model, cfg, rng);
            const auto out = run_alignment(s.model, adapters, s.pairs, s.sae, cfg);
            CHECK(out.metrics.retention_percent >= 99.0);
        }

        SUBCASE("pairs with an empty side or the reference language are skipped and counted") {
            auto pairs = s.pairs;
            pairs.push_back({"xx", 999, {}, {1, 2}});
            pairs.push_back({"en", 998, {1}, {1}});
            auto cfg = s.cfg;
            cfg.iterations = 1;
            cfg.sample_count = 8;
            Rng rng(4);
            auto adapters = attach_adapters(s.model, cfg, rng);
            CHECK(run_alignment(s.model, adapters, pairs, s.sae, cfg).skipped_pairs == 2);
        }
    }

    TEST_CASE("adapter checkpoints round trip") {
        ToyModelConfig mc;
        mc.vocab_size = 32;
        Rng rng(60);
        const auto model = ToyModelParams::initialize(mc, rng);
        AlignmentConfig cfg;
        cfg.target_layer = 3;
        cfg.tuned_last = 3;
        auto set = attach_adapters(model, cfg, rng);
        for (auto& [id, a] : set.adapters)
            for (double& x : a.up.data()) x = rng.normal();
        const auto p = std::filesystem::temp_directory_path() / "xling_adapters.json";
        save_adapters(p, set);
        const auto back = load_adapters(p);
        REQUIRE(back.adapters.size() == set.adapters.size());
        for (const auto& [id, a] : set.adapters) {
            const auto& b = back.adapters.at(id);
            CHECK(b.up == a.up);
            CHECK(b.down == a.down);
            CHECK(b.scale == a.scale);
            CHECK(b.rank == a.rank);
        }
        std::filesystem::remove(p);
    }
}
