#include <cmath>
#include <set>
#include <map>

#include "doctest.h"
#include "test_support.hpp"
#include "xling/analysis.hpp"
#include "xling/fixtures.hpp"

using namespace xling;
using xling::testing::direct_gap;
using xling::testing::random_record;
using xling::testing::random_stats;

namespace {

Vector random_vector(std::size_t n, Rng& rng) {
    Vector v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

double textbook_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx) / std::sqrt(syy);
}

const LanguageGroups kGroups{};
const std::vector<std::string> kAllLanguages{"en", "zh", "ru", "es", "it", "id", "ca", "mr", "ml", "hi"};

}  // namespace

TEST_SUITE("analysis") {
    TEST_CASE("mean_pool examples and scalar oracle") {
        CHECK(mean_pool(std::vector<Vector>{{1, 2}, {3, 4}}) == Vector{2, 3});
        CHECK(mean_pool(std::vector<Vector>{{5, -1, 2}}) == Vector{5, -1, 2});
        CHECK_THROWS_AS(mean_pool(std::vector<Vector>{}), ValidationError);
        CHECK_THROWS_AS(mean_pool(std::vector<Vector>{{1, 2}, {3}}), ShapeError);
        Rng rng(31);
        std::vector<Vector> vs;
        for (int i = 0; i < 100; ++i) vs.push_back(random_vector(9, rng));
        const Vector got = mean_pool(vs);
        for (std::size_t d = 0; d < 9; ++d) {
            double s = 0;
            for (const auto& v : vs) s += v[d];
            CHECK(std::abs(got[d] - s / 100.0) < 1e-12);
        }
    }

    TEST_CASE("mean_pool is linear over summed token sets") {
        Rng rng(32);
        std::vector<Vector> a, b, sum;
        for (int i = 0; i < 10; ++i) {
            a.push_back(random_vector(4, rng));
            b.push_back(random_vector(4, rng));
            Vector s(4);
            for (int d = 0; d < 4; ++d) s[d] = a.back()[d] + b.back()[d];
            sum.push_back(s);
        }
        const Vector pa = mean_pool(a), pb = mean_pool(b), ps = mean_pool(sum);
        for (int d = 0; d < 4; ++d) CHECK(std::abs(ps[d] - (pa[d] + pb[d])) < 1e-12);
    }

    TEST_CASE("cosine examples and properties") {
        const Vector u{0.3, -1.2, 2.0};
        CHECK(cosine(u, u) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(cosine(Vector{1, 0}, Vector{0, 1}) == 0.0);
        CHECK(std::abs(cosine(Vector{1, 0}, Vector{1, 1}) - 0.70710678) < 1e-8);
        CHECK_THROWS_AS(cosine(Vector{0, 0}, Vector{1, 1}), ValidationError);
        CHECK(!try_cosine(Vector{0, 0}, Vector{1, 1}));
        Rng rng(33);
        for (int i = 0; i < 100; ++i) {
            const Vector a = random_vector(5, rng), b = random_vector(5, rng);
            Vector ca = a;
            const double c = rng.uniform(0.1, 10.0);
            for (double& x : ca) x *= c;
            CHECK(std::abs(cosine(a, ca) - 1.0) < 1e-12);
            CHECK(cosine(a, b) == cosine(b, a));
            CHECK(std::abs(cosine(a, b)) <= 1.0);
        }
    }

    TEST_CASE("layer_similarity examples") {
        std::vector<PooledPhrase> ps;
        // Identical translations at two layers.
        for (std::size_t l = 0; l < 2; ++l)
            for (std::int64_t o = 0; o < 3; ++o) {
                ps.push_back({l, "en", o, {1.0 + o, 2.0, -1.0}});
                ps.push_back({l, "ml", o, {1.0 + o, 2.0, -1.0}});
            }
        const auto same = layer_similarity(ps, "ml", 3);
        CHECK(*same.per_layer_cosine[0] == doctest::Approx(1.0));
        CHECK(*same.per_layer_cosine[1] == doctest::Approx(1.0));
        CHECK(!same.per_layer_cosine[2]);  // absent, not zero

        // Cosines 0.6 and 0.8 at layer 3.
        std::vector<PooledPhrase> two{{3, "en", 0, {1, 0}}, {3, "hi", 0, {0.6, 0.8}},
                                      {3, "en", 1, {1, 0}}, {3, "hi", 1, {0.8, 0.6}}};
        CHECK(*layer_similarity(two, "hi", 4).per_layer_cosine[3] == doctest::Approx(0.7).epsilon(1e-14));
    }

    TEST_CASE("layer_similarity equals brute-force pairing and reports zero-norm skips") {
        Rng rng(34);
        std::vector<PooledPhrase> ps;
        for (std::size_t l = 0; l < 4; ++l)
            for (std::int64_t o = 0; o < 20; ++o) {
                ps.push_back({l, "en", o, random_vector(6, rng)});
                if (rng.uniform() < 0.7) ps.push_back({l, "ml", o, random_vector(6, rng)});
            }
        ps.push_back({0, "ml", 99, {0, 0, 0, 0, 0, 0}});
        ps.push_back({0, "en", 99, random_vector(6, rng)});
        rng.shuffle(ps);
        const auto prof = layer_similarity(ps, "ml", 4);
        CHECK(prof.skipped_zero_norm == 1);
        for (std::size_t l = 0; l < 4; ++l) {
            double s = 0;
            int n = 0;
            for (const auto& a : ps)
                for (const auto& b : ps)
                    if (a.layer == l && b.layer == l && a.language == "ml" && b.language == "en" &&
                        a.phrase_ordinal == b.phrase_ordinal && a.phrase_ordinal != 99) {
                        s += dot(a.vector, b.vector) / (norm2(a.vector) * norm2(b.vector));
                        ++n;
                    }
            REQUIRE(prof.per_layer_cosine[l]);
            CHECK(std::abs(*prof.per_layer_cosine[l] - s / n) < 1e-12);
        }
    }

    TEST_CASE("mean_activation_per_index examples and group-by oracle") {
        const auto two = mean_activation_per_index({ActivationRecord::make(1, 16, "en", {"a"}, {2.0}, 0),
                                                    ActivationRecord::make(1, 16, "en", {"b"}, {4.0}, 1)});
        REQUIRE(two.size() == 1);
        CHECK(two[0].mean_activation == 3.0);
        CHECK(two[0].phrase_count == 2);

        Rng rng(35);
        std::vector<ActivationRecord> rs;
        for (int i = 0; i < 10000; ++i)
            rs.push_back(random_record(rng, rng.below(3), 16 * rng.below(5), kAllLanguages[rng.below(10)], i));
        const auto stats = mean_activation_per_index(rs);
        std::map<std::tuple<std::size_t, std::size_t, std::string>, std::pair<double, std::size_t>> oracle;
        for (const auto& r : rs) {
            auto& e = oracle[{r.layer, r.feature_index, r.language}];
            e.first += r.max_value;
            e.second += 1;
        }
        REQUIRE(stats.size() == oracle.size());
        for (const auto& s : stats) {
            const auto& e = oracle.at({s.layer, s.feature_index, s.language});
            CHECK(s.phrase_count == e.second);
            CHECK(std::abs(s.mean_activation - e.first / static_cast<double>(e.second)) < 1e-12);
        }
        auto shuffled = rs;
        rng.shuffle(shuffled);
        const auto again = mean_activation_per_index(shuffled);
        REQUIRE(again.size() == stats.size());
        for (std::size_t i = 0; i < stats.size(); ++i) {
            CHECK(again[i].phrase_count == stats[i].phrase_count);
            CHECK(std::abs(again[i].mean_activation - stats[i].mean_activation) < 1e-12);
        }
    }

    TEST_CASE("window-mean scalar averages each window") {
        const auto st = mean_activation_per_index({ActivationRecord::make(0, 0, "en", {"a", "b"}, {1.0, 3.0}, 0)},
                                                  PhraseScalar::WindowMean);
        CHECK(st[0].mean_activation == 2.0);
    }

    TEST_CASE("activation_gap examples") {
        CHECK(gap_percent(1.0, 0.7373) == doctest::Approx(26.27).epsilon(1e-12));
        std::vector<FeatureActivationStats> stats;
        for (const auto& l : kAllLanguages) stats.push_back({6, 0, l, 2.5, 1});
        const auto eq = activation_gap(stats, kGroups);
        REQUIRE(eq.size() == 1);
        CHECK(eq[0].gap_percent == 0.0);
        CHECK(eq[0].status == GapStatus::Ok);
    }

    TEST_CASE("activation_gap flags missing groups and zero high means") {
        std::vector<FeatureActivationStats> only_high{{0, 0, "en", 1.0, 1}};
        CHECK(activation_gap(only_high, kGroups)[0].status == GapStatus::MissingGroup);
        std::vector<FeatureActivationStats> zero{{0, 0, "en", 0.0, 1}, {0, 0, "ml", 1.0, 1}};
        CHECK(activation_gap(zero, kGroups)[0].status == GapStatus::UndefinedZeroHigh);
    }

    TEST_CASE("activation_gap matches direct recomputation and is scale invariant") {
        Rng rng(36);
        for (int t = 0; t < 100; ++t) {
            const auto stats = random_stats(rng, kAllLanguages, 3, 4);
            const auto rep = activation_gap(stats, kGroups);
            for (const auto& g : rep) CHECK(std::abs(g.gap_percent - direct_gap(stats, g.layer, kGroups)) < 1e-12);
            auto scaled = stats;
            const double c = rng.uniform(0.01, 100.0);
            for (auto& s : scaled) s.mean_activation *= c;
            const auto rep2 = activation_gap(scaled, kGroups);
            for (std::size_t i = 0; i < rep.size(); ++i) CHECK(std::abs(rep2[i].gap_percent - rep[i].gap_percent) < 1e-9);
        }
    }

    TEST_CASE("activation_ratio examples") {
        std::vector<FeatureActivationStats> same;
        for (std::size_t f = 0; f < 5; ++f) {
            same.push_back({0, f, "en", 1.0 + f, 1});
            same.push_back({0, f, "ml", 1.0 + f, 1});
        }
        const auto r = activation_ratio(same);
        REQUIRE(r.per_language.size() == 1);
        CHECK(r.per_language[0].mean_ratio == 1.0);
        CHECK(r.per_language[0].std_ratio == 0.0);

        const auto one = activation_ratio({{4, 32, "en", 2.0, 1}, {4, 32, "ml", 0.2, 1}});
        CHECK(one.table.at(0).ratio == doctest::Approx(0.1).epsilon(1e-15));
        CHECK_THROWS_AS(activation_ratio({{0, 0, "ml", 1.0, 1}}), ValidationError);
    }

    TEST_CASE("activation_ratio matches brute force with an exclusion ledger") {
        Rng rng(37);
        auto stats = random_stats(rng, {"en", "ml", "hi"}, 2, 10);
        std::set<std::pair<std::size_t, std::size_t>> zeroed;
        for (auto& s : stats)
            if (s.language == "en" && rng.uniform() < 0.2) {
                s.mean_activation = 0.0;
                zeroed.insert({s.layer, s.feature_index});
            }
        const auto rep = activation_ratio(stats);
        CHECK(rep.excluded_zero_reference == zeroed.size());
        for (const std::string lang : {"hi", "ml"}) {
            std::vector<double> ratios;
            for (const auto& s : stats) {
                if (s.language != lang || zeroed.contains({s.layer, s.feature_index})) continue;
                for (const auto& e : stats)
                    if (e.language == "en" && e.layer == s.layer && e.feature_index == s.feature_index)
                        ratios.push_back(s.mean_activation / e.mean_activation);
            }
            double mean = 0;
            for (double x : ratios) mean += x;
            mean /= static_cast<double>(ratios.size());
            double ss = 0;
            for (double x : ratios) ss += (x - mean) * (x - mean);
            const auto it = std::find_if(rep.per_language.begin(), rep.per_language.end(),
                                         [&](const RatioStats& r) { return r.language == lang; });
            REQUIRE(it != rep.per_language.end());
            CHECK(it->count == ratios.size());
            CHECK(std::abs(it->mean_ratio - mean) < 1e-12);
            CHECK(std::abs(it->std_ratio - std::sqrt(ss / static_cast<double>(ratios.size()))) < 1e-12);
        }
    }

    TEST_CASE("pearson examples, oracle and affine invariance") {
        CHECK(pearson(Vector{1, 2, 3, 4}, Vector{3, 5, 7, 9}) == doctest::Approx(1.0));
        CHECK_THROWS_AS(pearson(Vector{1, 1, 1}, Vector{1, 2, 3}), ValidationError);
        CHECK_THROWS_AS(pearson(Vector{1, 2}, Vector{1, 2}), ValidationError);
        CHECK_THROWS_AS(pearson(Vector{1, 2, 3}, Vector{1, 2}), ShapeError);
        Rng rng(38);
        for (int t = 0; t < 100; ++t) {
            std::vector<double> x(20), y(20);
            for (int i = 0; i < 20; ++i) {
                x[i] = rng.normal();
                y[i] = -x[i] + 0.3 * rng.normal();
            }
            const double r = pearson(x, y);
            CHECK(std::abs(r - textbook_pearson(x, y)) < 1e-12);
            const double a = rng.uniform(-5, 5), b = rng.uniform(-5, 5);
            if (std::abs(a) < 1e-3) continue;
            std::vector<double> ax(20);
            for (int i = 0; i < 20; ++i) ax[i] = a * x[i] + b;
            CHECK(std::abs(std::abs(pearson(ax, y)) - std::abs(r)) < 1e-12);
        }
    }

    TEST_CASE("ratio means against ARC accuracies correlate at 0.95 with a sign flip for differences") {
        std::map<std::string, double> ratio;
        for (const auto& row : load_ratio_fixture()) ratio[row.language] = row.mean;
        const auto arc = load_language_fixture("table3");
        const auto pos = correlate(ratio, arc, "arc", GapConvention::Ratio);
        const auto neg = correlate(ratio, arc, "arc", GapConvention::Difference);
        CHECK(pos.n == 9);
        CHECK(std::abs(pos.r - 0.95) <= 0.02);
        CHECK(std::abs(neg.r + 0.95) <= 0.02);
        CHECK(std::abs(pos.r + neg.r) < 1e-12);
    }

    TEST_CASE("csv reports have the documented headers") {
        CHECK(layer_gap_csv({}).rfind("layer,mean_high,mean_medlow,gap_percent", 0) == 0);
        CHECK(ratios_csv({}).rfind("language,mean,std", 0) == 0);
        CHECK(correlation_csv({}).rfind("benchmark,r,n", 0) == 0);
        CHECK(similarity_csv({}).rfind("language,layer,cosine", 0) == 0);
    }
}
