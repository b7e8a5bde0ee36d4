#include "xling/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "xling/io.hpp"

namespace xling {

Vector mean_pool(const std::vector<Vector>& token_vectors) {
    if (token_vectors.empty()) throw ValidationError("mean_pool: no vectors");
    const std::size_t d = token_vectors.front().size();
    Vector out(d, 0.0);
    for (const auto& v : token_vectors) {
        if (v.size() != d)
            throw ShapeError("mean_pool: ragged lengths " + std::to_string(d) + " and " +
                             std::to_string(v.size()));
        for (std::size_t i = 0; i < d; ++i) out[i] += v[i];
    }
    const double n = static_cast<double>(token_vectors.size());
    for (double& x : out) x /= n;
    return out;
}

Vector mean_pool(const Matrix& token_rows) {
    if (token_rows.rows() == 0) throw ValidationError("mean_pool: no vectors");
    Vector out = column_sums(token_rows);
    const double n = static_cast<double>(token_rows.rows());
    for (double& x : out) x /= n;
    return out;
}

std::optional<double> try_cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw ShapeError("cosine: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (nu == 0.0 || nv == 0.0) return std::nullopt;
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

double cosine(std::span<const double> u, std::span<const double> v) {
    auto c = try_cosine(u, v);
    if (!c) throw ValidationError("cosine: zero-norm vector");
    return *c;
}

SimilarityProfile layer_similarity(const std::vector<PooledPhrase>& phrases,
                                   const std::string& language, std::size_t n_layers,
                                   const std::string& reference_language) {
    std::map<std::pair<std::size_t, std::int64_t>, const PooledPhrase*> reference;
    for (const auto& p : phrases)
        if (p.language == reference_language) reference[{p.layer, p.phrase_ordinal}] = &p;

    SimilarityProfile profile;
    profile.language = language;
    std::vector<double> sums(n_layers, 0.0);
    profile.pair_counts.assign(n_layers, 0);
    // Sorted traversal keeps the floating-point summation order fixed.
    std::vector<const PooledPhrase*> targets;
    for (const auto& p : phrases)
        if (p.language == language) targets.push_back(&p);
    std::sort(targets.begin(), targets.end(), [](const PooledPhrase* a, const PooledPhrase* b) {
        return std::tie(a->layer, a->phrase_ordinal) < std::tie(b->layer, b->phrase_ordinal);
    });
    for (const auto* p : targets) {
        if (p->layer >= n_layers) throw ValidationError("layer_similarity: layer out of range");
        auto it = reference.find({p->layer, p->phrase_ordinal});
        if (it == reference.end()) continue;
        auto c = try_cosine(p->vector, it->second->vector);
        if (!c) {
            ++profile.skipped_zero_norm;
            continue;
        }
        sums[p->layer] += *c;
        profile.pair_counts[p->layer] += 1;
    }
    profile.per_layer_cosine.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (profile.pair_counts[l] > 0)
            profile.per_layer_cosine[l] = sums[l] / static_cast<double>(profile.pair_counts[l]);
    }
    return profile;
}

std::vector<FeatureActivationStats> mean_activation_per_index(
    const std::vector<ActivationRecord>& records, PhraseScalar scalar) {
    using Key = std::tuple<std::size_t, std::size_t, std::string>;
    // Values are collected then summed in sorted order so the result does not
    // depend on record order.
    std::map<Key, std::vector<double>> groups;
    for (const auto& r : records) {
        double v = r.max_value;
        if (scalar == PhraseScalar::WindowMean) {
            if (r.token_activations.empty()) throw ValidationError("record without activations");
            v = std::accumulate(r.token_activations.begin(), r.token_activations.end(), 0.0) /
                static_cast<double>(r.token_activations.size());
        }
        groups[{r.layer, r.feature_index, r.language}].push_back(v);
    }
    std::vector<FeatureActivationStats> out;
    out.reserve(groups.size());
    for (auto& [key, values] : groups) {
        std::sort(values.begin(), values.end());
        const double sum = std::accumulate(values.begin(), values.end(), 0.0);
        out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key),
                       sum / static_cast<double>(values.size()), values.size()});
    }
    return out;
}

std::string to_string(GapStatus s) {
    switch (s) {
        case GapStatus::Ok: return "ok";
        case GapStatus::MissingGroup: return "missing_group";
        case GapStatus::UndefinedZeroHigh: return "undefined_zero_high";
    }
    return "unknown";
}

double gap_percent(double mean_high, double mean_medlow) {
    return (mean_high - mean_medlow) / mean_high * 100.0;
}

std::map<std::size_t, std::map<std::string, double>> language_means_by_layer(
    const std::vector<FeatureActivationStats>& stats) {
    std::map<std::size_t, std::map<std::string, std::vector<double>>> values;
    for (const auto& s : stats) values[s.layer][s.language].push_back(s.mean_activation);
    std::map<std::size_t, std::map<std::string, double>> out;
    for (auto& [layer, langs] : values) {
        for (auto& [lang, v] : langs) {
            std::sort(v.begin(), v.end());
            out[layer][lang] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        }
    }
    return out;
}

std::vector<LayerGapReport> activation_gap(const std::vector<FeatureActivationStats>& stats,
                                           const LanguageGroups& groups) {
    std::vector<LayerGapReport> out;
    for (const auto& [layer, means] : language_means_by_layer(stats)) {
        auto group_mean = [&](const std::vector<std::string>& members) -> std::optional<double> {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& lang : members) {
                auto it = means.find(lang);
                if (it == means.end()) continue;
                sum += it->second;
                ++n;
            }
            if (n == 0) return std::nullopt;
            return sum / static_cast<double>(n);
        };
        LayerGapReport rep;
        rep.layer = layer;
        const auto high = group_mean(groups.high);
        const auto low = group_mean(groups.medlow);
        if (!high || !low) {
            rep.status = GapStatus::MissingGroup;
            rep.mean_high = high.value_or(0.0);
            rep.mean_medlow = low.value_or(0.0);
        } else if (*high == 0.0) {
            rep.status = GapStatus::UndefinedZeroHigh;
            rep.mean_medlow = *low;
        } else {
            rep.mean_high = *high;
            rep.mean_medlow = *low;
            rep.gap_percent = gap_percent(*high, *low);
        }
        out.push_back(rep);
    }
    return out;
}

RatioReport activation_ratio(const std::vector<FeatureActivationStats>& stats,
                             const std::string& reference_language) {
    std::map<std::pair<std::size_t, std::size_t>, double> reference;
    for (const auto& s : stats)
        if (s.language == reference_language) reference[{s.layer, s.feature_index}] = s.mean_activation;
    if (reference.empty())
        throw ValidationError("activation_ratio: reference language '" + reference_language +
                              "' has no statistics");

    RatioReport report;
    std::set<std::pair<std::size_t, std::size_t>> excluded;
    std::map<std::string, std::vector<double>> by_language;
    for (const auto& s : stats) {
        if (s.language == reference_language) continue;
        auto it = reference.find({s.layer, s.feature_index});
        if (it == reference.end()) continue;
        if (it->second == 0.0) {
            excluded.insert(it->first);
            continue;
        }
        const double ratio = s.mean_activation / it->second;
        report.table.push_back({s.layer, s.feature_index, s.language, ratio});
        by_language[s.language].push_back(ratio);
    }
    std::sort(report.table.begin(), report.table.end(), [](const RatioEntry& a, const RatioEntry& b) {
        return std::tie(a.layer, a.feature_index, a.language) <
               std::tie(b.layer, b.feature_index, b.language);
    });
    report.excluded_zero_reference = excluded.size();
    for (auto& [lang, ratios] : by_language) {
        std::sort(ratios.begin(), ratios.end());
        const double n = static_cast<double>(ratios.size());
        const double mean = std::accumulate(ratios.begin(), ratios.end(), 0.0) / n;
        double ss = 0.0;
        for (double r : ratios) ss += (r - mean) * (r - mean);
        report.per_language.push_back({lang, mean, std::sqrt(ss / n), ratios.size()});
    }
    return report;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw ShapeError("pearson: length " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
    if (x.size() < 3) throw ValidationError("pearson: need at least 3 points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: undefined for zero variance input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

GapConvention parse_gap_convention(const std::string& s) {
    if (s == "ratio") return GapConvention::Ratio;
    if (s == "difference") return GapConvention::Difference;
    throw ValidationError("unknown convention '" + s + "' (expected ratio or difference)");
}

CorrelationResult correlate(const std::map<std::string, double>& mean_ratio,
                            const std::map<std::string, double>& accuracy,
                            const std::string& benchmark, GapConvention convention,
                            const std::string& reference_language) {
    CorrelationResult res;
    res.benchmark = benchmark;
    std::vector<double> xs, ys;
    for (const auto& [lang, ratio] : mean_ratio) {
        if (lang == reference_language) continue;
        auto it = accuracy.find(lang);
        if (it == accuracy.end()) continue;
        xs.push_back(convention == GapConvention::Difference ? 1.0 - ratio : ratio);
        ys.push_back(it->second);
        res.languages.push_back(lang);
    }
    res.n = xs.size();
    res.r = pearson(xs, ys);
    return res;
}

std::string layer_gap_csv(const std::vector<LayerGapReport>& rows) {
    std::string out = format_csv_row({"layer", "mean_high", "mean_medlow", "gap_percent", "status"});
    for (const auto& r : rows) {
        out += format_csv_row({std::to_string(r.layer), format_double(r.mean_high),
                               format_double(r.mean_medlow),
                               r.status == GapStatus::Ok ? format_double(r.gap_percent) : "",
                               to_string(r.status)});
    }
    return out;
}

std::string similarity_csv(const std::vector<SimilarityProfile>& profiles) {
    std::string out = format_csv_row({"language", "layer", "cosine", "pairs", "source"});
    for (const auto& p : profiles) {
        for (std::size_t l = 0; l < p.per_layer_cosine.size(); ++l) {
            if (!p.per_layer_cosine[l]) continue;
            out += format_csv_row({p.language, std::to_string(l), format_double(*p.per_layer_cosine[l]),
                                   std::to_string(p.pair_counts[l]), p.source});
        }
    }
    return out;
}

std::string ratios_csv(const std::vector<RatioStats>& rows) {
    std::string out = format_csv_row({"language", "mean", "std"});
    for (const auto& r : rows)
        out += format_csv_row({r.language, format_double(r.mean_ratio), format_double(r.std_ratio)});
    return out;
}

std::string correlation_csv(const std::vector<CorrelationResult>& rows) {
    std::string out = format_csv_row({"benchmark", "r", "n"});
    for (const auto& r : rows)
        out += format_csv_row({r.benchmark, format_double(r.r), std::to_string(r.n)});
    return out;
}

std::map<std::string, double> load_ratio_means(const std::filesystem::path& path) {
    const auto rows = parse_csv(read_text_file(path));
    if (rows.empty()) throw ValidationError(path.string() + ": empty ratios file");
    const auto& header = rows.front().cells;
    if (header.size() < 2 || header[0] != "language" || header[1] != "mean")
        throw ValidationError(path.string() + ": expected header language,mean[,std]");
    std::map<std::string, double> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& c = rows[i].cells;
        const std::string ctx = path.string() + ":" + std::to_string(rows[i].line_number);
        if (c.size() < 2) throw ValidationError(ctx + ": missing mean column");
        if (!out.emplace(c[0], parse_double(c[1], ctx)).second)
            throw ValidationError(ctx + ": duplicate language '" + c[0] + "'");
    }
    if (out.empty()) throw ValidationError(path.string() + ": no ratio rows");
    return out;
}

}  // namespace xling
