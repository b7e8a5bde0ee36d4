// xling command-line interface. Exit codes: 0 success, 1 validation or
// runtime failure, 2 usage error.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xling/align.hpp"
#include "xling/analysis.hpp"
#include "xling/eval.hpp"
#include "xling/ingest.hpp"
#include "xling/io.hpp"
#include "xling/lora.hpp"
#include "xling/pipeline.hpp"
#include "xling/sae.hpp"
#include "xling/svg.hpp"
#include "xling/toy_model.hpp"

using namespace xling;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set align.alpha=0.5 (repeatable)");
    cmd->add_option("--seed", o.seed, "Use this seed for every stage");
    cmd->add_option("-o,--out", o.out,
                    "Output directory (default: output.directory when set, else $XLING_OUTPUT_DIR, else xling-out)");
}

// Parses "a.b.c=value"; the value is read as JSON when it parses, else as a
// string.
void apply_override(json& j, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + spec + "'");
    const std::string path = spec.substr(0, eq), text = spec.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (!node->is_object()) *node = json::object();
        start = dot + 1;
    }
}

PipelineConfig resolve_config(const CommonOptions& o) {
    PipelineConfig cfg = o.config.empty() ? PipelineConfig::defaults() : load_config(o.config);
    if (!o.overrides.empty()) {
        json j = config_to_json(cfg);
        for (const auto& spec : o.overrides) apply_override(j, spec);
        cfg = config_from_json(j);
    }
    if (o.seed) {
        cfg.toy.corpus.seed = cfg.toy.train.seed = cfg.sae.train.seed = cfg.align.seed = cfg.eval.seed = *o.seed;
    }
    cfg.align.reference_language = cfg.groups.reference;
    cfg.validate();
    return cfg;
}

// --out, then a non-default output.directory, then $XLING_OUTPUT_DIR, then
// the built-in default.
fs::path output_dir(const CommonOptions& o, const PipelineConfig& cfg) {
    if (!o.out.empty()) return o.out;
    if (cfg.output.directory != OutputSection{}.directory) return cfg.output.directory;
    if (const char* env = std::getenv("XLING_OUTPUT_DIR"); env && *env) return env;
    return cfg.output.directory;
}

// Collects outputs of one run and writes its manifest.
class Run {
public:
    Run(std::string command, const PipelineConfig& cfg, fs::path dir)
        : command_(std::move(command)), cfg_(cfg), dir_(std::move(dir)) {
        fs::create_directories(dir_);
    }

    const fs::path& dir() const { return dir_; }
    void input(const fs::path& p) { inputs_.push_back(p); }
    void put(const std::string& name, const std::string& content) {
        write_text_file(dir_ / name, content);
        outputs_.push_back(name);
    }
    void record(const std::string& name) { outputs_.push_back(name); }
    void finish() {
        write_manifest(dir_, command_, cfg_, outputs_, inputs_);
        std::cout << "wrote " << outputs_.size() << " file(s) and manifest.json to " << dir_.string() << "\n";
    }

private:
    std::string command_;
    PipelineConfig cfg_;
    fs::path dir_;
    std::vector<std::string> outputs_;
    std::vector<fs::path> inputs_;
};

ChartSeries series_of(const std::string& name, const std::vector<double>& y) {
    ChartSeries s{name, {}, {}};
    for (std::size_t i = 0; i < y.size(); ++i) {
        s.x.push_back(static_cast<double>(i));
        s.y.push_back(y[i]);
    }
    return s;
}

std::string sae_log_csv(const SaeTrainLog& log) {
    std::string out = format_csv_row({"step", "mse", "mean_l0", "sparsity_coefficient"});
    for (std::size_t i = 0; i < log.mse.size(); ++i)
        out += format_csv_row({std::to_string(i), format_double(log.mse[i]), format_double(log.mean_l0[i]),
                               format_double(log.sparsity_coefficient[i])});
    return out;
}

std::string feature_stats_csv(const std::vector<FeatureActivationStats>& stats) {
    std::string out = format_csv_row({"layer", "feature_index", "language", "mean_activation", "phrase_count"});
    for (const auto& s : stats)
        out += format_csv_row({std::to_string(s.layer), std::to_string(s.feature_index), s.language,
                               format_double(s.mean_activation), std::to_string(s.phrase_count)});
    return out;
}

// Numeric CSV, one sample per row, optional non-numeric header.
Matrix load_activation_matrix(const fs::path& path) {
    const auto lines = parse_csv(read_text_file(path));
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& cells = lines[i].cells;
        const std::string ctx = path.string() + ":" + std::to_string(lines[i].line_number);
        if (i == 0 && !cells.empty()) {
            char* end = nullptr;
            std::strtod(cells[0].c_str(), &end);
            if (end == cells[0].c_str()) continue;  // header
        }
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_double(c, ctx));
        if (!rows.empty() && row.size() != rows.front().size())
            throw ValidationError(ctx + ": expected " + std::to_string(rows.front().size()) + " columns, got " +
                                  std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError(path.string() + ": no activation rows");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
    return m;
}

std::vector<ActivationRecord> read_record_files(const std::vector<std::string>& paths, const std::string& format,
                                                bool skip_invalid, Run& run) {
    std::vector<ActivationRecord> records;
    std::size_t bad = 0;
    for (const auto& p : paths) {
        run.input(p);
        const RecordFormat f = format == "auto" ? record_format_for_path(p) : parse_record_format(format);
        auto rep = parse_records(p, f);
        for (const auto& e : rep.errors) std::cerr << p << ":" << e.line << ": " << e.message << "\n";
        bad += rep.errors.size();
        records.insert(records.end(), rep.records.begin(), rep.records.end());
    }
    if (bad && !skip_invalid)
        throw ValidationError(std::to_string(bad) + " invalid record row(s); fix them or pass --skip-invalid");
    if (records.empty()) throw ValidationError("no activation records in the input");
    return records;
}

std::optional<AdapterSet> maybe_adapters(const std::string& path, Run& run) {
    if (path.empty()) return std::nullopt;
    run.input(path);
    return load_adapters(path);
}

// ---------------------------------------------------------------------------

struct ToyTrainArgs {
    CommonOptions common;
};

void cmd_toy_train(const ToyTrainArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    Run run(command, cfg, output_dir(a.common, cfg));
    const auto corpus = generate_corpus(cfg.toy.corpus);
    if (corpus.vocab_size > cfg.toy.model.vocab_size)
        throw ValidationError("toy: corpus needs " + std::to_string(corpus.vocab_size) +
                              " tokens but toy.model.vocab_size is " + std::to_string(cfg.toy.model.vocab_size));
    const auto heldout = generate_heldout_corpus(cfg.toy.corpus, cfg.eval.heldout_tokens);
    const auto trained = train_toy_model(corpus, cfg.toy.model, cfg.toy.train);
    run.put("corpus.jsonl", serialize_corpus(corpus));
    run.put("heldout.jsonl", serialize_corpus(heldout));
    save_toy_model(run.dir() / "model.json", trained.params);
    run.record("model.json");
    run.put("toy_loss.csv", loss_curve_csv(trained.loss_curve, "cross_entropy"));
    std::string ppl = format_csv_row({"language", "perplexity"});
    for (const auto& lang : corpus.languages) {
        const double p = perplexity(trained.params, heldout, lang);
        ppl += format_csv_row({lang, format_double(p)});
        std::cout << "held-out perplexity " << lang << ": " << format_fixed(p, 3) << "\n";
    }
    run.put("perplexity.csv", ppl);
    if (cfg.output.emit_svg)
        run.put("toy_loss.svg", line_chart_svg({"Toy model training", "epoch", "cross-entropy"},
                                               {series_of("loss", trained.loss_curve)}));
    run.finish();
}

struct SaeTrainArgs {
    CommonOptions common;
    std::string model, corpus, activations;
    std::optional<std::size_t> layer;
};

void cmd_sae_train(const SaeTrainArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    Run run(command, cfg, output_dir(a.common, cfg));
    Matrix acts;
    if (!a.activations.empty()) {
        if (!a.model.empty() || !a.corpus.empty())
            throw ValidationError("sae-train: pass either --activations or --model with --corpus");
        run.input(a.activations);
        acts = load_activation_matrix(a.activations);
    } else {
        if (a.model.empty() || a.corpus.empty())
            throw ValidationError("sae-train: --model and --corpus are required without --activations");
        run.input(a.model);
        run.input(a.corpus);
        const auto model = load_toy_model(a.model);
        const auto corpus = load_corpus(a.corpus);
        acts = toy_layer_activations(model, corpus, a.layer.value_or(cfg.align.target_layer), cfg.sae.max_training_rows);
    }
    const auto result = train_sae(acts, cfg.sae.train);
    save_sae(run.dir() / "sae.json", result.params, cfg.sae.train);
    run.record("sae.json");
    run.put("sae_log.csv", sae_log_csv(result.log));
    if (cfg.output.emit_svg)
        run.put("sae_l0.svg", line_chart_svg({"SAE training", "step", "batch L0"}, {series_of("L0", result.log.mean_l0)}));
    std::cout << "rows " << acts.rows() << ", final mse " << format_fixed(reconstruction_mse(result.params, acts), 6)
              << ", mean L0 " << format_fixed(mean_l0(result.params, acts), 3) << "\n";
    run.finish();
}

struct IngestArgs {
    CommonOptions common;
    std::vector<std::string> records;
    std::string model, corpus, sae, adapters;
    bool skip_invalid = false;
};

void cmd_ingest(const IngestArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    Run run(command, cfg, output_dir(a.common, cfg));
    const bool toy = !a.model.empty() || !a.corpus.empty() || !a.sae.empty();
    if (toy) {
        if (a.model.empty() || a.corpus.empty() || a.sae.empty())
            throw ValidationError("ingest: toy mode needs --model, --corpus and --sae");
        if (!a.records.empty()) throw ValidationError("ingest: pass either --records or the toy inputs");
        for (const auto& p : {a.model, a.corpus, a.sae}) run.input(p);
        const auto model = load_toy_model(a.model);
        const auto corpus = load_corpus(a.corpus);
        const auto sae = load_sae(a.sae);
        const auto adapters = maybe_adapters(a.adapters, run);
        const auto records = toy_records(model, adapters ? &*adapters : nullptr, corpus, sae,
                                         toy_ingest_options(cfg, sae.d_features));
        if (records.empty()) throw ValidationError("ingest: no phrase passed the threshold");
        run.put("records.jsonl", serialize_records(records, RecordFormat::Jsonl));
        std::cout << records.size() << " phrase-window records at layer " << cfg.align.target_layer << "\n";
    } else {
        const auto paths = a.records.empty() ? cfg.ingest.inputs : a.records;
        if (paths.empty()) throw ValidationError("ingest: no input; pass --records or set ingest.inputs");
        const auto raw = read_record_files(paths, cfg.ingest.format, a.skip_invalid, run);
        const auto w = window_records(raw, cfg.ingest, cfg.groups.reference);
        if (w.records.empty()) throw ValidationError("ingest: no reference-language phrase survived selection");
        run.put("records.jsonl", serialize_records(w.records, RecordFormat::Jsonl));
        std::cout << raw.size() << " records in " << w.groups << " (layer, feature) groups; kept "
                  << w.records.size() << " windows; dropped " << w.dropped_below_threshold << " below threshold, "
                  << w.dropped_without_reference << " without a kept reference phrase, " << w.dropped_duplicates
                  << " duplicates\n";
    }
    run.finish();
}

struct AnalyzeArgs {
    CommonOptions common;
    std::vector<std::string> records;
    std::string model, corpus, adapters;
    bool skip_invalid = false;
};

void cmd_analyze(const AnalyzeArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    Run run(command, cfg, output_dir(a.common, cfg));
    const auto records = read_record_files(a.records, "auto", a.skip_invalid, run);
    std::vector<std::string> languages;
    for (const auto& r : records)
        if (std::find(languages.begin(), languages.end(), r.language) == languages.end()) languages.push_back(r.language);
    const auto groups = groups_for_languages(cfg.groups, languages);
    const auto rep = analyze_records(records, groups, cfg.ingest.phrase_scalar);
    run.put("feature_stats.csv", feature_stats_csv(rep.stats));
    run.put("layer_gap.csv", layer_gap_csv(rep.gaps));
    run.put("ratios.csv", ratios_csv(rep.ratios.per_language));
    for (const auto& g : rep.gaps)
        std::cout << "layer " << g.layer << ": gap "
                  << (g.status == GapStatus::Ok ? format_fixed(g.gap_percent, 2) + "%" : to_string(g.status)) << "\n";

    std::vector<ChartSeries> charts;
    if (!a.model.empty() || !a.corpus.empty()) {
        if (a.model.empty() || a.corpus.empty())
            throw ValidationError("analyze: similarity needs both --model and --corpus");
        run.input(a.model);
        run.input(a.corpus);
        const auto model = load_toy_model(a.model);
        const auto corpus = load_corpus(a.corpus);
        const auto adapters = maybe_adapters(a.adapters, run);
        const auto sim = toy_similarity(model, adapters ? &*adapters : nullptr, corpus, cfg.groups.reference);
        run.put("similarity.csv", similarity_csv(sim));
        for (const auto& p : sim) {
            ChartSeries s{p.language, {}, {}};
            for (std::size_t l = 0; l < p.per_layer_cosine.size(); ++l)
                if (p.per_layer_cosine[l]) {
                    s.x.push_back(static_cast<double>(l));
                    s.y.push_back(*p.per_layer_cosine[l]);
                }
            charts.push_back(std::move(s));
        }
    }
    if (cfg.output.emit_svg) {
        ChartSeries gap{"gap", {}, {}};
        for (const auto& g : rep.gaps)
            if (g.status == GapStatus::Ok) {
                gap.x.push_back(static_cast<double>(g.layer));
                gap.y.push_back(g.gap_percent);
            }
        if (!gap.x.empty()) run.put("layer_gap.svg", line_chart_svg({"Activation gap", "layer", "gap (%)"}, {gap}));
        if (!charts.empty())
            run.put("similarity.svg",
                    line_chart_svg({"Residual similarity to " + cfg.groups.reference, "layer", "cosine"}, charts));
    }
    run.finish();
}

struct CorrelateArgs {
    CommonOptions common;
    std::string ratios;
    std::vector<std::string> accuracy;
    std::vector<std::string> names;
    std::string convention = "difference";
};

void cmd_correlate(const CorrelateArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    Run run(command, cfg, output_dir(a.common, cfg));
    if (!a.names.empty() && a.names.size() != a.accuracy.size())
        throw ValidationError("correlate: give one --name per --accuracy file");
    const GapConvention convention = parse_gap_convention(a.convention);
    run.input(a.ratios);
    const auto ratios = load_ratio_means(a.ratios);
    std::vector<CorrelationResult> results;
    for (std::size_t i = 0; i < a.accuracy.size(); ++i) {
        run.input(a.accuracy[i]);
        const auto acc = load_accuracy_fixture(a.accuracy[i]);
        const std::string name = a.names.empty() ? fs::path(a.accuracy[i]).stem().string() : a.names[i];
        const auto r = correlate(ratios, acc, name, convention, cfg.groups.reference);
        std::cout << name << ": r = " << format_fixed(r.r, 4) << " over " << r.n << " languages\n";
        if (cfg.output.emit_svg) {
            std::vector<double> x, y;
            for (const auto& lang : r.languages) {
                const double v = ratios.at(lang);
                x.push_back(convention == GapConvention::Difference ? 1.0 - v : v);
                y.push_back(acc.at(lang));
            }
            const std::string xl = convention == GapConvention::Difference ? "activation difference (1 - ratio)"
                                                                           : "activation ratio";
            run.put("correlation_" + name + ".svg",
                    scatter_chart_svg({name + " (r = " + format_fixed(r.r, 2) + ")", xl, "accuracy (%)"}, x, y,
                                      r.languages, true));
        }
        results.push_back(r);
    }
    run.put("correlation.csv", correlation_csv(results));
    run.finish();
}

struct AlignArgs {
    CommonOptions common;
    std::string model, corpus, sae;
};

void cmd_align(const AlignArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    Run run(command, cfg, output_dir(a.common, cfg));
    for (const auto& p : {a.model, a.corpus, a.sae}) run.input(p);
    const auto model = load_toy_model(a.model);
    const auto corpus = load_corpus(a.corpus);
    const auto sae = load_sae(a.sae);
    Rng rng(cfg.align.seed);
    auto adapters = attach_adapters(model, cfg.align, rng);
    const auto outcome = run_alignment(model, adapters, toy_alignment_pairs(corpus, cfg.groups.reference), sae, cfg.align);
    save_adapters(run.dir() / "adapters.json", adapters);
    run.record("adapters.json");
    run.put("alignment.csv", alignment_outcome_csv(outcome, cfg.groups.reference));
    run.put("alignment_loss.csv", loss_curve_csv(outcome.loss_curve, "loss"));
    if (cfg.output.emit_svg && !outcome.loss_curve.empty())
        run.put("alignment_loss.svg", line_chart_svg({"Alignment loss", "step", "loss"}, {series_of("loss", outcome.loss_curve)}));
    for (const auto& [lang, v] : outcome.metrics.improvement_percent)
        std::cout << lang << " improvement " << format_fixed(v, 2) << "%\n";
    std::cout << cfg.groups.reference << " retention " << format_fixed(outcome.metrics.retention_percent, 2) << "% over "
              << outcome.steps << " steps\n";
    run.finish();
}

struct EvalArgs {
    CommonOptions common;
    std::string model, adapters, items, corpus;
};

void cmd_eval(const EvalArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    Run run(command, cfg, output_dir(a.common, cfg));
    if (a.items.empty() == a.corpus.empty()) throw ValidationError("eval: pass exactly one of --items or --corpus");
    run.input(a.model);
    const auto model = load_toy_model(a.model);
    const auto adapters = maybe_adapters(a.adapters, run);
    std::vector<McqItem> items;
    if (!a.items.empty()) {
        run.input(a.items);
        items = load_items(a.items);
    } else {
        run.input(a.corpus);
        items = toy_eval_items(cfg, load_corpus(a.corpus));
        run.put("items.jsonl", serialize_items(items));
    }
    const ToyScorer scorer(model, adapters ? &*adapters : nullptr);
    std::vector<EvalReport> reports;
    const ScoringMode other =
        cfg.eval.mode == ScoringMode::RawLoglik ? ScoringMode::PerTokenNormalized : ScoringMode::RawLoglik;
    for (ScoringMode mode : {cfg.eval.mode, other}) reports.push_back(evaluate(scorer, items, mode));
    run.put("eval.csv", eval_report_csv(reports));
    for (const auto& acc : reports.front().per_language)
        std::cout << acc.language << ": " << format_fixed(acc.accuracy, 2) << "% (" << to_string(cfg.eval.mode) << ", "
                  << acc.item_count << " items)\n";
    run.finish();
}

struct ReportArgs {
    CommonOptions common;
};

void cmd_report(const ReportArgs& a, const std::string& command) {
    const auto cfg = resolve_config(a.common);
    const fs::path dir = output_dir(a.common, cfg);
    const auto result = run_toy_pipeline(cfg);
    const auto files = write_toy_reports(result, cfg, dir);
    write_manifest(dir, command, cfg, files);
    auto show = [](const std::optional<double>& v) { return v ? format_fixed(*v, 2) + "%" : std::string("undefined"); };
    std::cout << "target layer " << cfg.align.target_layer << ": gap " << show(result.target_gap_pre) << " -> "
              << show(result.target_gap_post) << "\n";
    std::cout << "wrote " << files.size() << " file(s) and manifest.json to " << dir.string() << "\n";
}

struct ConfigShowArgs {
    CommonOptions common;
};

void cmd_config_show(const ConfigShowArgs& a) {
    const auto cfg = resolve_config(a.common);
    std::cout << config_to_json(cfg).dump(2) << "\n";
}

std::string joined(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-lingual SAE activation analysis and alignment tuning"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    const std::string command = joined(argc, argv);
    std::function<void()> action;

    ToyTrainArgs toy;
    auto* c_toy = app.add_subcommand("toy-train", "Generate the synthetic corpus and train the toy model");
    add_common(c_toy, toy.common);
    c_toy->callback([&] { action = [&] { cmd_toy_train(toy, command); }; });

    SaeTrainArgs sae;
    auto* c_sae = app.add_subcommand("sae-train", "Train a sparse autoencoder on residual activations");
    add_common(c_sae, sae.common);
    c_sae->add_option("--model", sae.model, "Toy model checkpoint")->check(CLI::ExistingFile);
    c_sae->add_option("--corpus", sae.corpus, "Corpus JSONL")->check(CLI::ExistingFile);
    c_sae->add_option("--layer", sae.layer, "Layer to capture (default: align.target_layer)");
    c_sae->add_option("--activations", sae.activations, "Numeric CSV, one activation vector per row")
        ->check(CLI::ExistingFile);
    c_sae->callback([&] { action = [&] { cmd_sae_train(sae, command); }; });

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Turn activation records into phrase-window records");
    add_common(c_ingest, ingest.common);
    c_ingest->add_option("--records", ingest.records, "Record files (.jsonl or .csv)")->check(CLI::ExistingFile);
    c_ingest->add_option("--model", ingest.model, "Toy model checkpoint")->check(CLI::ExistingFile);
    c_ingest->add_option("--corpus", ingest.corpus, "Corpus JSONL")->check(CLI::ExistingFile);
    c_ingest->add_option("--sae", ingest.sae, "SAE checkpoint")->check(CLI::ExistingFile);
    c_ingest->add_option("--adapters", ingest.adapters, "Adapter checkpoint to measure through")
        ->check(CLI::ExistingFile);
    c_ingest->add_flag("--skip-invalid", ingest.skip_invalid, "Report malformed rows but continue");
    c_ingest->callback([&] { action = [&] { cmd_ingest(ingest, command); }; });

    AnalyzeArgs analyze;
    auto* c_analyze = app.add_subcommand("analyze", "Activation gaps, ratios and layer similarity");
    add_common(c_analyze, analyze.common);
    c_analyze->add_option("--records", analyze.records, "Phrase-window record files")
        ->required()
        ->check(CLI::ExistingFile);
    c_analyze->add_option("--model", analyze.model, "Toy model for the similarity profile")->check(CLI::ExistingFile);
    c_analyze->add_option("--corpus", analyze.corpus, "Corpus JSONL for the similarity profile")
        ->check(CLI::ExistingFile);
    c_analyze->add_option("--adapters", analyze.adapters, "Adapter checkpoint")->check(CLI::ExistingFile);
    c_analyze->add_flag("--skip-invalid", analyze.skip_invalid, "Report malformed rows but continue");
    c_analyze->callback([&] { action = [&] { cmd_analyze(analyze, command); }; });

    CorrelateArgs corr;
    auto* c_corr = app.add_subcommand("correlate", "Correlate activation ratios with benchmark accuracy");
    add_common(c_corr, corr.common);
    c_corr->add_option("--ratios", corr.ratios, "language,mean[,std] CSV")->required()->check(CLI::ExistingFile);
    c_corr->add_option("--accuracy", corr.accuracy, "language,accuracy CSV (repeatable)")
        ->required()
        ->check(CLI::ExistingFile);
    c_corr->add_option("--name", corr.names, "Benchmark name per --accuracy file (default: file stem)");
    c_corr->add_option("--convention", corr.convention, "difference (1 - ratio) or ratio")
        ->check(CLI::IsMember({"difference", "ratio"}));
    c_corr->callback([&] { action = [&] { cmd_correlate(corr, command); }; });

    AlignArgs align;
    auto* c_align = app.add_subcommand("align", "Tune LoRA adapters with the alignment objective");
    add_common(c_align, align.common);
    c_align->add_option("--model", align.model, "Toy model checkpoint")->required()->check(CLI::ExistingFile);
    c_align->add_option("--corpus", align.corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    c_align->add_option("--sae", align.sae, "SAE checkpoint for the target layer")->required()->check(CLI::ExistingFile);
    c_align->callback([&] { action = [&] { cmd_align(align, command); }; });

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Multiple-choice evaluation of a toy model");
    add_common(c_eval, ev.common);
    c_eval->add_option("--model", ev.model, "Toy model checkpoint")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--adapters", ev.adapters, "Adapter checkpoint")->check(CLI::ExistingFile);
    c_eval->add_option("--items", ev.items, "Items JSONL")->check(CLI::ExistingFile);
    c_eval->add_option("--corpus", ev.corpus, "Held-out corpus to draw items from")->check(CLI::ExistingFile);
    c_eval->callback([&] { action = [&] { cmd_eval(ev, command); }; });

    ReportArgs report;
    auto* c_report = app.add_subcommand("report", "Run the whole toy pipeline and write every report");
    add_common(c_report, report.common);
    c_report->callback([&] { action = [&] { cmd_report(report, command); }; });

    ConfigShowArgs show;
    auto* c_config = app.add_subcommand("config", "Configuration utilities");
    c_config->require_subcommand(1);
    auto* c_show = c_config->add_subcommand("show", "Print the effective configuration with all defaults");
    add_common(c_show, show.common);
    c_show->callback([&] { action = [&] { cmd_config_show(show); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        if (action) action();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
