#include "xling/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "xling/io.hpp"

namespace xling {

void McqItem::validate(std::size_t vocab_size) const {
    if (choices.size() < 2) throw ValidationError("item needs at least 2 choices");
    if (gold_index >= choices.size()) throw ValidationError("gold_index out of range");
    if (prompt.empty()) throw ValidationError("item has an empty prompt");
    auto check = [&](const std::vector<TokenId>& seq, const char* what) {
        for (TokenId t : seq)
            if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
                throw ValidationError(std::string(what) + " token " + std::to_string(t) +
                                      " outside vocabulary of " + std::to_string(vocab_size));
    };
    for (const auto& s : shots) check(s, "shot");
    check(prompt, "prompt");
    for (const auto& c : choices) {
        if (c.empty()) throw ValidationError("item has an empty choice");
        check(c, "choice");
    }
}

std::vector<TokenId> McqItem::context() const {
    std::vector<TokenId> ctx;
    for (const auto& s : shots) ctx.insert(ctx.end(), s.begin(), s.end());
    ctx.insert(ctx.end(), prompt.begin(), prompt.end());
    return ctx;
}

std::string to_string(ScoringMode m) {
    return m == ScoringMode::RawLoglik ? "raw_loglik" : "per_token_normalized";
}

ScoringMode parse_scoring_mode(const std::string& s) {
    if (s == "raw_loglik" || s == "raw") return ScoringMode::RawLoglik;
    if (s == "per_token_normalized" || s == "normalized") return ScoringMode::PerTokenNormalized;
    throw ValidationError("unknown scoring mode '" + s + "'");
}

std::vector<double> score_choices(const TokenScorer& model, const McqItem& item, ScoringMode mode) {
    item.validate(model.vocab_size());
    const std::vector<TokenId> base = item.context();
    std::vector<double> scores;
    scores.reserve(item.choices.size());
    for (const auto& choice : item.choices) {
        std::vector<TokenId> ctx = base;
        double total = 0.0;
        for (TokenId t : choice) {
            const Vector lp = model.next_token_log_probs(ctx);
            if (lp.size() != model.vocab_size()) throw ShapeError("scorer returned wrong vocab size");
            total += std::max(lp[static_cast<std::size_t>(t)], kLogProbFloor);
            ctx.push_back(t);
        }
        if (mode == ScoringMode::PerTokenNormalized) total /= static_cast<double>(choice.size());
        scores.push_back(total);
    }
    return scores;
}

ChoicePick pick_choice(std::span<const double> scores) {
    if (scores.empty()) throw ValidationError("pick_choice: no scores");
    ChoicePick pick;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[pick.index]) pick.index = i;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (i != pick.index && scores[i] == scores[pick.index]) pick.tied = true;
    return pick;
}

EvalReport aggregate_scores(const std::vector<McqItem>& items,
                            const std::vector<std::vector<double>>& scores, ScoringMode mode) {
    if (items.empty()) throw ValidationError("evaluate: no items");
    if (items.size() != scores.size()) throw ShapeError("evaluate: scores/items length mismatch");
    std::map<std::string, LanguageAccuracy> acc;
    EvalReport rep;
    rep.scoring_mode = mode;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const ChoicePick pick = pick_choice(scores[i]);
        auto& a = acc[items[i].language];
        a.language = items[i].language;
        a.item_count += 1;
        if (pick.index == items[i].gold_index) a.correct += 1;
        if (pick.tied) {
            a.ties += 1;
            rep.ties += 1;
        }
    }
    for (auto& [lang, a] : acc) {
        a.accuracy = 100.0 * static_cast<double>(a.correct) / static_cast<double>(a.item_count);
        rep.per_language.push_back(a);
    }
    rep.item_count = items.size();
    return rep;
}

EvalReport evaluate(const TokenScorer& model, const std::vector<McqItem>& items, ScoringMode mode) {
    if (items.empty()) throw ValidationError("evaluate: no items");
    std::vector<std::vector<double>> scores;
    scores.reserve(items.size());
    for (const auto& item : items) scores.push_back(score_choices(model, item, mode));
    return aggregate_scores(items, scores, mode);
}

std::string eval_report_csv(const std::vector<EvalReport>& reports) {
    std::string out = format_csv_row({"language", "scoring_mode", "accuracy", "correct", "items", "ties"});
    for (const auto& rep : reports) {
        for (const auto& a : rep.per_language) {
            out += format_csv_row({a.language, to_string(rep.scoring_mode), format_double(a.accuracy),
                                   std::to_string(a.correct), std::to_string(a.item_count),
                                   std::to_string(a.ties)});
        }
    }
    return out;
}

std::vector<McqItem> load_items(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<McqItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            McqItem item;
            item.language = j.at("language").get<std::string>();
            item.prompt = j.at("prompt_tokens").get<std::vector<TokenId>>();
            item.choices = j.at("choices").get<std::vector<std::vector<TokenId>>>();
            item.gold_index = j.at("gold_index").get<std::size_t>();
            if (j.contains("shots")) item.shots = j.at("shots").get<std::vector<std::vector<TokenId>>>();
            items.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return items;
}

std::string serialize_items(const std::vector<McqItem>& items) {
    std::string out;
    for (const auto& it : items) {
        nlohmann::json j;
        j["language"] = it.language;
        j["prompt_tokens"] = it.prompt;
        j["choices"] = it.choices;
        j["gold_index"] = it.gold_index;
        j["shots"] = it.shots;
        out += j.dump() + "\n";
    }
    return out;
}

std::map<std::string, double> load_accuracy_fixture(const std::filesystem::path& path) {
    const auto rows = parse_csv(read_text_file(path));
    if (rows.empty()) throw ValidationError(path.string() + ": empty accuracy file");
    const auto& header = rows.front().cells;
    if (header.size() != 2 || header[0] != "language" || header[1] != "accuracy")
        throw ValidationError(path.string() + ": expected header language,accuracy");
    std::map<std::string, double> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& c = rows[i].cells;
        const std::string ctx = path.string() + ":" + std::to_string(rows[i].line_number);
        if (c.size() != 2) throw ValidationError(ctx + ": expected 2 cells");
        const double acc = parse_double(c[1], ctx);
        if (!(acc >= 0.0 && acc <= 100.0)) throw ValidationError(ctx + ": accuracy outside [0, 100]");
        if (!out.emplace(c[0], acc).second)
            throw ValidationError(ctx + ": duplicate language '" + c[0] + "'");
    }
    if (out.empty()) throw ValidationError(path.string() + ": no accuracy rows");
    return out;
}

std::string accuracy_csv(const std::map<std::string, double>& acc) {
    std::string out = format_csv_row({"language", "accuracy"});
    for (const auto& [lang, a] : acc) out += format_csv_row({lang, format_double(a)});
    return out;
}

std::vector<McqItem> make_random_items(std::size_t n, std::size_t n_choices, std::size_t vocab,
                                       std::size_t choice_len, const std::string& language, Rng& rng) {
    std::vector<McqItem> items(n);
    auto tok = [&] { return static_cast<TokenId>(rng.below(vocab)); };
    for (auto& item : items) {
        item.language = language;
        item.prompt = {tok(), tok(), tok()};
        item.choices.resize(n_choices);
        for (auto& c : item.choices) {
            c.resize(choice_len);
            for (auto& t : c) t = tok();
        }
        item.gold_index = static_cast<std::size_t>(rng.below(n_choices));
    }
    return items;
}

}  // namespace xling
