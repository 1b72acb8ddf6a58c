#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "esap/attribution.hpp"
#include "esap/corpus.hpp"
#include "esap/hybrid.hpp"

namespace esap::eval {

using ojson = nlohmann::ordered_json;

struct Evidence {
    std::string doc_id;
    std::string quote;
};

struct QaRecord {
    std::string qid;
    std::string question;
    std::vector<Evidence> evidence;
    std::optional<std::string> gold_answer;
};

/// Half-open token span inside one document.
struct GoldSpan {
    std::string doc_id;
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const GoldSpan&) const = default;
};

/// A retrieved chunk reduced to its location.
struct ChunkSpan {
    std::string doc_id;
    std::size_t begin = 0;
    std::size_t end = 0;
};

inline QaRecord parse_qa_record(const json& j) {
    auto fail = [](const std::string& m) { return Error(Errc::DatasetFormatError, m); };
    if (!j.is_object()) throw fail("expected a JSON object");
    if (!j.contains("qid") || !j["qid"].is_string()) throw fail("missing string key 'qid'");
    if (!j.contains("question") || !j["question"].is_string()) throw fail("missing string key 'question'");
    if (!j.contains("evidence") || !j["evidence"].is_array()) throw fail("missing array key 'evidence'");
    QaRecord r;
    r.qid = j["qid"].get<std::string>();
    r.question = j["question"].get<std::string>();
    for (const auto& e : j["evidence"]) {
        if (!e.is_object() || !e.contains("doc_id") || !e["doc_id"].is_string() || !e.contains("quote") ||
            !e["quote"].is_string()) {
            throw fail("evidence entries need string keys 'doc_id' and 'quote'");
        }
        r.evidence.push_back({e["doc_id"].get<std::string>(), e["quote"].get<std::string>()});
    }
    if (j.contains("gold_answer")) {
        if (!j["gold_answer"].is_string()) throw fail("'gold_answer' must be a string");
        r.gold_answer = j["gold_answer"].get<std::string>();
    }
    return r;
}

/// Reads a QA dataset JSONL file. Errors carry the 1-based line number.
inline std::vector<QaRecord> read_qa_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::DatasetFormatError, "cannot open dataset " + path.string());
    std::vector<QaRecord> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(parse_qa_record(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(Errc::DatasetFormatError, "line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(Errc::DatasetFormatError, "line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert(out.back().qid).second) {
            throw Error(Errc::DatasetFormatError, "line " + std::to_string(lineno) + ": duplicate qid '" + out.back().qid + "'");
        }
    }
    return out;
}

/// Token span of the first occurrence of `quote` in `text`, matched after
/// lowercasing and whitespace collapsing. Tokens touching the match are included.
inline std::optional<std::pair<std::size_t, std::size_t>> find_quote_tokens(std::string_view text, std::string_view quote) {
    const auto needle = text::normalize_for_match(quote);
    if (needle.empty()) return std::nullopt;
    std::vector<std::size_t> offsets;
    const auto hay = text::normalize_for_match(text, &offsets);
    const auto at = hay.find(needle);
    if (at == std::string::npos) return std::nullopt;
    const std::size_t ob = offsets[at];
    const std::size_t oe = offsets[at + needle.size()];
    const auto tokens = tokenize(text);
    std::size_t first = tokens.size(), last = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].end > ob && tokens[i].begin < oe) {
            first = std::min(first, i);
            last = i + 1;
        }
    }
    if (first >= last) return std::nullopt;
    return std::make_pair(first, last);
}

/// doc_id -> document text.
using DocTexts = std::map<std::string, std::string>;

inline std::vector<GoldSpan> locate_evidence(const QaRecord& record, const DocTexts& corpus) {
    std::vector<GoldSpan> spans;
    for (const auto& ev : record.evidence) {
        auto it = corpus.find(ev.doc_id);
        if (it == corpus.end()) {
            throw Error(Errc::EvidenceNotFound, record.qid + ": document '" + ev.doc_id + "' not in corpus");
        }
        auto span = find_quote_tokens(it->second, ev.quote);
        if (!span) throw Error(Errc::EvidenceNotFound, record.qid + ": quote not found in '" + ev.doc_id + "'");
        spans.push_back({ev.doc_id, span->first, span->second});
    }
    if (spans.empty()) throw Error(Errc::EvidenceNotFound, record.qid + ": record has no evidence");
    return spans;
}

namespace detail {

inline std::set<std::pair<std::string, std::size_t>> gold_token_set(const std::vector<GoldSpan>& gold) {
    std::set<std::pair<std::string, std::size_t>> s;
    for (const auto& g : gold) {
        for (std::size_t t = g.begin; t < g.end; ++t) s.emplace(g.doc_id, t);
    }
    return s;
}

} // namespace detail

/// Covered gold tokens / gold tokens, over the union of the first k chunks.
inline double recall_at_k(const std::vector<ChunkSpan>& ranked, const std::vector<GoldSpan>& gold, std::size_t k) {
    const auto want = detail::gold_token_set(gold);
    if (want.empty()) return 0.0;
    std::size_t covered = 0;
    for (const auto& [doc, t] : want) {
        for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
            if (ranked[i].doc_id == doc && t >= ranked[i].begin && t < ranked[i].end) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(want.size());
}

/// Chunk tokens inside gold spans / all chunk tokens, over the first k chunks.
/// Tokens shared by overlapping chunks count once per chunk.
inline double precision_at_k(const std::vector<ChunkSpan>& ranked, const std::vector<GoldSpan>& gold, std::size_t k) {
    const auto want = detail::gold_token_set(gold);
    std::size_t total = 0, inside = 0;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
        total += ranked[i].end - ranked[i].begin;
        for (std::size_t t = ranked[i].begin; t < ranked[i].end; ++t) inside += want.count({ranked[i].doc_id, t});
    }
    return total == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(total);
}

enum class RetrieverMode { Hybrid, Lexical, Dense };

inline std::string_view mode_name(RetrieverMode m) {
    switch (m) {
    case RetrieverMode::Lexical: return "lexical";
    case RetrieverMode::Dense: return "dense";
    default: return "hybrid";
    }
}

inline RetrieverMode parse_mode(std::string_view s) {
    if (s == "hybrid") return RetrieverMode::Hybrid;
    if (s == "lexical") return RetrieverMode::Lexical;
    if (s == "dense") return RetrieverMode::Dense;
    throw Error(Errc::ConfigError, "unknown retriever mode '" + std::string(s) + "'");
}

inline const std::vector<std::size_t>& default_ks() {
    static const std::vector<std::size_t> ks{1, 2, 4, 8, 16, 50};
    return ks;
}

struct NamedDataset {
    std::string name;
    std::vector<QaRecord> records;
};

struct QuestionScores {
    std::string dataset;
    std::string qid;
    std::vector<double> recall;    ///< fractions, one per k
    std::vector<double> precision;
};

/// Values are percentages in [0, 100].
struct MetricRow {
    std::string dataset;
    std::size_t questions = 0;
    std::size_t excluded = 0;
    std::vector<double> recall;
    std::vector<double> precision;
};

struct RetrievalEvalReport {
    std::vector<std::size_t> ks;
    std::size_t chunk_size = 0;
    std::size_t overlap = 0;
    double rrf_c = 60.0;
    std::string retriever = "hybrid";
    std::vector<MetricRow> rows;
    std::vector<QuestionScores> per_question;
};

struct BenchmarkOptions {
    std::vector<std::size_t> ks = default_ks();
    RetrieverMode mode = RetrieverMode::Hybrid;
    std::optional<std::string> principal;
};

inline std::vector<ChunkSpan> ranked_spans(const RetrievalResult& r) {
    std::vector<ChunkSpan> out;
    for (const auto& h : r.hits) out.push_back({h.doc_id, h.token_begin, h.token_end});
    return out;
}

inline RetrievalResult retrieve_for_eval(const HybridIndex& index, Embedder& embedder, const std::string& question,
                                         std::size_t k, const BenchmarkOptions& opts) {
    switch (opts.mode) {
    case RetrieverMode::Lexical: return index.search_lexical(question, k);
    case RetrieverMode::Dense: {
        const auto v = embedder.embed(std::span<const std::string>(&question, 1));
        return index.search_dense(v.at(0), k, question);
    }
    default: {
        RetrieveOptions ro;
        ro.k = k;
        ro.principal = opts.principal;
        return index.retrieve(question, embedder, ro);
    }
    }
}

namespace detail {

inline MetricRow average(const std::string& name, const std::vector<const QuestionScores*>& qs, std::size_t excluded,
                         std::size_t nk) {
    MetricRow row;
    row.dataset = name;
    row.questions = qs.size();
    row.excluded = excluded;
    row.recall.assign(nk, 0.0);
    row.precision.assign(nk, 0.0);
    for (const auto* q : qs) {
        for (std::size_t i = 0; i < nk; ++i) {
            row.recall[i] += q->recall[i];
            row.precision[i] += q->precision[i];
        }
    }
    for (std::size_t i = 0; i < nk && !qs.empty(); ++i) {
        row.recall[i] = 100.0 * row.recall[i] / static_cast<double>(qs.size());
        row.precision[i] = 100.0 * row.precision[i] / static_cast<double>(qs.size());
    }
    return row;
}

} // namespace detail

/// Macro-averaged Recall@k / Precision@k per dataset plus a pooled ALL row.
/// Questions are scored in qid order; records whose evidence cannot be
/// located are excluded and counted.
inline RetrievalEvalReport run_retrieval_benchmark(const std::vector<NamedDataset>& datasets, const DocTexts& corpus,
                                                   const HybridIndex& index, Embedder& embedder,
                                                   const BenchmarkOptions& opts = {}) {
    if (opts.ks.empty()) throw Error(Errc::ConfigError, "ks must not be empty");
    if (std::any_of(opts.ks.begin(), opts.ks.end(), [](std::size_t k) { return k == 0; })) {
        throw Error(Errc::ConfigError, "every k must be positive");
    }
    std::size_t total_records = 0;
    for (const auto& d : datasets) total_records += d.records.size();
    if (total_records == 0) throw Error(Errc::DatasetFormatError, "dataset has no records");

    RetrievalEvalReport rep;
    rep.ks = opts.ks;
    std::sort(rep.ks.begin(), rep.ks.end());
    rep.ks.erase(std::unique(rep.ks.begin(), rep.ks.end()), rep.ks.end());
    rep.chunk_size = index.params().chunk.size;
    rep.overlap = index.params().chunk.overlap;
    rep.rrf_c = index.params().rrf_c;
    rep.retriever = std::string(mode_name(opts.mode));
    const std::size_t kmax = rep.ks.back();

    std::vector<std::size_t> excluded(datasets.size(), 0);
    for (std::size_t di = 0; di < datasets.size(); ++di) {
        std::vector<const QaRecord*> order;
        for (const auto& r : datasets[di].records) order.push_back(&r);
        std::sort(order.begin(), order.end(), [](const QaRecord* a, const QaRecord* b) { return a->qid < b->qid; });
        for (const auto* rec : order) {
            std::vector<GoldSpan> gold;
            try {
                gold = locate_evidence(*rec, corpus);
            } catch (const Error& e) {
                if (e.code() != Errc::EvidenceNotFound) throw;
                ++excluded[di];
                continue;
            }
            const auto ranked = ranked_spans(retrieve_for_eval(index, embedder, rec->question, kmax, opts));
            QuestionScores qs;
            qs.dataset = datasets[di].name;
            qs.qid = rec->qid;
            for (auto k : rep.ks) {
                qs.recall.push_back(recall_at_k(ranked, gold, k));
                qs.precision.push_back(precision_at_k(ranked, gold, k));
            }
            rep.per_question.push_back(std::move(qs));
        }
    }

    std::vector<const QuestionScores*> all;
    std::size_t all_excluded = 0;
    for (std::size_t di = 0; di < datasets.size(); ++di) {
        std::vector<const QuestionScores*> mine;
        for (const auto& q : rep.per_question) {
            if (q.dataset == datasets[di].name) mine.push_back(&q);
        }
        all.insert(all.end(), mine.begin(), mine.end());
        all_excluded += excluded[di];
        rep.rows.push_back(detail::average(datasets[di].name, mine, excluded[di], rep.ks.size()));
    }
    rep.rows.push_back(detail::average("ALL", all, all_excluded, rep.ks.size()));
    return rep;
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

/// True when the sequence never decreases.
inline bool non_decreasing(const std::vector<double>& xs) {
    return std::adjacent_find(xs.begin(), xs.end(), [](double a, double b) { return b < a; }) == xs.end();
}

/// Recall rows and every per-question recall sequence must be non-decreasing
/// in k; all values must lie in range. Returns the violations found.
inline std::vector<std::string> validate_report(const RetrievalEvalReport& rep) {
    std::vector<std::string> problems;
    auto in_range = [](const std::vector<double>& xs, double hi) {
        return std::all_of(xs.begin(), xs.end(), [hi](double x) { return x >= 0.0 && x <= hi; });
    };
    for (const auto& r : rep.rows) {
        if (!non_decreasing(r.recall)) problems.push_back(r.dataset + ": recall decreases in k");
        if (!in_range(r.recall, 100.0) || !in_range(r.precision, 100.0)) problems.push_back(r.dataset + ": value out of [0,100]");
    }
    for (const auto& q : rep.per_question) {
        if (!non_decreasing(q.recall)) problems.push_back(q.dataset + "/" + q.qid + ": recall decreases in k");
        if (!in_range(q.recall, 1.0) || !in_range(q.precision, 1.0)) problems.push_back(q.dataset + "/" + q.qid + ": value out of [0,1]");
    }
    return problems;
}

inline ojson to_json(const RetrievalEvalReport& rep, bool with_questions = true) {
    ojson j;
    j["config"] = {{"chunk_size", rep.chunk_size}, {"overlap", rep.overlap}, {"rrf_c", rep.rrf_c}, {"retriever", rep.retriever}};
    j["ks"] = rep.ks;
    ojson rows = ojson::array();
    for (const auto& r : rep.rows) {
        ojson row;
        row["dataset"] = r.dataset;
        row["questions"] = r.questions;
        row["excluded"] = r.excluded;
        ojson rec = ojson::object(), pre = ojson::object();
        for (std::size_t i = 0; i < rep.ks.size(); ++i) {
            rec["k=" + std::to_string(rep.ks[i])] = r.recall[i];
            pre["k=" + std::to_string(rep.ks[i])] = r.precision[i];
        }
        row["recall"] = std::move(rec);
        row["precision"] = std::move(pre);
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    if (with_questions) {
        ojson qs = ojson::array();
        for (const auto& q : rep.per_question) {
            qs.push_back(ojson{{"dataset", q.dataset}, {"qid", q.qid}, {"recall", q.recall}, {"precision", q.precision}});
        }
        j["questions"] = std::move(qs);
    }
    return j;
}

namespace detail {

inline std::string pad_right(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

inline std::string pad_left(std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
}

inline std::string render_grid(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& body) {
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : body) {
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    auto line = [&](const std::vector<std::string>& cells) {
        std::string out;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) out += "  ";
            out += c == 0 ? pad_right(cells[c], width[c]) : pad_left(cells[c], width[c]);
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        return out + "\n";
    };
    std::string out = line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    for (const auto& row : body) out += line(row);
    return out;
}

} // namespace detail

/// Cells of one retrieval row: recall then precision, two decimals.
inline std::vector<std::string> retrieval_cells(const MetricRow& r) {
    std::vector<std::string> cells;
    for (double v : r.recall) cells.push_back(format_fixed(v, 2));
    for (double v : r.precision) cells.push_back(format_fixed(v, 2));
    return cells;
}

/// Datasets x k table: Recall@k columns then Precision@k columns, in percent.
inline std::string render_retrieval_table(const RetrievalEvalReport& rep) {
    std::vector<std::string> header{"Dataset"};
    for (auto k : rep.ks) header.push_back("R@" + std::to_string(k));
    for (auto k : rep.ks) header.push_back("P@" + std::to_string(k));
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rep.rows) {
        std::vector<std::string> row{r.dataset};
        auto cells = retrieval_cells(r);
        row.insert(row.end(), cells.begin(), cells.end());
        body.push_back(std::move(row));
    }
    return "chunk_size=" + std::to_string(rep.chunk_size) + " overlap=" + std::to_string(rep.overlap) +
           " rrf_c=" + format_fixed(rep.rrf_c, 0) + " retriever=" + rep.retriever + "\n" + detail::render_grid(header, body);
}

/// Rebuilds a report (rows only) from a published-table JSON fixture:
/// {"chunk_size", "overlap", "ks", "rows": [{"dataset", "recall", "precision"}]}.
inline RetrievalEvalReport report_from_table(const json& j) {
    try {
        RetrievalEvalReport rep;
        rep.ks = j.at("ks").get<std::vector<std::size_t>>();
        rep.chunk_size = j.at("chunk_size").get<std::size_t>();
        rep.overlap = j.value("overlap", std::size_t{0});
        rep.rrf_c = j.value("rrf_c", 60.0);
        rep.retriever = j.value("retriever", std::string("hybrid"));
        for (const auto& r : j.at("rows")) {
            MetricRow row;
            row.dataset = r.at("dataset").get<std::string>();
            row.recall = r.at("recall").get<std::vector<double>>();
            row.precision = r.at("precision").get<std::vector<double>>();
            if (row.recall.size() != rep.ks.size() || row.precision.size() != rep.ks.size()) {
                throw Error(Errc::DatasetFormatError, "row " + row.dataset + " does not match ks");
            }
            rep.rows.push_back(std::move(row));
        }
        return rep;
    } catch (const json::exception& e) {
        throw Error(Errc::DatasetFormatError, std::string("table fixture: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Generation quality

struct TraceScores {
    std::optional<double> completeness;
    double utilization = 0.0;
    std::optional<double> context_relevance;
    double pc_hallucinated = 0.0;
    std::optional<double> accuracy;
};

inline ojson to_json(const TraceScores& s) {
    auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
    return ojson{{"completeness", opt(s.completeness)},
                 {"utilization", s.utilization},
                 {"context_relevance", opt(s.context_relevance)},
                 {"pc_hallucinated", s.pc_hallucinated},
                 {"accuracy", opt(s.accuracy)}};
}

/// Attribution metrics over shared n-grams. Without a gold answer, completeness
/// and context_relevance are left unset.
inline TraceScores trace_scores(std::string_view answer, const std::vector<std::string>& contexts,
                                const std::optional<std::string>& gold, std::optional<double> accuracy = std::nullopt,
                                std::size_t n = 3) {
    if (n == 0) throw Error(Errc::ConfigError, "n-gram size must be at least 1");
    if (answer.empty()) throw Error(Errc::RunsFormatError, "answer must not be empty");
    if (contexts.empty()) throw Error(Errc::RunsFormatError, "contexts must not be empty");
    const TokenSeq a = token_texts(answer);
    std::vector<TokenSeq> ctx;
    std::size_t c_total = 0;
    for (const auto& c : contexts) {
        ctx.push_back(token_texts(c));
        c_total += ctx.back().size();
    }

    TraceScores s;
    s.accuracy = accuracy;
    if (!a.empty()) s.pc_hallucinated = 1.0 - fraction_true(supported_mask(a, ctx, n));

    const std::size_t na = std::min(n, std::max<std::size_t>(a.size(), 1));
    std::vector<std::vector<bool>> used;
    std::size_t used_count = 0;
    for (const auto& c : ctx) {
        used.push_back(a.empty() ? std::vector<bool>(c.size(), false) : shared_ngram_mask(c, {a}, na));
        used_count += static_cast<std::size_t>(std::count(used.back().begin(), used.back().end(), true));
    }
    s.utilization = c_total == 0 ? 0.0 : static_cast<double>(used_count) / static_cast<double>(c_total);

    if (gold) {
        const TokenSeq g = token_texts(*gold);
        const std::size_t ng = std::min(n, std::max<std::size_t>(g.size(), 1));
        std::size_t relevant = 0, both = 0;
        for (std::size_t i = 0; i < ctx.size(); ++i) {
            const auto rel = g.empty() ? std::vector<bool>(ctx[i].size(), false) : shared_ngram_mask(ctx[i], {g}, ng);
            for (std::size_t t = 0; t < rel.size(); ++t) {
                if (!rel[t]) continue;
                ++relevant;
                if (used[i][t]) ++both;
            }
        }
        s.context_relevance = c_total == 0 ? 0.0 : static_cast<double>(relevant) / static_cast<double>(c_total);
        s.completeness = relevant == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(relevant);
    }
    return s;
}

struct RunRecord {
    std::string qid;
    std::string system;
    std::string question;
    std::string answer;
    std::vector<std::string> contexts;
    std::optional<std::string> gold_answer;
    std::optional<double> human_accuracy;
};

inline ojson to_json(const RunRecord& r) {
    ojson j{{"qid", r.qid}, {"system", r.system}, {"question", r.question}, {"answer", r.answer}, {"contexts", r.contexts}};
    if (r.gold_answer) j["gold_answer"] = *r.gold_answer;
    if (r.human_accuracy) j["human_accuracy"] = *r.human_accuracy;
    return j;
}

inline RunRecord parse_run_record(const json& j) {
    auto fail = [](const std::string& m) { return Error(Errc::RunsFormatError, m); };
    if (!j.is_object()) throw fail("expected a JSON object");
    for (const char* key : {"qid", "system", "question", "answer"}) {
        if (!j.contains(key) || !j[key].is_string()) throw fail(std::string("missing string key '") + key + "'");
    }
    if (!j.contains("contexts") || !j["contexts"].is_array()) throw fail("missing array key 'contexts'");
    RunRecord r;
    r.qid = j["qid"].get<std::string>();
    r.system = j["system"].get<std::string>();
    r.question = j["question"].get<std::string>();
    r.answer = j["answer"].get<std::string>();
    for (const auto& c : j["contexts"]) {
        if (!c.is_string()) throw fail("'contexts' must hold strings");
        r.contexts.push_back(c.get<std::string>());
    }
    if (j.contains("gold_answer") && !j["gold_answer"].is_null()) {
        if (!j["gold_answer"].is_string()) throw fail("'gold_answer' must be a string");
        r.gold_answer = j["gold_answer"].get<std::string>();
    }
    if (j.contains("human_accuracy") && !j["human_accuracy"].is_null()) {
        if (!j["human_accuracy"].is_number()) throw fail("'human_accuracy' must be a number");
        r.human_accuracy = j["human_accuracy"].get<double>();
    }
    return r;
}

inline std::vector<RunRecord> read_runs_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::RunsFormatError, "cannot open runs file " + path.string());
    std::vector<RunRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(parse_run_record(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(Errc::RunsFormatError, "line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(Errc::RunsFormatError, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

struct SystemRow {
    std::string system;
    std::size_t runs = 0;
    std::size_t with_gold = 0;
    std::size_t annotated = 0;
    std::optional<double> completeness;
    double utilization = 0.0;
    std::optional<double> context_relevance;
    double pc_hallucinated = 0.0;
    std::optional<double> accuracy;
};

struct GenerationReport {
    std::size_t ngram_n = 3;
    std::vector<SystemRow> rows;
};

/// Per-system means, rows sorted by system name. Runs are scored in
/// (system, qid) order. Gold-dependent means cover runs with a gold answer;
/// accuracy covers annotated runs only.
inline GenerationReport run_generation_benchmark(std::vector<RunRecord> runs, std::size_t n = 3) {
    if (runs.empty()) throw Error(Errc::RunsFormatError, "runs file has no records");
    std::stable_sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
        return a.system != b.system ? a.system < b.system : a.qid < b.qid;
    });
    GenerationReport rep;
    rep.ngram_n = n;
    std::map<std::string, std::vector<TraceScores>> by_system;
    for (const auto& r : runs) {
        try {
            by_system[r.system].push_back(trace_scores(r.answer, r.contexts, r.gold_answer, r.human_accuracy, n));
        } catch (const Error& e) {
            throw Error(Errc::RunsFormatError, r.system + "/" + r.qid + ": " + e.what());
        }
    }
    for (const auto& [system, scores] : by_system) {
        SystemRow row;
        row.system = system;
        row.runs = scores.size();
        double comp = 0, rel = 0, acc = 0, util = 0, hall = 0;
        for (const auto& s : scores) {
            util += s.utilization;
            hall += s.pc_hallucinated;
            if (s.completeness) {
                ++row.with_gold;
                comp += *s.completeness;
                rel += *s.context_relevance;
            }
            if (s.accuracy) {
                ++row.annotated;
                acc += *s.accuracy;
            }
        }
        row.utilization = util / static_cast<double>(row.runs);
        row.pc_hallucinated = hall / static_cast<double>(row.runs);
        if (row.with_gold) {
            row.completeness = comp / static_cast<double>(row.with_gold);
            row.context_relevance = rel / static_cast<double>(row.with_gold);
        }
        if (row.annotated) row.accuracy = acc / static_cast<double>(row.annotated);
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

inline ojson to_json(const GenerationReport& rep) {
    auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
    ojson rows = ojson::array();
    for (const auto& r : rep.rows) {
        rows.push_back(ojson{{"system", r.system},
                             {"runs", r.runs},
                             {"with_gold", r.with_gold},
                             {"annotated", r.annotated},
                             {"completeness", opt(r.completeness)},
                             {"utilization", r.utilization},
                             {"context_relevance", opt(r.context_relevance)},
                             {"pc_hallucinated", r.pc_hallucinated},
                             {"accuracy", opt(r.accuracy)}});
    }
    return ojson{{"ngram_n", rep.ngram_n}, {"rows", std::move(rows)}};
}

/// Cells of one generation row: four metrics at 4 decimals, accuracy at 2,
/// "-" where a value is absent.
inline std::vector<std::string> generation_cells(const SystemRow& r) {
    auto cell = [](const std::optional<double>& v, int d) { return v ? format_fixed(*v, d) : std::string("-"); };
    return {cell(r.completeness, 4), format_fixed(r.utilization, 4), cell(r.context_relevance, 4),
            format_fixed(r.pc_hallucinated, 4), cell(r.accuracy, 2)};
}

inline std::string render_generation_table(const GenerationReport& rep) {
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rep.rows) {
        std::vector<std::string> row{r.system};
        auto cells = generation_cells(r);
        row.insert(row.end(), cells.begin(), cells.end());
        body.push_back(std::move(row));
    }
    return detail::render_grid({"Model", "Completeness", "Utilization", "Context Relevance", "pc hallucinated", "Accuracy"}, body);
}

/// Rebuilds a generation report from a published-table JSON fixture:
/// {"rows": [{"system", "completeness", "utilization", "context_relevance", "pc_hallucinated", "accuracy"}]}.
inline GenerationReport generation_from_table(const json& j) {
    try {
        GenerationReport rep;
        for (const auto& r : j.at("rows")) {
            SystemRow row;
            row.system = r.at("system").get<std::string>();
            row.completeness = r.at("completeness").get<double>();
            row.utilization = r.at("utilization").get<double>();
            row.context_relevance = r.at("context_relevance").get<double>();
            row.pc_hallucinated = r.at("pc_hallucinated").get<double>();
            if (r.contains("accuracy") && !r["accuracy"].is_null()) row.accuracy = r["accuracy"].get<double>();
            rep.rows.push_back(std::move(row));
        }
        return rep;
    } catch (const json::exception& e) {
        throw Error(Errc::RunsFormatError, std::string("table fixture: ") + e.what());
    }
}

} // namespace esap::eval
