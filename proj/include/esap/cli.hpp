#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "esap/config.hpp"
#include "esap/corpus.hpp"
#include "esap/derek.hpp"
#include "esap/eval.hpp"
#include "esap/hybrid.hpp"
#include "esap/ports.hpp"
#include "esap/thor.hpp"

#ifdef ESAP_WITH_HTTP
#include "esap/http_ports.hpp"
#endif

/// Command-line front end. run_cli() is the whole program; main() only forwards.
namespace esap::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

using ojson = nlohmann::ordered_json;

/// Every flag value; unset optionals fall back to the config file.
struct Flags {
    std::optional<std::string> kb, config, ports;
    std::optional<std::uint64_t> seed;
    bool pretty = false;

    std::string corpus;
    std::optional<std::size_t> chunk_size, overlap;
    std::optional<std::size_t> k, overfetch, ann_m, ef_c, ef_s, exact_threshold;
    std::optional<double> rrf_c;
    std::optional<std::string> principal;
    std::string question;
    std::string questions_file, runs_out, system;
    std::size_t max_regenerations = 2;
    double support_threshold = 0.6;
    bool timings = false;

    std::string db;
    std::optional<std::size_t> max_retries;
    std::optional<double> threshold;
    bool allow_empty = false;
    bool verbose = false;
    std::size_t timeout_ms = 5000;
    std::size_t max_rows = 1000;

    std::vector<std::string> qa;
    std::optional<std::vector<std::size_t>> ks;
    std::string mode = "hybrid";
    std::string runs;
    std::optional<std::size_t> ngram_n;
    std::string out, out_text, from_table;
};

struct Io {
    std::ostream& out;
    std::ostream& err;
};

namespace detail {

inline AppConfig resolve_config(const Flags& f) {
    AppConfig c = f.config ? load_config(*f.config) : AppConfig{};
    if (f.kb) c.kb = *f.kb;
    if (f.seed) c.ann.seed = *f.seed;
    if (f.chunk_size) c.chunk.size = *f.chunk_size;
    if (f.overlap) c.chunk.overlap = *f.overlap;
    if (f.k) c.k = *f.k;
    if (f.overfetch) c.overfetch = *f.overfetch;
    if (f.rrf_c) c.rrf_c = *f.rrf_c;
    if (f.ann_m) c.ann.m = *f.ann_m;
    if (f.ef_c) c.ann.ef_construction = *f.ef_c;
    if (f.ef_s) c.ann.ef_search = *f.ef_s;
    if (f.exact_threshold) c.ann.exact_threshold = *f.exact_threshold;
    if (f.max_retries) c.max_retries = *f.max_retries;
    if (f.threshold) c.threshold = *f.threshold;
    if (f.allow_empty) c.allow_empty = true;
    if (f.ks) c.ks = *f.ks;
    if (f.ngram_n) c.ngram_n = *f.ngram_n;
    if (f.ports) {
        const std::string& p = *f.ports;
        if (p == "stub") {
            c.port_mode = PortMode::Stub;
        } else if (p == "http") {
            c.port_mode = PortMode::Http;
        } else if (p.rfind("scripted:", 0) == 0 && p.size() > 9) {
            c.port_mode = PortMode::Scripted;
            c.script = p.substr(9);
        } else {
            throw Error(Errc::ConfigError, "--ports must be stub, http or scripted:<file>");
        }
    }
    validate_config(c);
    return c;
}

inline std::unique_ptr<ChatModel> make_chat(const AppConfig& c) {
    switch (c.port_mode) {
    case PortMode::Scripted: return std::make_unique<ScriptedModel>(ScriptedModel::from_file(*c.script));
    case PortMode::Http:
#ifdef ESAP_WITH_HTTP
        return std::make_unique<http::HttpChatModel>(
            http::endpoint_from_env(c.env.api_key, c.env.base_url, c.env.model, "gpt-4o"));
#else
        throw Error(Errc::ConfigError, "this build has no HTTP support");
#endif
    default: return std::make_unique<ExtractiveModel>();
    }
}

/// Live mode learns the dimension from a probe call when none is given.
inline std::unique_ptr<Embedder> make_embedder(const AppConfig& c, std::optional<std::size_t> dim) {
    if (c.port_mode != PortMode::Http) return std::make_unique<HashEmbedder>(dim.value_or(256));
#ifdef ESAP_WITH_HTTP
    auto ep = http::endpoint_from_env(c.env.api_key, c.env.base_url, c.env.embed_model, "text-embedding-3-small");
    if (!dim) {
        http::HttpEmbedder probe(ep, 0);
        const std::string text = "dimension probe";
        try {
            probe.embed(std::span<const std::string>(&text, 1));
        } catch (const Error& e) {
            const std::string msg = e.what();
            const auto at = msg.find("dimension ");
            if (e.code() != Errc::DimensionMismatch || at == std::string::npos) throw;
            dim = std::stoul(msg.substr(at + 10));
        }
    }
    return std::make_unique<http::HttpEmbedder>(ep, *dim);
#else
    throw Error(Errc::ConfigError, "this build has no HTTP support");
#endif
}

inline ojson header(const AppConfig& c) {
    ojson j;
    j["tool_version"] = kToolVersion;
    j["config_echo"] = ojson::parse(to_json(c).dump());
    return j;
}

inline void emit(Io io, const ojson& j) { io.out << j.dump(2) << "\n"; }

inline void write_text_file(const std::filesystem::path& p, const std::string& content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::StoreWriteError, "cannot write " + p.string());
    f << content;
    if (!f) throw Error(Errc::StoreWriteError, "cannot write " + p.string());
}

inline std::filesystem::path index_dir(const AppConfig& c) { return c.kb / "index"; }

inline HybridIndex load_index(const AppConfig& c) {
    if (!std::filesystem::exists(index_dir(c) / "meta.json")) {
        throw Error(Errc::EmptyIndex, "no index under " + index_dir(c).string() + "; run the index command first");
    }
    return HybridIndex::load(index_dir(c));
}

inline std::string shorten(std::string s, std::size_t n) {
    for (auto& ch : s) {
        if (ch == '\n' || ch == '\t') ch = ' ';
    }
    if (s.size() > n) s = s.substr(0, n - 3) + "...";
    return s;
}

inline std::string render_hits(const RetrievalResult& r) {
    std::ostringstream o;
    for (const auto& h : r.hits) {
        o << h.rank << "  " << eval::format_fixed(h.fused_score, 6) << "  " << h.chunk_id << "  " << shorten(h.text, 80) << "\n";
    }
    if (r.hits.empty()) o << "(no hits)\n";
    return o.str();
}

} // namespace detail

inline int cmd_ingest(const Flags& f, Io io) {
    const auto cfg = detail::resolve_config(f);
    const auto docs = read_corpus_jsonl(f.corpus);
    VersionStore store(cfg.kb);
    std::size_t fresh = 0, updated = 0;
    for (const auto& d : docs) {
        const bool existed = store.latest_version(d.doc_id).has_value();
        store.ingest(d);
        ++(existed ? updated : fresh);
    }
    io.out << "ingested=" << fresh << " updated=" << updated << "\n";
    return 0;
}

inline int cmd_index(const Flags& f, Io io) {
    const auto cfg = detail::resolve_config(f);
    VersionStore store(cfg.kb);
    const auto docs = store.latest_documents();
    if (docs.empty()) throw Error(Errc::EmptyCorpus, "knowledge base " + cfg.kb.string() + " has no documents");
    auto embedder = detail::make_embedder(cfg, std::nullopt);
    const auto idx = HybridIndex::build(docs, *embedder, cfg.index_params());
    idx.save(detail::index_dir(cfg));
    if (f.pretty) {
        io.out << "chunks=" << idx.size() << " dim=" << idx.dense().dim() << " size=" << cfg.chunk.size
               << " overlap=" << cfg.chunk.overlap << "\n";
        return 0;
    }
    auto j = detail::header(cfg);
    j["documents"] = docs.size();
    j["chunks"] = idx.size();
    j["dim"] = idx.dense().dim();
    j["chunk"] = {{"size", cfg.chunk.size}, {"overlap", cfg.chunk.overlap}};
    j["mode"] = idx.dense().exact() ? "exact" : "ann";
    detail::emit(io, j);
    return 0;
}

inline int cmd_query(const Flags& f, Io io) {
    const auto cfg = detail::resolve_config(f);
    const auto idx = detail::load_index(cfg);
    auto embedder = detail::make_embedder(cfg, idx.dense().dim());
    const auto guards = cfg.guards();
    RetrieveOptions ro;
    ro.k = cfg.k;
    ro.overfetch = cfg.overfetch;
    ro.principal = f.principal;
    ro.guards = &guards;
    const auto r = idx.retrieve(f.question, *embedder, ro);
    if (f.pretty) {
        io.out << detail::render_hits(r);
        return 0;
    }
    auto j = detail::header(cfg);
    j["result"] = ojson::parse(to_json(r).dump());
    detail::emit(io, j);
    return 0;
}

inline derek::Config derek_config(const AppConfig& cfg, const Flags& f) {
    derek::Config d;
    d.k = cfg.k;
    d.overfetch = cfg.overfetch;
    d.principal = f.principal;
    d.guards = cfg.guards();
    d.max_regenerations = f.max_regenerations;
    d.support_threshold = f.support_threshold;
    d.ngram_n = cfg.ngram_n;
    return d;
}

/// Single question, or a questions JSONL turned into a runs JSONL.
inline int cmd_ask(const Flags& f, Io io) {
    const auto cfg = detail::resolve_config(f);
    const auto idx = detail::load_index(cfg);
    auto embedder = detail::make_embedder(cfg, idx.dense().dim());
    auto chat = detail::make_chat(cfg);
    const auto dcfg = derek_config(cfg, f);

    if (f.questions_file.empty()) {
        if (text::trim(f.question).empty()) throw Error(Errc::ConfigError, "ask needs --q or --questions");
        const auto outcome = derek::answer(f.question, idx, *embedder, *chat, dcfg);
        if (f.pretty) {
            io.out << outcome.answer.text << "\n";
            for (const auto& c : outcome.answer.citations) io.out << "  [" << c.snippet << "] " << c.chunk_id << "\n";
            io.out << "verdict: " << (outcome.answer.verdict.sufficient ? "sufficient" : "insufficient")
                   << (outcome.answer.verdict.reason.empty() ? "" : " (" + outcome.answer.verdict.reason + ")") << "\n";
            return 0;
        }
        auto j = detail::header(cfg);
        j["answer"] = ojson::parse(derek::to_json(outcome, f.timings).dump());
        detail::emit(io, j);
        return 0;
    }

    std::ifstream in(f.questions_file);
    if (!in) throw Error(Errc::DatasetFormatError, "cannot open questions file " + f.questions_file);
    const std::string system = f.system.empty() ? "esap-" + std::string(port_mode_name(cfg.port_mode)) : f.system;
    std::string runs_text;
    std::size_t written = 0, skipped = 0, lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        json q;
        try {
            q = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(Errc::DatasetFormatError, "line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!q.is_object() || !q.contains("qid") || !q["qid"].is_string() || !q.contains("question") ||
            !q["question"].is_string()) {
            throw Error(Errc::DatasetFormatError, "line " + std::to_string(lineno) + ": need string keys 'qid' and 'question'");
        }
        const auto outcome = derek::answer(q["question"].get<std::string>(), idx, *embedder, *chat, dcfg);
        if (!outcome.prompt || text::trim(outcome.answer.text).empty()) {
            ++skipped;
            continue;
        }
        eval::RunRecord r;
        r.qid = q["qid"].get<std::string>();
        r.system = system;
        r.question = q["question"].get<std::string>();
        r.answer = outcome.answer.text;
        for (const auto& s : outcome.prompt->context) r.contexts.push_back(s.text);
        if (q.contains("gold_answer") && q["gold_answer"].is_string()) r.gold_answer = q["gold_answer"].get<std::string>();
        if (q.contains("human_accuracy") && q["human_accuracy"].is_number()) r.human_accuracy = q["human_accuracy"].get<double>();
        runs_text += eval::to_json(r).dump() + "\n";
        ++written;
    }
    if (f.runs_out.empty()) {
        io.out << runs_text;
    } else {
        detail::write_text_file(f.runs_out, runs_text);
        auto j = detail::header(cfg);
        j["runs_written"] = written;
        j["skipped_no_context"] = skipped;
        j["runs_file"] = f.runs_out;
        detail::emit(io, j);
    }
    return 0;
}

inline int cmd_sql(const Flags& f, Io io) {
    const auto cfg = detail::resolve_config(f);
    if (f.db.empty()) throw Error(Errc::ConfigError, "sql needs --db");
    if (!std::filesystem::exists(f.db)) throw Error(Errc::DatasetFormatError, "database not found: " + f.db);
    SqlExecutor db(f.db, {std::chrono::milliseconds(f.timeout_ms), f.max_rows});
    const auto schema = thor::introspect(db);
    auto chat = detail::make_chat(cfg);
    const auto routed = thor::route(f.question, nullptr);
    thor::Config tc;
    tc.max_retries = cfg.max_retries;
    tc.threshold = cfg.threshold;
    tc.allow_empty = cfg.allow_empty;
    tc.verbose = f.verbose;
    auto j = detail::header(cfg);
    j["route"] = prompts::task_name(routed.task);
    try {
        const auto a = thor::run(f.question, schema, db, *chat, tc, routed.task);
        if (f.pretty) {
            io.out << a.log.attempts.back().sql << "\n\n" << a.output << "\n";
            return 0;
        }
        j["answer"] = ojson::parse(thor::to_json(a).dump());
        detail::emit(io, j);
        return 0;
    } catch (const thor::ThorFailed& e) {
        j["log"] = ojson::parse(thor::to_json(e.log()).dump());
        detail::emit(io, j);
        throw;
    }
}

inline std::vector<eval::NamedDataset> load_datasets(const std::vector<std::string>& specs) {
    if (specs.empty()) throw Error(Errc::ConfigError, "eval-retrieval needs at least one --qa file");
    std::vector<eval::NamedDataset> out;
    for (const auto& spec : specs) {
        const auto eq = spec.find('=');
        std::filesystem::path path = eq == std::string::npos ? spec : spec.substr(eq + 1);
        std::string name = eq == std::string::npos ? path.stem().string() : spec.substr(0, eq);
        out.push_back({name, eval::read_qa_jsonl(path)});
    }
    return out;
}

inline int finish_report(const Flags& f, Io io, ojson j, const std::string& table) {
    const std::string body = j.dump(2) + "\n";
    if (!f.out.empty()) detail::write_text_file(f.out, body);
    if (!f.out_text.empty()) detail::write_text_file(f.out_text, table);
    if (f.pretty) {
        io.out << table;
    } else {
        io.out << body;
    }
    return 0;
}

inline int cmd_eval_retrieval(const Flags& f, Io io) {
    const auto cfg = detail::resolve_config(f);
    auto j = detail::header(cfg);
    if (!f.from_table.empty()) {
        std::ifstream in(f.from_table);
        if (!in) throw Error(Errc::DatasetFormatError, "cannot open " + f.from_table);
        json t;
        try {
            t = json::parse(in);
        } catch (const json::exception& e) {
            throw Error(Errc::DatasetFormatError, f.from_table + ": " + e.what());
        }
        const auto rep = eval::report_from_table(t);
        const auto problems = eval::validate_report(rep);
        j["report"] = eval::to_json(rep, false);
        j["violations"] = problems;
        return finish_report(f, io, std::move(j), eval::render_retrieval_table(rep));
    }
    const auto datasets = load_datasets(f.qa);
    const auto idx = detail::load_index(cfg);
    auto embedder = detail::make_embedder(cfg, idx.dense().dim());
    VersionStore store(cfg.kb);
    eval::DocTexts corpus;
    for (const auto& d : store.latest_documents()) corpus[d.doc_id] = d.text;
    eval::BenchmarkOptions bo;
    bo.ks = cfg.ks;
    bo.mode = eval::parse_mode(f.mode);
    bo.principal = f.principal;
    const auto rep = eval::run_retrieval_benchmark(datasets, corpus, idx, *embedder, bo);
    j["report"] = eval::to_json(rep);
    j["violations"] = eval::validate_report(rep);
    return finish_report(f, io, std::move(j), eval::render_retrieval_table(rep));
}

inline int cmd_eval_trace(const Flags& f, Io io) {
    const auto cfg = detail::resolve_config(f);
    auto j = detail::header(cfg);
    eval::GenerationReport rep;
    if (!f.from_table.empty()) {
        std::ifstream in(f.from_table);
        if (!in) throw Error(Errc::RunsFormatError, "cannot open " + f.from_table);
        json t;
        try {
            t = json::parse(in);
        } catch (const json::exception& e) {
            throw Error(Errc::RunsFormatError, f.from_table + ": " + e.what());
        }
        rep = eval::generation_from_table(t);
    } else {
        if (f.runs.empty()) throw Error(Errc::ConfigError, "eval-trace needs --runs");
        rep = eval::run_generation_benchmark(eval::read_runs_jsonl(f.runs), cfg.ngram_n);
    }
    j["report"] = eval::to_json(rep);
    return finish_report(f, io, std::move(j), eval::render_generation_table(rep));
}

inline int cmd_version(const Flags&, Io io) {
    ojson j;
    j["tool_version"] = kToolVersion;
    j["index_format_version"] = kIndexFormatVersion;
    detail::emit(io, j);
    return 0;
}

inline void print_error(Io io, std::string_view name, std::string_view message, int code) {
    io.err << json{{"error", name}, {"message", message}, {"exit_code", code}}.dump() << "\n";
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Io io{out, err};
    Flags f;
    CLI::App app{"Grounded retrieval, SQL agent and evaluation toolkit", "esap"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--kb", f.kb, "Knowledge-base directory (docs, audit log, index)");
    app.add_option("--config", f.config, "JSON config file; flags override its values");
    app.add_flag("--pretty", f.pretty, "Human-readable output instead of JSON");
    app.add_option("--seed", f.seed, "Seed for ANN level assignment");
    app.add_option("--ports", f.ports, "Model ports: stub | scripted:<file> | http");

    auto* ingest = app.add_subcommand("ingest", "Version documents from a corpus JSONL into the knowledge base");
    ingest->add_option("--corpus", f.corpus, "Corpus JSONL file")->required();

    auto* index = app.add_subcommand("index", "Build the hybrid index from the latest document versions");
    index->add_option("--chunk-size", f.chunk_size, "Chunk size in tokens (default 1000)");
    index->add_option("--overlap", f.overlap, "Chunk overlap in tokens (default 150)");
    index->add_option("--rrf-c", f.rrf_c, "Reciprocal rank fusion constant (default 60)");
    index->add_option("--ann-m", f.ann_m, "HNSW neighbor degree (default 16)");
    index->add_option("--ef-c", f.ef_c, "HNSW construction beam (default 200)");
    index->add_option("--ef-s", f.ef_s, "HNSW search beam (default 128)");
    index->add_option("--exact-threshold", f.exact_threshold, "Use exact search below this many chunks (default 10000)");

    auto add_retrieval = [&](CLI::App* sub) {
        sub->add_option("--k", f.k, "Number of chunks to retrieve (default 50)");
        sub->add_option("--overfetch", f.overfetch, "Candidate multiplier per retriever (default 4)");
        sub->add_option("--principal", f.principal, "Only retrieve documents readable by this principal");
    };

    auto* query = app.add_subcommand("query", "Hybrid retrieval for one query");
    query->add_option("--q", f.question, "Query text")->required();
    add_retrieval(query);

    auto* ask = app.add_subcommand("ask", "Grounded answer with citations");
    ask->add_option("--q", f.question, "Question");
    ask->add_option("--questions", f.questions_file, "Questions JSONL; writes a runs JSONL");
    ask->add_option("--runs-out", f.runs_out, "Runs JSONL output path (default stdout)");
    ask->add_option("--system", f.system, "System name recorded in runs");
    ask->add_option("--max-regenerations", f.max_regenerations, "Regeneration cap (default 2)");
    ask->add_option("--support-threshold", f.support_threshold, "Supported-token fraction required (default 0.6)");
    ask->add_option("--ngram-n", f.ngram_n, "Attribution n-gram size (default 3)");
    ask->add_flag("--timings", f.timings, "Include stage timings in the trace");
    add_retrieval(ask);

    auto* sql = app.add_subcommand("sql", "Answer a question over a SQLite database");
    sql->add_option("--q", f.question, "Question")->required();
    sql->add_option("--db", f.db, "SQLite database file (opened read-only)")->required();
    sql->add_option("--max-retries", f.max_retries, "Regenerations after the first attempt (default 3)");
    sql->add_option("--threshold", f.threshold, "Rating needed to accept a query (default 0.6)");
    sql->add_flag("--allow-empty", f.allow_empty, "Accept empty result tables");
    sql->add_flag("--verbose", f.verbose, "Print the result table ahead of the narrative");
    sql->add_option("--timeout-ms", f.timeout_ms, "Statement timeout in milliseconds (default 5000)");
    sql->add_option("--max-rows", f.max_rows, "Row cap per result (default 1000)");

    auto* er = app.add_subcommand("eval-retrieval", "Recall@k / Precision@k benchmark");
    er->add_option("--qa", f.qa, "QA dataset JSONL, optionally name=path; repeatable");
    er->add_option("--ks", f.ks, "Comma-separated k values (default 1,2,4,8,16,50)")->delimiter(',');
    er->add_option("--mode", f.mode, "Retriever: hybrid | lexical | dense")->check(CLI::IsMember({"hybrid", "lexical", "dense"}));
    er->add_option("--principal", f.principal, "Only retrieve documents readable by this principal");
    er->add_option("--from-table", f.from_table, "Render a published-table JSON instead of running");
    er->add_option("--out", f.out, "Write the JSON report here");
    er->add_option("--out-text", f.out_text, "Write the text table here");

    auto* et = app.add_subcommand("eval-trace", "Attribution metrics over a runs JSONL");
    et->add_option("--runs", f.runs, "Runs JSONL");
    et->add_option("--ngram-n", f.ngram_n, "Attribution n-gram size (default 3)");
    et->add_option("--from-table", f.from_table, "Render a published-table JSON instead of scoring");
    et->add_option("--out", f.out, "Write the JSON report here");
    et->add_option("--out-text", f.out_text, "Write the text table here");

    auto* version = app.add_subcommand("version", "Print tool and index format versions");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        print_error(io, "UsageError", e.what(), 1);
        return 1;
    }

    try {
        if (*ingest) return cmd_ingest(f, io);
        if (*index) return cmd_index(f, io);
        if (*query) return cmd_query(f, io);
        if (*ask) return cmd_ask(f, io);
        if (*sql) return cmd_sql(f, io);
        if (*er) return cmd_eval_retrieval(f, io);
        if (*et) return cmd_eval_trace(f, io);
        if (*version) return cmd_version(f, io);
    } catch (const Error& e) {
        const int code = exit_code_for(e.code());
        print_error(io, e.name(), e.what(), code);
        return code;
    } catch (const std::filesystem::filesystem_error& e) {
        print_error(io, "FilesystemError", e.what(), 2);
        return 2;
    } catch (const std::exception& e) {
        print_error(io, "InternalError", e.what(), 2);
        return 2;
    }
    return 1;
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

} // namespace esap::cli
