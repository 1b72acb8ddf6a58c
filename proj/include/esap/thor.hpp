#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "esap/ports.hpp"
#include "esap/prompts.hpp"
#include "esap/sql.hpp"

/// Structured-data agent: SQL generation from schema context, read-only
/// execution, rating and bounded self-correction, then narrative insight.
namespace esap::thor {

using prompts::TaskType;

struct Column {
    std::string name;
    std::string type;
};

struct ForeignKey {
    std::string table, column, ref_table, ref_column;
};

struct SchemaSnapshot {
    std::map<std::string, std::vector<Column>> tables;
    std::vector<ForeignKey> foreign_keys;
    std::map<std::string, std::int64_t> row_counts;

    bool empty() const noexcept { return tables.empty(); }

    /// `table(col:type, ...)` per table in name order, then `fk a.x -> b.y` lines.
    std::string serialize() const {
        std::string out;
        for (const auto& [name, cols] : tables) {
            out += name + "(";
            for (std::size_t i = 0; i < cols.size(); ++i) {
                if (i) out += ", ";
                out += cols[i].name + ":" + (cols[i].type.empty() ? "ANY" : cols[i].type);
            }
            out += ")";
            if (auto it = row_counts.find(name); it != row_counts.end()) out += " -- ~" + std::to_string(it->second) + " rows";
            out += "\n";
        }
        for (const auto& fk : foreign_keys) {
            out += "fk " + fk.table + "." + fk.column + " -> " + fk.ref_table + "." + fk.ref_column + "\n";
        }
        return out;
    }

    /// Every foreign key must point at an existing table and column.
    void check() const {
        for (const auto& fk : foreign_keys) {
            auto it = tables.find(fk.ref_table);
            const bool ok = it != tables.end() && std::any_of(it->second.begin(), it->second.end(),
                                                             [&](const Column& c) { return c.name == fk.ref_column; });
            if (!ok) {
                throw Error(Errc::DatasetFormatError,
                            "foreign key " + fk.table + "." + fk.column + " references missing " + fk.ref_table + "." + fk.ref_column);
            }
        }
    }
};

/// Reads tables, columns, foreign keys and row counts through the read-only executor.
inline SchemaSnapshot introspect(const SqlExecutor& db) {
    SchemaSnapshot s;
    const auto tables = db.execute("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name");
    for (const auto& row : tables.rows) {
        const auto name = std::get<std::string>(row[0]);
        auto& cols = s.tables[name];
        const auto info = db.execute("SELECT name, type FROM pragma_table_info('" + name + "') ORDER BY cid");
        for (const auto& c : info.rows) cols.push_back({std::get<std::string>(c[0]), to_display(c[1])});
        const auto fks = db.execute("SELECT \"from\", \"table\", \"to\" FROM pragma_foreign_key_list('" + name + "') ORDER BY id, seq");
        for (const auto& f : fks.rows) s.foreign_keys.push_back({name, to_display(f[0]), to_display(f[1]), to_display(f[2])});
        const auto count = db.execute("SELECT COUNT(*) FROM \"" + name + "\"");
        s.row_counts[name] = std::get<std::int64_t>(count.rows.at(0).at(0));
    }
    s.check();
    return s;
}

struct Config {
    std::size_t max_retries = 3;
    double threshold = 0.6;
    bool allow_empty = false;
    bool verbose = false;
};

struct SqlFailure {
    std::string kind;
    std::string message;
};

struct SqlAttempt {
    std::size_t number = 0; ///< 1-based
    std::string sql;
    std::optional<ResultTable> table;
    std::optional<SqlFailure> error;
    double rating = 0.0;
    std::vector<std::string> reasons;
};

struct ThorAttemptLog {
    std::string question;
    TaskType task = TaskType::Structured;
    std::vector<SqlAttempt> attempts;
    bool answered = false;
    std::string narrative;
};

inline json to_json(const SqlAttempt& a) {
    json j{{"attempt", a.number}, {"sql", a.sql}, {"rating", a.rating}, {"reasons", a.reasons}};
    if (a.table) j["result"] = to_json(*a.table);
    if (a.error) j["error"] = {{"kind", a.error->kind}, {"message", a.error->message}};
    return j;
}

inline json to_json(const ThorAttemptLog& log) {
    json attempts = json::array();
    for (const auto& a : log.attempts) attempts.push_back(to_json(a));
    return json{{"question", log.question},
                {"task", prompts::task_name(log.task)},
                {"attempts", std::move(attempts)},
                {"status", log.answered ? "answered" : "failed"},
                {"narrative", log.narrative}};
}

/// Raised by run() when no attempt reached the threshold; carries the log.
class ThorFailed : public Error {
public:
    explicit ThorFailed(ThorAttemptLog log)
        : Error(Errc::ThorFailed, "no SQL attempt reached the rating threshold after " +
                                      std::to_string(log.attempts.size()) + " attempts"),
          log_(std::move(log)) {}

    const ThorAttemptLog& log() const noexcept { return log_; }

private:
    ThorAttemptLog log_;
};

struct Route {
    TaskType task = TaskType::Other;
    bool fallback = false;
};

/// Classifies through the chat port; without a port, or when the port fails or
/// answers outside the label set, uses keyword rules.
inline Route route(const std::string& question, ChatModel* chat) {
    if (text::trim(question).empty()) throw Error(Errc::ConfigError, "question must not be empty");
    if (chat) {
        try {
            const auto label = text::to_lower_ascii(text::trim(chat->chat(make_request(prompts::kRoute, question)).text));
            if (label.find("structured") != std::string::npos) return {TaskType::Structured, false};
            if (label.find("document") != std::string::npos) return {TaskType::Document, false};
            if (label.find("other") != std::string::npos) return {TaskType::Other, false};
        } catch (const Error&) {
        }
    }
    return {prompts::classify_by_keywords(question), true};
}

/// Removes Markdown code fences and a trailing semicolon.
inline std::string strip_fences(std::string_view raw) {
    std::string s(raw);
    const auto open = s.find("```");
    if (open != std::string::npos) {
        auto body_start = s.find('\n', open);
        body_start = body_start == std::string::npos ? open + 3 : body_start + 1;
        const auto close = s.find("```", body_start);
        s = s.substr(body_start, close == std::string::npos ? std::string::npos : close - body_start);
    }
    s = text::trim(s);
    while (!s.empty() && (s.back() == ';' || static_cast<unsigned char>(s.back()) <= ' ')) s.pop_back();
    return s;
}

namespace detail {

inline std::string table_preview(const ResultTable& t, std::size_t max_rows = 20) {
    std::string out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? " | " : "") + t.columns[i];
    out += "\n";
    for (std::size_t r = 0; r < t.rows.size() && r < max_rows; ++r) {
        for (std::size_t i = 0; i < t.rows[r].size(); ++i) out += (i ? " | " : "") + to_display(t.rows[r][i]);
        out += "\n";
    }
    if (t.rows.size() > max_rows) out += "... (" + std::to_string(t.rows.size()) + " rows)\n";
    return out;
}

} // namespace detail

/// Builds the generation prompt. Retries append each prior attempt with its
/// error text or rating feedback verbatim.
inline std::string sql_prompt(const std::string& question, const SchemaSnapshot& schema,
                              const std::vector<SqlAttempt>& prior) {
    std::string p = "# SCHEMA\n" + schema.serialize() + "# QUESTION\n" + question + "\n";
    for (const auto& a : prior) {
        p += "# PREVIOUS ATTEMPT " + std::to_string(a.number) + "\nSQL: " + a.sql + "\n";
        if (a.error) {
            p += "ERROR (" + a.error->kind + "): " + a.error->message + "\n";
        } else {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2f", a.rating);
            p += "RATING: " + std::string(buf);
            for (const auto& r : a.reasons) p += "; " + r;
            p += "\n";
        }
    }
    if (!prior.empty()) p += "# TASK\nReconstruct the intent of the question and return a corrected query.\n";
    return p;
}

inline std::string generate_sql(const std::string& question, const SchemaSnapshot& schema,
                                const std::vector<SqlAttempt>& prior, ChatModel& chat) {
    if (schema.empty()) throw Error(Errc::DatasetFormatError, "schema has no tables");
    auto sql = strip_fences(chat.chat(make_request(prompts::kSql, sql_prompt(question, schema, prior))).text);
    if (sql.empty()) throw Error(Errc::ModelRefusal, "model returned no SQL");
    return sql;
}

struct Rating {
    double score = 0.0;
    std::vector<std::string> reasons;
};

/// Hard zero for execution errors and (unless allowed) empty tables; otherwise
/// the model's rubric score clamped to [0, 1]. Without a usable model answer
/// a non-empty table scores 1.
inline Rating rate(const std::string& question, const std::string& sql, const std::optional<ResultTable>& table,
                   const std::optional<SqlFailure>& error, ChatModel& chat, const Config& cfg) {
    if (error || !table) return {0.0, {"execution error" + (error ? ": " + error->message : std::string())}};
    if (table->empty() && !cfg.allow_empty) return {0.0, {"empty result"}};
    const std::string req = "QUESTION: " + question + "\nSQL: " + sql + "\n# RESULT\n" + detail::table_preview(*table);
    try {
        const auto reply = chat.chat(make_request(prompts::kRate, req)).text;
        static const std::regex number(R"([-+]?(\d+(\.\d*)?|\.\d+))");
        std::smatch m;
        if (std::regex_search(reply, m, number)) {
            const double v = std::clamp(std::stod(m.str()), 0.0, 1.0);
            std::string why = text::trim(std::string_view(reply).substr(static_cast<std::size_t>(m.position() + m.length())));
            return {v, {why.empty() ? "model rating" : why}};
        }
    } catch (const Error&) {
    } catch (const std::out_of_range&) {
    }
    return {1.0, {"heuristic: model rating unavailable"}};
}

inline std::string errc_kind(const Error& e) { return std::string(e.name()); }

/// generate -> execute -> rate until the rating reaches the threshold or
/// 1 + max_retries attempts are logged.
inline ThorAttemptLog self_correct_loop(const std::string& question, const SchemaSnapshot& schema,
                                        const SqlExecutor& db, ChatModel& chat, const Config& cfg) {
    ThorAttemptLog log;
    log.question = question;
    for (std::size_t n = 1; n <= cfg.max_retries + 1; ++n) {
        SqlAttempt a;
        a.number = n;
        try {
            a.sql = generate_sql(question, schema, log.attempts, chat);
            a.table = db.execute(a.sql);
        } catch (const Error& e) {
            a.error = SqlFailure{errc_kind(e), e.what()};
        }
        auto r = rate(question, a.sql, a.table, a.error, chat, cfg);
        a.rating = r.score;
        a.reasons = std::move(r.reasons);
        log.attempts.push_back(std::move(a));
        if (log.attempts.back().rating >= cfg.threshold) {
            log.answered = true;
            break;
        }
    }
    return log;
}

struct KeyValue {
    std::string name;  ///< "max(col)", "min(col)" or "total(col)"
    SqlValue value;
    std::string label; ///< first text cell of the row holding the extreme, if any
};

struct Trend {
    std::string column;
    std::string direction; ///< "increasing" or "decreasing"
    std::string over;      ///< temporal column
};

struct Insight {
    std::string narrative;
    std::vector<KeyValue> key_values;
    std::vector<Trend> trends;
};

inline json to_json(const Insight& in) {
    json kv = json::array();
    for (const auto& k : in.key_values) kv.push_back({{"name", k.name}, {"value", to_json_value(k.value)}, {"label", k.label}});
    json tr = json::array();
    for (const auto& t : in.trends) tr.push_back({{"column", t.column}, {"direction", t.direction}, {"over", t.over}});
    return json{{"narrative", in.narrative}, {"key_values", std::move(kv)}, {"trends", std::move(tr)}};
}

namespace detail {

inline std::vector<std::size_t> numeric_columns(const ResultTable& t) {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        bool any = false, ok = true;
        for (const auto& row : t.rows) {
            if (std::holds_alternative<std::monostate>(row[c])) continue;
            if (!is_numeric(row[c])) {
                ok = false;
                break;
            }
            any = true;
        }
        if (ok && any) out.push_back(c);
    }
    return out;
}

inline std::optional<std::size_t> label_column(const ResultTable& t) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        if (!t.rows.empty() && std::holds_alternative<std::string>(t.rows.front()[c])) return c;
    }
    return std::nullopt;
}

inline std::optional<std::size_t> temporal_column(const ResultTable& t) {
    static constexpr std::string_view kNameHints[] = {"date", "time", "month", "year", "day", "week", "quarter", "period"};
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        const auto decl = text::to_lower_ascii(c < t.declared_types.size() ? t.declared_types[c] : "");
        if (decl.find("date") != std::string::npos || decl.find("time") != std::string::npos) return c;
        const auto name = text::to_lower_ascii(t.columns[c]);
        for (auto h : kNameHints) {
            if (name.find(h) != std::string::npos) return c;
        }
    }
    return std::nullopt;
}

inline bool value_less(const SqlValue& a, const SqlValue& b) {
    if (is_numeric(a) && is_numeric(b)) return as_double(a) < as_double(b);
    return to_display(a) < to_display(b);
}

inline SqlValue column_total(const ResultTable& t, std::size_t c) {
    bool all_int = true;
    std::int64_t isum = 0;
    double dsum = 0.0;
    for (const auto& row : t.rows) {
        if (auto* i = std::get_if<std::int64_t>(&row[c])) {
            isum += *i;
            dsum += static_cast<double>(*i);
        } else if (auto* d = std::get_if<double>(&row[c])) {
            all_int = false;
            dsum += *d;
        }
    }
    if (all_int) return isum;
    return dsum;
}

} // namespace detail

/// Deterministic key values (max/min/total per numeric column) and strict
/// monotone trends over the first temporal column (3 or more rows).
inline Insight extract_insight(const ResultTable& t) {
    if (t.empty()) throw Error(Errc::EmptyResult, "cannot interpret an empty result");
    Insight in;
    const auto label = detail::label_column(t);
    const auto temporal = detail::temporal_column(t);
    for (auto c : detail::numeric_columns(t)) {
        if (temporal && *temporal == c) continue;
        std::size_t imax = t.rows.size(), imin = t.rows.size();
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            if (!is_numeric(t.rows[r][c])) continue;
            if (imax == t.rows.size() || as_double(t.rows[r][c]) > as_double(t.rows[imax][c])) imax = r;
            if (imin == t.rows.size() || as_double(t.rows[r][c]) < as_double(t.rows[imin][c])) imin = r;
        }
        auto lbl = [&](std::size_t r) { return label ? to_display(t.rows[r][*label]) : std::string(); };
        const auto& col = t.columns[c];
        in.key_values.push_back({"max(" + col + ")", t.rows[imax][c], lbl(imax)});
        in.key_values.push_back({"min(" + col + ")", t.rows[imin][c], lbl(imin)});
        in.key_values.push_back({"total(" + col + ")", detail::column_total(t, c), ""});

        if (temporal && t.rows.size() >= 3) {
            std::vector<std::size_t> order(t.rows.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return detail::value_less(t.rows[a][*temporal], t.rows[b][*temporal]);
            });
            bool inc = true, dec = true;
            for (std::size_t i = 1; i < order.size(); ++i) {
                const auto& prev = t.rows[order[i - 1]][c];
                const auto& cur = t.rows[order[i]][c];
                if (!is_numeric(prev) || !is_numeric(cur)) {
                    inc = dec = false;
                    break;
                }
                if (!(as_double(cur) > as_double(prev))) inc = false;
                if (!(as_double(cur) < as_double(prev))) dec = false;
            }
            if (inc) in.trends.push_back({col, "increasing", t.columns[*temporal]});
            if (dec) in.trends.push_back({col, "decreasing", t.columns[*temporal]});
        }
    }
    return in;
}

/// Checks every extreme against the table cells and every total against the
/// recomputed column sum.
inline bool verify_insight(const Insight& in, const ResultTable& t) {
    for (const auto& kv : in.key_values) {
        const auto open = kv.name.find('(');
        const auto col_name = kv.name.substr(open + 1, kv.name.size() - open - 2);
        const auto it = std::find(t.columns.begin(), t.columns.end(), col_name);
        if (it == t.columns.end()) return false;
        const auto c = static_cast<std::size_t>(it - t.columns.begin());
        if (kv.name.rfind("total(", 0) == 0) {
            if (detail::column_total(t, c) != kv.value) return false;
        } else if (std::none_of(t.rows.begin(), t.rows.end(), [&](const auto& row) { return row[c] == kv.value; })) {
            return false;
        }
    }
    return true;
}

inline std::string templated_narrative(const ResultTable& t, const Insight& in) {
    std::string out;
    if (t.rows.size() == 1) {
        out = "The result has one row:";
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            out += (c ? ", " : " ") + t.columns[c] + " = " + to_display(t.rows[0][c]);
        }
        return out + ".";
    }
    out = std::to_string(t.rows.size()) + " rows returned.";
    for (std::size_t i = 0; i + 2 < in.key_values.size() + 2 && i < in.key_values.size(); i += 3) {
        const auto& mx = in.key_values[i];
        const auto& mn = in.key_values[i + 1];
        const auto& tot = in.key_values[i + 2];
        const auto col = mx.name.substr(4, mx.name.size() - 5);
        out += " Highest " + col + " is " + to_display(mx.value) + (mx.label.empty() ? "" : " (" + mx.label + ")") +
               ", lowest is " + to_display(mn.value) + (mn.label.empty() ? "" : " (" + mn.label + ")") + ", total " +
               to_display(tot.value) + ".";
    }
    for (const auto& tr : in.trends) out += " " + tr.column + " is " + tr.direction + " over " + tr.over + ".";
    return out;
}

/// Key values and trends are computed locally; the narrative comes from the
/// chat port, falling back to the templated text when the port fails.
inline Insight interpret(const std::string& question, const ResultTable& t, ChatModel& chat) {
    Insight in = extract_insight(t);
    const auto draft = templated_narrative(t, in);
    const std::string req = "QUESTION: " + question + "\n# TABLE\n" + detail::table_preview(t) + "# DRAFT\n" + draft;
    try {
        auto text = text::trim(chat.chat(make_request(prompts::kInterpret, req)).text);
        in.narrative = text.empty() ? draft : text;
    } catch (const Error&) {
        in.narrative = draft;
    }
    return in;
}

struct Answer {
    std::string output;
    Insight insight;
    ResultTable table;
    ThorAttemptLog log;
};

inline json to_json(const Answer& a) {
    return json{{"output", a.output}, {"insight", to_json(a.insight)}, {"result", to_json(a.table)}, {"log", to_json(a.log)}};
}

/// Self-correction loop then interpretation. Verbose output echoes the table
/// ahead of the narrative. Throws ThorFailed when the loop fails.
inline Answer run(const std::string& question, const SchemaSnapshot& schema, const SqlExecutor& db, ChatModel& chat,
                  const Config& cfg, TaskType routed = TaskType::Structured) {
    auto log = self_correct_loop(question, schema, db, chat, cfg);
    log.task = routed;
    if (!log.answered) throw ThorFailed(std::move(log));
    Answer a;
    a.table = *log.attempts.back().table;
    if (a.table.empty()) {
        a.insight.narrative = "The query returned no rows.";
    } else {
        a.insight = interpret(question, a.table, chat);
    }
    log.narrative = a.insight.narrative;
    a.output = cfg.verbose ? detail::table_preview(a.table, a.table.rows.size()) + "\n" + a.insight.narrative
                           : a.insight.narrative;
    a.log = std::move(log);
    return a;
}

} // namespace esap::thor
