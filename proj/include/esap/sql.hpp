#pragma once

#include <sqlite3.h>

#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "esap/error.hpp"
#include "esap/text.hpp"

namespace esap {

using json = nlohmann::json;

/// SQL cell value: NULL, integer, real or text.
using SqlValue = std::variant<std::monostate, std::int64_t, double, std::string>;

inline bool is_numeric(const SqlValue& v) {
    return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v);
}

inline double as_double(const SqlValue& v) {
    if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    if (auto* d = std::get_if<double>(&v)) return *d;
    return 0.0;
}

inline std::string to_display(const SqlValue& v) {
    struct Visitor {
        std::string operator()(std::monostate) const { return "NULL"; }
        std::string operator()(std::int64_t i) const { return std::to_string(i); }
        std::string operator()(double d) const {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.15g", d);
            return buf;
        }
        std::string operator()(const std::string& s) const { return s; }
    };
    return std::visit(Visitor{}, v);
}

inline json to_json_value(const SqlValue& v) {
    struct Visitor {
        json operator()(std::monostate) const { return nullptr; }
        json operator()(std::int64_t i) const { return i; }
        json operator()(double d) const { return d; }
        json operator()(const std::string& s) const { return s; }
    };
    return std::visit(Visitor{}, v);
}

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::string> declared_types; ///< empty for computed columns
    std::vector<std::vector<SqlValue>> rows;
    bool truncated = false;
    double duration_ms = 0.0;

    bool empty() const noexcept { return rows.empty(); }
};

inline json to_json(const ResultTable& t, bool with_timing = false) {
    json rows = json::array();
    for (const auto& r : t.rows) {
        json row = json::array();
        for (const auto& v : r) row.push_back(to_json_value(v));
        rows.push_back(std::move(row));
    }
    json j{{"columns", t.columns}, {"rows", std::move(rows)}, {"truncated", t.truncated}};
    if (with_timing) j["duration_ms"] = t.duration_ms;
    return j;
}

namespace detail {

struct SqliteCloser {
    void operator()(sqlite3* db) const noexcept { sqlite3_close_v2(db); }
};
struct StmtFinalizer {
    void operator()(sqlite3_stmt* s) const noexcept { sqlite3_finalize(s); }
};

/// Strips leading whitespace and SQL comments.
inline std::string_view skip_sql_noise(std::string_view s) {
    for (;;) {
        std::size_t i = 0;
        while (i < s.size() && (static_cast<unsigned char>(s[i]) <= ' ' || s[i] == ';')) ++i;
        s.remove_prefix(i);
        if (s.rfind("--", 0) == 0) {
            const auto nl = s.find('\n');
            s = nl == std::string_view::npos ? std::string_view{} : s.substr(nl + 1);
        } else if (s.rfind("/*", 0) == 0) {
            const auto end = s.find("*/");
            s = end == std::string_view::npos ? std::string_view{} : s.substr(end + 2);
        } else {
            return s;
        }
    }
}

inline std::string leading_keyword(std::string_view sql) {
    sql = skip_sql_noise(sql);
    std::string kw;
    for (char c : sql) {
        if (!std::isalpha(static_cast<unsigned char>(c))) break;
        kw.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return kw;
}

} // namespace detail

/// Read-only SQL execution against an embedded SQLite database file.
/// Only a single SELECT (or WITH ... SELECT) statement is accepted.
class SqlExecutor {
public:
    struct Options {
        std::chrono::milliseconds timeout{5000};
        std::size_t max_rows = 1000;
    };

    explicit SqlExecutor(const std::filesystem::path& db_path) : SqlExecutor(db_path, Options{}) {}

    SqlExecutor(const std::filesystem::path& db_path, Options opts) : opts_(opts), path_(db_path) {
        sqlite3* raw = nullptr;
        const int rc = sqlite3_open_v2(db_path.string().c_str(), &raw, SQLITE_OPEN_READONLY | SQLITE_OPEN_FULLMUTEX,
                                       nullptr);
        db_.reset(raw);
        if (rc != SQLITE_OK) {
            throw Error(Errc::SqlRuntimeError, "cannot open database " + db_path.string() + ": " +
                                                   (raw ? sqlite3_errmsg(raw) : "out of memory"));
        }
    }

    const std::filesystem::path& path() const noexcept { return path_; }
    const Options& options() const noexcept { return opts_; }

    ResultTable execute(std::string_view sql) const {
        static constexpr std::string_view kMutating[] = {
            "INSERT", "UPDATE", "DELETE", "REPLACE", "CREATE", "DROP",   "ALTER",     "ATTACH", "DETACH",
            "PRAGMA", "VACUUM", "REINDEX", "ANALYZE", "BEGIN", "COMMIT", "ROLLBACK", "SAVEPOINT", "RELEASE", "END"};
        const auto kw = detail::leading_keyword(sql);
        for (auto m : kMutating) {
            if (kw == m) throw Error(Errc::NonSelectRejected, "only SELECT statements are allowed, got " + kw);
        }

        const auto start = std::chrono::steady_clock::now();
        const std::string stmt_text(detail::skip_sql_noise(sql));
        sqlite3_stmt* raw = nullptr;
        const char* tail = nullptr;
        int rc = sqlite3_prepare_v2(db_.get(), stmt_text.c_str(), static_cast<int>(stmt_text.size()), &raw, &tail);
        std::unique_ptr<sqlite3_stmt, detail::StmtFinalizer> stmt(raw);
        if (rc != SQLITE_OK) {
            const std::string msg = sqlite3_errmsg(db_.get());
            const bool syntax = msg.find("syntax error") != std::string::npos ||
                                msg.find("incomplete input") != std::string::npos ||
                                msg.find("unrecognized token") != std::string::npos;
            throw Error(syntax ? Errc::SqlSyntaxError : Errc::SqlRuntimeError, msg);
        }
        if (!stmt) throw Error(Errc::SqlSyntaxError, "empty statement");
        if (tail && !detail::skip_sql_noise(tail).empty()) {
            throw Error(Errc::NonSelectRejected, "multiple statements are not allowed");
        }
        if (!sqlite3_stmt_readonly(stmt.get()) || (kw != "SELECT" && kw != "WITH" && kw != "VALUES")) {
            throw Error(Errc::NonSelectRejected, "statement is not a read-only SELECT");
        }

        struct Deadline {
            std::chrono::steady_clock::time_point at;
            bool hit = false;
        } deadline{start + opts_.timeout};
        sqlite3_progress_handler(
            db_.get(), 1000,
            [](void* p) -> int {
                auto* d = static_cast<Deadline*>(p);
                if (std::chrono::steady_clock::now() > d->at) {
                    d->hit = true;
                    return 1;
                }
                return 0;
            },
            &deadline);
        struct HandlerReset {
            sqlite3* db;
            ~HandlerReset() { sqlite3_progress_handler(db, 0, nullptr, nullptr); }
        } reset{db_.get()};

        ResultTable t;
        const int ncol = sqlite3_column_count(stmt.get());
        for (int c = 0; c < ncol; ++c) {
            t.columns.emplace_back(sqlite3_column_name(stmt.get(), c));
            const char* decl = sqlite3_column_decltype(stmt.get(), c);
            t.declared_types.emplace_back(decl ? decl : "");
        }
        while ((rc = sqlite3_step(stmt.get())) == SQLITE_ROW) {
            if (t.rows.size() >= opts_.max_rows) {
                t.truncated = true;
                break;
            }
            std::vector<SqlValue> row;
            row.reserve(static_cast<std::size_t>(ncol));
            for (int c = 0; c < ncol; ++c) {
                switch (sqlite3_column_type(stmt.get(), c)) {
                case SQLITE_INTEGER: row.emplace_back(static_cast<std::int64_t>(sqlite3_column_int64(stmt.get(), c))); break;
                case SQLITE_FLOAT: row.emplace_back(sqlite3_column_double(stmt.get(), c)); break;
                case SQLITE_NULL: row.emplace_back(std::monostate{}); break;
                default: {
                    const auto* txt = reinterpret_cast<const char*>(sqlite3_column_text(stmt.get(), c));
                    row.emplace_back(std::string(txt ? txt : ""));
                }
                }
            }
            t.rows.push_back(std::move(row));
        }
        if (rc != SQLITE_ROW && rc != SQLITE_DONE) {
            if (deadline.hit) throw Error(Errc::Timeout, "statement exceeded " + std::to_string(opts_.timeout.count()) + " ms");
            throw Error(Errc::SqlRuntimeError, sqlite3_errmsg(db_.get()));
        }
        t.duration_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return t;
    }

    sqlite3* handle() const noexcept { return db_.get(); }

private:
    Options opts_;
    std::filesystem::path path_;
    std::unique_ptr<sqlite3, detail::SqliteCloser> db_;
};

/// Creates (or replaces) a database file from a SQL script. Fixture setup only;
/// the executor itself never opens databases writable.
inline void create_database(const std::filesystem::path& path, const std::string& script) {
    std::filesystem::remove(path);
    sqlite3* raw = nullptr;
    if (sqlite3_open(path.string().c_str(), &raw) != SQLITE_OK) {
        std::string msg = raw ? sqlite3_errmsg(raw) : "out of memory";
        sqlite3_close(raw);
        throw Error(Errc::SqlRuntimeError, "cannot create " + path.string() + ": " + msg);
    }
    std::unique_ptr<sqlite3, detail::SqliteCloser> db(raw);
    char* err = nullptr;
    if (sqlite3_exec(db.get(), script.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown";
        sqlite3_free(err);
        throw Error(Errc::SqlRuntimeError, "seed script failed: " + msg);
    }
}

/// FNV-1a over the file bytes; used to prove read-only execution.
inline std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text::to_hex(text::fnv1a64(bytes));
}

inline ResultTable execute_sql(std::string_view statement, const SqlExecutor& executor) {
    return executor.execute(statement);
}

} // namespace esap
