#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "esap/thor.hpp"

namespace fs = std::filesystem;
using namespace esap;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path chinook_db() {
    static const fs::path path = [] {
        const auto dir = fs::temp_directory_path() / ("esap_thor_" + std::to_string(::getpid()));
        fs::create_directories(dir);
        const auto p = dir / "chinook.db";
        fs::remove(p);
        create_database(p, slurp(fs::path(ESAP_FIXTURES_DIR) / "sql/chinook.sql"));
        return p;
    }();
    return path;
}

std::string squash(const std::string& s) {
    std::string out;
    for (char c : s) {
        const bool space = c == ' ' || c == '\n' || c == '\t';
        if (space && (out.empty() || out.back() == ' ')) continue;
        out.push_back(space ? ' ' : c);
    }
    return out;
}

ResultTable table(std::vector<std::string> cols, std::vector<std::vector<SqlValue>> rows) {
    ResultTable t;
    t.columns = std::move(cols);
    t.declared_types.assign(t.columns.size(), "");
    t.rows = std::move(rows);
    return t;
}

} // namespace

TEST(Route, KeywordFallback) {
    EXPECT_EQ(thor::route("Show me the pending deliveries by month", nullptr).task, prompts::TaskType::Structured);
    EXPECT_EQ(thor::route("What are the internal control requirements for audit processes?", nullptr).task,
              prompts::TaskType::Document);
    ScriptedModel down;
    const auto r = thor::route("average revenue per region last quarter", &down);
    EXPECT_EQ(r.task, prompts::TaskType::Structured);
    EXPECT_TRUE(r.fallback);
}

TEST(Route, ModelLabelWins) {
    ScriptedModel m{"document"};
    const auto r = thor::route("total revenue by month", &m);
    EXPECT_EQ(r.task, prompts::TaskType::Document);
    EXPECT_FALSE(r.fallback);
}

TEST(Schema, IntrospectsFixture) {
    SqlExecutor db(chinook_db());
    const auto s = thor::introspect(db);
    ASSERT_TRUE(s.tables.count("chinook_track"));
    EXPECT_EQ(s.row_counts.at("chinook_track"), 5);
    EXPECT_FALSE(s.foreign_keys.empty());
    EXPECT_NE(s.serialize().find("chinook_track(track_id:INTEGER"), std::string::npos);
    EXPECT_NO_THROW(s.check());
}

TEST(Schema, DanglingForeignKeyRejected) {
    thor::SchemaSnapshot s;
    s.tables["a"] = {{"id", "INTEGER"}};
    s.foreign_keys.push_back({"a", "id", "missing", "id"});
    EXPECT_THROW(s.check(), Error);
}

TEST(GenerateSql, StripsFences) {
    EXPECT_EQ(thor::strip_fences("```sql\nSELECT 1;\n```"), "SELECT 1");
    EXPECT_EQ(thor::strip_fences("SELECT 2"), "SELECT 2");
}

TEST(GenerateSql, PromptFourFixture) {
    SqlExecutor db(chinook_db());
    auto m = ScriptedModel::from_file(fs::path(ESAP_FIXTURES_DIR) / "scripts/prompt4_script.json");
    const auto sql = thor::generate_sql("Which track has the highest unit price?", thor::introspect(db), {}, m);
    EXPECT_EQ(squash(sql), "SELECT name, unit_price FROM chinook_track ORDER BY unit_price DESC LIMIT 1");
}

TEST(Rate, HardZeroesAndParsedScores) {
    thor::Config cfg;
    ScriptedModel m{"0.9 looks right", "rating: 7"};
    const auto ok = table({"x"}, {{std::int64_t{1}}});
    EXPECT_EQ(thor::rate("q", "s", std::nullopt, thor::SqlFailure{"SqlSyntaxError", "bad"}, m, cfg).score, 0.0);
    EXPECT_EQ(thor::rate("q", "s", table({"x"}, {}), std::nullopt, m, cfg).score, 0.0);
    EXPECT_DOUBLE_EQ(thor::rate("q", "s", ok, std::nullopt, m, cfg).score, 0.9);
    EXPECT_DOUBLE_EQ(thor::rate("q", "s", ok, std::nullopt, m, cfg).score, 1.0);
    EXPECT_DOUBLE_EQ(thor::rate("q", "s", ok, std::nullopt, m, cfg).score, 1.0);
    EXPECT_EQ(m.transcript().size(), 2u);
}

TEST(Loop, FailFailSucceed) {
    SqlExecutor db(chinook_db());
    ScriptedModel m{"SELEC 1", "SELECT nope FROM chinook_track", "SELECT COUNT(*) FROM chinook_track", "0.95"};
    const auto log = thor::self_correct_loop("How many tracks are there?", thor::introspect(db), db, m, thor::Config{});
    EXPECT_TRUE(log.answered);
    ASSERT_EQ(log.attempts.size(), 3u);
    EXPECT_EQ(log.attempts[0].error->kind, "SqlSyntaxError");
    EXPECT_EQ(log.attempts[1].error->kind, "SqlRuntimeError");
    EXPECT_DOUBLE_EQ(log.attempts[2].rating, 0.95);
    const auto tr = m.transcript();
    EXPECT_NE(std::string(tr[1].request.user()).find("# PREVIOUS ATTEMPT 1"), std::string::npos);
    EXPECT_NE(std::string(tr[2].request.user()).find("# PREVIOUS ATTEMPT 2"), std::string::npos);
}

TEST(Loop, AlwaysFailingStopsAtCap) {
    SqlExecutor db(chinook_db());
    ScriptedModel m{"SELEC 1", "SELEC 2", "SELEC 3", "SELEC 4", "SELEC 5"};
    const auto log = thor::self_correct_loop("q", thor::introspect(db), db, m, thor::Config{});
    EXPECT_FALSE(log.answered);
    EXPECT_EQ(log.attempts.size(), 4u);
    EXPECT_EQ(m.remaining(), 1u);
}

TEST(Loop, FirstAttemptSuccessIssuesNoCorrection) {
    SqlExecutor db(chinook_db());
    ScriptedModel m{"SELECT 1", "1.0"};
    const auto log = thor::self_correct_loop("q", thor::introspect(db), db, m, thor::Config{});
    EXPECT_TRUE(log.answered);
    EXPECT_EQ(log.attempts.size(), 1u);
    for (const auto& ex : m.transcript()) EXPECT_EQ(std::string(ex.request.user()).find("PREVIOUS ATTEMPT"), std::string::npos);
}

TEST(Loop, LowRatingTriggersRetry) {
    SqlExecutor db(chinook_db());
    ScriptedModel m{"SELECT 1", "0.2 wrong table", "SELECT COUNT(*) FROM chinook_track", "0.9"};
    const auto log = thor::self_correct_loop("q", thor::introspect(db), db, m, thor::Config{});
    ASSERT_EQ(log.attempts.size(), 2u);
    EXPECT_NE(std::string(m.transcript()[2].request.user()).find("RATING: 0.20"), std::string::npos);
}

TEST(Loop, MutationAttemptsAreRejected) {
    const auto before = file_hash(chinook_db());
    SqlExecutor db(chinook_db());
    ScriptedModel m{"DELETE FROM chinook_track", "DROP TABLE chinook_track", "UPDATE chinook_track SET name='x'",
                    "INSERT INTO chinook_track VALUES (9,'x','y',1)"};
    const auto log = thor::self_correct_loop("q", thor::introspect(db), db, m, thor::Config{});
    EXPECT_FALSE(log.answered);
    for (const auto& a : log.attempts) EXPECT_EQ(a.error->kind, "NonSelectRejected");
    EXPECT_EQ(file_hash(chinook_db()), before);
}

TEST(Insight, MaxAndTotalFromTable) {
    const auto t = table({"label", "value"}, {{std::string("A"), std::int64_t{10}}, {std::string("B"), std::int64_t{30}}});
    const auto in = thor::extract_insight(t);
    const thor::KeyValue* max = nullptr;
    const thor::KeyValue* total = nullptr;
    for (const auto& kv : in.key_values) {
        if (kv.name == "max(value)") max = &kv;
        if (kv.name == "total(value)") total = &kv;
    }
    ASSERT_TRUE(max && total);
    EXPECT_EQ(std::get<std::int64_t>(max->value), 30);
    EXPECT_EQ(max->label, "B");
    EXPECT_EQ(std::get<std::int64_t>(total->value), 40);
    EXPECT_TRUE(thor::verify_insight(in, t));
}

TEST(Insight, SingleRowHasNoTrend) {
    const auto t = table({"name", "unit_price"}, {{std::string("Midnight Cipher"), 1.99}});
    const auto in = thor::extract_insight(t);
    EXPECT_TRUE(in.trends.empty());
    EXPECT_NE(thor::templated_narrative(t, in).find("Midnight Cipher"), std::string::npos);
}

TEST(Insight, IncreasingMonthlyTotals) {
    auto t = table({"month", "total"}, {{std::string("2025-01"), 5.0}, {std::string("2025-03"), 9.0}, {std::string("2025-02"), 7.0}});
    const auto in = thor::extract_insight(t);
    ASSERT_EQ(in.trends.size(), 1u);
    EXPECT_EQ(in.trends[0].direction, "increasing");
    EXPECT_EQ(in.trends[0].over, "month");
}

TEST(Insight, EmptyTableRejected) {
    EXPECT_THROW(thor::extract_insight(table({"x"}, {})), Error);
}

TEST(Interpret, FallsBackToTemplateWhenPortFails) {
    const auto t = table({"label", "value"}, {{std::string("A"), std::int64_t{10}}, {std::string("B"), std::int64_t{30}}});
    ScriptedModel down;
    const auto in = thor::interpret("Which label is largest?", t, down);
    EXPECT_FALSE(in.narrative.empty());
    EXPECT_NE(in.narrative.find("B"), std::string::npos);
}

TEST(Run, AlwaysFailingRaisesWithLog) {
    SqlExecutor db(chinook_db());
    ScriptedModel m{"SELEC 1", "SELEC 2", "SELEC 3", "SELEC 4"};
    try {
        thor::run("q", thor::introspect(db), db, m, thor::Config{});
        FAIL() << "expected ThorFailed";
    } catch (const thor::ThorFailed& e) {
        EXPECT_EQ(e.code(), Errc::ThorFailed);
        EXPECT_EQ(e.log().attempts.size(), 4u);
    }
}

TEST(Run, PromptFourNamesTopTrack) {
    SqlExecutor db(chinook_db());
    auto m = ScriptedModel::from_file(fs::path(ESAP_FIXTURES_DIR) / "scripts/prompt4_script.json");
    thor::Config cfg;
    cfg.verbose = true;
    const auto a = thor::run("Which track has the highest unit price?", thor::introspect(db), db, m, cfg);
    EXPECT_EQ(std::get<std::string>(a.table.rows.at(0).at(0)), "Midnight Cipher");
    EXPECT_LT(a.output.find("unit_price"), a.output.find(a.insight.narrative));
}

TEST(Run, PromptSixRunsOnSqlite) {
    SqlExecutor db(chinook_db());
    const auto t = db.execute(slurp(fs::path(ESAP_FIXTURES_DIR) / "sql/prompt6.sql"));
    EXPECT_FALSE(t.columns.empty());
}
