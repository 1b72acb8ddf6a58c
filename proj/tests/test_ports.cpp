#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "esap/ports.hpp"
#include "esap/prompts.hpp"
#include "esap/sql.hpp"

namespace fs = std::filesystem;
using namespace esap;

namespace {

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an esap::Error";
    return Errc::ConfigError;
}

fs::path make_db() {
    const auto dir = fs::temp_directory_path() / ("esap_ports_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const auto path = dir / "t.db";
    fs::remove(path);
    create_database(path, "CREATE TABLE t(id INTEGER, name TEXT); INSERT INTO t VALUES (1,'a'),(2,'b'),(3,'c');");
    return path;
}

double norm(const Vector& v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

} // namespace

TEST(ScriptedModel, ReplaysQueueThenExhausts) {
    ScriptedModel m{"A", "B"};
    EXPECT_EQ(m.chat(make_request("sys", "one")).text, "A");
    EXPECT_EQ(m.chat(make_request("sys", "two")).text, "B");
    EXPECT_EQ(code_of([&] { m.chat(make_request("sys", "three")); }), Errc::ScriptExhausted);
    EXPECT_EQ(m.transcript().size(), 2u);
}

TEST(ScriptedModel, MatchPredicatesSelectEligibleEntry) {
    auto m = ScriptedModel::from_json(json::parse(R"({"responses":[
        {"content":"sql answer","match":"# SCHEMA"},
        {"content":"0.8","match":"# RESULT"}]})"));
    EXPECT_EQ(m.chat(make_request("rate", "# RESULT\nrows")).text, "0.8");
    EXPECT_EQ(m.chat(make_request("gen", "# SCHEMA\nt(a)")).text, "sql answer");
    EXPECT_EQ(m.remaining(), 0u);
}

TEST(ScriptedModel, FailureEntriesRaisePortErrors) {
    auto m = ScriptedModel::from_json(json::parse(R"([{"content":"","finish_reason":"content_filter"},
        {"content":"","error":"transport"}])"));
    EXPECT_EQ(code_of([&] { m.chat(make_request("s", "u")); }), Errc::ModelRefusal);
    EXPECT_EQ(code_of([&] { m.chat(make_request("s", "u")); }), Errc::TransportError);
    EXPECT_EQ(exit_code_for(Errc::TransportError), 3);
}

TEST(ScriptedModel, LoadsFixtureFile) {
    const auto m = ScriptedModel::from_file(fs::path(ESAP_FIXTURES_DIR) / "scripts/prompt4_script.json");
    EXPECT_EQ(m.remaining(), 3u);
    EXPECT_EQ(code_of([] { ScriptedModel::from_file("/nonexistent/script.json"); }), Errc::ConfigError);
}

TEST(ExtractiveModel, ReturnsSentenceMatchingQuestion) {
    ExtractiveModel m;
    const std::string user = "# CONTEXT\n[1] The sky is blue. Grass grows quickly.\n# OBJECTIVE\nx\nQUESTION: how does grass grow";
    const auto r = m.chat(make_request(prompts::kAnswer, user));
    EXPECT_EQ(r.text, "Grass grows quickly. [1]");
}

TEST(ExtractiveModel, RefineEchoesQuestion) {
    ExtractiveModel m;
    EXPECT_EQ(m.chat(make_request(prompts::kRefine, "what is the leave policy?")).text, "what is the leave policy?");
}

TEST(HashEmbedder, DeterministicUnitVectors) {
    HashEmbedder e;
    const std::vector<std::string> in{"a", "a", "", "Some longer text here"};
    const auto v = e.embed(in);
    ASSERT_EQ(v.size(), 4u);
    EXPECT_EQ(v[0], v[1]);
    EXPECT_EQ(v[2], Vector(256, 0.0f));
    EXPECT_NEAR(norm(v[0]), 1.0, 1e-6);
    EXPECT_NEAR(norm(v[3]), 1.0, 1e-6);
    EXPECT_EQ(v[3].size(), e.dim());
}

TEST(Sql, SelectReturnsTable) {
    SqlExecutor db(make_db());
    const auto t = db.execute("SELECT 1");
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(std::get<std::int64_t>(t.rows[0][0]), 1);
    const auto names = db.execute("SELECT name FROM t ORDER BY id");
    ASSERT_EQ(names.rows.size(), 3u);
    EXPECT_EQ(std::get<std::string>(names.rows[2][0]), "c");
}

TEST(Sql, ErrorsAreTyped) {
    SqlExecutor db(make_db());
    EXPECT_EQ(code_of([&] { db.execute("SELEC 1"); }), Errc::SqlSyntaxError);
    EXPECT_EQ(code_of([&] { db.execute("DROP TABLE t"); }), Errc::NonSelectRejected);
    EXPECT_EQ(code_of([&] { db.execute("  -- comment\n delete from t"); }), Errc::NonSelectRejected);
    EXPECT_EQ(code_of([&] { db.execute("SELECT * FROM missing"); }), Errc::SqlRuntimeError);
}

TEST(Sql, RowCapMarksTruncation) {
    SqlExecutor db(make_db(), SqlExecutor::Options{std::chrono::milliseconds(5000), 2});
    const auto t = db.execute("SELECT id FROM t");
    EXPECT_EQ(t.rows.size(), 2u);
    EXPECT_TRUE(t.truncated);
}

TEST(Sql, ReadOnlyConnectionLeavesFileUntouched) {
    const auto path = make_db();
    const auto before = file_hash(path);
    SqlExecutor db(path);
    (void)db.execute("SELECT * FROM t");
    EXPECT_ANY_THROW(db.execute("WITH x AS (SELECT 1) INSERT INTO t VALUES (9,'z')"));
    EXPECT_EQ(file_hash(path), before);
}
