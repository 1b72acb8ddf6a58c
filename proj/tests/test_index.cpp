#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "esap/hybrid.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace esap;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("esap_index_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<Chunk> make_chunks(const std::vector<std::string>& texts) {
    std::vector<Chunk> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Chunk c;
        c.chunk_id = make_chunk_id("t", 1, i);
        c.doc_id = "t";
        c.text = texts[i];
        c.token_end = tokenize(texts[i]).size();
        out.push_back(c);
    }
    return out;
}

Document doc(std::string id, std::string text, std::set<std::string> acl = {"*"}) {
    Document d;
    d.doc_id = std::move(id);
    d.text = std::move(text);
    d.acl = std::move(acl);
    return d;
}

RetrievalResult ranked(const std::vector<std::string>& ids) {
    RetrievalResult r;
    for (const auto& id : ids) {
        Hit h;
        h.chunk_id = id;
        h.doc_id = id;
        r.hits.push_back(h);
    }
    r.rerank();
    return r;
}

} // namespace

TEST(Lexical, ToyCorpusScoresLnTwo) {
    const auto chunks = make_chunks({"red apple", "green pear"});
    const auto idx = LexicalIndex::build(chunks);
    const auto hits = idx.search("apple", 10);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].ordinal, 0u);
    EXPECT_NEAR(hits[0].score, std::log(2.0), 1e-12);
    EXPECT_EQ(idx.search("apple", 1).at(0).ordinal, 0u);
}

TEST(Lexical, AbsentAndEmptyQueries) {
    const auto chunks = make_chunks({"red apple", "green pear"});
    const auto idx = LexicalIndex::build(chunks);
    EXPECT_TRUE(idx.search("banana", 10).empty());
    EXPECT_TRUE(idx.search("", 10).empty());
    EXPECT_TRUE(idx.search("!!!", 10).empty());
}

TEST(Lexical, IdenticalChunksTieByChunkId) {
    const auto chunks = make_chunks({"same words here", "other text", "same words here"});
    const auto hits = LexicalIndex::build(chunks).search("same", 10);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].score, hits[1].score);
    EXPECT_EQ(hits[0].ordinal, 0u);
    EXPECT_EQ(hits[1].ordinal, 2u);
}

TEST(Lexical, MatchesBruteForceOracle) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::string> texts;
        std::vector<std::vector<std::string>> toks;
        for (std::size_t i = 0, n = 1 + rng() % 15; i < n; ++i) {
            texts.push_back(oracle::random_words(rng, 1 + rng() % 20, 10));
            toks.push_back(oracle::ascii_tokens(texts.back()));
        }
        const auto chunks = make_chunks(texts);
        const auto idx = LexicalIndex::build(chunks);
        const auto q = oracle::random_words(rng, 3, 12);
        const auto got = idx.search(q, 100);
        const auto want = oracle::bm25(toks, oracle::ascii_tokens(q));
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].ordinal, want[i].doc);
            EXPECT_NEAR(got[i].score, want[i].score, 1e-9);
        }
    }
}

TEST(Dense, SmallCorpusUsesExactMode) {
    HashEmbedder emb;
    const auto idx = DenseIndex::build({emb.embed_one("a"), emb.embed_one("b"), emb.embed_one("c")}, emb.dim());
    EXPECT_TRUE(idx.exact());
    EXPECT_EQ(idx.size(), 3u);
}

TEST(Dense, SelfQueryRanksFirstWithUnitSimilarity) {
    HashEmbedder emb;
    std::vector<Vector> vecs{emb.embed_one("alpha beta"), emb.embed_one("gamma delta"), emb.embed_one("epsilon")};
    const auto idx = DenseIndex::build(vecs, emb.dim());
    const auto hits = idx.search(vecs[1], 3);
    ASSERT_EQ(hits.size(), 3u);
    EXPECT_EQ(hits[0].ordinal, 1u);
    EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
}

TEST(Dense, OrthogonalQueryScoresZero) {
    Vector a(4, 0.0f), b(4, 0.0f);
    a[0] = 1.0f;
    b[1] = 1.0f;
    const auto idx = DenseIndex::build(std::vector<Vector>{a}, 4);
    const auto hits = idx.search(b, 1);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].score, 0.0);
}

TEST(Dense, RejectsDimensionMismatch) {
    EXPECT_THROW(DenseIndex::build(3, std::vector<float>(7, 0.0f)), Error);
}

TEST(Dense, DeterministicAnnBuild) {
    HashEmbedder emb;
    std::mt19937_64 rng(4);
    std::vector<Vector> vecs;
    for (int i = 0; i < 300; ++i) vecs.push_back(emb.embed_one(oracle::random_words(rng, 10, 200)));
    AnnParams p;
    p.exact_threshold = 100;
    const auto a = DenseIndex::build(vecs, emb.dim(), p);
    const auto b = DenseIndex::build(vecs, emb.dim(), p);
    EXPECT_FALSE(a.exact());
    for (int q = 0; q < 20; ++q) {
        const auto v = emb.embed_one(oracle::random_words(rng, 5, 200));
        const auto ha = a.search(v, 10);
        const auto hb = b.search(v, 10);
        ASSERT_EQ(ha.size(), hb.size());
        for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].ordinal, hb[i].ordinal);
    }
}

TEST(Fusion, ReciprocalRankValues) {
    const auto fused = fuse(ranked({"a", "b", "c"}), ranked({"a"}), 60);
    ASSERT_EQ(fused.hits.size(), 3u);
    EXPECT_EQ(fused.hits[0].chunk_id, "a");
    EXPECT_DOUBLE_EQ(fused.hits[0].fused_score, 2.0 / 61.0);
    EXPECT_DOUBLE_EQ(fused.hits[2].fused_score, 1.0 / 63.0);
    EXPECT_EQ(fused.hits[2].rank, 3u);
}

TEST(Acl, WildcardKeepsEverything) {
    const auto r = ranked({"x", "y"});
    const AclTable acl{{"x", {"*"}}, {"y", {"*"}}};
    EXPECT_EQ(filter_acl(r, "anyone", acl).hits, r.hits);
}

TEST(Acl, RemovesUnreadableAndKeepsOrder) {
    const auto r = ranked({"a", "b", "c", "d"});
    const AclTable acl{{"a", {"alice"}}, {"b", {"bob"}}, {"c", {"*"}}, {"d", {"alice", "bob"}}};
    const auto out = filter_acl(r, "alice", acl);
    ASSERT_EQ(out.hits.size(), 3u);
    EXPECT_EQ(out.hits[0].chunk_id, "a");
    EXPECT_EQ(out.hits[1].chunk_id, "c");
    EXPECT_EQ(out.hits[2].chunk_id, "d");
    EXPECT_EQ(out.hits[2].rank, 3u);
}

TEST(Guards, RedactsDefaultPatterns) {
    const auto g = GuardRules::defaults();
    EXPECT_EQ(g.redact("contact john@x.com"), "contact [REDACTED:email]");
    EXPECT_EQ(g.redact("SSN 123-45-6789"), "SSN [REDACTED:ssn]");
    EXPECT_EQ(g.redact("nothing to hide here"), "nothing to hide here");
}

TEST(Guards, CustomRuleAndBadPattern) {
    GuardRules g;
    g.add("project", "Project [A-Z]+", "codename");
    EXPECT_EQ(g.redact("see Project ORION now"), "see [REDACTED:codename] now");
    EXPECT_THROW(g.add("bad", "(unclosed", "x"), Error);
}

TEST(Hybrid, RetrieveFiltersTruncatesAndRedacts) {
    HashEmbedder emb;
    const std::vector<Document> docs{doc("pub", "The leave policy grants fifteen days. Email hr@corp.com for leave."),
                                     doc("secret", "Board leave policy minutes.", {"board"})};
    IndexParams params;
    params.chunk = {50, 10};
    const auto idx = HybridIndex::build(docs, emb, params);
    const auto guards = GuardRules::defaults();
    RetrieveOptions opts;
    opts.k = 5;
    opts.principal = "alice";
    opts.guards = &guards;
    const auto r = idx.retrieve("leave policy", emb, opts);
    ASSERT_EQ(r.hits.size(), 1u);
    EXPECT_EQ(r.hits[0].doc_id, "pub");
    EXPECT_NE(r.hits[0].text.find("[REDACTED:email]"), std::string::npos);

    opts.principal = "board";
    opts.guards = nullptr;
    const auto board = idx.retrieve("board minutes", emb, opts);
    ASSERT_EQ(board.hits.size(), 2u);
    EXPECT_EQ(board.hits[0].doc_id, "secret");
    opts.principal.reset();
    EXPECT_EQ(idx.retrieve("leave", emb, opts).hits.size(), 2u);
}

TEST(Hybrid, PrincipalWithoutAccessGetsNothing) {
    HashEmbedder emb;
    const auto idx = HybridIndex::build({doc("x", "restricted text", {"legal"}), doc("y", "also restricted", {"hr"})}, emb,
                                        IndexParams{});
    RetrieveOptions opts;
    opts.principal = "mallory";
    EXPECT_TRUE(idx.retrieve("restricted", emb, opts).hits.empty());
}

TEST(Hybrid, KLargerThanCorpusReturnsAll) {
    HashEmbedder emb;
    std::vector<Document> docs;
    for (int i = 0; i < 10; ++i) docs.push_back(doc("d" + std::to_string(i), "shared term number " + std::to_string(i)));
    const auto idx = HybridIndex::build(docs, emb, IndexParams{});
    RetrieveOptions opts;
    EXPECT_EQ(idx.retrieve("shared", emb, opts).hits.size(), 10u);
}

TEST(Hybrid, SaveLoadRoundTrip) {
    HashEmbedder emb;
    std::mt19937_64 rng(8);
    std::vector<Document> docs;
    for (int i = 0; i < 20; ++i) docs.push_back(doc("d" + std::to_string(i), oracle::random_words(rng, 80, 60)));
    IndexParams params;
    params.chunk = {20, 5};
    const auto idx = HybridIndex::build(docs, emb, params);
    const auto dir = temp_dir("roundtrip");
    idx.save(dir);
    const auto loaded = HybridIndex::load(dir);
    RetrieveOptions opts;
    opts.k = 10;
    for (int q = 0; q < 100; ++q) {
        const auto query = oracle::random_words(rng, 3, 60);
        EXPECT_EQ(idx.retrieve(query, emb, opts), loaded.retrieve(query, emb, opts));
    }
}

TEST(Hybrid, TruncatedFileIsCorrupt) {
    HashEmbedder emb;
    const auto idx = HybridIndex::build({doc("a", "some words to index")}, emb, IndexParams{});
    const auto dir = temp_dir("truncated");
    idx.save(dir);
    fs::resize_file(dir / "dense.bin", fs::file_size(dir / "dense.bin") / 2);
    try {
        HybridIndex::load(dir);
        FAIL() << "expected CorruptIndex";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::CorruptIndex);
    }
}

TEST(Hybrid, OlderFormatVersionRejected) {
    HashEmbedder emb;
    const auto idx = HybridIndex::build({doc("a", "some words to index")}, emb, IndexParams{});
    const auto dir = temp_dir("version");
    idx.save(dir);
    auto meta = json::parse(binio::read_file(dir / "meta.json"));
    meta["format_version"] = 0;
    binio::write_file(dir / "meta.json", meta.dump());
    try {
        HybridIndex::load(dir);
        FAIL() << "expected FormatVersionMismatch";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::FormatVersionMismatch);
    }
}

TEST(Hybrid, EmptyCorpusRefusesToBuild) {
    HashEmbedder emb;
    try {
        HybridIndex::build({}, emb, IndexParams{});
        FAIL() << "expected EmptyCorpus";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptyCorpus);
    }
    const HybridIndex blank;
    RetrieveOptions opts;
    EXPECT_THROW(blank.retrieve("x", emb, opts), Error);
}
