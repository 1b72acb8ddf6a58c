#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "esap/corpus.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace esap;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("esap_corpus_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::string> texts(const std::vector<Token>& toks) {
    std::vector<std::string> out;
    for (const auto& t : toks) out.push_back(t.text);
    return out;
}

RawDocument raw(std::string id, std::string text) {
    RawDocument r;
    r.doc_id = std::move(id);
    r.text = std::move(text);
    return r;
}

} // namespace

TEST(Tokenizer, SplitsOnPunctuationAndLowercases) {
    EXPECT_EQ(texts(tokenize("Hello, world!")), (std::vector<std::string>{"hello", "world"}));
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_EQ(texts(tokenize("AES-256 encryption")), (std::vector<std::string>{"aes", "256", "encryption"}));
}

TEST(Tokenizer, SpansPointIntoOriginalBytes) {
    const std::string s = "  Große Straße, 42";
    for (const auto& t : tokenize(s)) {
        EXPECT_LT(t.begin, t.end);
        EXPECT_LE(t.end, s.size());
    }
    EXPECT_EQ(texts(tokenize(s)), (std::vector<std::string>{"große", "straße", "42"}));
}

TEST(Tokenizer, MatchesAsciiOracleOnRandomText) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto s = oracle::random_words(rng, rng() % 40, 30, "Tok");
        EXPECT_EQ(token_texts(s), oracle::ascii_tokens(s));
    }
}

TEST(Chunker, WindowsFollowStride) {
    const auto spans = window_spans(10, {4, 1});
    ASSERT_EQ(spans.size(), 3u);
    EXPECT_EQ(spans[0], (std::pair<std::size_t, std::size_t>{0, 4}));
    EXPECT_EQ(spans[1], (std::pair<std::size_t, std::size_t>{3, 7}));
    EXPECT_EQ(spans[2], (std::pair<std::size_t, std::size_t>{6, 10}));
}

TEST(Chunker, ShortDocumentIsOneChunk) {
    Document d;
    d.doc_id = "short";
    d.text = "one two three four";
    const auto chunks = chunk_document(d, ChunkConfig{});
    ASSERT_EQ(chunks.size(), 1u);
    EXPECT_EQ(chunks[0].token_begin, 0u);
    EXPECT_EQ(chunks[0].token_end, 4u);
    EXPECT_EQ(chunks[0].chunk_id, "short#v1#000000");
    EXPECT_EQ(chunks[0].text, d.text);
}

TEST(Chunker, EmptyDocumentHasNoChunks) {
    Document d;
    d.doc_id = "empty";
    EXPECT_TRUE(chunk_document(d, 4, 1).empty());
}

TEST(Chunker, ChunkTextIsVerbatimSlice) {
    Document d;
    d.doc_id = "d";
    d.text = "Alpha, beta; gamma.\nDelta epsilon!";
    const auto chunks = chunk_document(d, 2, 1);
    ASSERT_EQ(chunks.size(), 4u);
    EXPECT_EQ(chunks[0].text, "Alpha, beta");
    EXPECT_EQ(chunks[1].text, "beta; gamma");
    EXPECT_EQ(chunks[2].text, "gamma.\nDelta");
    EXPECT_EQ(chunks[3].text, "Delta epsilon");
}

TEST(Chunker, RejectsInvalidConfig) {
    try {
        validate(ChunkConfig{500, 1000});
        FAIL() << "expected InvalidChunkConfig";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidChunkConfig);
    }
    EXPECT_THROW(validate(ChunkConfig{0, 0}), Error);
    EXPECT_NO_THROW(validate(ChunkConfig{1, 0}));
}

TEST(Chunker, CountMatchesOracleCounter) {
    for (std::size_t t = 0; t < 60; ++t) {
        for (std::size_t size = 1; size < 12; ++size) {
            for (std::size_t ov = 0; ov < size; ++ov) {
                EXPECT_EQ(window_spans(t, {size, ov}).size(), oracle::direct_chunk_count(t, size, ov));
            }
        }
    }
}

TEST(VersionStore, IngestCreatesVersions) {
    VersionStore store(temp_dir("ingest"));
    const auto v1 = store.ingest(raw("a", "first text"));
    EXPECT_EQ(v1.version, 1u);
    EXPECT_EQ(v1.acl, (std::set<std::string>{"*"}));
    const auto v2 = store.ingest(raw("a", "second text"));
    EXPECT_EQ(v2.version, 2u);
    EXPECT_EQ(store.get("a", 1).text, "first text");
    EXPECT_EQ(store.latest("a").text, "second text");
    EXPECT_EQ(store.latest_version("a"), 2u);
    EXPECT_FALSE(store.latest_version("missing").has_value());
}

TEST(VersionStore, RollbackCopiesTargetVersion) {
    VersionStore store(temp_dir("rollback"));
    store.ingest(raw("a", "version one"));
    store.ingest(raw("a", "version two"));
    const auto v3 = store.rollback("a", 1);
    EXPECT_EQ(v3.version, 3u);
    EXPECT_EQ(v3.text, "version one");
    EXPECT_TRUE(store.diff("a", 3, 1).empty());
    EXPECT_FALSE(store.diff("a", 2, 1).empty());
    try {
        store.rollback("a", 99);
        FAIL() << "expected VersionNotFound";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::VersionNotFound);
    }
}

TEST(VersionStore, RejectsMalformedIds) {
    VersionStore store(temp_dir("ids"));
    EXPECT_THROW(store.ingest(raw("../escape", "x")), Error);
    EXPECT_THROW(store.ingest(raw("", "x")), Error);
}

TEST(VersionStore, LatestDocumentsOrderedById) {
    VersionStore store(temp_dir("latest"));
    store.ingest(raw("b", "bee"));
    store.ingest(raw("a", "ay"));
    store.ingest(raw("b", "bee two"));
    const auto docs = store.latest_documents();
    ASSERT_EQ(docs.size(), 2u);
    EXPECT_EQ(docs[0].doc_id, "a");
    EXPECT_EQ(docs[1].doc_id, "b");
    EXPECT_EQ(docs[1].version, 2u);
}

TEST(CorpusReader, ReadsFixture) {
    const auto docs = read_corpus_jsonl(fs::path(ESAP_FIXTURES_DIR) / "corpus/policies.jsonl");
    EXPECT_EQ(docs.size(), 4u);
}

TEST(CorpusReader, MalformedLineCitesLineNumber) {
    const auto path = temp_dir("reader") / "bad.jsonl";
    std::ofstream(path) << R"({"id":"a","text":"ok"})" << "\n{not json\n";
    try {
        read_corpus_jsonl(path);
        FAIL() << "expected InvalidDocument";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidDocument);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}
