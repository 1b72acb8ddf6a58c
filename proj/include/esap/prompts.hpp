#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>

#include "esap/text.hpp"

/// Fixed instruction texts. They are part of the reproducible transcript, so
/// changing any of them changes every recorded script.
namespace esap::prompts {

inline constexpr std::string_view kRefine =
    "Rewrite the user question to maximize retrieval precision; output only the rewritten question.";

inline constexpr std::string_view kAnswer =
    "You answer questions for an enterprise knowledge base using only the numbered context snippets.";

inline constexpr std::string_view kRegenerate =
    "The previous answer was judged insufficient. Answer again strictly from the context and cite snippets as [n].";

inline constexpr std::string_view kCritique =
    "Judge whether the ANSWER is supported by the CONTEXT and addresses the QUESTION. "
    "Reply with exactly one word: sufficient or insufficient.";

inline constexpr std::string_view kRoute =
    "Classify the question as one of: structured, document, other. Reply with the single label.";

inline constexpr std::string_view kSql =
    "Translate the question into one read-only SQLite SELECT statement over the schema. Output only SQL.";

inline constexpr std::string_view kRate =
    "Rate from 0 to 1 how well the SQL result answers the question. Reply with the number first, then a short reason.";

inline constexpr std::string_view kInterpret =
    "Write a short narrative insight answering the question from the result table. Use only values from the table.";

enum class TaskType { Structured, Document, Other };

inline std::string_view task_name(TaskType t) {
    switch (t) {
    case TaskType::Structured: return "structured";
    case TaskType::Document: return "document";
    case TaskType::Other: return "other";
    }
    return "other";
}

/// Keyword routing used when no model is available. Metric, aggregation and
/// time-window vocabulary routes to structured; policy/document vocabulary to document.
inline TaskType classify_by_keywords(std::string_view question) {
    static constexpr std::array<std::string_view, 36> structured{
        "how many", "count",   "average", "avg",     "sum",     "total",  "revenue", "sales",
        "price",    "income",  "rate",    "percent", "percentage", "per", "by month", "month",
        "quarter",  "year",    "week",    "daily",   "monthly", "top",    "highest", "lowest",
        "maximum",  "minimum", "trend",   "table",   "metric",  "deliveries", "orders", "region",
        "tracks",   "track",   "invoice", "last"};
    static constexpr std::array<std::string_view, 16> document{
        "policy",    "policies", "requirement", "requirements", "procedure", "procedures",
        "contract",  "clause",   "document",    "documents",    "guideline", "guidelines",
        "regulation", "compliance", "control",  "handbook"};
    const auto toks = token_texts(question);
    std::string joined = " ";
    for (const auto& t : toks) joined += t + " ";
    auto hits = [&](const auto& words) {
        int n = 0;
        for (auto w : words) {
            if (joined.find(" " + std::string(w) + " ") != std::string::npos) ++n;
        }
        return n;
    };
    const int s = hits(structured);
    const int d = hits(document);
    if (s == 0 && d == 0) return TaskType::Other;
    return d >= s ? TaskType::Document : TaskType::Structured;
}

} // namespace esap::prompts
