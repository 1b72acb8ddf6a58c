#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace esap {

/// Error categories surfaced by the library. Each maps to one CLI exit code.
enum class Errc {
    InvalidChunkConfig,
    StoreWriteError,
    VersionNotFound,
    InvalidDocument,
    EmptyCorpus,
    EmbedderFailure,
    DimensionMismatch,
    FormatVersionMismatch,
    CorruptIndex,
    ScriptExhausted,
    TransportError,
    ModelRefusal,
    SqlSyntaxError,
    SqlRuntimeError,
    Timeout,
    NonSelectRejected,
    NoContext,
    EmptyIndex,
    EmptyResult,
    ThorFailed,
    EvidenceNotFound,
    DatasetFormatError,
    MissingGold,
    RunsFormatError,
    ConfigError,
};

inline std::string_view errc_name(Errc c) {
    switch (c) {
    case Errc::InvalidChunkConfig: return "InvalidChunkConfig";
    case Errc::StoreWriteError: return "StoreWriteError";
    case Errc::VersionNotFound: return "VersionNotFound";
    case Errc::InvalidDocument: return "InvalidDocument";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::EmbedderFailure: return "EmbedderFailure";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::FormatVersionMismatch: return "FormatVersionMismatch";
    case Errc::CorruptIndex: return "CorruptIndex";
    case Errc::ScriptExhausted: return "ScriptExhausted";
    case Errc::TransportError: return "TransportError";
    case Errc::ModelRefusal: return "ModelRefusal";
    case Errc::SqlSyntaxError: return "SqlSyntaxError";
    case Errc::SqlRuntimeError: return "SqlRuntimeError";
    case Errc::Timeout: return "Timeout";
    case Errc::NonSelectRejected: return "NonSelectRejected";
    case Errc::NoContext: return "NoContext";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::EmptyResult: return "EmptyResult";
    case Errc::ThorFailed: return "ThorFailed";
    case Errc::EvidenceNotFound: return "EvidenceNotFound";
    case Errc::DatasetFormatError: return "DatasetFormatError";
    case Errc::MissingGold: return "MissingGold";
    case Errc::RunsFormatError: return "RunsFormatError";
    case Errc::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Process exit code: 1 user/config, 2 data, 3 external port.
inline int exit_code_for(Errc c) {
    switch (c) {
    case Errc::InvalidChunkConfig:
    case Errc::ConfigError:
    case Errc::NonSelectRejected:
        return 1;
    case Errc::ScriptExhausted:
    case Errc::TransportError:
    case Errc::ModelRefusal:
    case Errc::EmbedderFailure:
    case Errc::Timeout:
        return 3;
    default:
        return 2;
    }
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }
    std::string_view name() const noexcept { return errc_name(code_); }

private:
    Errc code_;
};

} // namespace esap
