#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "esap/error.hpp"
#include "esap/text.hpp"

// Little-endian, length-prefixed binary encoding with a trailing FNV-1a checksum.
// File layout: magic[8] | u32 format_version | payload | u64 checksum(all preceding bytes)
namespace esap::binio {

class Writer {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        buf_.append(buf, sizeof(T));
    }

    void put_string(std::string_view s) {
        put<std::uint64_t>(s.size());
        buf_.append(s);
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    void put_vector(const std::vector<T>& v) {
        put<std::uint64_t>(v.size());
        if (!v.empty()) buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
    }

    const std::string& bytes() const noexcept { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_string() {
        const auto n = get<std::uint64_t>();
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    std::vector<T> get_vector() {
        const auto n = get<std::uint64_t>();
        if (n > (data_.size() - pos_) / sizeof(T)) throw Error(Errc::CorruptIndex, "vector length out of range");
        std::vector<T> v(n);
        if (n) std::memcpy(v.data(), data_.data() + pos_, n * sizeof(T));
        pos_ += n * sizeof(T);
        return v;
    }

    bool at_end() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > data_.size() - pos_) throw Error(Errc::CorruptIndex, "unexpected end of data");
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::string seal(std::string_view magic, std::uint32_t version, const std::string& payload) {
    std::string out(magic);
    out.resize(8, '\0');
    char vbuf[4];
    std::memcpy(vbuf, &version, 4);
    out.append(vbuf, 4);
    out += payload;
    const std::uint64_t sum = text::fnv1a64(out);
    char sbuf[8];
    std::memcpy(sbuf, &sum, 8);
    out.append(sbuf, 8);
    return out;
}

/// Validates magic, checksum and version; returns the payload.
inline std::string_view unseal(std::string_view file, std::string_view magic, std::uint32_t version,
                               const std::string& what) {
    if (file.size() < 20) throw Error(Errc::CorruptIndex, what + ": file truncated");
    std::string m(magic);
    m.resize(8, '\0');
    if (file.substr(0, 8) != m) throw Error(Errc::CorruptIndex, what + ": bad magic");
    std::uint64_t stored;
    std::memcpy(&stored, file.data() + file.size() - 8, 8);
    if (text::fnv1a64(file.substr(0, file.size() - 8)) != stored) {
        throw Error(Errc::CorruptIndex, what + ": checksum mismatch");
    }
    std::uint32_t v;
    std::memcpy(&v, file.data() + 8, 4);
    if (v != version) {
        throw Error(Errc::FormatVersionMismatch,
                    what + ": format version " + std::to_string(v) + ", expected " + std::to_string(version));
    }
    return file.substr(12, file.size() - 20);
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(Errc::CorruptIndex, "cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::StoreWriteError, "cannot write " + p.string());
}

} // namespace esap::binio
