#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "actpred/error.hpp"

namespace actpred::io {

// Little-endian, length-prefixed primitives shared by the table and model files.

class Writer {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(bytes, bytes + sizeof(T));
        }
        buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
    }

    void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s);
    }

    void put_doubles(std::span<const double> xs) {
        put(static_cast<std::uint64_t>(xs.size()));
        for (double x : xs) {
            put(x);
        }
    }

    const std::vector<char>& bytes() const noexcept { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const char> data) : data_(data) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(bytes, bytes + sizeof(T));
        }
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }

    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::string get_string() { return get_bytes(get<std::uint32_t>()); }

    std::vector<double> get_doubles() {
        const auto n = get<std::uint64_t>();
        need(n * sizeof(double));
        std::vector<double> xs(n);
        for (auto& x : xs) {
            x = get<double>();
        }
        return xs;
    }

    std::size_t position() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (n > data_.size() - pos_) {
            throw CorruptFileError("unexpected end of data");
        }
    }

    std::span<const char> data_;
    std::size_t pos_ = 0;
};

/// FNV-1a over raw bytes; used for content checksums and feature hashing.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path + "'");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}


/// Frames a payload as: magic(4) | version(u32) | payload | checksum(u64).
inline std::vector<char> frame(std::string_view magic, std::uint32_t version,
                               std::span<const char> payload) {
    Writer w;
    w.put_bytes(magic);
    w.put(version);
    w.put_bytes(std::string_view(payload.data(), payload.size()));
    w.put(fnv1a64(std::string_view(payload.data(), payload.size())));
    return w.bytes();
}

/// Validates the frame written by `frame` and returns the payload bytes.
inline std::span<const char> unframe(std::span<const char> file, std::string_view magic,
                                     std::uint32_t version) {
    const std::size_t overhead = magic.size() + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (file.size() < overhead) {
        throw CorruptFileError("file too short");
    }
    if (std::string_view(file.data(), magic.size()) != magic) {
        throw CorruptFileError("bad magic bytes");
    }
    Reader header(file.subspan(magic.size(), sizeof(std::uint32_t)));
    const auto got = header.get<std::uint32_t>();
    if (got != version) {
        throw CorruptFileError("format version " + std::to_string(got) + ", expected " +
                               std::to_string(version));
    }
    auto payload = file.subspan(magic.size() + sizeof(std::uint32_t),
                                file.size() - overhead);
    Reader trailer(file.subspan(file.size() - sizeof(std::uint64_t)));
    if (trailer.get<std::uint64_t>() != fnv1a64(std::string_view(payload.data(), payload.size()))) {
        throw CorruptFileError("checksum mismatch");
    }
    return payload;
}

} // namespace actpred::io
