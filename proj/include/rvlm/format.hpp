#pragma once

// RVLM binary container, little-endian:
//
//   "RVLM" | u32 version (=1) | u32 kind | u32 rank | rank x u32 dims
//   | body bytes | u64 FNV-1a over the body bytes
//
// Every kind except the chunk store has a plain f32 body whose length follows
// from the dims (payload_floats). See docs/formats.md.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rvlm/error.hpp"

namespace rvlm::format {

static_assert(std::endian::native == std::endian::little, "RVLM I/O assumes a little-endian host");

inline constexpr std::array<char, 4> kMagic = {'R', 'V', 'L', 'M'};
inline constexpr std::uint32_t kVersion = 1;

enum class RecordKind : std::uint32_t {
    FrameFeatures = 0,
    ChunkStore = 1,
    QueryFeatures = 2,
    Encoder = 3,
    Projector = 4,
};

inline const char* to_string(RecordKind k) {
    switch (k) {
        case RecordKind::FrameFeatures: return "frame-features";
        case RecordKind::ChunkStore: return "chunk-store";
        case RecordKind::QueryFeatures: return "query-features";
        case RecordKind::Encoder: return "encoder";
        case RecordKind::Projector: return "projector";
    }
    return "unknown";
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

class ByteWriter {
public:
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }
    void bytes(std::string_view s) { buf_.append(s); }
    void f32s(std::span<const float> values) { raw(values.data(), values.size_bytes()); }
    void f32s_from(std::span<const double> values) {
        for (double v : values) f32(static_cast<float>(v));
    }

    const std::string& str() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    float f32() { return pod<float>(); }

    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    void f32s(std::span<float> out) {
        need(out.size_bytes());
        std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
    }

    std::vector<double> f64s_from_f32(std::size_t n) {
        std::vector<float> tmp(n);
        f32s(tmp);
        return {tmp.begin(), tmp.end()};
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw DecodeError(DecodeFailure::Truncated, "unexpected end of record body");
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

/// Decoded container; `body` excludes header and checksum.
struct Record {
    RecordKind kind{};
    std::vector<std::uint32_t> shape;
    std::string body;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

inline std::string encode(RecordKind kind, std::span<const std::uint32_t> shape, std::string_view body) {
    ByteWriter w;
    w.bytes({kMagic.data(), kMagic.size()});
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(kind));
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u32(d);
    w.bytes(body);
    w.u64(fnv1a64(body));
    return w.take();
}

inline constexpr std::uint32_t kMaxRank = 16;

/// Number of f32 values a record body must hold; nullopt for the chunk store,
/// whose body carries a variable-length metadata block.
inline std::optional<std::size_t> payload_floats(RecordKind kind, std::span<const std::uint32_t> shape) {
    std::size_t product = 1;
    for (auto d : shape) product *= d;
    switch (kind) {
        case RecordKind::FrameFeatures:
        case RecordKind::QueryFeatures: return product;
        case RecordKind::Encoder:
            if (shape.size() != 3) return std::nullopt;
            return std::size_t{shape[1]} * shape[0] + shape[1] + std::size_t{shape[2]} * shape[1] + shape[2];
        case RecordKind::Projector:
            if (shape.size() != 2) return std::nullopt;
            return std::size_t{shape[1]} * shape[0] + shape[1];
        case RecordKind::ChunkStore: return std::nullopt;
    }
    return std::nullopt;
}

/// Parses and verifies a container. `expected_rank` of 0 accepts any rank.
inline Record decode(std::string_view bytes, RecordKind expected, std::uint32_t expected_rank = 0) {
    constexpr std::size_t kFixedHeader = 16;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
        throw DecodeError(DecodeFailure::BadMagic, "file does not start with \"RVLM\"");
    }
    if (bytes.size() < kFixedHeader) throw DecodeError(DecodeFailure::Truncated, "header is incomplete");
    ByteReader header(bytes.substr(4, kFixedHeader - 4));
    const std::uint32_t version = header.u32();
    if (version != kVersion) {
        throw DecodeError(DecodeFailure::VersionMismatch,
                          "version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
    }
    const std::uint32_t kind = header.u32();
    if (kind != static_cast<std::uint32_t>(expected)) {
        throw DecodeError(DecodeFailure::WrongKind, "record kind " + std::to_string(kind) + ", expected " +
                                                        std::to_string(static_cast<std::uint32_t>(expected)) + " (" +
                                                        to_string(expected) + ")");
    }
    const std::uint32_t rank = header.u32();
    if (rank > kMaxRank || (expected_rank != 0 && rank != expected_rank)) {
        throw DecodeError(DecodeFailure::ShapeMismatch, "unexpected rank " + std::to_string(rank));
    }
    const std::size_t header_size = kFixedHeader + 4 * static_cast<std::size_t>(rank);
    if (bytes.size() < header_size + 8) throw DecodeError(DecodeFailure::Truncated, "file shorter than header");

    Record rec;
    rec.kind = expected;
    ByteReader dims(bytes.substr(kFixedHeader, 4 * static_cast<std::size_t>(rank)));
    for (std::uint32_t i = 0; i < rank; ++i) rec.shape.push_back(dims.u32());

    const std::string_view body = bytes.substr(header_size, bytes.size() - header_size - 8);
    ByteReader tail(bytes.substr(bytes.size() - 8));
    const std::uint64_t stored = tail.u64();

    if (const auto floats = payload_floats(expected, rec.shape)) {
        const std::size_t want = *floats * sizeof(float);
        if (body.size() < want) {
            throw DecodeError(DecodeFailure::Truncated, "payload holds " + std::to_string(body.size() / 4) +
                                                            " values, shape declares " + std::to_string(*floats));
        }
        if (body.size() > want) {
            throw DecodeError(DecodeFailure::ShapeMismatch, "payload longer than declared shape");
        }
    }
    if (fnv1a64(body) != stored) throw DecodeError(DecodeFailure::ChecksumMismatch, "payload checksum does not match");
    rec.body.assign(body);
    return rec;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFull) throw ShapeError(std::string(what) + " exceeds u32 range");
    return static_cast<std::uint32_t>(v);
}

}  // namespace rvlm::format
