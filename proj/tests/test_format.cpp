#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rvlm/format.hpp"

using namespace rvlm;
using namespace rvlm::format;

namespace {

DecodeFailure failure_of(const std::string& bytes, RecordKind kind, std::uint32_t rank = 0) {
    try {
        decode(bytes, kind, rank);
    } catch (const DecodeError& e) {
        return e.failure();
    }
    ADD_FAILURE() << "decode accepted the input";
    return DecodeFailure::Malformed;
}

std::string sample_record() {
    oracle::Bytes body;
    for (float f : {1.0f, -2.5f, 3.25f, 0.0f, 7.0f, 8.5f}) body.f32(f);
    return oracle::container(2, {2, 3}, body.s);
}

}  // namespace

TEST(Format, FnvMatchesPublishedVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ull);
}

TEST(Format, EncodeMatchesReferenceWriter) {
    ByteWriter body;
    const float values[] = {1.0f, -2.5f, 3.25f, 0.0f, 7.0f, 8.5f};
    body.f32s(values);
    const std::uint32_t shape[] = {2, 3};
    EXPECT_EQ(encode(RecordKind::QueryFeatures, shape, body.str()), sample_record());
}

TEST(Format, DecodeReturnsShapeAndBody) {
    const auto rec = decode(sample_record(), RecordKind::QueryFeatures, 2);
    EXPECT_EQ(rec.shape, (std::vector<std::uint32_t>{2, 3}));
    EXPECT_EQ(rec.element_count(), 6u);
    ByteReader r(rec.body);
    EXPECT_EQ(r.f32(), 1.0f);
    EXPECT_EQ(r.f32(), -2.5f);
}

TEST(Format, RejectsBadMagic) {
    auto bytes = sample_record();
    bytes[0] = 'X';
    EXPECT_EQ(failure_of(bytes, RecordKind::QueryFeatures), DecodeFailure::BadMagic);
    EXPECT_EQ(failure_of("", RecordKind::QueryFeatures), DecodeFailure::BadMagic);
}

TEST(Format, RejectsOtherVersion) {
    auto bytes = sample_record();
    bytes[4] = 2;
    EXPECT_EQ(failure_of(bytes, RecordKind::QueryFeatures), DecodeFailure::VersionMismatch);
}

TEST(Format, RejectsWrongKind) {
    EXPECT_EQ(failure_of(sample_record(), RecordKind::FrameFeatures), DecodeFailure::WrongKind);
}

TEST(Format, RejectsWrongRank) {
    EXPECT_EQ(failure_of(sample_record(), RecordKind::QueryFeatures, 4), DecodeFailure::ShapeMismatch);
}

TEST(Format, RejectsTruncation) {
    const auto bytes = sample_record();
    EXPECT_EQ(failure_of(bytes.substr(0, 10), RecordKind::QueryFeatures), DecodeFailure::Truncated);
    EXPECT_EQ(failure_of(bytes.substr(0, 24), RecordKind::QueryFeatures), DecodeFailure::Truncated);
    // Drop one payload value but keep a valid checksum.
    oracle::Bytes body;
    for (float f : {1.0f, 2.0f, 3.0f, 4.0f, 5.0f}) body.f32(f);
    EXPECT_EQ(failure_of(oracle::container(2, {2, 3}, body.s), RecordKind::QueryFeatures), DecodeFailure::Truncated);
}

TEST(Format, RejectsOverlongPayload) {
    oracle::Bytes body;
    for (int i = 0; i < 7; ++i) body.f32(1.0f);
    EXPECT_EQ(failure_of(oracle::container(2, {2, 3}, body.s), RecordKind::QueryFeatures), DecodeFailure::ShapeMismatch);
}

TEST(Format, RejectsEveryCorruptedPayloadByte) {
    const auto bytes = sample_record();
    const std::size_t header = 16 + 8;
    for (std::size_t pos = header; pos < bytes.size() - 8; ++pos) {
        auto bad = bytes;
        bad[pos] = static_cast<char>(bad[pos] ^ 0x01);
        EXPECT_EQ(failure_of(bad, RecordKind::QueryFeatures), DecodeFailure::ChecksumMismatch) << pos;
    }
    auto bad_sum = bytes;
    bad_sum.back() = static_cast<char>(bad_sum.back() ^ 0x80);
    EXPECT_EQ(failure_of(bad_sum, RecordKind::QueryFeatures), DecodeFailure::ChecksumMismatch);
}

TEST(Format, PayloadSizesPerKind) {
    const std::uint32_t enc[] = {5, 7, 3};
    EXPECT_EQ(payload_floats(RecordKind::Encoder, enc), std::optional<std::size_t>(7 * 5 + 7 + 3 * 7 + 3));
    const std::uint32_t proj[] = {4, 6};
    EXPECT_EQ(payload_floats(RecordKind::Projector, proj), std::optional<std::size_t>(6 * 4 + 6));
    const std::uint32_t frames[] = {2, 4, 4, 3};
    EXPECT_EQ(payload_floats(RecordKind::FrameFeatures, frames), std::optional<std::size_t>(96));
    EXPECT_FALSE(payload_floats(RecordKind::ChunkStore, frames).has_value());
}

TEST(Format, ReaderThrowsTruncatedPastEnd) {
    ByteReader r(std::string_view("abc"));
    EXPECT_THROW(r.u32(), DecodeError);
}

TEST(Format, ReadMissingFileIsIoError) {
    EXPECT_THROW(read_file("/nonexistent/dir/file.rvlm"), IoError);
}
