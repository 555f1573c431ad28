#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rvlm/chunker.hpp"

using namespace rvlm;

namespace {

FrameFeatureMap ramp_frames(std::size_t t, std::size_t h, std::size_t w, std::size_t d) {
    FrameFeatureMap f{"ramp", t, h, w, d, 1.0, {}};
    f.data.resize(f.expected_size());
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>(i % 97) * 0.25f;
    return f;
}

FrameTensor random_tensor(std::mt19937_64& rng, std::size_t t, std::size_t h, std::size_t w, std::size_t d) {
    std::normal_distribution<double> normal(0.0, 1.0);
    FrameTensor x(t, h, w, d);
    for (double& v : x.data) v = normal(rng);
    return x;
}

// First value of frame f in the raw feature map.
float frame_marker(const FrameFeatureMap& f, std::size_t frame) {
    return f.data[frame * f.height * f.width * f.dim];
}

}  // namespace

TEST(Chunker, SixteenGridYieldsSixtyEightTokens) {
    const auto frames = ramp_frames(12, 16, 16, 4);
    const auto chunks = tokenize_video(frames, ChunkConfig{});
    ASSERT_EQ(chunks.size(), 3u);
    for (const auto& c : chunks) {
        EXPECT_EQ(c.token_count, 68u);
        EXPECT_EQ(c.tokens.size(), 68u * 4u);
        EXPECT_EQ(c.representation.size(), 4u);
    }
}

TEST(Chunker, PadsTrailingChunkWithLastFrame) {
    auto frames = ramp_frames(9, 2, 2, 1);
    for (std::size_t t = 0; t < 9; ++t) {
        for (std::size_t i = 0; i < 4; ++i) frames.data[t * 4 + i] = static_cast<float>(t);
    }
    const auto raw = split_into_chunks(frames, ChunkConfig{});
    ASSERT_EQ(raw.size(), 3u);
    for (std::size_t f = 0; f < 4; ++f) {
        EXPECT_EQ(raw[0].cell(f, 0, 0)[0], static_cast<double>(f));
        EXPECT_EQ(raw[2].cell(f, 1, 1)[0], 8.0);
    }
    const auto chunks = tokenize_video(frames, ChunkConfig{});
    EXPECT_EQ(chunks[2].frame_begin, 8u);
    EXPECT_EQ(chunks[2].frame_end, 9u);
    EXPECT_EQ(chunks[1].frame_begin, 4u);
    EXPECT_EQ(chunks[1].frame_end, 8u);
}

TEST(Chunker, SingleFrameVideoRepeatsIt) {
    const auto frames = ramp_frames(1, 4, 4, 3);
    const auto raw = split_into_chunks(frames, ChunkConfig{});
    ASSERT_EQ(raw.size(), 1u);
    const std::size_t frame_size = 4 * 4 * 3;
    for (std::size_t f = 1; f < 4; ++f) {
        for (std::size_t i = 0; i < frame_size; ++i) ASSERT_EQ(raw[0].data[f * frame_size + i], raw[0].data[i]);
    }
    EXPECT_EQ(frame_marker(frames, 0), static_cast<float>(raw[0].data[0]));
    const auto chunks = tokenize_video(frames, ChunkConfig{});
    EXPECT_EQ(chunks[0].token_count, 4u + 4u);
    EXPECT_EQ(chunks[0].frame_end, 1u);
}

TEST(Chunker, ChunkCountIsCeilOfFramesOverM) {
    for (std::size_t t = 1; t <= 17; ++t) {
        for (std::size_t m = 1; m <= 5; ++m) {
            ChunkConfig cfg;
            cfg.frames_per_chunk = m;
            EXPECT_EQ(split_into_chunks(ramp_frames(t, 2, 2, 1), cfg).size(), (t + m - 1) / m) << t << " " << m;
        }
    }
}

TEST(Chunker, DownsampleAndPoolMatchOracle) {
    std::mt19937_64 rng(3);
    for (std::size_t stride : {1u, 2u, 4u}) {
        const auto raw = random_tensor(rng, 3, 8, 4, 5);
        oracle::Grid g{3, 8, 4, 5, raw.data};
        const auto down = spatial_downsample(raw, stride);
        const auto og = oracle::downsample(g, stride);
        ASSERT_EQ(down.data.size(), og.v.size());
        for (std::size_t i = 0; i < og.v.size(); ++i) EXPECT_NEAR(down.data[i], og.v[i], 1e-12);
        const auto tokens = pool_chunk_tokens(down);
        const auto rows = oracle::pool(og);
        ASSERT_EQ(tokens.rows, rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(tokens(r, c), rows[r][c], 1e-12);
    }
}

TEST(Chunker, PoolingIsLinear) {
    std::mt19937_64 rng(4);
    const auto x = random_tensor(rng, 4, 4, 6, 3);
    const auto y = random_tensor(rng, 4, 4, 6, 3);
    FrameTensor mix(4, 4, 6, 3);
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = 2.5 * x.data[i] - 0.75 * y.data[i];
    const auto px = pool_chunk_tokens(spatial_downsample(x, 2));
    const auto py = pool_chunk_tokens(spatial_downsample(y, 2));
    const auto pm = pool_chunk_tokens(spatial_downsample(mix, 2));
    for (std::size_t i = 0; i < pm.data.size(); ++i) EXPECT_NEAR(pm.data[i], 2.5 * px.data[i] - 0.75 * py.data[i], 1e-12);
}

TEST(Chunker, SpatialAndFrameHalvesShareTheGlobalMean) {
    std::mt19937_64 rng(5);
    const auto raw = random_tensor(rng, 4, 6, 6, 2);
    const auto down = spatial_downsample(raw, 2);
    const auto tokens = pool_chunk_tokens(down);
    const std::size_t n = 9;
    for (std::size_t c = 0; c < 2; ++c) {
        double spatial = 0, frames = 0, all = 0;
        for (std::size_t r = 0; r < n; ++r) spatial += tokens(r, c);
        for (std::size_t r = n; r < n + 4; ++r) frames += tokens(r, c);
        for (std::size_t i = c; i < raw.data.size(); i += 2) all += raw.data[i];
        const double mean = all / static_cast<double>(raw.data.size() / 2);
        EXPECT_NEAR(spatial / n, mean, 1e-12);
        EXPECT_NEAR(frames / 4, mean, 1e-12);
        EXPECT_NEAR(chunk_representation(tokens)[c], mean, 1e-12);
    }
}

TEST(Chunker, ConstantVideoGivesConstantTokens) {
    FrameFeatureMap f{"c", 6, 4, 4, 2, 1.0, std::vector<float>(6 * 4 * 4 * 2, 1.5f)};
    for (const auto& c : tokenize_video(f, ChunkConfig{})) {
        for (float v : c.tokens) EXPECT_EQ(v, 1.5f);
        for (double v : c.representation) EXPECT_EQ(v, 1.5);
    }
}

TEST(Chunker, StoredTokensAreSinglePrecisionAndRepresentationIsTheirMean) {
    Matrix pooled(3, 2);
    pooled.data = {0.1, 0.2, 0.3, 0.4, 0.5, 1.0 / 3.0};
    const auto chunk = make_chunk("v", 0, pooled, 0, 4);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(chunk.tokens[i], static_cast<float>(pooled.data[i]));
    const double mean0 = (double(float(0.1)) + double(float(0.3)) + double(float(0.5))) / 3.0;
    EXPECT_EQ(chunk.representation[0], mean0);
}

TEST(Chunker, RejectsBadInputs) {
    EXPECT_THROW(tokenize_video(ramp_frames(0, 2, 2, 1), ChunkConfig{}), ShapeError);
    EXPECT_THROW(tokenize_video(ramp_frames(4, 3, 4, 1), ChunkConfig{}), ShapeError);
    EXPECT_THROW(tokenize_video(ramp_frames(4, 2, 2, 0), ChunkConfig{}), ShapeError);
    auto short_data = ramp_frames(4, 2, 2, 1);
    short_data.data.pop_back();
    EXPECT_THROW(tokenize_video(short_data, ChunkConfig{}), ShapeError);
    ChunkConfig bad_stride;
    bad_stride.spatial_stride = 4;
    EXPECT_THROW(tokenize_video(ramp_frames(4, 6, 6, 1), bad_stride), ConfigError);
    ChunkConfig zero_m;
    zero_m.frames_per_chunk = 0;
    EXPECT_THROW(zero_m.validate(), ConfigError);
    EXPECT_THROW(pool_chunk_tokens(FrameTensor{}), ShapeError);
}
