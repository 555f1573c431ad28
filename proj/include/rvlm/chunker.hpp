#pragma once

// Video chunk tokenization: split a frame-feature tensor into fixed-length
// chunks, average-pool each chunk spatially, then reduce it to N spatial
// tokens (temporal means) plus M frame tokens (spatial means).

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rvlm/error.hpp"
#include "rvlm/matrix.hpp"

namespace rvlm {

/// Per-frame patch features of one video, laid out T x h x w x D (row-major).
struct FrameFeatureMap {
    std::string video_id;
    std::size_t frames = 0;  // T
    std::size_t height = 0;  // h, patches
    std::size_t width = 0;   // w, patches
    std::size_t dim = 0;     // D
    double fps = 1.0;
    std::vector<float> data;

    std::size_t expected_size() const { return frames * height * width * dim; }
};

struct ChunkConfig {
    std::size_t frames_per_chunk = 4;  // M
    std::size_t spatial_stride = 2;
    std::size_t top_k = 5;  // K

    void validate() const {
        if (frames_per_chunk < 1) throw ConfigError("frames_per_chunk must be >= 1");
        if (spatial_stride < 1) throw ConfigError("spatial_stride must be >= 1");
        if (top_k < 1) throw ConfigError("top_k must be >= 1");
    }
};

/// Dense frames x height x width x dim tensor in double precision.
struct FrameTensor {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t dim = 0;
    std::vector<double> data;

    FrameTensor() = default;
    FrameTensor(std::size_t t, std::size_t h, std::size_t w, std::size_t d)
        : frames(t), height(h), width(w), dim(d), data(t * h * w * d, 0.0) {}

    std::size_t offset(std::size_t t, std::size_t y, std::size_t x) const {
        return ((t * height + y) * width + x) * dim;
    }
    std::span<double> cell(std::size_t t, std::size_t y, std::size_t x) {
        return {data.data() + offset(t, y, x), dim};
    }
    std::span<const double> cell(std::size_t t, std::size_t y, std::size_t x) const {
        return {data.data() + offset(t, y, x), dim};
    }

    bool operator==(const FrameTensor&) const = default;
};

/// One retrieval unit: (N+M) x D pooled tokens plus their mean.
///
/// Tokens are kept in single precision, the interchange precision. The
/// representation is the double-precision mean of those stored tokens, so it
/// can always be recomputed bit-identically after a reload.
struct Chunk {
    std::string video_id;
    std::size_t index = 0;
    std::size_t token_count = 0;  // N + M
    std::size_t dim = 0;
    std::vector<float> tokens;
    Vector representation;
    std::size_t frame_begin = 0;
    std::size_t frame_end = 0;  // exclusive

    std::span<const float> token(std::size_t r) const { return {tokens.data() + r * dim, dim}; }

    bool operator==(const Chunk&) const = default;
};

inline void validate(const FrameFeatureMap& frames) {
    if (frames.frames < 1) throw ShapeError("frame feature map needs at least one frame");
    if (frames.height < 2 || frames.width < 2) throw ShapeError("patch grid must be at least 2x2");
    if (frames.height % 2 != 0 || frames.width % 2 != 0) throw ShapeError("patch grid height and width must be even");
    if (frames.dim < 1) throw ShapeError("feature dimension must be >= 1");
    if (frames.data.size() != frames.expected_size()) {
        throw ShapeError("frame feature data holds " + std::to_string(frames.data.size()) + " values, shape declares " +
                         std::to_string(frames.expected_size()));
    }
}

/// Splits into ceil(T/M) chunks of exactly M frames. A trailing partial chunk
/// is padded by repeating its last available frame.
inline std::vector<FrameTensor> split_into_chunks(const FrameFeatureMap& frames, const ChunkConfig& cfg) {
    validate(frames);
    cfg.validate();
    const std::size_t m = cfg.frames_per_chunk;
    const std::size_t count = (frames.frames + m - 1) / m;
    const std::size_t frame_size = frames.height * frames.width * frames.dim;

    std::vector<FrameTensor> chunks;
    chunks.reserve(count);
    for (std::size_t c = 0; c < count; ++c) {
        FrameTensor raw(m, frames.height, frames.width, frames.dim);
        for (std::size_t f = 0; f < m; ++f) {
            const std::size_t src = std::min(c * m + f, frames.frames - 1);
            const float* in = frames.data.data() + src * frame_size;
            std::copy(in, in + frame_size, raw.data.begin() + static_cast<std::ptrdiff_t>(f * frame_size));
        }
        chunks.push_back(std::move(raw));
    }
    return chunks;
}

/// Non-overlapping stride x stride window means over the patch grid.
inline FrameTensor spatial_downsample(const FrameTensor& raw, std::size_t stride) {
    if (stride < 1) throw ConfigError("spatial stride must be >= 1");
    if (raw.height % stride != 0 || raw.width % stride != 0) {
        throw ConfigError("spatial stride " + std::to_string(stride) + " does not divide the " +
                          std::to_string(raw.height) + "x" + std::to_string(raw.width) + " patch grid");
    }
    FrameTensor out(raw.frames, raw.height / stride, raw.width / stride, raw.dim);
    const double inv_area = 1.0 / static_cast<double>(stride * stride);
    for (std::size_t t = 0; t < out.frames; ++t) {
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                auto dst = out.cell(t, y, x);
                for (std::size_t dy = 0; dy < stride; ++dy) {
                    for (std::size_t dx = 0; dx < stride; ++dx) {
                        auto src = raw.cell(t, y * stride + dy, x * stride + dx);
                        for (std::size_t d = 0; d < raw.dim; ++d) dst[d] += src[d];
                    }
                }
                for (double& v : dst) v *= inv_area;
            }
        }
    }
    return out;
}

/// Rows 0..N-1: per-position means over frames (row-major grid order).
/// Rows N..N+M-1: per-frame means over all grid positions (time order).
inline Matrix pool_chunk_tokens(const FrameTensor& down) {
    if (down.frames == 0 || down.height == 0 || down.width == 0 || down.dim == 0) {
        throw ShapeError("pool_chunk_tokens: empty chunk tensor");
    }
    if (down.data.size() != down.frames * down.height * down.width * down.dim) {
        throw ShapeError("pool_chunk_tokens: data length does not match shape");
    }
    const std::size_t spatial = down.height * down.width;
    Matrix tokens(spatial + down.frames, down.dim);
    const double inv_frames = 1.0 / static_cast<double>(down.frames);
    const double inv_spatial = 1.0 / static_cast<double>(spatial);

    for (std::size_t t = 0; t < down.frames; ++t) {
        auto frame_row = tokens.row(spatial + t);
        for (std::size_t y = 0; y < down.height; ++y) {
            for (std::size_t x = 0; x < down.width; ++x) {
                auto src = down.cell(t, y, x);
                auto pos_row = tokens.row(y * down.width + x);
                for (std::size_t d = 0; d < down.dim; ++d) {
                    pos_row[d] += src[d];
                    frame_row[d] += src[d];
                }
            }
        }
    }
    for (std::size_t r = 0; r < spatial; ++r) {
        for (double& v : tokens.row(r)) v *= inv_frames;
    }
    for (std::size_t t = 0; t < down.frames; ++t) {
        for (double& v : tokens.row(spatial + t)) v *= inv_spatial;
    }
    return tokens;
}

inline Vector chunk_representation(const Matrix& tokens) { return row_mean(tokens); }

/// Mean of single-precision token rows, accumulated in double.
inline Vector chunk_representation(std::span<const float> tokens, std::size_t token_count, std::size_t dim) {
    if (token_count == 0 || tokens.size() != token_count * dim) {
        throw ShapeError("chunk_representation: token buffer does not match shape");
    }
    Vector mean(dim, 0.0);
    for (std::size_t r = 0; r < token_count; ++r) {
        for (std::size_t d = 0; d < dim; ++d) mean[d] += static_cast<double>(tokens[r * dim + d]);
    }
    for (double& v : mean) v /= static_cast<double>(token_count);
    return mean;
}

/// Builds a Chunk from pooled tokens, rounding them to storage precision.
inline Chunk make_chunk(std::string video_id, std::size_t index, const Matrix& pooled, std::size_t frame_begin,
                        std::size_t frame_end) {
    Chunk chunk;
    chunk.video_id = std::move(video_id);
    chunk.index = index;
    chunk.token_count = pooled.rows;
    chunk.dim = pooled.cols;
    chunk.tokens.resize(pooled.data.size());
    std::transform(pooled.data.begin(), pooled.data.end(), chunk.tokens.begin(),
                   [](double v) { return static_cast<float>(v); });
    chunk.representation = chunk_representation(chunk.tokens, chunk.token_count, chunk.dim);
    chunk.frame_begin = frame_begin;
    chunk.frame_end = frame_end;
    return chunk;
}

/// Full chunk pipeline for one video. Frame spans of padded chunks end at T.
inline std::vector<Chunk> tokenize_video(const FrameFeatureMap& frames, const ChunkConfig& cfg) {
    auto raw_chunks = split_into_chunks(frames, cfg);
    std::vector<Chunk> chunks;
    chunks.reserve(raw_chunks.size());
    const std::size_t m = cfg.frames_per_chunk;
    for (std::size_t c = 0; c < raw_chunks.size(); ++c) {
        const Matrix pooled = pool_chunk_tokens(spatial_downsample(raw_chunks[c], cfg.spatial_stride));
        chunks.push_back(make_chunk(frames.video_id, c, pooled, c * m, std::min((c + 1) * m, frames.frames)));
    }
    return chunks;
}

}  // namespace rvlm
