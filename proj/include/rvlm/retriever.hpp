#pragma once

// Question-guided chunk retrieval: a two-layer MLP lifts a frozen text
// feature into the vision feature space, chunks are scored by cosine
// similarity against their representations, and the top-K are exported in
// time order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rvlm/chunker.hpp"
#include "rvlm/error.hpp"
#include "rvlm/format.hpp"
#include "rvlm/matrix.hpp"
#include "rvlm/store.hpp"

namespace rvlm {

inline constexpr double kCosineEpsilon = 1e-12;

/// q = W2 relu(W1 t + b1) + b2
struct QueryEncoder {
    Matrix w1;  // hidden x text_dim
    Vector b1;
    Matrix w2;  // vision_dim x hidden
    Vector b2;

    std::size_t text_dim() const { return w1.cols; }
    std::size_t hidden_dim() const { return w1.rows; }
    std::size_t vision_dim() const { return w2.rows; }

    void validate() const {
        if (w1.rows == 0 || w1.cols == 0 || w2.rows == 0) throw ShapeError("query encoder has an empty layer");
        if (b1.size() != w1.rows) throw ShapeError("query encoder: b1 size does not match W1 rows");
        if (w2.cols != w1.rows) throw ShapeError("query encoder: W2 columns do not match hidden width");
        if (b2.size() != w2.rows) throw ShapeError("query encoder: b2 size does not match W2 rows");
    }

    std::size_t parameter_count() const { return w1.data.size() + b1.size() + w2.data.size() + b2.size(); }

    bool operator==(const QueryEncoder&) const = default;
};

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
inline QueryEncoder make_encoder(std::size_t text_dim, std::size_t hidden_dim, std::size_t vision_dim,
                                 std::uint64_t seed) {
    if (text_dim == 0 || hidden_dim == 0 || vision_dim == 0) throw ConfigError("encoder dimensions must be positive");
    std::mt19937_64 rng(seed);
    QueryEncoder enc{Matrix(hidden_dim, text_dim), Vector(hidden_dim, 0.0), Matrix(vision_dim, hidden_dim),
                     Vector(vision_dim, 0.0)};
    const double bound1 = std::sqrt(6.0 / static_cast<double>(text_dim));
    std::uniform_real_distribution<double> u1(-bound1, bound1);
    for (double& w : enc.w1.data) w = u1(rng);
    const double bound2 = std::sqrt(6.0 / static_cast<double>(hidden_dim));
    std::uniform_real_distribution<double> u2(-bound2, bound2);
    for (double& w : enc.w2.data) w = u2(rng);
    return enc;
}

inline Vector encode_query(std::span<const double> text_feature, const QueryEncoder& enc) {
    enc.validate();
    Vector hidden = affine(enc.w1, text_feature, enc.b1);
    for (double& h : hidden) h = h > 0.0 ? h : 0.0;
    return affine(enc.w2, hidden, enc.b2);
}

/// Cosine similarity; 0 when either vector is (numerically) zero.
inline double cosine_similarity(std::span<const double> q, std::span<const double> v) {
    const double d = dot(q, v);
    const double denom = norm(q) * norm(v);
    if (denom < kCosineEpsilon) return 0.0;
    return std::clamp(d / denom, -1.0, 1.0);
}

inline Vector score_chunks(std::span<const double> query, std::span<const Chunk> chunks) {
    Vector scores;
    scores.reserve(chunks.size());
    for (const Chunk& c : chunks) scores.push_back(cosine_similarity(query, c.representation));
    return scores;
}

inline Vector score_rows(std::span<const double> query, const Matrix& rows) {
    Vector scores;
    scores.reserve(rows.rows);
    for (std::size_t r = 0; r < rows.rows; ++r) scores.push_back(cosine_similarity(query, rows.row(r)));
    return scores;
}

struct ScoredChunk {
    std::size_t index = 0;
    double score = 0.0;

    bool operator==(const ScoredChunk&) const = default;
};

/// Full ranking: score descending, ties to the lower index.
inline std::vector<ScoredChunk> rank_all(std::span<const double> scores) {
    if (scores.empty()) throw ShapeError("cannot rank an empty score list");
    std::vector<ScoredChunk> ranked(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) throw NumericError("NaN similarity score at chunk " + std::to_string(i));
        ranked[i] = {i, scores[i]};
    }
    std::sort(ranked.begin(), ranked.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
        return a.score != b.score ? a.score > b.score : a.index < b.index;
    });
    return ranked;
}

inline std::vector<ScoredChunk> top_k(std::span<const double> scores, std::size_t k) {
    if (k < 1) throw ConfigError("K must be >= 1");
    auto ranked = rank_all(scores);
    ranked.resize(std::min(k, ranked.size()));
    return ranked;
}

inline std::vector<std::size_t> time_ordered(std::span<const ScoredChunk> ranked) {
    std::vector<std::size_t> idx;
    idx.reserve(ranked.size());
    for (const auto& r : ranked) idx.push_back(r.index);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Row-wise affine map lifting tokens to the downstream embedding width.
struct Projector {
    Matrix weight;  // out_dim x in_dim
    Vector bias;

    std::size_t in_dim() const { return weight.cols; }
    std::size_t out_dim() const { return weight.rows; }

    void validate() const {
        if (weight.rows == 0 || weight.cols == 0) throw ShapeError("projector has an empty weight matrix");
        if (bias.size() != weight.rows) throw ShapeError("projector bias size does not match output width");
    }

    bool operator==(const Projector&) const = default;
};

inline Matrix project_tokens(const Matrix& tokens, const Projector& proj) {
    proj.validate();
    detail::require_same_size(tokens.cols, proj.in_dim(), "project_tokens");
    Matrix out(tokens.rows, proj.out_dim());
    for (std::size_t r = 0; r < tokens.rows; ++r) {
        const Vector y = affine(proj.weight, tokens.row(r), proj.bias);
        std::copy(y.begin(), y.end(), out.row(r).begin());
    }
    return out;
}

struct RetrievalResult {
    std::string video_id;
    Vector scores;                              // one per chunk, chunk order
    std::vector<ScoredChunk> ranked;            // min(K, L) best, score descending
    std::vector<std::size_t> selected_time_ordered;
    std::optional<Matrix> exported_tokens;      // (min(K, L) * (N+M)) x D, time order

    bool operator==(const RetrievalResult&) const = default;
};

struct RetrieveOptions {
    bool export_tokens = true;
    const Projector* projector = nullptr;
};

inline Matrix gather_tokens(std::span<const Chunk> chunks, std::span<const std::size_t> selection) {
    if (chunks.empty()) throw ShapeError("gather_tokens: no chunks");
    const std::size_t per_chunk = chunks.front().token_count;
    const std::size_t dim = chunks.front().dim;
    Matrix out(selection.size() * per_chunk, dim);
    std::size_t row = 0;
    for (std::size_t idx : selection) {
        const Chunk& c = chunks[idx];
        for (std::size_t t = 0; t < per_chunk; ++t, ++row) {
            auto src = c.token(t);
            std::copy(src.begin(), src.end(), out.row(row).begin());
        }
    }
    return out;
}

inline RetrievalResult retrieve_with_query(std::span<const double> query, const std::string& video_id,
                                           const ChunkStore& store, std::size_t k, const RetrieveOptions& opts = {}) {
    const auto& chunks = store.chunks(video_id);
    RetrievalResult result;
    result.video_id = video_id;
    result.scores = score_chunks(query, chunks);
    result.ranked = top_k(result.scores, k);
    result.selected_time_ordered = time_ordered(result.ranked);
    if (opts.export_tokens) {
        Matrix tokens = gather_tokens(chunks, result.selected_time_ordered);
        result.exported_tokens = opts.projector ? project_tokens(tokens, *opts.projector) : std::move(tokens);
    }
    return result;
}

inline RetrievalResult retrieve(std::span<const double> text_feature, const std::string& video_id,
                                const ChunkStore& store, const QueryEncoder& enc, const ChunkConfig& cfg,
                                const RetrieveOptions& opts = {}) {
    cfg.validate();
    const Vector query = encode_query(text_feature, enc);
    if (!store.empty()) detail::require_same_size(query.size(), store.dim(), "retrieve (encoder output vs store)");
    return retrieve_with_query(query, video_id, store, cfg.top_k, opts);
}

/// Parameter-free matching in a shared embedding space (no query MLP).
inline std::vector<ScoredChunk> baseline_match(std::span<const double> aligned_query, const Matrix& aligned_chunk_reps,
                                               std::size_t k) {
    return top_k(score_rows(aligned_query, aligned_chunk_reps), k);
}

/// K evenly spaced indices floor((i + 1/2) L / K); every index when L <= K.
inline std::vector<std::size_t> uniform_select(std::size_t chunk_count, std::size_t k) {
    if (k < 1) throw ConfigError("K must be >= 1");
    std::vector<std::size_t> idx;
    if (chunk_count <= k) {
        idx.resize(chunk_count);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
    for (std::size_t i = 0; i < k; ++i) idx.push_back(((2 * i + 1) * chunk_count) / (2 * k));
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// Weight files: kind 3 (W1, b1, W2, b2) and kind 4 (P, b)

inline std::string encode_encoder(const QueryEncoder& enc) {
    enc.validate();
    const std::uint32_t shape[] = {format::checked_u32(enc.text_dim(), "text_dim"),
                                   format::checked_u32(enc.hidden_dim(), "hidden_dim"),
                                   format::checked_u32(enc.vision_dim(), "vision_dim")};
    format::ByteWriter body;
    body.f32s_from(enc.w1.data);
    body.f32s_from(enc.b1);
    body.f32s_from(enc.w2.data);
    body.f32s_from(enc.b2);
    return format::encode(format::RecordKind::Encoder, shape, body.str());
}

inline QueryEncoder decode_encoder(std::string_view bytes) {
    const auto rec = format::decode(bytes, format::RecordKind::Encoder, 3);
    const std::size_t t = rec.shape[0], h = rec.shape[1], v = rec.shape[2];
    if (t == 0 || h == 0 || v == 0) throw DecodeError(DecodeFailure::ShapeMismatch, "encoder dims must be positive");
    format::ByteReader r(rec.body);
    QueryEncoder enc;
    enc.w1 = Matrix(h, t);
    enc.w1.data = r.f64s_from_f32(h * t);
    enc.b1 = r.f64s_from_f32(h);
    enc.w2 = Matrix(v, h);
    enc.w2.data = r.f64s_from_f32(v * h);
    enc.b2 = r.f64s_from_f32(v);
    if (r.remaining() != 0) throw DecodeError(DecodeFailure::ShapeMismatch, "trailing bytes in encoder payload");
    return enc;
}

inline void save_encoder(const std::filesystem::path& path, const QueryEncoder& enc) {
    format::write_file(path, encode_encoder(enc));
}

inline QueryEncoder load_encoder(const std::filesystem::path& path) {
    return decode_encoder(format::read_file(path));
}

inline std::string encode_projector(const Projector& proj) {
    proj.validate();
    const std::uint32_t shape[] = {format::checked_u32(proj.in_dim(), "in_dim"),
                                   format::checked_u32(proj.out_dim(), "out_dim")};
    format::ByteWriter body;
    body.f32s_from(proj.weight.data);
    body.f32s_from(proj.bias);
    return format::encode(format::RecordKind::Projector, shape, body.str());
}

inline Projector decode_projector(std::string_view bytes) {
    const auto rec = format::decode(bytes, format::RecordKind::Projector, 2);
    const std::size_t in = rec.shape[0], out = rec.shape[1];
    if (in == 0 || out == 0) throw DecodeError(DecodeFailure::ShapeMismatch, "projector dims must be positive");
    format::ByteReader r(rec.body);
    Projector proj;
    proj.weight = Matrix(out, in);
    proj.weight.data = r.f64s_from_f32(out * in);
    proj.bias = r.f64s_from_f32(out);
    if (r.remaining() != 0) throw DecodeError(DecodeFailure::ShapeMismatch, "trailing bytes in projector payload");
    return proj;
}

inline void save_projector(const std::filesystem::path& path, const Projector& proj) {
    format::write_file(path, encode_projector(proj));
}

inline Projector load_projector(const std::filesystem::path& path) {
    return decode_projector(format::read_file(path));
}

}  // namespace rvlm
