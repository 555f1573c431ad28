#pragma once

// Chunk memory, frame/query feature files, and annotation records.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rvlm/chunker.hpp"
#include "rvlm/error.hpp"
#include "rvlm/format.hpp"
#include "rvlm/matrix.hpp"

namespace rvlm {

class NotFoundError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Frame features (record kind 0)

inline std::string encode_frame_features(const FrameFeatureMap& frames) {
    validate(frames);
    const std::uint32_t shape[] = {format::checked_u32(frames.frames, "T"), format::checked_u32(frames.height, "h"),
                                   format::checked_u32(frames.width, "w"), format::checked_u32(frames.dim, "D")};
    format::ByteWriter body;
    body.f32s(frames.data);
    return format::encode(format::RecordKind::FrameFeatures, shape, body.str());
}

inline FrameFeatureMap decode_frame_features(std::string_view bytes, std::string video_id) {
    const auto rec = format::decode(bytes, format::RecordKind::FrameFeatures, 4);
    FrameFeatureMap frames;
    frames.video_id = std::move(video_id);
    frames.frames = rec.shape[0];
    frames.height = rec.shape[1];
    frames.width = rec.shape[2];
    frames.dim = rec.shape[3];
    frames.data.resize(rec.element_count());
    format::ByteReader(rec.body).f32s(frames.data);
    try {
        validate(frames);
    } catch (const ShapeError& e) {
        throw DecodeError(DecodeFailure::ShapeMismatch, e.what());
    }
    return frames;
}

inline void write_frame_features(const std::filesystem::path& path, const FrameFeatureMap& frames) {
    format::write_file(path, encode_frame_features(frames));
}

/// Loads a frame-feature file; the video id is the file stem.
inline FrameFeatureMap import_frame_features(const std::filesystem::path& path) {
    return decode_frame_features(format::read_file(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Query features (record kind 2): n x D rows

inline std::string encode_query_features(const Matrix& rows) {
    const std::uint32_t shape[] = {format::checked_u32(rows.rows, "rows"), format::checked_u32(rows.cols, "cols")};
    format::ByteWriter body;
    body.f32s_from(rows.data);
    return format::encode(format::RecordKind::QueryFeatures, shape, body.str());
}

inline Matrix decode_query_features(std::string_view bytes) {
    const auto rec = format::decode(bytes, format::RecordKind::QueryFeatures, 2);
    Matrix m;
    m.rows = rec.shape[0];
    m.cols = rec.shape[1];
    m.data = format::ByteReader(rec.body).f64s_from_f32(rec.element_count());
    return m;
}

inline void write_query_features(const std::filesystem::path& path, const Matrix& rows) {
    format::write_file(path, encode_query_features(rows));
}

inline Matrix read_query_features(const std::filesystem::path& path) {
    return decode_query_features(format::read_file(path));
}

// ---------------------------------------------------------------------------
// Chunk store (record kind 1)

/// In-memory chunk bank keyed by video id. Every chunk shares one
/// (token_count, dim) shape; per-video indices run 0..L-1.
class ChunkStore {
public:
    static constexpr std::uint32_t kFormatVersion = format::kVersion;

    void add_video(std::vector<Chunk> chunks) {
        if (chunks.empty()) throw ShapeError("add_video: no chunks");
        const std::string id = chunks.front().video_id;
        if (entries_.contains(id)) throw ShapeError("add_video: video '" + id + "' already present");
        const std::size_t tokens = chunks.front().token_count;
        const std::size_t dim = chunks.front().dim;
        if (tokens == 0 || dim == 0) throw ShapeError("add_video: empty chunk shape");
        if (!entries_.empty() && (tokens != token_count_ || dim != dim_)) {
            throw ShapeError("add_video: chunk shape (" + std::to_string(tokens) + ", " + std::to_string(dim) +
                             ") does not match store shape (" + std::to_string(token_count_) + ", " +
                             std::to_string(dim_) + ")");
        }
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            const Chunk& c = chunks[i];
            if (c.video_id != id) throw ShapeError("add_video: mixed video ids");
            if (c.index != i) throw ShapeError("add_video: chunk indices must be 0..L-1 without gaps");
            if (c.token_count != tokens || c.dim != dim) throw ShapeError("add_video: inconsistent chunk shapes");
            if (c.tokens.size() != tokens * dim || c.representation.size() != dim) {
                throw ShapeError("add_video: chunk buffers do not match declared shape");
            }
        }
        token_count_ = tokens;
        dim_ = dim;
        entries_.emplace(id, std::move(chunks));
    }

    const std::vector<Chunk>& chunks(const std::string& video_id) const {
        auto it = entries_.find(video_id);
        if (it == entries_.end()) throw NotFoundError("video '" + video_id + "' not in store");
        return it->second;
    }

    bool contains(const std::string& video_id) const { return entries_.contains(video_id); }
    bool empty() const { return entries_.empty(); }
    std::size_t video_count() const { return entries_.size(); }
    std::size_t token_count() const { return token_count_; }
    std::size_t dim() const { return dim_; }
    const std::map<std::string, std::vector<Chunk>>& entries() const { return entries_; }

    std::size_t total_chunks() const {
        std::size_t n = 0;
        for (const auto& [id, v] : entries_) n += v.size();
        return n;
    }

    bool operator==(const ChunkStore&) const = default;

private:
    std::map<std::string, std::vector<Chunk>> entries_;
    std::size_t token_count_ = 0;
    std::size_t dim_ = 0;
};

inline const std::vector<Chunk>& get_chunks(const ChunkStore& store, const std::string& video_id) {
    return store.chunks(video_id);
}

// Body layout: per video { u32 id_len, id bytes, u32 L, L x (u32 begin, u32 end) },
// then all token payloads as f32 in video then chunk order.
inline std::string encode_store(const ChunkStore& store) {
    const std::uint32_t shape[] = {format::checked_u32(store.video_count(), "videos"),
                                   format::checked_u32(store.total_chunks(), "chunks"),
                                   format::checked_u32(store.token_count(), "tokens"),
                                   format::checked_u32(store.dim(), "dim")};
    format::ByteWriter body;
    for (const auto& [id, chunks] : store.entries()) {
        body.u32(format::checked_u32(id.size(), "video id length"));
        body.bytes(id);
        body.u32(format::checked_u32(chunks.size(), "chunk count"));
        for (const Chunk& c : chunks) {
            body.u32(format::checked_u32(c.frame_begin, "frame_begin"));
            body.u32(format::checked_u32(c.frame_end, "frame_end"));
        }
    }
    for (const auto& [id, chunks] : store.entries()) {
        for (const Chunk& c : chunks) body.f32s(c.tokens);
    }
    return format::encode(format::RecordKind::ChunkStore, shape, body.str());
}

inline ChunkStore decode_store(std::string_view bytes) {
    const auto rec = format::decode(bytes, format::RecordKind::ChunkStore, 4);
    const std::size_t n_videos = rec.shape[0];
    const std::size_t n_chunks = rec.shape[1];
    const std::size_t tokens = rec.shape[2];
    const std::size_t dim = rec.shape[3];
    if ((n_videos == 0) != (n_chunks == 0) || (n_chunks > 0 && (tokens == 0 || dim == 0))) {
        throw DecodeError(DecodeFailure::ShapeMismatch, "inconsistent store header");
    }

    format::ByteReader r(rec.body);
    struct Meta {
        std::string id;
        std::vector<std::pair<std::uint32_t, std::uint32_t>> spans;
    };
    std::vector<Meta> metas(n_videos);
    std::size_t seen = 0;
    for (auto& m : metas) {
        m.id = std::string(r.bytes(r.u32()));
        const std::uint32_t count = r.u32();
        if (count == 0) throw DecodeError(DecodeFailure::Malformed, "video '" + m.id + "' has no chunks");
        seen += count;
        if (seen > n_chunks) throw DecodeError(DecodeFailure::ShapeMismatch, "chunk count exceeds header");
        m.spans.resize(count);
        for (auto& [b, e] : m.spans) {
            b = r.u32();
            e = r.u32();
        }
    }
    if (seen != n_chunks) throw DecodeError(DecodeFailure::ShapeMismatch, "chunk count disagrees with header");
    const std::size_t payload = n_chunks * tokens * dim * sizeof(float);
    if (r.remaining() < payload) throw DecodeError(DecodeFailure::Truncated, "token payload truncated");
    if (r.remaining() > payload) throw DecodeError(DecodeFailure::ShapeMismatch, "trailing bytes after payload");

    ChunkStore store;
    for (auto& m : metas) {
        std::vector<Chunk> chunks(m.spans.size());
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            Chunk& c = chunks[i];
            c.video_id = m.id;
            c.index = i;
            c.token_count = tokens;
            c.dim = dim;
            c.tokens.resize(tokens * dim);
            r.f32s(c.tokens);
            c.representation = chunk_representation(c.tokens, tokens, dim);
            c.frame_begin = m.spans[i].first;
            c.frame_end = m.spans[i].second;
        }
        try {
            store.add_video(std::move(chunks));
        } catch (const ShapeError& e) {
            throw DecodeError(DecodeFailure::Malformed, e.what());
        }
    }
    return store;
}

inline void save(const ChunkStore& store, const std::filesystem::path& path) {
    format::write_file(path, encode_store(store));
}

inline ChunkStore load(const std::filesystem::path& path) { return decode_store(format::read_file(path)); }

// ---------------------------------------------------------------------------
// Annotations: one JSON object per line. Feature vectors are referenced as
// {"file": <kind-2 file, relative to the annotation file>, "row": n}.

struct FeatureRef {
    std::string file;
    std::size_t row = 0;

    bool operator==(const FeatureRef&) const = default;
};

struct AnnotationRecord {
    std::string video_id;
    std::string question_id;
    FeatureRef text_ref;
    Vector text_feature;
    std::vector<std::size_t> ground_truth_chunks;  // sorted, unique
    std::optional<std::string> answer_text;
    std::optional<FeatureRef> aligned_ref;
    std::optional<Vector> aligned_feature;
};

using AnnotationSet = std::vector<AnnotationRecord>;

namespace detail {

inline FeatureRef parse_ref(const nlohmann::json& j, const char* field) {
    if (!j.is_object() || !j.contains("file") || !j.contains("row") || !j["file"].is_string() ||
        !j["row"].is_number_unsigned()) {
        throw DecodeError(DecodeFailure::Malformed, std::string(field) + " must be {\"file\": str, \"row\": uint}");
    }
    return {j["file"].get<std::string>(), j["row"].get<std::size_t>()};
}

class FeatureCache {
public:
    explicit FeatureCache(std::filesystem::path base) : base_(std::move(base)) {}

    Vector fetch(const FeatureRef& ref) {
        auto it = files_.find(ref.file);
        if (it == files_.end()) it = files_.emplace(ref.file, read_query_features(base_ / ref.file)).first;
        const Matrix& m = it->second;
        if (ref.row >= m.rows) {
            throw DecodeError(DecodeFailure::OutOfRange,
                              "row " + std::to_string(ref.row) + " not in " + ref.file + " (" + std::to_string(m.rows) + " rows)");
        }
        auto row = m.row(ref.row);
        return {row.begin(), row.end()};
    }

private:
    std::filesystem::path base_;
    std::map<std::string, Matrix> files_;
};

}  // namespace detail

inline nlohmann::json to_json(const AnnotationRecord& rec) {
    nlohmann::json j;
    j["video_id"] = rec.video_id;
    j["question_id"] = rec.question_id;
    j["text_feature"] = {{"file", rec.text_ref.file}, {"row", rec.text_ref.row}};
    j["ground_truth_chunks"] = rec.ground_truth_chunks;
    if (rec.answer_text) j["answer_text"] = *rec.answer_text;
    if (rec.aligned_ref) j["aligned_feature"] = {{"file", rec.aligned_ref->file}, {"row", rec.aligned_ref->row}};
    return j;
}

inline void save_annotations(const std::filesystem::path& path, const AnnotationSet& records) {
    std::string text;
    for (const auto& rec : records) {
        text += to_json(rec).dump();
        text += '\n';
    }
    format::write_file(path, text);
}

/// Parses annotation lines and resolves feature references. Ground-truth
/// indices are checked against the video's chunk count in `store`.
inline AnnotationSet load_annotations(const std::filesystem::path& path, const ChunkStore& store) {
    const std::string text = format::read_file(path);
    detail::FeatureCache cache(path.parent_path());
    AnnotationSet records;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string_view line(text.data() + start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DecodeError(DecodeFailure::Malformed, where + ": " + e.what());
        }
        try {
            AnnotationRecord rec;
            rec.video_id = j.at("video_id").get<std::string>();
            rec.question_id = j.at("question_id").get<std::string>();
            rec.text_ref = detail::parse_ref(j.at("text_feature"), "text_feature");
            auto gt = j.at("ground_truth_chunks").get<std::vector<std::size_t>>();
            std::set<std::size_t> unique(gt.begin(), gt.end());
            rec.ground_truth_chunks.assign(unique.begin(), unique.end());
            if (j.contains("answer_text") && !j["answer_text"].is_null()) {
                rec.answer_text = j["answer_text"].get<std::string>();
            }
            if (j.contains("aligned_feature")) rec.aligned_ref = detail::parse_ref(j["aligned_feature"], "aligned_feature");

            const std::size_t chunk_count = store.chunks(rec.video_id).size();
            for (std::size_t idx : rec.ground_truth_chunks) {
                if (idx >= chunk_count) {
                    throw DecodeError(DecodeFailure::OutOfRange, "ground-truth chunk " + std::to_string(idx) +
                                                                     " outside [0, " + std::to_string(chunk_count) +
                                                                     ") for video '" + rec.video_id + "'");
                }
            }
            rec.text_feature = cache.fetch(rec.text_ref);
            if (rec.aligned_ref) rec.aligned_feature = cache.fetch(*rec.aligned_ref);
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw DecodeError(DecodeFailure::Malformed, where + ": " + e.what());
        } catch (const DecodeError& e) {
            throw DecodeError(e.failure(), where + ": " + e.detail());
        } catch (const NotFoundError& e) {
            throw DecodeError(DecodeFailure::OutOfRange, where + ": " + e.what());
        }
    }
    return records;
}

}  // namespace rvlm
