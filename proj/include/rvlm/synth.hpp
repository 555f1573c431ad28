#pragma once

// Synthetic corpora with planted question-relevant chunks.
//
// Each query owns a latent unit direction u. Its g planted chunks have
// representations normalize(u + noise); every other chunk is an independent
// random unit vector. The query's text feature is A^T normalize(u + noise),
// where A (vision_dim x text_dim) has orthonormal rows, so A maps the text
// feature back onto u. With the identity gap the text feature is already in
// the vision space.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rvlm/chunker.hpp"
#include "rvlm/error.hpp"
#include "rvlm/matrix.hpp"
#include "rvlm/store.hpp"

namespace rvlm {

enum class ModalityGap { Identity, Linear };

struct SynthSpec {
    std::size_t n_videos = 200;
    std::size_t chunks_per_video = 40;       // L
    std::size_t ground_truth_per_video = 2;  // g
    std::size_t vision_dim = 32;
    std::size_t text_dim = 32;
    std::size_t tokens_per_chunk = 68;
    std::size_t frames_per_chunk = 4;
    double noise_sigma = 0.05;
    double planted_share = 1.0;  // weight of u in a planted chunk; the rest is chunk-specific content
    double token_jitter = 0.1;
    ModalityGap gap = ModalityGap::Linear;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_videos < 1) throw ConfigError("n_videos must be >= 1");
        if (chunks_per_video < 1) throw ConfigError("chunks_per_video must be >= 1");
        if (ground_truth_per_video < 1 || ground_truth_per_video > chunks_per_video) {
            throw ConfigError("ground_truth_per_video must lie in [1, chunks_per_video]");
        }
        if (vision_dim < 1 || tokens_per_chunk < 1 || frames_per_chunk < 1) throw ConfigError("dimensions must be >= 1");
        if (!(noise_sigma >= 0.0) || !(token_jitter >= 0.0)) throw ConfigError("noise scales must be >= 0");
        if (!(planted_share > 0.0 && planted_share <= 1.0)) throw ConfigError("planted_share must lie in (0, 1]");
        if (gap == ModalityGap::Identity && text_dim != vision_dim) {
            throw ConfigError("identity modality gap requires text_dim == vision_dim");
        }
        if (gap == ModalityGap::Linear && text_dim < vision_dim) {
            throw ConfigError("linear modality gap requires text_dim >= vision_dim");
        }
    }
};

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
    s.n_videos = j.value("n_videos", s.n_videos);
    s.chunks_per_video = j.value("chunks_per_video", s.chunks_per_video);
    s.ground_truth_per_video = j.value("ground_truth_per_video", s.ground_truth_per_video);
    s.vision_dim = j.value("vision_dim", s.vision_dim);
    s.text_dim = j.value("text_dim", s.text_dim);
    s.tokens_per_chunk = j.value("tokens_per_chunk", s.tokens_per_chunk);
    s.frames_per_chunk = j.value("frames_per_chunk", s.frames_per_chunk);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.planted_share = j.value("planted_share", s.planted_share);
    s.token_jitter = j.value("token_jitter", s.token_jitter);
    s.seed = j.value("seed", s.seed);
    const std::string gap = j.value("gap", std::string(s.gap == ModalityGap::Identity ? "identity" : "linear"));
    if (gap == "identity") {
        s.gap = ModalityGap::Identity;
    } else if (gap == "linear") {
        s.gap = ModalityGap::Linear;
    } else {
        throw ConfigError("gap must be \"identity\" or \"linear\"");
    }
}

struct SynthCorpus {
    ChunkStore store;
    AnnotationSet annotations;
    Matrix text_features;             // one row per annotation, in order
    std::optional<Matrix> transform;  // A, vision_dim x text_dim (linear gap only)
};

inline constexpr const char* kSynthQueryFile = "queries.rvlm";

namespace detail {

inline Vector gaussian_vector(std::mt19937_64& rng, std::size_t n, double sigma = 1.0) {
    std::normal_distribution<double> normal(0.0, sigma);
    Vector v(n);
    for (double& x : v) x = normal(rng);
    return v;
}

inline void normalize_in_place(Vector& v) {
    const double n = norm(v);
    if (n == 0.0) throw NumericError("cannot normalize a zero vector");
    for (double& x : v) x /= n;
}

inline Vector random_unit(std::mt19937_64& rng, std::size_t n) {
    Vector v = gaussian_vector(rng, n);
    normalize_in_place(v);
    return v;
}

// share * u + sqrt(1 - share^2) * c with c a random unit vector orthogonal to u.
inline Vector planted_direction(std::mt19937_64& rng, const Vector& u, double share) {
    if (share >= 1.0) return u;
    Vector c = gaussian_vector(rng, u.size());
    const double along = dot(c, u);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= along * u[i];
    normalize_in_place(c);
    const double rest = std::sqrt(1.0 - share * share);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = share * u[i] + rest * c[i];
    return c;
}

inline Vector perturbed_unit(std::mt19937_64& rng, const Vector& u, double sigma) {
    Vector v = u;
    if (sigma > 0.0) {
        const Vector e = gaussian_vector(rng, u.size(), sigma);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += e[i];
    }
    normalize_in_place(v);
    return v;
}

/// Rows of the result are orthonormal: modified Gram-Schmidt (QR) of a
/// Gaussian matrix, applied twice for stability.
inline Matrix random_orthonormal_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    Matrix q(rows, cols);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : q.data) x = normal(rng);
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = q.row(r);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t p = 0; p < r; ++p) {
                const double proj = dot(q.row(p), row);
                auto prev = q.row(p);
                for (std::size_t c = 0; c < cols; ++c) row[c] -= proj * prev[c];
            }
        }
        const double n = norm(row);
        for (double& x : row) x /= n;
    }
    return q;
}

inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

// Tokens = representation + zero-mean jitter, rounded to f32; the stored
// representation is then recomputed from the rounded tokens.
inline Chunk synth_chunk(std::mt19937_64& rng, const std::string& video_id, std::size_t index, const Vector& rep,
                         const SynthSpec& spec) {
    Matrix tokens(spec.tokens_per_chunk, rep.size());
    std::normal_distribution<double> normal(0.0, spec.token_jitter);
    for (double& x : tokens.data) x = spec.token_jitter > 0.0 ? normal(rng) : 0.0;
    const Vector jitter_mean = row_mean(tokens);
    for (std::size_t r = 0; r < tokens.rows; ++r) {
        auto row = tokens.row(r);
        for (std::size_t d = 0; d < row.size(); ++d) row[d] += rep[d] - jitter_mean[d];
    }
    const std::size_t begin = index * spec.frames_per_chunk;
    return make_chunk(video_id, index, tokens, begin, begin + spec.frames_per_chunk);
}

}  // namespace detail

inline std::string synth_video_id(std::size_t i) {
    std::string digits = std::to_string(i);
    return "vid" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

inline SynthCorpus generate_corpus(const SynthSpec& spec) {
    spec.validate();
    SynthCorpus corpus;
    auto global = detail::derived_rng(spec.seed, 0xA11CEull);
    if (spec.gap == ModalityGap::Linear) {
        corpus.transform = detail::random_orthonormal_rows(global, spec.vision_dim, spec.text_dim);
    }
    corpus.text_features = Matrix(spec.n_videos, spec.text_dim);

    for (std::size_t v = 0; v < spec.n_videos; ++v) {
        auto rng = detail::derived_rng(spec.seed, v + 1);
        const std::string id = synth_video_id(v);
        const Vector latent = detail::random_unit(rng, spec.vision_dim);

        std::vector<std::size_t> order(spec.chunks_per_video);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> planted(order.begin(),
                                         order.begin() + static_cast<std::ptrdiff_t>(spec.ground_truth_per_video));
        std::sort(planted.begin(), planted.end());

        std::vector<Chunk> chunks;
        chunks.reserve(spec.chunks_per_video);
        for (std::size_t j = 0; j < spec.chunks_per_video; ++j) {
            const bool is_planted = std::binary_search(planted.begin(), planted.end(), j);
            const Vector rep = is_planted ? detail::perturbed_unit(
                                                rng, detail::planted_direction(rng, latent, spec.planted_share),
                                                spec.noise_sigma)
                                          : detail::random_unit(rng, spec.vision_dim);
            chunks.push_back(detail::synth_chunk(rng, id, j, rep, spec));
        }
        corpus.store.add_video(std::move(chunks));

        const Vector target = detail::perturbed_unit(rng, latent, spec.noise_sigma);
        Vector text = corpus.transform ? transpose_times(*corpus.transform, target) : target;
        // Interchange precision, so a written corpus reloads without loss.
        for (double& x : text) x = static_cast<double>(static_cast<float>(x));
        std::copy(text.begin(), text.end(), corpus.text_features.row(v).begin());

        AnnotationRecord rec;
        rec.video_id = id;
        rec.question_id = "q" + id.substr(3);
        rec.text_ref = {kSynthQueryFile, v};
        rec.text_feature = text;
        rec.ground_truth_chunks = planted;
        corpus.annotations.push_back(std::move(rec));
    }
    return corpus;
}

/// Seeded, disjoint split; round(fraction * n) records go to the first set.
/// Both halves keep the input order.
inline std::pair<AnnotationSet, AnnotationSet> split(const AnnotationSet& annotations, double fraction,
                                                     std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("split fraction must lie in [0, 1]");
    const std::size_t n = annotations.size();
    const auto n_first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> in_first(n, false);
    for (std::size_t i = 0; i < n_first; ++i) in_first[order[i]] = true;

    std::pair<AnnotationSet, AnnotationSet> out;
    for (std::size_t i = 0; i < n; ++i) (in_first[i] ? out.first : out.second).push_back(annotations[i]);
    return out;
}

/// Writes store.rvlm, queries.rvlm, annotations.jsonl and (linear gap)
/// gap.rvlm into `dir`.
inline void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
    std::filesystem::create_directories(dir);
    save(corpus.store, dir / "store.rvlm");
    write_query_features(dir / kSynthQueryFile, corpus.text_features);
    save_annotations(dir / "annotations.jsonl", corpus.annotations);
    if (corpus.transform) write_query_features(dir / "gap.rvlm", *corpus.transform);
}

}  // namespace rvlm
