#pragma once

// Retrieval-quality metrics over annotated queries, chunk-selection baselines,
// and the token-count cost model for downstream LLM inference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rvlm/chunker.hpp"
#include "rvlm/error.hpp"
#include "rvlm/retriever.hpp"
#include "rvlm/store.hpp"

namespace rvlm {

/// 1 when the selection hits at least one ground-truth chunk.
inline int recall_at_k(std::span<const std::size_t> selected, std::span<const std::size_t> ground_truth) {
    for (std::size_t s : selected) {
        if (std::find(ground_truth.begin(), ground_truth.end(), s) != ground_truth.end()) return 1;
    }
    return 0;
}

/// Probability that K chunks drawn uniformly without replacement from L hit at
/// least one of g relevant chunks: 1 - C(L-g, K) / C(L, K).
inline double expected_uniform_hitrate(std::size_t chunk_count, std::size_t relevant, std::size_t k) {
    if (relevant > chunk_count) throw ConfigError("relevant chunk count exceeds chunk count");
    if (k < 1 || k > chunk_count) throw ConfigError("K must lie in [1, L]");
    if (relevant == 0) return 0.0;
    if (chunk_count - relevant < k) return 1.0;
    // C(L-g, K) / C(L, K) as a product of K ratios.
    double miss = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
        miss *= static_cast<double>(chunk_count - relevant - i) / static_cast<double>(chunk_count - i);
    }
    return 1.0 - miss;
}

/// Fraction of LLM inference FLOPs avoided when only K of the video's chunks
/// are fed, with cost proportional to total token count.
inline double flops_savings(std::size_t num_chunks, std::size_t tokens_per_chunk, std::size_t k, std::size_t text_tokens) {
    if (num_chunks == 0 || tokens_per_chunk == 0 || k == 0 || text_tokens == 0) {
        throw ConfigError("flops_savings arguments must be positive");
    }
    const double all_vision = static_cast<double>(num_chunks * tokens_per_chunk);
    const double kept_vision = static_cast<double>(std::min(k, num_chunks) * tokens_per_chunk);
    return std::max(0.0, (all_vision - kept_vision) / (static_cast<double>(text_tokens) + all_vision));
}

/// Round-half-up to a whole percent.
inline int round_percent(double fraction) { return static_cast<int>(std::floor(fraction * 100.0 + 0.5)); }

enum class Strategy { Retrieval, Uniform, ClipMatch };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::Retrieval: return "retrieval";
        case Strategy::Uniform: return "uniform";
        case Strategy::ClipMatch: return "clip_match";
    }
    return "unknown";
}

inline Strategy parse_strategy(const std::string& name) {
    if (name == "retrieval") return Strategy::Retrieval;
    if (name == "uniform") return Strategy::Uniform;
    if (name == "clip_match") return Strategy::ClipMatch;
    throw ConfigError("unknown strategy '" + name + "'");
}

struct StrategyReport {
    Strategy strategy = Strategy::Retrieval;
    double recall_at_k = 0.0;
    double mean_best_rank = 0.0;
    std::size_t n_queries = 0;
    std::size_t hits = 0;

    bool operator==(const StrategyReport&) const = default;
};

struct EvalReport {
    std::size_t k = 0;
    std::vector<StrategyReport> strategies;

    const StrategyReport& at(Strategy s) const {
        for (const auto& r : strategies) {
            if (r.strategy == s) return r;
        }
        throw NotFoundError(std::string("strategy '") + to_string(s) + "' not in report");
    }
    bool has(Strategy s) const {
        return std::any_of(strategies.begin(), strategies.end(), [s](const auto& r) { return r.strategy == s; });
    }

    bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
    /// Chunk features in the shared text/vision space for the clip_match
    /// baseline. Falls back to the main store when null.
    const ChunkStore* aligned_store = nullptr;
    bool include_clip_match = true;
};

namespace detail {

struct QueryRankings {
    std::size_t chunk_count = 0;
    const std::vector<std::size_t>* ground_truth = nullptr;
    std::vector<std::size_t> retrieval;   // full ranking, best first
    std::vector<std::size_t> clip_match;  // empty when unavailable
};

inline std::vector<std::size_t> ranking_indices(std::span<const double> scores) {
    std::vector<std::size_t> idx;
    for (const auto& r : rank_all(scores)) idx.push_back(r.index);
    return idx;
}

inline Matrix representation_matrix(const std::vector<Chunk>& chunks) {
    Matrix m(chunks.size(), chunks.front().dim);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        std::copy(chunks[i].representation.begin(), chunks[i].representation.end(), m.row(i).begin());
    }
    return m;
}

inline bool clip_match_available(const ChunkStore& store, const AnnotationSet& annotations, const ChunkStore& space) {
    for (const auto& rec : annotations) {
        const Vector& q = rec.aligned_feature ? *rec.aligned_feature : rec.text_feature;
        if (q.size() != space.dim() || !space.contains(rec.video_id)) return false;
        if (space.chunks(rec.video_id).size() != store.chunks(rec.video_id).size()) return false;
    }
    return true;
}

inline std::vector<QueryRankings> rank_queries(const ChunkStore& store, const AnnotationSet& annotations,
                                               const QueryEncoder& enc, const EvalOptions& opts) {
    if (annotations.empty()) throw ConfigError("evaluation needs at least one annotated query");
    enc.validate();
    if (enc.vision_dim() != store.dim()) throw ShapeError("encoder output width does not match store feature dim");
    const ChunkStore& space = opts.aligned_store ? *opts.aligned_store : store;
    const bool with_clip = opts.include_clip_match && clip_match_available(store, annotations, space);

    std::vector<QueryRankings> out;
    out.reserve(annotations.size());
    for (const auto& rec : annotations) {
        const auto& chunks = store.chunks(rec.video_id);
        QueryRankings qr;
        qr.chunk_count = chunks.size();
        qr.ground_truth = &rec.ground_truth_chunks;
        const Vector q = encode_query(rec.text_feature, enc);
        qr.retrieval = ranking_indices(score_chunks(q, chunks));
        if (with_clip) {
            const Vector& aligned_q = rec.aligned_feature ? *rec.aligned_feature : rec.text_feature;
            qr.clip_match = ranking_indices(score_rows(aligned_q, representation_matrix(space.chunks(rec.video_id))));
        }
        out.push_back(std::move(qr));
    }
    return out;
}

// 1-based position of the first ground-truth chunk in `order`; L + 1 when the
// query has no ground truth.
inline std::size_t best_rank(std::span<const std::size_t> order, const std::vector<std::size_t>& gt) {
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (std::binary_search(gt.begin(), gt.end(), order[i])) return i + 1;
    }
    return order.size() + 1;
}

// Evenly spaced picks first, then the remaining chunks in time order.
inline std::vector<std::size_t> uniform_order(std::size_t chunk_count, std::size_t k) {
    auto order = uniform_select(chunk_count, k);
    std::vector<bool> taken(chunk_count, false);
    for (auto i : order) taken[i] = true;
    for (std::size_t i = 0; i < chunk_count; ++i) {
        if (!taken[i]) order.push_back(i);
    }
    return order;
}

inline EvalReport report_at_k(const std::vector<QueryRankings>& rankings, std::size_t k) {
    if (k < 1) throw ConfigError("K must be >= 1");
    struct Tally {
        std::size_t hits = 0;
        std::size_t rank_sum = 0;
    };
    Tally retrieval, uniform, clip;
    const bool with_clip = !rankings.empty() && !rankings.front().clip_match.empty();
    for (const auto& qr : rankings) {
        const auto& gt = *qr.ground_truth;
        const std::size_t take = std::min(k, qr.chunk_count);
        auto tally = [&](Tally& t, std::span<const std::size_t> order, std::size_t selected) {
            t.hits += static_cast<std::size_t>(recall_at_k(order.first(selected), gt));
            t.rank_sum += best_rank(order, gt);
        };
        tally(retrieval, qr.retrieval, take);
        const auto uni = uniform_order(qr.chunk_count, k);
        tally(uniform, uni, uniform_select(qr.chunk_count, k).size());
        if (with_clip) tally(clip, qr.clip_match, take);
    }
    const auto n = rankings.size();
    auto make = [n](Strategy s, const Tally& t) {
        return StrategyReport{s, static_cast<double>(t.hits) / static_cast<double>(n),
                              static_cast<double>(t.rank_sum) / static_cast<double>(n), n, t.hits};
    };
    EvalReport report;
    report.k = k;
    report.strategies.push_back(make(Strategy::Retrieval, retrieval));
    report.strategies.push_back(make(Strategy::Uniform, uniform));
    if (with_clip) report.strategies.push_back(make(Strategy::ClipMatch, clip));
    return report;
}

}  // namespace detail

/// Recall@K and mean best rank for learned retrieval, evenly spaced uniform
/// selection and (when features share a space) parameter-free matching.
inline EvalReport compare_strategies(const ChunkStore& store, const AnnotationSet& annotations, const QueryEncoder& enc,
                                     const ChunkConfig& cfg, const EvalOptions& opts = {}) {
    cfg.validate();
    return detail::report_at_k(detail::rank_queries(store, annotations, enc, opts), cfg.top_k);
}

inline std::vector<EvalReport> k_sweep(const ChunkStore& store, const AnnotationSet& annotations,
                                       const QueryEncoder& enc, std::span<const std::size_t> k_values,
                                       const EvalOptions& opts = {}) {
    if (k_values.empty()) throw ConfigError("k_sweep needs at least one K");
    const auto rankings = detail::rank_queries(store, annotations, enc, opts);
    std::vector<EvalReport> reports;
    for (std::size_t k : k_values) reports.push_back(detail::report_at_k(rankings, k));
    return reports;
}

// ---------------------------------------------------------------------------
// Report I/O

/// One `key=value` record per strategy.
inline void write_report_lines(std::ostream& os, std::span<const EvalReport> reports) {
    for (const auto& rep : reports) {
        for (const auto& s : rep.strategies) {
            os << "strategy=" << to_string(s.strategy) << " k=" << rep.k << " n_queries=" << s.n_queries
               << " hits=" << s.hits << " recall_at_k=" << std::setprecision(17) << s.recall_at_k
               << " mean_best_rank=" << s.mean_best_rank << '\n';
        }
    }
}

inline std::vector<EvalReport> read_report_lines(std::istream& is) {
    std::vector<EvalReport> reports;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::map<std::string, std::string> kv;
        std::istringstream fields(line);
        std::string field;
        while (fields >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw DecodeError(DecodeFailure::Malformed, "report field without '=': " + field);
            kv[field.substr(0, eq)] = field.substr(eq + 1);
        }
        try {
            StrategyReport s;
            s.strategy = parse_strategy(kv.at("strategy"));
            s.n_queries = std::stoul(kv.at("n_queries"));
            s.hits = std::stoul(kv.at("hits"));
            s.recall_at_k = std::stod(kv.at("recall_at_k"));
            s.mean_best_rank = std::stod(kv.at("mean_best_rank"));
            const std::size_t k = std::stoul(kv.at("k"));
            if (reports.empty() || reports.back().k != k) reports.push_back(EvalReport{k, {}});
            reports.back().strategies.push_back(s);
        } catch (const std::exception& e) {
            throw DecodeError(DecodeFailure::Malformed, "bad report line '" + line + "': " + e.what());
        }
    }
    return reports;
}

inline void print_report_table(std::ostream& os, std::span<const EvalReport> reports) {
    os << std::left << std::setw(12) << "strategy" << std::right << std::setw(5) << "K" << std::setw(11) << "queries"
       << std::setw(12) << "recall@K" << std::setw(16) << "mean best rank" << '\n';
    for (const auto& rep : reports) {
        for (const auto& s : rep.strategies) {
            os << std::left << std::setw(12) << to_string(s.strategy) << std::right << std::setw(5) << rep.k
               << std::setw(11) << s.n_queries << std::setw(12) << std::fixed << std::setprecision(4) << s.recall_at_k
               << std::setw(16) << std::setprecision(3) << s.mean_best_rank << '\n';
            os.unsetf(std::ios::floatfield);
        }
    }
}

}  // namespace rvlm
