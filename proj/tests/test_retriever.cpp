#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rvlm/retriever.hpp"
#include "tempdir.hpp"

using namespace rvlm;

namespace {

std::vector<std::size_t> indices(const std::vector<ScoredChunk>& ranked) {
    std::vector<std::size_t> out;
    for (const auto& r : ranked) out.push_back(r.index);
    return out;
}

Vector random_vector(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(n);
    for (double& x : v) x = normal(rng);
    return v;
}

// One video whose chunks have the given representations exactly (one token each).
ChunkStore single_token_store(const std::string& id, const std::vector<Vector>& reps, std::size_t tokens = 1) {
    std::vector<Chunk> chunks;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        Matrix m(tokens, reps[i].size());
        for (std::size_t r = 0; r < tokens; ++r) std::copy(reps[i].begin(), reps[i].end(), m.row(r).begin());
        chunks.push_back(make_chunk(id, i, m, 4 * i, 4 * i + 4));
    }
    ChunkStore store;
    store.add_video(std::move(chunks));
    return store;
}

// relu(x) - relu(-x) = x, so this encoder is the identity map.
QueryEncoder identity_encoder(std::size_t n) {
    QueryEncoder enc{Matrix(2 * n, n), Vector(2 * n, 0.0), Matrix(n, 2 * n), Vector(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        enc.w1(i, i) = enc.w2(i, i) = 1.0;
        enc.w1(n + i, i) = enc.w2(i, n + i) = -1.0;
    }
    return enc;
}

}  // namespace

TEST(Retriever, CosineExamples) {
    const Vector a{1, 0}, b{1, 1}, c{0, 3};
    EXPECT_NEAR(cosine_similarity(a, b), 0.7071067811865476, 1e-15);
    EXPECT_DOUBLE_EQ(cosine_similarity(b, b), 1.0);
    EXPECT_EQ(cosine_similarity(a, c), 0.0);
    EXPECT_EQ(cosine_similarity(Vector{0, 0}, b), 0.0);
    EXPECT_THROW(cosine_similarity(a, Vector{1, 2, 3}), ShapeError);
}

TEST(Retriever, CosineIsScaleInvariant) {
    std::mt19937_64 rng(1);
    for (int n = 0; n < 50; ++n) {
        auto q = random_vector(rng, 7), v = random_vector(rng, 7);
        const double base = cosine_similarity(q, v);
        for (double& x : v) x *= 13.5;
        for (double& x : q) x *= 0.02;
        EXPECT_NEAR(cosine_similarity(q, v), base, 1e-12);
    }
}

TEST(Retriever, EncodeQueryMatchesMatmulOracle) {
    std::mt19937_64 rng(2);
    auto enc = make_encoder(3, 4, 3, 9);
    for (double& b : enc.b1) b = 0.3;
    for (double& b : enc.b2) b = -0.1;
    for (int n = 0; n < 20; ++n) {
        const auto t = random_vector(rng, 3);
        const auto want = oracle::mlp(t, enc.w1.data, enc.b1, enc.w2.data, enc.b2);
        const auto got = encode_query(t, enc);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(Retriever, EncodeQueryEdgeCases) {
    QueryEncoder zero{Matrix(4, 3), Vector(4, 0.0), Matrix(2, 4), Vector{0.5, -2.0}};
    zero.w2.data.assign(8, 7.0);
    EXPECT_EQ(encode_query(Vector{1, 2, 3}, zero), (Vector{0.5, -2.0}));
    QueryEncoder positive{Matrix(3, 3), Vector(3, 0.0), Matrix(3, 3), Vector(3, 0.0)};
    for (std::size_t i = 0; i < 3; ++i) positive.w1(i, i) = positive.w2(i, i) = 1.0;
    EXPECT_EQ(encode_query(Vector{-1, 2, -3}, positive), (Vector{0, 2, 0}));
    EXPECT_THROW(encode_query(Vector{1, 2}, identity_encoder(3)), ShapeError);
}

TEST(Retriever, HeUniformInitIsSeededAndBounded) {
    const auto a = make_encoder(16, 8, 4, 7);
    EXPECT_EQ(a, make_encoder(16, 8, 4, 7));
    EXPECT_NE(a, make_encoder(16, 8, 4, 8));
    for (double w : a.w1.data) EXPECT_LE(std::abs(w), std::sqrt(6.0 / 16.0));
    for (double w : a.w2.data) EXPECT_LE(std::abs(w), std::sqrt(6.0 / 8.0));
    for (double b : a.b1) EXPECT_EQ(b, 0.0);
    EXPECT_EQ(a.parameter_count(), 16u * 8 + 8 + 8 * 4 + 4);
}

TEST(Retriever, TopKExamples) {
    const Vector s{0.9, 0.1, 0.8, 0.8, 0.2};
    EXPECT_EQ(indices(top_k(s, 3)), (std::vector<std::size_t>{0, 2, 3}));
    EXPECT_EQ(indices(top_k(s, 10)), (std::vector<std::size_t>{0, 2, 3, 4, 1}));
    EXPECT_EQ(indices(top_k(Vector(6, 0.4), 2)), (std::vector<std::size_t>{0, 1}));
    EXPECT_THROW(top_k(s, 0), ConfigError);
    EXPECT_THROW(top_k(Vector{}, 1), ShapeError);
    EXPECT_THROW(top_k(Vector{0.1, std::nan("")}, 1), NumericError);
}

TEST(Retriever, TopKMatchesOracleAndIsSound) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> level(0, 5);
    for (int n = 0; n < 300; ++n) {
        Vector s(1 + rng() % 30);
        for (double& x : s) x = level(rng) * 0.1;
        const std::size_t k = 1 + rng() % 12;
        const auto ranked = top_k(s, k);
        EXPECT_EQ(indices(ranked), oracle::top_k(s, k));
        std::vector<bool> chosen(s.size(), false);
        double lowest = 1e9;
        for (const auto& r : ranked) {
            chosen[r.index] = true;
            lowest = std::min(lowest, r.score);
        }
        for (std::size_t i = 0; i < s.size(); ++i)
            if (!chosen[i]) {
                EXPECT_LE(s[i], lowest);
            }
        const auto order = time_ordered(ranked);
        EXPECT_TRUE(std::is_sorted(order.begin(), order.end()));
        EXPECT_EQ(std::adjacent_find(order.begin(), order.end()), order.end());
    }
}

TEST(Retriever, UniformSelectExamples) {
    EXPECT_EQ(uniform_select(10, 5), (std::vector<std::size_t>{1, 3, 5, 7, 9}));
    EXPECT_EQ(uniform_select(5, 5), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    EXPECT_EQ(uniform_select(3, 5), (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(uniform_select(120, 5), (std::vector<std::size_t>{12, 36, 60, 84, 108}));
    EXPECT_EQ(uniform_select(40, 1), (std::vector<std::size_t>{20}));
    EXPECT_THROW(uniform_select(10, 0), ConfigError);
}

TEST(Retriever, RetrieveExportsTokensInTimeOrder) {
    std::mt19937_64 rng(4);
    std::vector<Vector> reps;
    for (int i = 0; i < 20; ++i) reps.push_back(random_vector(rng, 3));
    const auto store = single_token_store("v", reps, 68);
    const auto res = retrieve(Vector{1, 0.5, -0.2}, "v", store, identity_encoder(3), ChunkConfig{});
    ASSERT_EQ(res.ranked.size(), 5u);
    ASSERT_TRUE(res.exported_tokens.has_value());
    EXPECT_EQ(res.exported_tokens->rows, 340u);
    for (std::size_t j = 0; j < 5; ++j) {
        const auto& chunk = store.chunks("v")[res.selected_time_ordered[j]];
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ((*res.exported_tokens)(68 * j, c), chunk.token(0)[c]);
    }
    EXPECT_EQ(res, retrieve(Vector{1, 0.5, -0.2}, "v", store, identity_encoder(3), ChunkConfig{}));
}

TEST(Retriever, ShortVideoReturnsEveryChunk) {
    const auto store = single_token_store("v", {{1, 0}, {0, 1}, {1, 1}}, 68);
    const auto res = retrieve(Vector{1, 0}, "v", store, identity_encoder(2), ChunkConfig{});
    EXPECT_EQ(res.ranked.size(), 3u);
    EXPECT_EQ(res.exported_tokens->rows, 204u);
    EXPECT_EQ(res.selected_time_ordered, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Retriever, PlantedChunkRanksFirstWithIdentityMap) {
    std::mt19937_64 rng(5);
    for (int n = 0; n < 20; ++n) {
        const auto u = random_vector(rng, 8);
        std::vector<Vector> reps;
        for (int i = 0; i < 12; ++i) reps.push_back(random_vector(rng, 8));
        const std::size_t planted = rng() % 12;
        reps[planted] = u;
        for (double& x : reps[planted]) x *= 3.0;
        const auto store = single_token_store("v", reps);
        const auto res = retrieve(u, "v", store, identity_encoder(8), ChunkConfig{});
        EXPECT_EQ(res.ranked.front().index, planted);
        EXPECT_EQ(baseline_match(u, [&] {
                      Matrix m(12, 8);
                      for (std::size_t i = 0; i < 12; ++i) std::copy(reps[i].begin(), reps[i].end(), m.row(i).begin());
                      return m;
                  }(), 1).front().index,
                  planted);
    }
}

TEST(Retriever, IdenticalChunksScoreEqually) {
    const auto store = single_token_store("v", {{1, 2}, {1, 2}, {1, 2}});
    const auto scores = score_chunks(Vector{0.3, -0.4}, store.chunks("v"));
    EXPECT_EQ(scores[0], scores[1]);
    EXPECT_EQ(scores[1], scores[2]);
}

TEST(Retriever, RetrieveRejectsMissingVideoAndWidthMismatch) {
    const auto store = single_token_store("v", {{1, 2}, {3, 4}});
    EXPECT_THROW(retrieve(Vector{1, 0}, "w", store, identity_encoder(2), ChunkConfig{}), NotFoundError);
    EXPECT_THROW(retrieve(Vector{1, 0, 0}, "v", store, identity_encoder(3), ChunkConfig{}), ShapeError);
}

TEST(Retriever, ProjectorExamples) {
    Matrix tokens(2, 3);
    tokens.data = {1, 2, 3, -1, 0, 4};
    Projector eye{Matrix(3, 3), Vector(3, 0.0)};
    for (int i = 0; i < 3; ++i) eye.weight(i, i) = 1.0;
    EXPECT_EQ(project_tokens(tokens, eye).data, tokens.data);
    Projector zero{Matrix(2, 3), Vector{5, 6}};
    EXPECT_EQ(project_tokens(tokens, zero).data, (std::vector<double>{5, 6, 5, 6}));
    Projector p{Matrix(2, 3), Vector{0.5, -1}};
    p.weight.data = {1, 0, 2, -1, 3, 0.5};
    const auto out = project_tokens(tokens, p);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t o = 0; o < 2; ++o) {
            double want = p.bias[o];
            for (std::size_t c = 0; c < 3; ++c) want += p.weight(o, c) * tokens(r, c);
            EXPECT_NEAR(out(r, o), want, 1e-12);
        }
    }
    RetrieveOptions opts;
    opts.projector = &p;
    const auto store = single_token_store("v", {{1, 2, 3}, {0, 1, 0}});
    const auto res = retrieve(Vector{1, 2, 3}, "v", store, identity_encoder(3), ChunkConfig{}, opts);
    EXPECT_EQ(res.exported_tokens->cols, 2u);
}

TEST(Retriever, WeightFilesRoundtripAtSinglePrecision) {
    TempDir dir;
    const auto enc = make_encoder(5, 6, 4, 11);
    save_encoder(dir / "e.rvlm", enc);
    const auto back = load_encoder(dir / "e.rvlm");
    ASSERT_EQ(back.w1.rows, 6u);
    ASSERT_EQ(back.w2.rows, 4u);
    for (std::size_t i = 0; i < enc.w1.data.size(); ++i)
        EXPECT_EQ(back.w1.data[i], static_cast<double>(static_cast<float>(enc.w1.data[i])));
    save_encoder(dir / "f.rvlm", back);
    EXPECT_EQ(format::read_file(dir / "e.rvlm"), format::read_file(dir / "f.rvlm"));

    Projector p{Matrix(2, 3), Vector{0.25, 0.5}};
    p.weight.data = {1, 2, 3, 4, 5, 6};
    save_projector(dir / "p.rvlm", p);
    EXPECT_EQ(load_projector(dir / "p.rvlm"), p);
    EXPECT_THROW(load_encoder(dir / "p.rvlm"), DecodeError);
}
