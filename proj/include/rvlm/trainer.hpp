#pragma once

// Soft-matching objective for the query encoder.
//
//   s_j  = cos(q, v_j)
//   w    = softmax(s)
//   vbar = sum_j w_j v_j
//   loss = -cos(q, vbar)
//
// The gradient is the total derivative in q: q enters the outer cosine and
// every s_j. Training only ever sees the scaled term lambda * loss plus an
// optional external gradient on q (the hook for a downstream answer loss).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rvlm/error.hpp"
#include "rvlm/matrix.hpp"
#include "rvlm/retriever.hpp"
#include "rvlm/store.hpp"

namespace rvlm {

struct TrainingExample {
    Vector text_feature;
    Matrix chunk_representations;  // L x D_vis
};

/// One example per annotation: its text feature against every chunk of the
/// referenced video.
inline std::vector<TrainingExample> make_training_examples(const ChunkStore& store, const AnnotationSet& annotations) {
    std::vector<TrainingExample> out;
    out.reserve(annotations.size());
    for (const auto& rec : annotations) {
        const auto& chunks = store.chunks(rec.video_id);
        TrainingExample ex{rec.text_feature, Matrix(chunks.size(), store.dim())};
        for (std::size_t j = 0; j < chunks.size(); ++j) {
            std::copy(chunks[j].representation.begin(), chunks[j].representation.end(),
                      ex.chunk_representations.row(j).begin());
        }
        out.push_back(std::move(ex));
    }
    return out;
}

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
    double learning_rate = 2e-5;
    std::size_t batch_size = 40;
    std::size_t epochs = 3;
    double lambda = 10.0;
    std::uint64_t seed = 0;
    std::size_t hidden_dim = 1024;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
        if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
        if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
    }
};

/// Gradients share the encoder's layout.
using EncoderGradients = QueryEncoder;

inline EncoderGradients zeros_like(const QueryEncoder& enc) {
    return {Matrix(enc.w1.rows, enc.w1.cols), Vector(enc.b1.size(), 0.0), Matrix(enc.w2.rows, enc.w2.cols),
            Vector(enc.b2.size(), 0.0)};
}

/// The four parameter tensors in serialization order.
inline std::array<std::span<double>, 4> parameter_views(QueryEncoder& enc) {
    return {std::span<double>(enc.w1.data), std::span<double>(enc.b1), std::span<double>(enc.w2.data),
            std::span<double>(enc.b2)};
}

inline std::array<std::span<const double>, 4> parameter_views(const QueryEncoder& enc) {
    return {std::span<const double>(enc.w1.data), std::span<const double>(enc.b1),
            std::span<const double>(enc.w2.data), std::span<const double>(enc.b2)};
}

/// Max-subtracted softmax.
inline Vector softmax(std::span<const double> s) {
    if (s.empty()) throw ShapeError("softmax of an empty vector");
    const double top = *std::max_element(s.begin(), s.end());
    Vector w(s.size());
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) total += (w[i] = std::exp(s[i] - top));
    for (double& x : w) x /= total;
    return w;
}

struct SoftMatchResult {
    double loss = 0.0;
    Vector scores;
    Vector weights;
    Vector pooled;  // vbar
    Vector grad_q;  // d loss / d q
};

namespace detail {

// Value and gradient (w.r.t. q) of cos(q, v) with the zero-vector guard.
struct CosineTerm {
    double value = 0.0;
    double qn = 0.0;
    double vn = 0.0;
    bool active = false;
};

inline CosineTerm cosine_term(std::span<const double> q, std::span<const double> v) {
    CosineTerm c;
    c.qn = norm(q);
    c.vn = norm(v);
    if (c.qn * c.vn < kCosineEpsilon) return c;
    c.active = true;
    c.value = dot(q, v) / (c.qn * c.vn);
    return c;
}

}  // namespace detail

inline SoftMatchResult soft_match(std::span<const double> q, const Matrix& chunks) {
    if (chunks.rows == 0) throw ShapeError("soft_match: no chunk representations");
    detail::require_same_size(q.size(), chunks.cols, "soft_match");
    const std::size_t n = chunks.rows;
    const std::size_t dim = q.size();

    SoftMatchResult r;
    std::vector<detail::CosineTerm> terms(n);
    r.scores.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        terms[j] = detail::cosine_term(q, chunks.row(j));
        r.scores[j] = terms[j].value;
    }
    r.weights = softmax(r.scores);
    r.pooled.assign(dim, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        auto v = chunks.row(j);
        for (std::size_t d = 0; d < dim; ++d) r.pooled[d] += r.weights[j] * v[d];
    }

    const auto outer = detail::cosine_term(q, r.pooled);
    r.loss = -outer.value;
    r.grad_q.assign(dim, 0.0);
    if (!outer.active) return r;

    // d cos(q, vbar) / d q, holding vbar fixed.
    const double c = outer.value;
    const double inv_qv = 1.0 / (outer.qn * outer.vn);
    const double inv_qq = 1.0 / (outer.qn * outer.qn);
    const double inv_vv = 1.0 / (outer.vn * outer.vn);
    Vector dcos_dq(dim), dcos_dvbar(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        dcos_dq[d] = r.pooled[d] * inv_qv - c * q[d] * inv_qq;
        dcos_dvbar[d] = q[d] * inv_qv - c * r.pooled[d] * inv_vv;
    }

    // Through vbar: d vbar / d s_k = w_k (v_k - vbar), so the chain reduces to
    // sum_k w_k (a_k - abar) d s_k / d q with a_k = dcos_dvbar . v_k.
    Vector a(n);
    double abar = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        a[j] = dot(dcos_dvbar, chunks.row(j));
        abar += r.weights[j] * a[j];
    }
    Vector total = dcos_dq;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& t = terms[k];
        if (!t.active) continue;
        const double coeff = r.weights[k] * (a[k] - abar);
        if (coeff == 0.0) continue;
        auto v = chunks.row(k);
        const double inv_qvk = 1.0 / (t.qn * t.vn);
        const double s_over_qq = t.value / (t.qn * t.qn);
        for (std::size_t d = 0; d < dim; ++d) total[d] += coeff * (v[d] * inv_qvk - s_over_qq * q[d]);
    }
    for (std::size_t d = 0; d < dim; ++d) r.grad_q[d] = -total[d];
    return r;
}

inline double soft_match_loss(std::span<const double> q, const Matrix& chunks) { return soft_match(q, chunks).loss; }

struct MlpForward {
    Vector pre_activation;
    Vector hidden;
    Vector output;
};

inline MlpForward forward(std::span<const double> text_feature, const QueryEncoder& enc) {
    enc.validate();
    MlpForward f;
    f.pre_activation = affine(enc.w1, text_feature, enc.b1);
    f.hidden = f.pre_activation;
    for (double& h : f.hidden) h = h > 0.0 ? h : 0.0;
    f.output = affine(enc.w2, f.hidden, enc.b2);
    return f;
}

/// Accumulates scale * d(output)/d(params)^T grad_q into `grads`.
/// ReLU subgradient at exactly 0 is 0.
inline void backprop(std::span<const double> text_feature, const QueryEncoder& enc, const MlpForward& f,
                     std::span<const double> grad_q, double scale, EncoderGradients& grads) {
    for (std::size_t i = 0; i < grad_q.size(); ++i) grads.b2[i] += scale * grad_q[i];
    add_outer(grads.w2, scale, grad_q, f.hidden);
    Vector grad_z = transpose_times(enc.w2, grad_q);
    for (std::size_t i = 0; i < grad_z.size(); ++i) {
        if (!(f.pre_activation[i] > 0.0)) grad_z[i] = 0.0;
    }
    for (std::size_t i = 0; i < grad_z.size(); ++i) grads.b1[i] += scale * grad_z[i];
    add_outer(grads.w1, scale, grad_z, text_feature);
}

struct LossAndGradients {
    double loss = 0.0;
    EncoderGradients grads;
};

/// Soft-matching loss of encode_query(t) against V, with gradients for all
/// encoder parameters.
inline LossAndGradients soft_match_gradient(std::span<const double> text_feature, const Matrix& chunks,
                                            const QueryEncoder& enc) {
    const auto f = forward(text_feature, enc);
    const auto sm = soft_match(f.output, chunks);
    LossAndGradients out{sm.loss, zeros_like(enc)};
    backprop(text_feature, enc, f, sm.grad_q, 1.0, out.grads);
    return out;
}

struct BatchResult {
    double objective = 0.0;  // lambda * mean soft-matching loss
    double sm_loss = 0.0;    // mean soft-matching loss
    EncoderGradients grads;
};

/// Mean-reduced lambda * L_SM over the batch. `external_q_grads`, when given,
/// holds one d(external loss)/dq per example and is added before the MLP
/// backward pass.
inline BatchResult batch_loss_and_grad(std::span<const TrainingExample> batch, const QueryEncoder& enc, double lambda,
                                       std::span<const Vector> external_q_grads = {}) {
    if (batch.empty()) throw ShapeError("batch_loss_and_grad: empty batch");
    if (!external_q_grads.empty() && external_q_grads.size() != batch.size()) {
        throw ShapeError("batch_loss_and_grad: one external gradient per example required");
    }
    BatchResult out{0.0, 0.0, zeros_like(enc)};
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& ex = batch[i];
        const auto f = forward(ex.text_feature, enc);
        const auto sm = soft_match(f.output, ex.chunk_representations);
        Vector grad_q = sm.grad_q;
        for (double& g : grad_q) g *= lambda;
        if (!external_q_grads.empty()) {
            detail::require_same_size(external_q_grads[i].size(), grad_q.size(), "external q gradient");
            for (std::size_t d = 0; d < grad_q.size(); ++d) grad_q[d] += external_q_grads[i][d];
        }
        backprop(ex.text_feature, enc, f, grad_q, inv_n, out.grads);
        out.sm_loss += sm.loss;
    }
    out.sm_loss *= inv_n;
    out.objective = lambda * out.sm_loss;
    return out;
}

// ---------------------------------------------------------------------------
// Optimizers

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const QueryEncoder& shape)
        : cfg_(cfg), m_(zeros_like(shape)), v_(zeros_like(shape)) {}

    void step(QueryEncoder& enc, const EncoderGradients& grads) {
        ++t_;
        auto params = parameter_views(enc);
        auto g = parameter_views(grads);
        if (cfg_.optimizer == OptimizerKind::Sgd) {
            for (std::size_t k = 0; k < params.size(); ++k) {
                for (std::size_t i = 0; i < params[k].size(); ++i) params[k][i] -= cfg_.learning_rate * g[k][i];
            }
            return;
        }
        auto m = parameter_views(m_);
        auto v = parameter_views(v_);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            for (std::size_t i = 0; i < params[k].size(); ++i) {
                const double gi = g[k][i];
                m[k][i] = cfg_.beta1 * m[k][i] + (1.0 - cfg_.beta1) * gi;
                v[k][i] = cfg_.beta2 * v[k][i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m[k][i] / bc1;
                const double vhat = v[k][i] / bc2;
                params[k][i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_epsilon);
            }
        }
    }

private:
    TrainConfig cfg_;
    EncoderGradients m_;
    EncoderGradients v_;
    std::uint64_t t_ = 0;
};

struct StepRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;  // global optimizer step, 0-based
    double objective = 0.0;
    double sm_loss = 0.0;
};

struct FitResult {
    QueryEncoder encoder;
    std::vector<StepRecord> steps;
    std::vector<double> epoch_sm_loss;  // example-weighted mean over each epoch
};

inline void check_dataset(std::span<const TrainingExample> data, std::size_t text_dim, std::size_t vision_dim) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        if (ex.text_feature.size() != text_dim || ex.chunk_representations.cols != vision_dim ||
            ex.chunk_representations.rows == 0) {
            throw ShapeError("training example " + std::to_string(i) + " has inconsistent dimensions");
        }
        const auto finite = [](double x) { return std::isfinite(x); };
        if (!std::all_of(ex.text_feature.begin(), ex.text_feature.end(), finite) ||
            !std::all_of(ex.chunk_representations.data.begin(), ex.chunk_representations.data.end(), finite)) {
            throw NumericError("training example " + std::to_string(i) + " holds a non-finite value");
        }
    }
}

/// Trains starting from `initial`. Shuffle order, batching and optimizer
/// state depend only on cfg.seed, so runs are reproducible.
inline FitResult fit(std::span<const TrainingExample> data, const TrainConfig& cfg, QueryEncoder initial) {
    cfg.validate();
    if (data.empty()) throw ConfigError("fit: empty dataset");
    initial.validate();
    check_dataset(data, initial.text_dim(), initial.vision_dim());

    FitResult result{std::move(initial), {}, {}};
    QueryEncoder& enc = result.encoder;
    Optimizer opt(cfg, enc);
    std::vector<std::size_t> order(data.size());
    std::vector<TrainingExample> batch;
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(epoch), 0x5eedu};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
            const auto br = batch_loss_and_grad(batch, enc, cfg.lambda);
            if (!std::isfinite(br.objective) || !std::isfinite(br.sm_loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(global_step));
            }
            opt.step(enc, br.grads);
            result.steps.push_back({epoch, global_step, br.objective, br.sm_loss});
            epoch_total += br.sm_loss * static_cast<double>(end - start);
            ++global_step;
        }
        result.epoch_sm_loss.push_back(epoch_total / static_cast<double>(data.size()));
    }
    for (const auto view : parameter_views(std::as_const(enc))) {
        for (double p : view) {
            if (!std::isfinite(p)) throw NumericError("non-finite encoder parameter after training");
        }
    }
    return result;
}

/// Trains from a He-uniform initialization seeded by cfg.seed.
inline FitResult fit(std::span<const TrainingExample> data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw ConfigError("fit: empty dataset");
    const auto& first = data.front();
    return fit(data, cfg,
               make_encoder(first.text_feature.size(), cfg.hidden_dim, first.chunk_representations.cols, cfg.seed));
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradientCheck {
    double max_relative_error = 0.0;
    std::size_t coordinates_checked = 0;
    std::size_t worst_coordinate = 0;  // flat index over (W1, b1, W2, b2)
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares `analytic` against central differences of the soft-matching loss.
/// Encoders with more than `max_coordinates` parameters are checked on a
/// seeded random subsample of that size.
inline GradientCheck finite_difference_check(const QueryEncoder& enc, const TrainingExample& example,
                                             const EncoderGradients& analytic, double step = 1e-6,
                                             std::size_t max_coordinates = 4096, std::uint64_t seed = 0) {
    const std::size_t total = enc.parameter_count();
    if (analytic.parameter_count() != total) throw ShapeError("finite_difference_check: gradient shape mismatch");
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (total > max_coordinates) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(std::max<std::size_t>(max_coordinates, 500));
        std::sort(coords.begin(), coords.end());
    }

    QueryEncoder probe = enc;
    auto params = parameter_views(probe);
    auto grads = parameter_views(analytic);
    auto locate = [](auto& views, std::size_t flat) -> auto& {
        for (auto& v : views) {
            if (flat < v.size()) return v[flat];
            flat -= v.size();
        }
        throw ShapeError("coordinate out of range");
    };
    auto loss_at = [&]() { return soft_match_loss(encode_query(example.text_feature, probe), example.chunk_representations); };

    GradientCheck check;
    for (std::size_t flat : coords) {
        double& p = locate(params, flat);
        const double saved = p;
        p = saved + step;
        const double up = loss_at();
        p = saved - step;
        const double down = loss_at();
        p = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double err = relative_error(locate(grads, flat), numeric);
        if (err > check.max_relative_error) {
            check.max_relative_error = err;
            check.worst_coordinate = flat;
        }
        ++check.coordinates_checked;
    }
    return check;
}

inline GradientCheck finite_difference_check(const QueryEncoder& enc, const TrainingExample& example,
                                             double step = 1e-6) {
    const auto analytic = soft_match_gradient(example.text_feature, example.chunk_representations, enc);
    return finite_difference_check(enc, example, analytic.grads, step);
}

}  // namespace rvlm
