#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "anchorattn/anchor.hpp"
#include "anchorattn/autograd.hpp"
#include "anchorattn/linalg.hpp"
#include "anchorattn/matrix.hpp"
#include "anchorattn/synthetic.hpp"

namespace anchorattn {

struct ModelConfig {
    std::size_t input_dim = 6;
    std::size_t embed_dim = 8;
    std::size_t head_dim = 8;
    std::size_t heads = 2;
    std::size_t anchors = 4;
    std::size_t classes = 3;
    bool share_anchors = false;  // one anchor set reused by every head
    std::uint64_t seed = 1;
};

// Desk-scale classifier: token embedding, two multi-head anchor-attention
// blocks, mean pooling, linear head.  The head is zero-initialized so the
// untrained model predicts class 0 everywhere (exact chance level on a
// balanced task); gradients reach the lower layers once the head moves.
struct DemoModel {
    ModelConfig cfg;
    Matrix W_embed;
    MultiHeadParams block1;
    MultiHeadParams block2;
    Matrix W_head;

    static MultiHeadParams make_block(Rng& rng, const ModelConfig& cfg,
                                      std::size_t in_dim) {
        const double proj_sd = 1.0 / std::sqrt(static_cast<double>(in_dim));
        const double anchor_sd = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
        MultiHeadParams params{{}, Matrix(cfg.heads * cfg.head_dim, cfg.head_dim)};
        Matrix shared = gaussian_matrix(rng, cfg.anchors, cfg.head_dim, anchor_sd);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            ProjectionWeights proj(gaussian_matrix(rng, in_dim, cfg.head_dim, proj_sd),
                                   gaussian_matrix(rng, in_dim, cfg.head_dim, proj_sd),
                                   gaussian_matrix(rng, in_dim, cfg.head_dim, proj_sd));
            Matrix anchors = cfg.share_anchors
                                 ? shared
                                 : gaussian_matrix(rng, cfg.anchors, cfg.head_dim, anchor_sd);
            params.heads.push_back(HeadParams{std::move(proj), AnchorParams(std::move(anchors))});
        }
        const double out_sd = 1.0 / std::sqrt(static_cast<double>(cfg.heads * cfg.head_dim));
        params.W_out = gaussian_matrix(rng, cfg.heads * cfg.head_dim, cfg.head_dim, out_sd);
        return params;
    }

    static DemoModel init(const ModelConfig& cfg) {
        Rng rng(cfg.seed);
        const double embed_sd = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
        return DemoModel{
            cfg,
            gaussian_matrix(rng, cfg.input_dim, cfg.embed_dim, embed_sd),
            make_block(rng, cfg, cfg.embed_dim),
            make_block(rng, cfg, cfg.head_dim),
            Matrix(cfg.head_dim, cfg.classes)};
    }
};

struct ForwardCache {
    Matrix embedded{1, 1};
    MultiHeadState st1;
    MultiHeadState st2;
    Matrix h1{1, 1};
    Matrix h2{1, 1};
    Matrix pooled{1, 1};
    Matrix logits{1, 1};
};

inline Matrix model_logits(const DemoModel& model, const Matrix& tokens,
                           ForwardCache* cache = nullptr) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.embedded = matmul(tokens, model.W_embed);
    c.h1 = multi_head_attention(c.embedded, model.block1, &c.st1);
    c.h2 = multi_head_attention(c.h1, model.block2, &c.st2);
    c.pooled = Matrix(1, c.h2.cols());
    for (std::size_t j = 0; j < c.h2.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < c.h2.rows(); ++i) s += c.h2(i, j);
        c.pooled(0, j) = s / static_cast<double>(c.h2.rows());
    }
    c.logits = matmul(c.pooled, model.W_head);
    return c.logits;
}

inline std::size_t predict(const DemoModel& model, const Matrix& tokens) {
    const Matrix logits = model_logits(model, tokens);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (logits(0, c) > logits(0, best)) best = c;
    }
    return best;
}

// Softmax cross-entropy; returns loss and writes dL/dlogits.
inline double cross_entropy(const Matrix& logits, std::size_t label, Matrix& d_logits) {
    const std::size_t classes = logits.cols();
    double max_logit = logits(0, 0);
    for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, logits(0, c));
    double sum = 0.0;
    std::vector<double> p(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        p[c] = std::exp(logits(0, c) - max_logit);
        sum += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= sum;
    d_logits = Matrix(1, classes);
    for (std::size_t c = 0; c < classes; ++c) {
        d_logits(0, c) = p[c] - (c == label ? 1.0 : 0.0);
    }
    return -std::log(std::max(p[label], 1e-300));
}

inline void apply_multi_head_grads(MultiHeadParams& params, const MultiHeadGrads& grads,
                                   double lr) {
    for (std::size_t h = 0; h < params.heads.size(); ++h) {
        sgd_step(params.heads[h].proj.W_K, grads.d_WK[h], lr);
        sgd_step(params.heads[h].proj.W_V, grads.d_WV[h], lr);
        sgd_step(params.heads[h].anchors.W_S, grads.d_WS[h], lr);
    }
    sgd_step(params.W_out, grads.d_Wout, lr);
}

// One SGD update on a single sample; returns the sample loss.
inline double train_step(DemoModel& model, const Sample& sample, double lr) {
    ForwardCache cache;
    model_logits(model, sample.tokens, &cache);
    Matrix d_logits(1, 1);
    const double loss = cross_entropy(cache.logits, sample.label, d_logits);
    if (!std::isfinite(loss)) {
        throw NumericError("training loss diverged (non-finite)");
    }

    Matrix d_W_head = matmul(transpose(cache.pooled), d_logits);
    Matrix d_pooled = matmul(d_logits, transpose(model.W_head));
    const double inv_n = 1.0 / static_cast<double>(cache.h2.rows());
    Matrix d_h2(cache.h2.rows(), cache.h2.cols());
    for (std::size_t i = 0; i < d_h2.rows(); ++i) {
        for (std::size_t j = 0; j < d_h2.cols(); ++j) {
            d_h2(i, j) = d_pooled(0, j) * inv_n;
        }
    }

    MultiHeadGrads g2 = backward_multi_head(cache.h1, model.block2, cache.st2, d_h2);
    MultiHeadGrads g1 = backward_multi_head(cache.embedded, model.block1, cache.st1, g2.d_X);
    Matrix d_W_embed = matmul(transpose(sample.tokens), g1.d_X);

    sgd_step(model.W_head, d_W_head, lr);
    apply_multi_head_grads(model.block2, g2, lr);
    apply_multi_head_grads(model.block1, g1, lr);
    sgd_step(model.W_embed, d_W_embed, lr);
    return loss;
}

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    double train_accuracy = 0.0;
    double holdout_accuracy = 0.0;
};

inline double accuracy(const DemoModel& model, const std::vector<const Sample*>& samples) {
    if (samples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const Sample* s : samples) {
        if (predict(model, s->tokens) == s->label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline TrainResult train(DemoModel& model, const std::vector<Sample>& data,
                         std::size_t epochs, double lr, std::uint64_t seed) {
    std::vector<const Sample*> train_set, holdout;
    split_holdout(data, train_set, holdout);
    Rng rng(seed);
    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    for (std::size_t e = 0; e < epochs; ++e) {
        // Fisher-Yates with the deterministic stream
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.index(i)]);
        }
        double total = 0.0;
        for (std::size_t idx : order) {
            // Runaway parameters surface as non-finite activations or fully
            // saturated affinities; both mean the optimization diverged.
            try {
                total += train_step(model, *train_set[idx], lr);
            } catch (const SingularMassError& e) {
                throw NumericError(std::string("training diverged (") + e.what() +
                                   "); reduce the learning rate");
            } catch (const NumericError& e) {
                throw NumericError(std::string("training diverged (") + e.what() +
                                   "); reduce the learning rate");
            }
        }
        result.log.push_back(EpochLog{e + 1, total / static_cast<double>(order.size())});
    }
    result.train_accuracy = accuracy(model, train_set);
    result.holdout_accuracy = accuracy(model, holdout);
    return result;
}

}  // namespace anchorattn
