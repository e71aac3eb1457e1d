#pragma once

#include <cmath>
#include <cstdint>

#include "anchorattn/linalg.hpp"
#include "anchorattn/matrix.hpp"

namespace anchorattn {

using FlopCount = std::uint64_t;

template <class T>
struct AttentionInputsT {
    Mat<T> Q;
    Mat<T> K;
    Mat<T> V;

    AttentionInputsT(Mat<T> q, Mat<T> k, Mat<T> v)
        : Q(std::move(q)), K(std::move(k)), V(std::move(v)) {
        if (Q.shape() != K.shape() || K.shape() != V.shape()) {
            throw DimensionError("Q/K/V must share shape, got " + to_string(Q.shape()) +
                                 ", " + to_string(K.shape()) + ", " + to_string(V.shape()));
        }
    }

    std::size_t tokens() const { return Q.rows(); }
    std::size_t dim() const { return Q.cols(); }
};

using AttentionInputs = AttentionInputsT<double>;

template <class T>
struct ProjectionWeightsT {
    Mat<T> W_Q;
    Mat<T> W_K;
    Mat<T> W_V;

    ProjectionWeightsT(Mat<T> wq, Mat<T> wk, Mat<T> wv)
        : W_Q(std::move(wq)), W_K(std::move(wk)), W_V(std::move(wv)) {
        if (W_Q.shape() != W_K.shape() || W_K.shape() != W_V.shape()) {
            throw DimensionError("projection weights must share shape");
        }
    }
};

using ProjectionWeights = ProjectionWeightsT<double>;

template <class T>
AttentionInputsT<T> project_tokens(const Mat<T>& X, const ProjectionWeightsT<T>& w) {
    return AttentionInputsT<T>(matmul(X, w.W_Q), matmul(X, w.W_K), matmul(X, w.W_V));
}

// Exact O(n^2) softmax self-attention: H = softmax(Q K^T / sqrt(d)) V.
// Serves as the semantic reference and the quadratic complexity baseline.
// All three stages are row-decomposable, so they are evaluated in blocks of
// query rows: each block runs the identical score/softmax/value computations
// (bit-identical output) while its n-wide score slab stays cache resident
// instead of streaming an n x n buffer through memory three times.
template <class T>
Mat<T> vanilla_attention(const AttentionInputsT<T>& inp) {
    const T scale = T(1) / std::sqrt(static_cast<T>(inp.dim()));
    const std::size_t n = inp.tokens(), d = inp.dim();
    const Mat<T> k_t = transpose(inp.K);
    constexpr std::size_t kBlock = 256;
    Mat<T> out(n, d);
    for (std::size_t ib = 0; ib < n; ib += kBlock) {
        const std::size_t rows = std::min(kBlock, n - ib);
        Mat<T> q_block(rows, d);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t c = 0; c < d; ++c) q_block(i, c) = inp.Q(ib + i, c);
        }
        Mat<T> weights = softmax_rows(matmul(q_block, k_t), scale);
        Mat<T> h_block = matmul(weights, inp.V);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t c = 0; c < d; ++c) out(ib + i, c) = h_block(i, c);
        }
    }
    return out;
}

// Closed-form multiply-add count for vanilla attention under the shared
// convention: matmul costs 2 flops per accumulated term; softmax costs
// 3 flops per entry (shift, exp, normalize) with row reductions and the
// scale multiplication uncounted.
inline FlopCount vanilla_flops(std::size_t n, std::size_t d) {
    const FlopCount nn = static_cast<FlopCount>(n) * n;
    return 2 * nn * d   // Q K^T
           + 3 * nn     // softmax
           + 2 * nn * d;  // weights * V
}

}  // namespace anchorattn
