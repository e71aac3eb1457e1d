#pragma once

#include <cmath>
#include <vector>

#include "anchorattn/attention_ref.hpp"
#include "anchorattn/linalg.hpp"
#include "anchorattn/matrix.hpp"

namespace anchorattn {

// The learnable anchors: rows of W_S are the m anchor vectors in R^d.
// m >= n is permitted (correctness holds); the bench layer flags it because
// the complexity advantage vanishes there.
template <class T>
struct AnchorParamsT {
    Mat<T> W_S;

    explicit AnchorParamsT(Mat<T> anchors) : W_S(std::move(anchors)) {
        if (!W_S.all_finite()) {
            throw NumericError("non-finite anchor parameters");
        }
    }

    std::size_t anchor_count() const { return W_S.rows(); }
    std::size_t dim() const { return W_S.cols(); }
};

using AnchorParams = AnchorParamsT<double>;

// Cached forward state of the affinity computation: the row-stochastic
// token-to-anchor matrix A and its column mass vector (the diagonal of the
// anchor degree matrix).  Passed explicitly between forward and backward.
template <class T>
struct AffinityStateT {
    Mat<T> A;               // n x m, rows sum to 1, entries > 0
    std::vector<T> delta;   // length m, delta[j] = sum_i A(i,j) > 0

    std::size_t tokens() const { return A.rows(); }
    std::size_t anchors() const { return A.cols(); }
};

using AffinityState = AffinityStateT<double>;

// The (n+m)x(n+m) row-stochastic transfer matrix of the token<->anchor
// bipartite walk, block form [0, A; Delta^-1 A^T, 0].
template <class T>
struct TransferMatrixT {
    Mat<T> F;
    std::size_t n;
    std::size_t m;
};

using TransferMatrix = TransferMatrixT<double>;

template <class T>
void check_positive_mass(const std::vector<T>& delta) {
    for (std::size_t j = 0; j < delta.size(); ++j) {
        if (!(delta[j] > T(0)) || !std::isfinite(static_cast<double>(delta[j]))) {
            throw SingularMassError("anchor mass delta[" + std::to_string(j) +
                                    "] is not strictly positive");
        }
    }
}

// A = softmax over anchors of K W_S^T / sqrt(d); delta = column sums of A.
template <class T>
AffinityStateT<T> anchor_affinity(const AnchorParamsT<T>& anchors, const Mat<T>& K) {
    if (anchors.dim() != K.cols()) {
        throw DimensionError("anchor dim " + std::to_string(anchors.dim()) +
                             " does not match key dim " + std::to_string(K.cols()));
    }
    const T scale = T(1) / std::sqrt(static_cast<T>(K.cols()));
    Mat<T> logits = matmul(K, transpose(anchors.W_S));
    Mat<T> A = softmax_rows(logits, scale);
    std::vector<T> delta = column_sums(A);
    return AffinityStateT<T>{std::move(A), std::move(delta)};
}

// Oracle path: materializes S_t = A Delta^-1 A^T (O(n^2 m)), asserts its
// row-stochasticity, and returns S_t V.  Never use outside tests/verify.
template <class T>
Mat<T> anchor_attention_explicit(const AffinityStateT<T>& state, const Mat<T>& V) {
    if (V.rows() != state.tokens()) {
        throw DimensionError("value rows " + std::to_string(V.rows()) +
                             " do not match token count " + std::to_string(state.tokens()));
    }
    check_positive_mass(state.delta);
    Mat<T> S_t = matmul(state.A, scale_rows_by_inverse(transpose(state.A), state.delta));
    for (const T& rs : row_sums(S_t)) {
        if (std::abs(rs - T(1)) > T(1e-9)) {
            throw NumericError("S_t row sum deviates from 1 by " +
                               std::to_string(static_cast<double>(std::abs(rs - T(1)))));
        }
    }
    return matmul(S_t, V);
}

template <class T>
Mat<T> materialize_token_attention(const AffinityStateT<T>& state) {
    check_positive_mass(state.delta);
    return matmul(state.A, scale_rows_by_inverse(transpose(state.A), state.delta));
}

// Fast path: M1 = A^T V, M2 = Delta^-1 M1, M3 = A M2.  Same value as the
// explicit path without ever forming an n x n matrix; auxiliary memory is
// O(md + nm).
template <class T>
Mat<T> anchor_attention_fast(const AffinityStateT<T>& state, const Mat<T>& V) {
    if (V.rows() != state.tokens()) {
        throw DimensionError("value rows " + std::to_string(V.rows()) +
                             " do not match token count " + std::to_string(state.tokens()));
    }
    check_positive_mass(state.delta);
    Mat<T> m1 = matmul(transpose(state.A), V);
    Mat<T> m2 = scale_rows_by_inverse(m1, state.delta);
    return matmul(state.A, m2);
}

inline constexpr std::size_t kTransferMatrixLimit = 4096;

// Assembles F = [0, A; Delta^-1 A^T, 0].  Test-only: squaring F exposes the
// block-diagonal [S_t, 0; 0, S_u] identity the fast path relies on.
template <class T>
TransferMatrixT<T> build_transfer_matrix(const AffinityStateT<T>& state) {
    const std::size_t n = state.tokens(), m = state.anchors();
    if (n + m > kTransferMatrixLimit) {
        throw CapacityError("transfer matrix size " + std::to_string(n + m) +
                            " exceeds limit " + std::to_string(kTransferMatrixLimit));
    }
    check_positive_mass(state.delta);
    Mat<T> F(n + m, n + m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            F(i, n + j) = state.A(i, j);
        }
    }
    for (std::size_t j = 0; j < m; ++j) {
        const T inv = T(1) / state.delta[j];
        for (std::size_t i = 0; i < n; ++i) {
            F(n + j, i) = state.A(i, j) * inv;
        }
    }
    return TransferMatrixT<T>{std::move(F), n, m};
}

// One closed-form fixed-point step: row j of the result is the affinity
// weighted mean of the keys, (A^T K)[j,:] / delta[j].  A soft-k-means
// update usable as a non-learned anchor initializer or refiner.
template <class T>
Mat<T> anchor_fixed_point_step(const AffinityStateT<T>& state, const Mat<T>& K) {
    if (K.rows() != state.tokens()) {
        throw DimensionError("key rows " + std::to_string(K.rows()) +
                             " do not match token count " + std::to_string(state.tokens()));
    }
    check_positive_mass(state.delta);
    return scale_rows_by_inverse(matmul(transpose(state.A), K), state.delta);
}

// Expected squared anchor-key distance under the affinity distribution:
// sum_i sum_j A(i,j) ||u_j - k_i||^2.  The surrogate objective whose
// per-iteration value the fixed-point iteration drives down.
template <class T>
T anchor_objective(const AffinityStateT<T>& state, const Mat<T>& anchors, const Mat<T>& K) {
    T total = T(0);
    for (std::size_t i = 0; i < K.rows(); ++i) {
        for (std::size_t j = 0; j < anchors.rows(); ++j) {
            T dist2 = T(0);
            for (std::size_t c = 0; c < K.cols(); ++c) {
                const T diff = anchors(j, c) - K(i, c);
                dist2 += diff * diff;
            }
            total += state.A(i, j) * dist2;
        }
    }
    return total;
}

template <class T>
struct FixedPointTraceT {
    Mat<T> anchors;
    std::vector<T> objective;  // surrogate objective at init and after each step
};

using FixedPointTrace = FixedPointTraceT<double>;

// Iterates the closed-form update from a given initialization, recording the
// surrogate objective before the first step and after every step.
template <class T>
FixedPointTraceT<T> run_fixed_point(const Mat<T>& K, Mat<T> init, std::size_t iterations) {
    FixedPointTraceT<T> trace{std::move(init), {}};
    AffinityStateT<T> state = anchor_affinity(AnchorParamsT<T>(trace.anchors), K);
    trace.objective.push_back(anchor_objective(state, trace.anchors, K));
    for (std::size_t it = 0; it < iterations; ++it) {
        trace.anchors = anchor_fixed_point_step(state, K);
        state = anchor_affinity(AnchorParamsT<T>(trace.anchors), K);
        const T obj = anchor_objective(state, trace.anchors, K);
        if (!std::isfinite(static_cast<double>(obj))) {
            throw NumericError("non-finite fixed-point objective at iteration " +
                               std::to_string(it + 1));
        }
        trace.objective.push_back(obj);
    }
    return trace;
}

// Initializes m anchors from randomly chosen key rows, then refines with a
// few fixed-point steps.  The alternative to the Gaussian initializer.
template <class T>
Mat<T> anchors_from_keys(Rng& rng, const Mat<T>& K, std::size_t m,
                         std::size_t refine_steps = 5) {
    Mat<T> init(m, K.cols());
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t row = rng.index(K.rows());
        for (std::size_t c = 0; c < K.cols(); ++c) init(j, c) = K(row, c);
    }
    return run_fixed_point(K, std::move(init), refine_steps).anchors;
}

// Per-head parameters for multi-head anchor attention.  W_Q is carried for
// interface parity with the vanilla oracle but is inert on the anchor path
// (the affinity uses keys only).
template <class T>
struct HeadParamsT {
    ProjectionWeightsT<T> proj;
    AnchorParamsT<T> anchors;
};

using HeadParams = HeadParamsT<double>;

template <class T>
struct MultiHeadParamsT {
    std::vector<HeadParamsT<T>> heads;
    Mat<T> W_out;  // (l*d) x d_out

    std::size_t head_count() const { return heads.size(); }
    std::size_t head_dim() const { return heads.front().proj.W_K.cols(); }

    void validate() const {
        if (heads.empty()) {
            throw DimensionError("multi-head parameters need at least one head");
        }
        const Shape proj_shape = heads.front().proj.W_K.shape();
        const Shape anchor_shape = heads.front().anchors.W_S.shape();
        for (const auto& h : heads) {
            if (h.proj.W_K.shape() != proj_shape || h.anchors.W_S.shape() != anchor_shape) {
                throw DimensionError("heads disagree on projection or anchor shape");
            }
            if (h.anchors.dim() != h.proj.W_K.cols()) {
                throw DimensionError("anchor dim does not match head projection dim");
            }
        }
        if (W_out.rows() != heads.size() * head_dim()) {
            throw DimensionError("W_out rows " + std::to_string(W_out.rows()) +
                                 " do not equal heads*dim " +
                                 std::to_string(heads.size() * head_dim()));
        }
    }
};

using MultiHeadParams = MultiHeadParamsT<double>;

// Per-head cached state for the backward pass.
template <class T>
struct MultiHeadStateT {
    std::vector<AffinityStateT<T>> head_states;
    std::vector<Mat<T>> head_keys;
    std::vector<Mat<T>> head_values;
    std::vector<Mat<T>> head_outputs;
    Mat<T> concat{1, 1};  // n x (l*d)
};

using MultiHeadState = MultiHeadStateT<double>;

// Per head: project X to (K, V), run the fast anchor path, concatenate head
// outputs along columns, then project with W_out.
template <class T>
Mat<T> multi_head_attention(const Mat<T>& X, const MultiHeadParamsT<T>& params,
                            MultiHeadStateT<T>* cache = nullptr) {
    params.validate();
    const std::size_t l = params.head_count();
    const std::size_t d = params.head_dim();
    Mat<T> concat(X.rows(), l * d);
    MultiHeadStateT<T> local;
    MultiHeadStateT<T>& st = cache ? *cache : local;
    st.head_states.clear();
    st.head_keys.clear();
    st.head_values.clear();
    st.head_outputs.clear();
    for (std::size_t h = 0; h < l; ++h) {
        Mat<T> K = matmul(X, params.heads[h].proj.W_K);
        Mat<T> V = matmul(X, params.heads[h].proj.W_V);
        AffinityStateT<T> state = anchor_affinity(params.heads[h].anchors, K);
        Mat<T> H = anchor_attention_fast(state, V);
        for (std::size_t i = 0; i < X.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                concat(i, h * d + j) = H(i, j);
            }
        }
        st.head_states.push_back(std::move(state));
        st.head_keys.push_back(std::move(K));
        st.head_values.push_back(std::move(V));
        st.head_outputs.push_back(std::move(H));
    }
    Mat<T> out = matmul(concat, params.W_out);
    if (cache) cache->concat = std::move(concat);
    return out;
}

// Closed-form anchor-path flop count under the shared convention:
// affinity (2nmd matmul + 3nm softmax), M1 (2nmd), M2 (md divisions),
// M3 (2nmd).  Column-sum reductions are uncounted, matching vanilla_flops'
// treatment of row reductions.
inline FlopCount anchor_flops(std::size_t n, std::size_t m, std::size_t d) {
    const FlopCount nm = static_cast<FlopCount>(n) * m;
    return 2 * nm * d + 3 * nm  // affinity
           + 2 * nm * d         // M1 = A^T V
           + static_cast<FlopCount>(m) * d  // M2 = Delta^-1 M1
           + 2 * nm * d;        // M3 = A M2
}

}  // namespace anchorattn
