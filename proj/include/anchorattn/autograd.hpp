#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "anchorattn/anchor.hpp"
#include "anchorattn/linalg.hpp"
#include "anchorattn/matrix.hpp"

namespace anchorattn {

// Gradients of a scalar loss with respect to one head's anchor-attention
// inputs.  Shapes mirror the parameters exactly.
struct GradBundle {
    Matrix d_anchors;  // m x d
    Matrix d_keys;     // n x d
    Matrix d_values;   // n x d
};

namespace detail {

// Backward of A = softmax_rows(K W_S^T, 1/sqrt(d)) given dL/dA, with the
// column-mass contribution dL/ddelta already folded into d_A by the caller
// (delta_j = sum_i A(i,j), so each d_delta[j] adds to every d_A(i,j)).
// Returns dL/dlogits where logits = K W_S^T (scale applied inside).
inline Matrix softmax_affinity_backward(const AffinityState& state, const Matrix& d_A,
                                        const std::vector<double>& d_delta,
                                        std::size_t dim) {
    const std::size_t n = state.tokens(), m = state.anchors();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    Matrix d_logits(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            dot += state.A(i, j) * (d_A(i, j) + d_delta[j]);
        }
        for (std::size_t j = 0; j < m; ++j) {
            d_logits(i, j) = scale * state.A(i, j) * (d_A(i, j) + d_delta[j] - dot);
        }
    }
    return d_logits;
}

inline GradBundle assemble_bundle(const AffinityState& state, const Matrix& d_A,
                                  const std::vector<double>& d_delta,
                                  const AnchorParams& anchors, const Matrix& K,
                                  Matrix d_V) {
    Matrix d_logits = softmax_affinity_backward(state, d_A, d_delta, K.cols());
    Matrix d_WS = matmul(transpose(d_logits), K);
    Matrix d_K = matmul(d_logits, anchors.W_S);
    return GradBundle{std::move(d_WS), std::move(d_K), std::move(d_V)};
}

}  // namespace detail

// Backward through the fast path M1 = A^T V, M2 = Delta^-1 M1, H = A M2.
// The dependence of delta on A is kept: dropping it would still "train"
// but diverge from the true gradient.
inline GradBundle backward_anchor_attention(const AffinityState& state,
                                            const AnchorParams& anchors,
                                            const Matrix& K, const Matrix& V,
                                            const Matrix& upstream) {
    if (upstream.rows() != state.tokens() || upstream.cols() != V.cols()) {
        throw DimensionError("upstream gradient shape " + to_string(upstream.shape()) +
                             " does not match output shape");
    }
    check_positive_mass(state.delta);
    const std::size_t m = state.anchors(), d = V.cols();

    Matrix m1 = matmul(transpose(state.A), V);
    Matrix m2 = scale_rows_by_inverse(m1, state.delta);

    // H = A M2
    Matrix d_A = matmul(upstream, transpose(m2));
    Matrix d_m2 = matmul(transpose(state.A), upstream);

    // M2 = Delta^-1 M1
    Matrix d_m1 = scale_rows_by_inverse(d_m2, state.delta);
    std::vector<double> d_delta(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dot += d_m2(j, c) * m1(j, c);
        }
        d_delta[j] = -dot / (state.delta[j] * state.delta[j]);
    }

    // M1 = A^T V
    Matrix d_V = matmul(state.A, d_m1);
    add_in_place(d_A, matmul(V, transpose(d_m1)));

    return detail::assemble_bundle(state, d_A, d_delta, anchors, K, std::move(d_V));
}

// Independently derived backward through the explicit path H = (A R) V with
// R = Delta^-1 A^T.  O(n^2) scratch; exists to cross-check the fast backward.
inline GradBundle backward_anchor_attention_explicit(const AffinityState& state,
                                                     const AnchorParams& anchors,
                                                     const Matrix& K, const Matrix& V,
                                                     const Matrix& upstream) {
    if (upstream.rows() != state.tokens() || upstream.cols() != V.cols()) {
        throw DimensionError("upstream gradient shape " + to_string(upstream.shape()) +
                             " does not match output shape");
    }
    check_positive_mass(state.delta);
    const std::size_t n = state.tokens(), m = state.anchors();

    Matrix R = scale_rows_by_inverse(transpose(state.A), state.delta);  // m x n
    Matrix S = matmul(state.A, R);                                      // n x n

    Matrix d_V = matmul(transpose(S), upstream);
    Matrix d_S = matmul(upstream, transpose(V));  // n x n

    Matrix d_A = matmul(d_S, transpose(R));
    Matrix d_R = matmul(transpose(state.A), d_S);  // m x n

    std::vector<double> d_delta(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        const double inv = 1.0 / state.delta[j];
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d_A(i, j) += d_R(j, i) * inv;
            dot += d_R(j, i) * state.A(i, j);
        }
        d_delta[j] = -dot * inv * inv;
    }

    return detail::assemble_bundle(state, d_A, d_delta, anchors, K, std::move(d_V));
}

inline void sgd_step(Matrix& param, const Matrix& grad, double lr) {
    if (!(lr > 0.0) && lr != 0.0) {
        throw ArgumentError("learning rate must be non-negative");
    }
    if (param.shape() != grad.shape()) {
        throw DimensionError("sgd_step shape mismatch: " + to_string(param.shape()) +
                             " vs " + to_string(grad.shape()));
    }
    for (std::size_t i = 0; i < param.rows(); ++i) {
        for (std::size_t j = 0; j < param.cols(); ++j) {
            param(i, j) -= lr * grad(i, j);
        }
    }
}

// Gradients for the full multi-head block, one entry per parameter plus the
// gradient flowing back into the input tokens.
struct MultiHeadGrads {
    std::vector<Matrix> d_WK;
    std::vector<Matrix> d_WV;
    std::vector<Matrix> d_WS;
    Matrix d_Wout;
    Matrix d_X;
};

inline MultiHeadGrads backward_multi_head(const Matrix& X, const MultiHeadParams& params,
                                          const MultiHeadState& state,
                                          const Matrix& upstream) {
    const std::size_t l = params.head_count();
    const std::size_t d = params.head_dim();
    Matrix d_concat = matmul(upstream, transpose(params.W_out));
    MultiHeadGrads grads{{}, {}, {}, matmul(transpose(state.concat), upstream),
                         Matrix(X.rows(), X.cols())};
    for (std::size_t h = 0; h < l; ++h) {
        Matrix g_head(X.rows(), d);
        for (std::size_t i = 0; i < X.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                g_head(i, j) = d_concat(i, h * d + j);
            }
        }
        GradBundle hb = backward_anchor_attention(state.head_states[h],
                                                  params.heads[h].anchors,
                                                  state.head_keys[h],
                                                  state.head_values[h], g_head);
        grads.d_WK.push_back(matmul(transpose(X), hb.d_keys));
        grads.d_WV.push_back(matmul(transpose(X), hb.d_values));
        add_in_place(grads.d_X, matmul(hb.d_keys, transpose(params.heads[h].proj.W_K)));
        add_in_place(grads.d_X, matmul(hb.d_values, transpose(params.heads[h].proj.W_V)));
        grads.d_WS.push_back(std::move(hb.d_anchors));
    }
    return grads;
}

struct FDCheckReport {
    std::string param;
    double max_rel_err = 0.0;
    std::size_t elements = 0;
    double step = 0.0;
};

// A named parameter under finite-difference test: the live value that the
// loss closure reads, and the analytic gradient claimed for it.
struct FDParam {
    std::string name;
    Matrix* value = nullptr;
    const Matrix* analytic = nullptr;
};

inline double fd_relative_error(double analytic, double numeric) {
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

// Central finite differences: perturb every entry of every parameter by
// +-step and compare (L+ - L-)/(2 step) against the analytic gradient.
inline std::vector<FDCheckReport> finite_difference_check(
    std::vector<FDParam> params, const std::function<double()>& loss, double step) {
    if (!(step > 0.0)) {
        throw ArgumentError("finite-difference step must be positive");
    }
    std::vector<FDCheckReport> reports;
    for (auto& p : params) {
        FDCheckReport rep{p.name, 0.0, p.value->size(), step};
        for (std::size_t i = 0; i < p.value->rows(); ++i) {
            for (std::size_t j = 0; j < p.value->cols(); ++j) {
                const double saved = (*p.value)(i, j);
                (*p.value)(i, j) = saved + step;
                const double l_plus = loss();
                (*p.value)(i, j) = saved - step;
                const double l_minus = loss();
                (*p.value)(i, j) = saved;
                if (!std::isfinite(l_plus) || !std::isfinite(l_minus)) {
                    throw NumericError("non-finite loss while perturbing " + p.name +
                                       "(" + std::to_string(i) + "," + std::to_string(j) +
                                       ")");
                }
                const double numeric = (l_plus - l_minus) / (2.0 * step);
                rep.max_rel_err = std::max(
                    rep.max_rel_err, fd_relative_error((*p.analytic)(i, j), numeric));
            }
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

}  // namespace anchorattn
