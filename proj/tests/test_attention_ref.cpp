#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "anchorattn/attention_ref.hpp"
#include "anchorattn/bench.hpp"

using namespace anchorattn;

namespace {

// Per-row summation oracle: directly evaluates the exp-weighted average of
// value rows, independent of the matmul/softmax pipeline.
Matrix vanilla_oracle(const AttentionInputs& inp) {
    const std::size_t n = inp.tokens(), d = inp.dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix out(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> w(n);
        double max_logit = -1e300;
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += inp.Q(t, c) * inp.K(i, c);
            w[i] = dot * scale;
            max_logit = std::max(max_logit, w[i]);
        }
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = std::exp(w[i] - max_logit);
            z += w[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) out(t, c) += (w[i] / z) * inp.V(i, c);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("project_tokens identity and composition") {
    Matrix id{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    ProjectionWeights w_id(id, id, id);
    AttentionInputs inp = project_tokens(id, w_id);
    CHECK(inp.Q == id);
    CHECK(inp.K == id);
    CHECK(inp.V == id);

    Rng rng(2);
    Matrix x = random_matrix(rng, 4, 3);
    ProjectionWeights w(random_matrix(rng, 3, 2), random_matrix(rng, 3, 2),
                        random_matrix(rng, 3, 2));
    AttentionInputs projected = project_tokens(x, w);
    CHECK(projected.Q == matmul(x, w.W_Q));
    CHECK(projected.K == matmul(x, w.W_K));
    CHECK(projected.V == matmul(x, w.W_V));

    Matrix zero(4, 3);
    AttentionInputs zp = project_tokens(zero, w);
    CHECK(max_abs(zp.Q) == 0.0);
    CHECK(max_abs(zp.V) == 0.0);
}

TEST_CASE("project_tokens rejects shape mismatch") {
    Matrix x(4, 3);
    ProjectionWeights w(Matrix(2, 2), Matrix(2, 2), Matrix(2, 2));
    CHECK_THROWS_AS(project_tokens(x, w), DimensionError);
}

TEST_CASE("single token attends to itself") {
    AttentionInputs inp(Matrix{{0.3, -2.0}}, Matrix{{1.0, 4.0}}, Matrix{{5.0, 7.0}});
    CHECK(max_abs_diff(vanilla_attention(inp), Matrix{{5.0, 7.0}}) <= 1e-15);
}

TEST_CASE("zero queries give the column mean of V") {
    Rng rng(4);
    Matrix v = random_matrix(rng, 5, 3);
    AttentionInputs inp(Matrix(5, 3), random_matrix(rng, 5, 3), v);
    Matrix h = vanilla_attention(inp);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 5; ++i) mean += v(i, c) / 5.0;
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(h(i, c) == Catch::Approx(mean).margin(1e-12));
        }
    }
}

TEST_CASE("vanilla attention matches per-row summation oracle") {
    Rng rng(6);
    AttentionInputs inp(random_matrix(rng, 3, 2), random_matrix(rng, 3, 2),
                        random_matrix(rng, 3, 2));
    CHECK(max_abs_diff(vanilla_attention(inp), vanilla_oracle(inp)) <= 1e-12);
}

TEST_CASE("output rows stay inside the convex hull of V") {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.index(12), d = 1 + rng.index(6);
        AttentionInputs inp(random_matrix(rng, n, d, -3, 3), random_matrix(rng, n, d, -3, 3),
                            random_matrix(rng, n, d, -3, 3));
        Matrix h = vanilla_attention(inp);
        for (std::size_t c = 0; c < d; ++c) {
            double lo = inp.V(0, c), hi = inp.V(0, c);
            for (std::size_t i = 1; i < n; ++i) {
                lo = std::min(lo, inp.V(i, c));
                hi = std::max(hi, inp.V(i, c));
            }
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(h(i, c) >= lo - 1e-12);
                CHECK(h(i, c) <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("permutation equivariance") {
    Rng rng(10);
    const std::size_t n = 6, d = 3;
    AttentionInputs inp(random_matrix(rng, n, d), random_matrix(rng, n, d),
                        random_matrix(rng, n, d));
    Matrix h = vanilla_attention(inp);

    // reverse the rows of Q: output rows reverse identically
    Matrix q_rev(n, d), h_expected(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            q_rev(i, c) = inp.Q(n - 1 - i, c);
            h_expected(i, c) = h(n - 1 - i, c);
        }
    }
    CHECK(max_abs_diff(vanilla_attention(AttentionInputs(q_rev, inp.K, inp.V)),
                       h_expected) <= 1e-12);

    // jointly permuting K and V leaves the output unchanged
    Matrix k_rev(n, d), v_rev(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            k_rev(i, c) = inp.K(n - 1 - i, c);
            v_rev(i, c) = inp.V(n - 1 - i, c);
        }
    }
    CHECK(max_abs_diff(vanilla_attention(AttentionInputs(inp.Q, k_rev, v_rev)), h) <=
          1e-12);
}

TEST_CASE("vanilla flop count") {
    CHECK(vanilla_flops(1, 1) == 7);
    CHECK(vanilla_flops(64, 16) == 4 * vanilla_flops(32, 16));

    // closed form equals the instrumented run
    Rng rng(12);
    const std::size_t n = 128, d = 64;
    AttentionInputs inp(random_matrix(rng, n, d), random_matrix(rng, n, d),
                        random_matrix(rng, n, d));
    CHECK(bench::instrumented_vanilla_flops(inp) == vanilla_flops(n, d));
}
