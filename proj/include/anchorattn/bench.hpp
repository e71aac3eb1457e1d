#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "anchorattn/anchor.hpp"
#include "anchorattn/attention_ref.hpp"
#include "anchorattn/linalg.hpp"
#include "anchorattn/matrix.hpp"

namespace anchorattn::bench {

enum class Mechanism { Vanilla, AnchorFast, AnchorExplicit };

inline const char* to_string(Mechanism m) {
    switch (m) {
        case Mechanism::Vanilla: return "vanilla";
        case Mechanism::AnchorFast: return "anchor-fast";
        case Mechanism::AnchorExplicit: return "anchor-explicit";
    }
    return "?";
}

inline Mechanism mechanism_from_string(const std::string& s) {
    if (s == "vanilla") return Mechanism::Vanilla;
    if (s == "anchor-fast") return Mechanism::AnchorFast;
    if (s == "anchor-explicit") return Mechanism::AnchorExplicit;
    throw ArgumentError("unknown mechanism '" + s + "'");
}

struct BenchRecord {
    Mechanism mechanism = Mechanism::Vanilla;
    std::size_t n = 0, m = 0, d = 0, heads = 1;
    std::size_t reps = 0;
    std::uint64_t wall_ns_median = 0;
    FlopCount flops = 0;
    double checksum = 0.0;
};

struct ScalingFit {
    Mechanism mechanism = Mechanism::Vanilla;
    double slope = 0.0;
    double r2 = 0.0;
    std::size_t n_min = 0, n_max = 0;
};

// ---------------------------------------------------------------------------
// Instrumented flop counting.  These kernels recompute the pipelines with a
// counter bumped at every arithmetic op the shared convention counts; the
// closed forms must match them exactly.

struct FlopCounter {
    std::uint64_t mul = 0, add = 0, sub = 0, div = 0, exp = 0;
    std::uint64_t total() const { return mul + add + sub + div + exp; }
};

inline Matrix counted_matmul(const Matrix& a, const Matrix& b, FlopCounter& c) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
                ++c.mul;
                ++c.add;
            }
        }
    }
    return out;
}

inline Matrix counted_softmax_rows(const Matrix& m, double scale, FlopCounter& c) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double row_max = m(i, 0);
        for (std::size_t j = 1; j < m.cols(); ++j) row_max = std::max(row_max, m(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = std::exp(scale * (m(i, j) - row_max));
            ++c.sub;
            ++c.exp;
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) /= sum;
            ++c.div;
        }
    }
    return out;
}

inline Matrix counted_row_inverse_scale(const Matrix& m, const std::vector<double>& mass,
                                        FlopCounter& c) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = m(i, j) / mass[i];
            ++c.div;
        }
    }
    return out;
}

inline FlopCount instrumented_vanilla_flops(const AttentionInputs& inp) {
    FlopCounter c;
    const double scale = 1.0 / std::sqrt(static_cast<double>(inp.dim()));
    Matrix scores = counted_matmul(inp.Q, transpose(inp.K), c);
    Matrix weights = counted_softmax_rows(scores, scale, c);
    counted_matmul(weights, inp.V, c);
    return c.total();
}

inline FlopCount instrumented_anchor_flops(const AnchorParams& anchors, const Matrix& K,
                                           const Matrix& V) {
    FlopCounter c;
    const double scale = 1.0 / std::sqrt(static_cast<double>(K.cols()));
    Matrix logits = counted_matmul(K, transpose(anchors.W_S), c);
    Matrix A = counted_softmax_rows(logits, scale, c);
    std::vector<double> delta = column_sums(A);
    Matrix m1 = counted_matmul(transpose(A), V, c);
    Matrix m2 = counted_row_inverse_scale(m1, delta, c);
    counted_matmul(A, m2, c);
    return c.total();
}

// ---------------------------------------------------------------------------
// Timed sweep.

struct SweepConfig {
    std::vector<Mechanism> mechanisms;
    std::vector<std::size_t> n_values;
    std::size_t m = 30;
    std::size_t d = 64;
    std::size_t heads = 1;
    std::size_t reps = 3;
    std::size_t warmup = 1;
    std::uint64_t seed = 1;
    std::size_t memory_ceiling_bytes = std::size_t(2) << 30;  // caps the n^2 buffers
    bool use_f32 = false;  // throughput-only mode; correctness paths stay f64
};

namespace detail {

template <class T>
double time_one(Mechanism mech, std::size_t n, std::size_t m, std::size_t d,
                std::uint64_t seed, double* checksum) {
    Rng rng(seed);
    Mat<T> K(n, d), V(n, d), Q(n, d), WS(std::max<std::size_t>(m, 1), d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            Q(i, j) = static_cast<T>(rng.uniform(-1.0, 1.0));
            K(i, j) = static_cast<T>(rng.uniform(-1.0, 1.0));
            V(i, j) = static_cast<T>(rng.uniform(-1.0, 1.0));
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            WS(i, j) = static_cast<T>(rng.uniform(-1.0, 1.0));
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    Mat<T> out(1, 1);
    if (mech == Mechanism::Vanilla) {
        out = vanilla_attention(AttentionInputsT<T>(Q, K, V));
    } else {
        AnchorParamsT<T> anchors(WS);
        AffinityStateT<T> state = anchor_affinity(anchors, K);
        out = (mech == Mechanism::AnchorFast) ? anchor_attention_fast(state, V)
                                              : anchor_attention_explicit(state, V);
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (checksum) {
        double s = 0.0;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t j = 0; j < out.cols(); ++j) s += static_cast<double>(out(i, j));
        }
        *checksum = s;
    }
    return static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
}

}  // namespace detail

inline FlopCount cell_flops(Mechanism mech, std::size_t n, std::size_t m, std::size_t d) {
    switch (mech) {
        case Mechanism::Vanilla: return vanilla_flops(n, d);
        case Mechanism::AnchorFast: return anchor_flops(n, m, d);
        case Mechanism::AnchorExplicit:
            // explicit path: affinity + S_t build (scale nm + matmul 2n^2 m) + S_t V
            return 2 * FlopCount(n) * m * d + 3 * FlopCount(n) * m + FlopCount(n) * m +
                   2 * FlopCount(n) * n * m + 2 * FlopCount(n) * n * d;
    }
    return 0;
}

// Timing cells run sequentially and single-threaded; the median over `reps`
// timed runs is recorded after `warmup` discarded runs.  Inputs are
// regenerated from the same per-cell seed each rep, so checksums for one
// (seed, shape, mechanism) cell are bit-identical across reps.
inline std::vector<BenchRecord> run_sweep(const SweepConfig& cfg,
                                          std::ostream* warnings = nullptr) {
    if (cfg.warmup < 1 && !cfg.mechanisms.empty() && !cfg.n_values.empty()) {
        throw ArgumentError("sweep requires at least one warmup rep");
    }
    std::vector<BenchRecord> records;
    for (Mechanism mech : cfg.mechanisms) {
        for (std::size_t n : cfg.n_values) {
            const bool needs_nn = (mech != Mechanism::AnchorFast);
            const std::size_t elem = cfg.use_f32 ? 4 : 8;
            if (needs_nn && n * n * elem > cfg.memory_ceiling_bytes) {
                throw CapacityError(std::string(to_string(mech)) + " cell n=" +
                                    std::to_string(n) + " exceeds the " +
                                    std::to_string(cfg.memory_ceiling_bytes) +
                                    "-byte memory ceiling");
            }
            if (mech != Mechanism::Vanilla && cfg.m >= n && warnings) {
                *warnings << "warning: m=" << cfg.m << " >= n=" << n
                          << "; anchor attention has no complexity advantage here\n";
            }
            const std::uint64_t cell_seed =
                cfg.seed * 1000003ull + n * 131ull + cfg.m * 31ull + cfg.d;
            std::vector<double> times;
            double checksum = 0.0;
            for (std::size_t r = 0; r < cfg.warmup + cfg.reps; ++r) {
                double cs = 0.0;
                const double ns =
                    cfg.use_f32
                        ? detail::time_one<float>(mech, n, cfg.m, cfg.d, cell_seed, &cs)
                        : detail::time_one<double>(mech, n, cfg.m, cfg.d, cell_seed, &cs);
                if (r >= cfg.warmup) {
                    times.push_back(ns);
                    checksum = cs;
                }
            }
            std::sort(times.begin(), times.end());
            const double median = times.empty() ? 0.0 : times[times.size() / 2];
            records.push_back(BenchRecord{
                mech, n, cfg.m, cfg.d, cfg.heads, cfg.reps,
                static_cast<std::uint64_t>(std::max(median, 1.0)),
                cell_flops(mech, n, cfg.m, cfg.d), checksum});
        }
    }
    std::sort(records.begin(), records.end(), [](const BenchRecord& a, const BenchRecord& b) {
        return std::tuple(std::string(to_string(a.mechanism)), a.n, a.m, a.d) <
               std::tuple(std::string(to_string(b.mechanism)), b.n, b.m, b.d);
    });
    return records;
}

// Least-squares slope of log(wall_ns) vs log(n), per mechanism.
inline std::vector<ScalingFit> fit_scaling(const std::vector<BenchRecord>& records) {
    std::vector<ScalingFit> fits;
    for (Mechanism mech :
         {Mechanism::Vanilla, Mechanism::AnchorFast, Mechanism::AnchorExplicit}) {
        std::vector<double> xs, ys;
        std::size_t n_min = SIZE_MAX, n_max = 0;
        for (const auto& r : records) {
            if (r.mechanism != mech) continue;
            xs.push_back(std::log(static_cast<double>(r.n)));
            ys.push_back(std::log(static_cast<double>(r.wall_ns_median)));
            n_min = std::min(n_min, r.n);
            n_max = std::max(n_max, r.n);
        }
        if (xs.empty()) continue;
        std::vector<double> distinct = xs;
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        if (distinct.size() < 4) {
            throw ArgumentError(std::string("fit_scaling needs >= 4 distinct n values for ") +
                                to_string(mech));
        }
        const double k = static_cast<double>(xs.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sx += xs[i];
            sy += ys[i];
            sxx += xs[i] * xs[i];
            sxy += xs[i] * ys[i];
            syy += ys[i] * ys[i];
        }
        const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
        const double denom = (k * sxx - sx * sx) * (k * syy - sy * sy);
        const double r2 = denom > 0.0
                              ? (k * sxy - sx * sy) * (k * sxy - sx * sy) / denom
                              : 1.0;
        fits.push_back(ScalingFit{mech, slope, r2, n_min, n_max});
    }
    return fits;
}

// ---------------------------------------------------------------------------
// Record serialization.  Both formats are part of the CLI's file contract:
//   CSV header: mechanism,n,m,d,heads,reps,wall_ns_median,flops,checksum
//   JSONL: one object per record with the same keys.

inline std::string format_checksum(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
    out << "mechanism,n,m,d,heads,reps,wall_ns_median,flops,checksum\n";
    for (const auto& r : records) {
        out << to_string(r.mechanism) << ',' << r.n << ',' << r.m << ',' << r.d << ','
            << r.heads << ',' << r.reps << ',' << r.wall_ns_median << ',' << r.flops
            << ',' << format_checksum(r.checksum) << '\n';
    }
}

inline void write_jsonl(std::ostream& out, const std::vector<BenchRecord>& records) {
    for (const auto& r : records) {
        out << "{\"mechanism\":\"" << to_string(r.mechanism) << "\",\"n\":" << r.n
            << ",\"m\":" << r.m << ",\"d\":" << r.d << ",\"heads\":" << r.heads
            << ",\"reps\":" << r.reps << ",\"wall_ns_median\":" << r.wall_ns_median
            << ",\"flops\":" << r.flops << ",\"checksum\":" << format_checksum(r.checksum)
            << "}\n";
    }
}

}  // namespace anchorattn::bench
