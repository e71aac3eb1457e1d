#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "anchorattn/matrix.hpp"

namespace anchorattn {

// out(i,j) = sum_k a(i,k) * b(k,j), accumulated left-to-right over k so that
// results are bit-reproducible.  Loops are tiled over k and j so the active
// slice of b stays cache resident when b is large; every out(i,j) accumulator
// still sees k strictly ascending (outer tiles ascend, k ascends within a
// tile), so the result is bit-identical to the untiled i-k-j nesting.
template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) +
                             " x " + to_string(b.shape()));
    }
    Mat<T> out(a.rows(), b.cols());
    const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
    constexpr std::size_t kTileK = 256, kTileJ = 1024;
    for (std::size_t kb = 0; kb < k_dim; kb += kTileK) {
        const std::size_t k_end = std::min(k_dim, kb + kTileK);
        for (std::size_t jb = 0; jb < m; jb += kTileJ) {
            const std::size_t j_end = std::min(m, jb + kTileJ);
            for (std::size_t i = 0; i < n; ++i) {
                T* out_row = out.row(i);
                for (std::size_t k = kb; k < k_end; ++k) {
                    const T aik = a(i, k);
                    const T* b_row = b.row(k);
                    for (std::size_t j = jb; j < j_end; ++j) {
                        out_row[j] += aik * b_row[j];
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
Mat<T> transpose(const Mat<T>& m) {
    Mat<T> out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

// Row-wise softmax of scale*x with per-row max subtraction.  Each output row
// sums to 1 and all entries are strictly positive.
template <class T>
Mat<T> softmax_rows(const Mat<T>& m, T scale) {
    if (!(scale > T(0))) {
        throw ArgumentError("softmax scale must be positive");
    }
    if (!m.all_finite()) {
        throw NumericError("non-finite input to softmax_rows");
    }
    Mat<T> out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const T* in_row = m.row(i);
        T* out_row = out.row(i);
        T row_max = in_row[0];
        for (std::size_t j = 1; j < m.cols(); ++j) {
            row_max = std::max(row_max, in_row[j]);
        }
        T sum = T(0);
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out_row[j] = std::exp(scale * (in_row[j] - row_max));
            sum += out_row[j];
        }
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out_row[j] /= sum;
        }
    }
    return out;
}

// out(i,j) = m(i,j) / mass[i].  Realizes left-multiplication by the inverse
// of a diagonal matrix in O(rows*cols).
template <class T>
Mat<T> scale_rows_by_inverse(const Mat<T>& m, const std::vector<T>& mass) {
    if (mass.size() != m.rows()) {
        throw DimensionError("mass length " + std::to_string(mass.size()) +
                             " does not match row count " + std::to_string(m.rows()));
    }
    for (std::size_t i = 0; i < mass.size(); ++i) {
        if (!(mass[i] > T(0)) || !std::isfinite(static_cast<double>(mass[i]))) {
            throw SingularMassError("non-positive mass entry at index " +
                                    std::to_string(i));
        }
    }
    Mat<T> out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const T inv = T(1) / mass[i];
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = m(i, j) * inv;
        }
    }
    return out;
}

template <class T>
std::vector<T> column_sums(const Mat<T>& m) {
    std::vector<T> sums(m.cols(), T(0));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const T* row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) {
            sums[j] += row[j];
        }
    }
    return sums;
}

template <class T>
std::vector<T> row_sums(const Mat<T>& m) {
    std::vector<T> sums(m.rows(), T(0));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const T* row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) {
            sums[i] += row[j];
        }
    }
    return sums;
}

template <class T>
T max_abs(const Mat<T>& m) {
    T best = T(0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            best = std::max(best, std::abs(m(i, j)));
        }
    }
    return best;
}

template <class T>
T max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff shape mismatch: " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
    }
    T best = T(0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            best = std::max(best, std::abs(a(i, j) - b(i, j)));
        }
    }
    return best;
}

template <class T>
Mat<T> add(const Mat<T>& a, const Mat<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add shape mismatch: " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
    Mat<T> out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) += b(i, j);
        }
    }
    return out;
}

template <class T>
void add_in_place(Mat<T>& a, const Mat<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add shape mismatch: " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            a(i, j) += b(i, j);
        }
    }
}

template <class T>
Mat<T> scaled(const Mat<T>& a, T factor) {
    Mat<T> out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) *= factor;
        }
    }
    return out;
}

template <class T>
T sum_entries(const Mat<T>& m) {
    T s = T(0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            s += m(i, j);
        }
    }
    return s;
}

}  // namespace anchorattn
