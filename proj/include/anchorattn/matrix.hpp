#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace anchorattn {

// Error hierarchy shared by every module.  The CLI maps these onto its
// stable exit codes.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularMassError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

namespace detail {

// Allocation accounting used by tests to enforce the fast path's memory
// contract (no n-by-n buffer may ever be allocated).
inline thread_local bool track_allocations = false;
inline thread_local std::size_t largest_allocation_elems = 0;

inline void note_allocation(std::size_t elems) {
    if (track_allocations && elems > largest_allocation_elems) {
        largest_allocation_elems = elems;
    }
}

}  // namespace detail

// RAII scope that records the largest matrix allocation made on this thread.
class AllocationTracker {
public:
    AllocationTracker() {
        detail::track_allocations = true;
        detail::largest_allocation_elems = 0;
    }
    ~AllocationTracker() { detail::track_allocations = false; }
    AllocationTracker(const AllocationTracker&) = delete;
    AllocationTracker& operator=(const AllocationTracker&) = delete;

    std::size_t largest_elems() const { return detail::largest_allocation_elems; }
};

// Dense row-major matrix.  Degenerate 0-dimensional shapes are rejected at
// construction; every public operation preserves finiteness of entries.
template <class T>
class Mat {
public:
    Mat(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(checked_size(rows, cols), T(0)) {
        detail::note_allocation(data_.size());
    }

    Mat(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != checked_size(rows, cols)) {
            throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                                 " does not match shape " + to_string(shape()));
        }
        detail::note_allocation(data_.size());
    }

    Mat(std::initializer_list<std::initializer_list<T>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        checked_size(rows_, cols_);
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) {
                throw DimensionError("ragged initializer list for matrix");
            }
            data_.insert(data_.end(), r.begin(), r.end());
        }
        detail::note_allocation(data_.size());
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    Shape shape() const { return {rows_, cols_}; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T* row(std::size_t i) { return data_.data() + i * cols_; }
    const T* row(std::size_t i) const { return data_.data() + i * cols_; }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    static std::size_t checked_size(std::size_t rows, std::size_t cols) {
        if (rows == 0 || cols == 0) {
            throw DimensionError("degenerate matrix shape " +
                                 to_string(Shape{rows, cols}));
        }
        return rows * cols;
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = Mat<double>;

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) {
        throw NumericError(std::string("non-finite entries in ") + what);
    }
}

// Deterministic RNG helpers.  Hand-rolled transforms so that streams are
// identical across standard libraries, not just across runs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    // Box-Muller; one sample per call, cached pair discarded for simplicity.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double pi = 3.14159265358979323846;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
    }

private:
    std::uint64_t state_;
};

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                            double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            m(i, j) = rng.uniform(lo, hi);
        }
    }
    return m;
}

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            m(i, j) = stddev * rng.normal();
        }
    }
    return m;
}

}  // namespace anchorattn
