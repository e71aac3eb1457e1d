#pragma once

#include <cstdint>
#include <vector>

#include "anchorattn/matrix.hpp"

namespace anchorattn {

struct Sample {
    Matrix tokens;  // n x D
    std::size_t label = 0;
};

// Separable-by-construction classification task standing in for image data:
// every token of a sample sits near its class center, so a linear readout of
// the mean token already solves it.  Labels are assigned round-robin, which
// keeps classes balanced within one sample.
struct SyntheticSpec {
    std::size_t classes = 3;
    std::size_t samples = 2000;
    std::size_t tokens = 16;
    std::size_t dim = 6;
    double separation = 3.0;
    double noise = 0.5;
    std::uint64_t seed = 1;
};

inline std::vector<Sample> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2) {
        throw ArgumentError("synthetic task needs at least 2 classes");
    }
    Rng rng(spec.seed);
    std::vector<Matrix> centers;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        centers.push_back(gaussian_matrix(rng, 1, spec.dim, spec.separation));
    }
    std::vector<Sample> samples;
    samples.reserve(spec.samples);
    for (std::size_t s = 0; s < spec.samples; ++s) {
        const std::size_t label = s % spec.classes;
        Matrix tokens(spec.tokens, spec.dim);
        for (std::size_t t = 0; t < spec.tokens; ++t) {
            for (std::size_t j = 0; j < spec.dim; ++j) {
                tokens(t, j) = centers[label](0, j) + spec.noise * rng.normal();
            }
        }
        samples.push_back(Sample{std::move(tokens), label});
    }
    return samples;
}

// Deterministic train/holdout split: every fourth sample is held out, which
// preserves class balance under the round-robin labeling.
inline void split_holdout(const std::vector<Sample>& all, std::vector<const Sample*>& train,
                          std::vector<const Sample*>& holdout) {
    train.clear();
    holdout.clear();
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (i % 4 == 3) {
            holdout.push_back(&all[i]);
        } else {
            train.push_back(&all[i]);
        }
    }
}

}  // namespace anchorattn
