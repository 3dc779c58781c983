// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace lkv {

/// Dense row-major float matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;

    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {
        if (r < 1 || c < 1) {
            throw std::invalid_argument("Matrix: rows and cols must be >= 1");
        }
    }

    Matrix(std::size_t r, std::size_t c, std::vector<float> values)
        : rows(r), cols(c), data(std::move(values)) {
        if (r < 1 || c < 1) {
            throw std::invalid_argument("Matrix: rows and cols must be >= 1");
        }
        if (data.size() != r * c) {
            throw std::invalid_argument("Matrix: data length does not match rows*cols");
        }
    }

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

/// splitmix64 stream. Bit-exact across platforms; advanced by value.
struct SeededStream {
    std::uint64_t state = 0;

    explicit SeededStream(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next_u64() {
        state += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform float in [lo, hi) from the top 24 bits of the next u64.
    float uniform_f32(float lo, float hi) {
        if (!(lo < hi)) {
            throw std::invalid_argument("uniform_f32: lo must be < hi");
        }
        const std::uint64_t bits = next_u64() >> 40;  // top 24 bits
        const float frac = static_cast<float>(bits) / 16777216.0f;  // 2^24
        return lo + (hi - lo) * frac;
    }
};

/// Stable masked softmax over one score row. mask[i] == true excludes entry i.
/// Masked entries get probability 0; at least one entry must be unmasked.
inline std::vector<float> softmax_masked_row(std::span<const float> scores,
                                             std::span<const std::uint8_t> mask) {
    if (!mask.empty() && mask.size() != scores.size()) {
        throw std::invalid_argument("softmax_masked_row: mask length mismatch");
    }
    auto masked = [&](std::size_t i) { return !mask.empty() && mask[i] != 0; };

    float max_score = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!masked(i)) {
            any = true;
            max_score = std::max(max_score, scores[i]);
        }
    }
    if (!any) {
        throw std::domain_error("softmax_masked_row: all entries masked");
    }

    std::vector<float> out(scores.size(), 0.0f);
    double denom = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!masked(i)) {
            out[i] = std::exp(scores[i] - max_score);
            denom += out[i];
        }
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!masked(i)) {
            out[i] = static_cast<float>(out[i] / denom);
        }
    }
    return out;
}

}  // namespace lkv
