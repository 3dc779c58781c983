// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lkv/numerics.hpp"

namespace lkv {

/// Per-vision-token accumulated attention toward prompt tokens.
struct PromptGuidance {
    std::vector<float> xi;  // one positive weight per current vision token
};

/// Post-softmax causal attention for one layer: one seq x seq matrix per head.
struct AttentionTensor {
    std::size_t heads = 0;
    std::size_t seq_len = 0;
    std::vector<Matrix> probs;  // probs[h] is seq x seq
};

constexpr float kGuidanceFloor = 1e-12f;

/// Sum attention mass from each vision-token query to the given prompt-token
/// keys, across heads. Causally masked entries are zero in the tensor and
/// contribute nothing. Each weight gets a 1e-12 floor.
inline PromptGuidance accumulate_prompt_attention(const AttentionTensor& attn,
                                                  std::size_t vision_begin,
                                                  std::size_t vision_end,
                                                  const std::vector<std::size_t>& prompt_indices) {
    if (vision_end > attn.seq_len || vision_begin >= vision_end) {
        throw std::invalid_argument("accumulate_prompt_attention: bad vision range");
    }
    for (std::size_t j : prompt_indices) {
        if (j >= attn.seq_len) {
            throw std::invalid_argument("accumulate_prompt_attention: prompt index out of range");
        }
        if (j >= vision_begin && j < vision_end) {
            throw std::invalid_argument(
                "accumulate_prompt_attention: prompt indices overlap vision range");
        }
    }
    PromptGuidance g;
    g.xi.reserve(vision_end - vision_begin);
    for (std::size_t i = vision_begin; i < vision_end; ++i) {
        double acc = 0.0;
        for (std::size_t h = 0; h < attn.heads; ++h) {
            for (std::size_t j : prompt_indices) {
                acc += attn.probs[h].at(i, j);
            }
        }
        g.xi.push_back(std::max(static_cast<float>(acc), kGuidanceFloor));
    }
    return g;
}

inline PromptGuidance uniform_guidance(std::size_t n) {
    if (n < 1) throw std::invalid_argument("uniform_guidance: n must be >= 1");
    return {std::vector<float>(n, 1.0f)};
}

inline PromptGuidance random_guidance(std::size_t n, SeededStream& stream) {
    if (n < 1) throw std::invalid_argument("random_guidance: n must be >= 1");
    PromptGuidance g;
    g.xi.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        // uniform draw in (1e-12, 1]
        g.xi.push_back(1.0f - stream.uniform_f32(0.0f, 1.0f - kGuidanceFloor));
    }
    return g;
}

}  // namespace lkv
