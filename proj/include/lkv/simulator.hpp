// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lkv/guidance.hpp"
#include "lkv/numerics.hpp"

namespace lkv {

struct DecoderConfig {
    std::size_t layers = 8;
    std::size_t heads = 4;
    std::size_t dim = 64;
    std::size_t ff_dim = 256;
    std::uint64_t seed = 0;

    void validate() const {
        if (layers < 1 || heads < 1 || dim < 1 || ff_dim < 1) {
            throw std::invalid_argument("DecoderConfig: all dimensions must be >= 1");
        }
        if (dim % heads != 0) {
            throw std::invalid_argument("DecoderConfig: dim must be divisible by heads");
        }
    }
};

/// Token layout of one sequence: [pre-prompt | vision grid | post-prompt].
struct SequenceLayout {
    std::size_t pre_prompt_len = 8;
    std::uint32_t grid_height = 16;
    std::uint32_t grid_width = 16;
    std::size_t post_prompt_len = 8;

    std::size_t vision_count() const {
        return static_cast<std::size_t>(grid_height) * grid_width;
    }
    std::size_t prompt_count() const { return pre_prompt_len + post_prompt_len; }
    std::size_t seq_len() const { return prompt_count() + vision_count(); }

    void validate() const {
        if (vision_count() < 1) {
            throw std::invalid_argument("SequenceLayout: vision grid must be nonempty");
        }
    }
};

struct LayerWeights {
    Matrix wq, wk, wv, wo;   // d x d
    Matrix w_in;             // d x d_ff
    Matrix w_out;            // d_ff x d
};

struct DecoderWeights {
    std::vector<LayerWeights> layers;
};

namespace detail {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, float bound,
                            SeededStream& stream) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = stream.uniform_f32(-bound, bound);
    return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const float aik = a.at(i, k);
            if (aik == 0.0f) continue;
            for (std::size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

inline Matrix rms_normalize(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double ms = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            ms += static_cast<double>(m.at(i, j)) * m.at(i, j);
        }
        const float denom = static_cast<float>(std::sqrt(ms / m.cols)) + 1e-6f;
        for (std::size_t j = 0; j < m.cols; ++j) {
            out.at(i, j) = m.at(i, j) / denom;
        }
    }
    return out;
}

}  // namespace detail

/// Draw all projection weights from the seeded stream. Order per layer:
/// Wq, Wk, Wv, Wo, W_in, W_out, each row-major, uniform in [-1/sqrt(d), 1/sqrt(d)].
inline DecoderWeights init_weights(const DecoderConfig& cfg) {
    cfg.validate();
    const float bound = 1.0f / std::sqrt(static_cast<float>(cfg.dim));
    SeededStream stream(cfg.seed);
    DecoderWeights w;
    w.layers.reserve(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerWeights lw;
        lw.wq = detail::random_matrix(cfg.dim, cfg.dim, bound, stream);
        lw.wk = detail::random_matrix(cfg.dim, cfg.dim, bound, stream);
        lw.wv = detail::random_matrix(cfg.dim, cfg.dim, bound, stream);
        lw.wo = detail::random_matrix(cfg.dim, cfg.dim, bound, stream);
        lw.w_in = detail::random_matrix(cfg.dim, cfg.ff_dim, bound, stream);
        lw.w_out = detail::random_matrix(cfg.ff_dim, cfg.dim, bound, stream);
        w.layers.push_back(std::move(lw));
    }
    return w;
}

/// Pre-norm decoder block: RMS norm, multi-head causal self-attention,
/// residual, RMS norm, ReLU MLP, residual. Returns the new hidden states and
/// the post-softmax attention tensor.
inline std::pair<Matrix, AttentionTensor> layer_forward(const Matrix& hidden,
                                                        const LayerWeights& w,
                                                        std::size_t heads) {
    const std::size_t seq = hidden.rows;
    const std::size_t d = hidden.cols;
    if (w.wq.rows != d) throw std::invalid_argument("layer_forward: hidden dim mismatch");
    const std::size_t head_dim = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    const Matrix u = detail::rms_normalize(hidden);
    const Matrix q = detail::matmul(u, w.wq);
    const Matrix k = detail::matmul(u, w.wk);
    const Matrix v = detail::matmul(u, w.wv);

    AttentionTensor attn;
    attn.heads = heads;
    attn.seq_len = seq;
    attn.probs.assign(heads, Matrix(seq, seq));

    Matrix context(seq, d);
    std::vector<float> scores(seq);
    std::vector<std::uint8_t> mask(seq);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * head_dim;
        Matrix& probs = attn.probs[h];
        for (std::size_t i = 0; i < seq; ++i) {
            for (std::size_t j = 0; j < seq; ++j) {
                float dot = 0.0f;
                for (std::size_t t = 0; t < head_dim; ++t) {
                    dot += q.at(i, off + t) * k.at(j, off + t);
                }
                scores[j] = dot * scale;
                mask[j] = j > i ? 1 : 0;  // causal
            }
            const auto row = softmax_masked_row(scores, mask);
            for (std::size_t j = 0; j <= i; ++j) {
                probs.at(i, j) = row[j];
                for (std::size_t t = 0; t < head_dim; ++t) {
                    context.at(i, off + t) += row[j] * v.at(j, off + t);
                }
            }
        }
    }

    Matrix h1 = hidden;
    const Matrix attn_out = detail::matmul(context, w.wo);
    for (std::size_t i = 0; i < h1.data.size(); ++i) h1.data[i] += attn_out.data[i];

    Matrix n2 = detail::rms_normalize(h1);
    Matrix ff = detail::matmul(n2, w.w_in);
    for (auto& x : ff.data) x = std::max(0.0f, x);
    const Matrix ff_out = detail::matmul(ff, w.w_out);
    for (std::size_t i = 0; i < h1.data.size(); ++i) h1.data[i] += ff_out.data[i];

    return {std::move(h1), std::move(attn)};
}

/// Synthesize the input sequence. Prompt rows come straight from the stream.
/// Vision rows default to a smooth quadrant field (four cluster prototypes
/// plus small per-cell noise) so spatially adjacent cells are similar; an
/// externally supplied vision tensor overrides the synthesis.
inline Matrix embed_sequence(const SequenceLayout& layout, const DecoderConfig& cfg,
                             const std::optional<Matrix>& vision = std::nullopt) {
    layout.validate();
    cfg.validate();
    const std::size_t d = cfg.dim;
    if (vision && (vision->rows != layout.vision_count() || vision->cols != d)) {
        throw std::invalid_argument("embed_sequence: vision tensor shape mismatch");
    }
    const float bound = 1.0f / std::sqrt(static_cast<float>(d));
    SeededStream stream(cfg.seed ^ 0xA5C3E7D9B1F06842ull);

    Matrix seq(layout.seq_len(), d);
    std::size_t row = 0;
    for (std::size_t i = 0; i < layout.pre_prompt_len; ++i, ++row) {
        for (std::size_t j = 0; j < d; ++j) seq.at(row, j) = stream.uniform_f32(-bound, bound);
    }

    if (vision) {
        std::copy(vision->data.begin(), vision->data.end(), seq.data.begin() + row * d);
        row += layout.vision_count();
    } else {
        constexpr std::size_t kPrototypes = 4;
        Matrix protos(kPrototypes, d);
        for (auto& x : protos.data) x = stream.uniform_f32(-1.0f, 1.0f);
        for (std::uint32_t r = 0; r < layout.grid_height; ++r) {
            for (std::uint32_t c = 0; c < layout.grid_width; ++c, ++row) {
                const std::size_t qr = (2u * r) / layout.grid_height;
                const std::size_t qc = layout.grid_width > 1 ? (2u * c) / layout.grid_width : 0;
                const std::size_t proto = std::min<std::size_t>(qr * 2 + qc, kPrototypes - 1);
                for (std::size_t j = 0; j < d; ++j) {
                    seq.at(row, j) = protos.at(proto, j) + stream.uniform_f32(-0.05f, 0.05f);
                }
            }
        }
    }

    for (std::size_t i = 0; i < layout.post_prompt_len; ++i, ++row) {
        for (std::size_t j = 0; j < d; ++j) seq.at(row, j) = stream.uniform_f32(-bound, bound);
    }
    return seq;
}

}  // namespace lkv
