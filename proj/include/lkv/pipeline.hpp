// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lkv/grid.hpp"
#include "lkv/guidance.hpp"
#include "lkv/matching.hpp"
#include "lkv/merge.hpp"
#include "lkv/numerics.hpp"
#include "lkv/simulator.hpp"

namespace lkv {

/// Compression schedule: the layers at which compression fires (1-based),
/// per-axis window counts, and per-step removal ratios.
struct Schedule {
    std::vector<std::size_t> lambdas;
    std::vector<std::uint32_t> windows;
    std::vector<double> ratios;

    std::size_t steps() const { return lambdas.size(); }
};

enum class GuidanceMode { Prompt, Uniform, Random };
enum class ScopeMode { Hierarchical, GlobalOnly, LocalOnly };
enum class EvictionMode { Merge, RandomEvict };

/// How the per-window removal count derives from rho: Tokens removes
/// floor(rho * v_w) tokens; HalfPairs removes floor(rho * v_w / 2).
enum class RemovalRule { Tokens, HalfPairs };

struct Strategy {
    GuidanceMode guidance = GuidanceMode::Prompt;
    FdMetric metric = FdMetric::CosineDivergence;
    MatchingMode matching = MatchingMode::Bipartite;
    ScopeMode scope = ScopeMode::Hierarchical;
    EvictionMode eviction = EvictionMode::Merge;
    RemovalRule removal_rule = RemovalRule::Tokens;
};

struct ScheduleValidation {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;
    bool ok() const { return errors.empty(); }
};

/// Collect every schedule violation as a value; equality of adjacent window
/// counts is a warning only (the local-only ablation needs fixed windows).
inline ScheduleValidation validate_schedule(const Schedule& s, std::size_t num_layers,
                                            std::uint32_t grid_h, std::uint32_t grid_w) {
    ScheduleValidation v;
    if (s.windows.size() != s.lambdas.size() || s.ratios.size() != s.lambdas.size()) {
        v.errors.push_back("schedule lists (layers, windows, ratios) must have equal length");
        return v;
    }
    const std::uint32_t max_w = std::min(grid_h, grid_w);
    for (std::size_t i = 0; i < s.lambdas.size(); ++i) {
        if (s.lambdas[i] < 1 || s.lambdas[i] >= num_layers) {
            v.errors.push_back("lambda[" + std::to_string(i) + "]=" + std::to_string(s.lambdas[i]) +
                               " must satisfy 1 <= lambda < L=" + std::to_string(num_layers));
        }
        if (i > 0 && s.lambdas[i] <= s.lambdas[i - 1]) {
            v.errors.push_back("lambda values must be strictly increasing at position " +
                               std::to_string(i));
        }
        if (s.windows[i] < 1) {
            v.errors.push_back("window count w[" + std::to_string(i) + "] must be >= 1");
        } else if (s.windows[i] > max_w) {
            v.errors.push_back("window count w[" + std::to_string(i) + "]=" +
                               std::to_string(s.windows[i]) + " exceeds min(grid dims)=" +
                               std::to_string(max_w));
        }
        if (i > 0 && s.windows[i] > s.windows[i - 1]) {
            v.errors.push_back("window counts must be non-increasing at position " +
                               std::to_string(i));
        } else if (i > 0 && s.windows[i] == s.windows[i - 1]) {
            v.warnings.push_back("window counts equal at position " + std::to_string(i) +
                                 "; hierarchical schedules normally shrink w");
        }
        if (!(s.ratios[i] > 0.0 && s.ratios[i] <= 0.5)) {
            v.errors.push_back("ratio rho[" + std::to_string(i) + "]=" +
                               std::to_string(s.ratios[i]) +
                               " must be in (0, 0.5]: at most 50% removed per step");
        }
    }
    return v;
}

/// Per-stage outcome bookkeeping.
struct StageReport {
    std::size_t layer = 0;             // decoder layer whose output was compressed
    std::uint32_t window_count = 0;    // w (per axis)
    std::size_t tokens_before = 0;
    std::size_t tokens_after = 0;
    std::vector<std::size_t> per_window_removed;
    std::uint64_t comparison_ops = 0;  // FD evaluations
    double mean_edge_fd = 0.0;         // mean FD across selected merge edges
    double guidance_mass_retained = 1.0;  // sum(xi survivors) / sum(xi all)
};

struct PrefillTrace {
    std::vector<std::size_t> per_layer_vision_tokens;  // tokens entering each layer
    std::vector<StageReport> stages;
    TokenGrid final_grid;
    Matrix final_hidden;
    std::uint64_t comparison_ops = 0;
};

namespace detail {

inline std::size_t removal_count(double rho, std::size_t window_size, std::size_t a_size,
                                 RemovalRule rule) {
    const double raw = rule == RemovalRule::Tokens ? rho * static_cast<double>(window_size)
                                                   : rho * static_cast<double>(window_size) / 2.0;
    return std::min(static_cast<std::size_t>(raw), a_size);
}

}  // namespace detail

/// One compression stage: partition the grid into w x w windows, per window
/// remove r_w = floor(rho * v_w) tokens by guidance-weighted merging (or
/// random eviction), and reassemble the survivors.
inline std::pair<TokenGrid, StageReport> compress_stage(const TokenGrid& grid,
                                                        const PromptGuidance& guidance,
                                                        std::uint32_t w, double rho,
                                                        const Strategy& strategy,
                                                        SeededStream& stream) {
    if (guidance.xi.size() != grid.token_count()) {
        throw std::invalid_argument("compress_stage: guidance length mismatch");
    }
    StageReport report;
    report.window_count = w;
    report.tokens_before = grid.token_count();

    const auto windows = partition_windows(grid, w);
    std::vector<Survivor> survivors;
    survivors.reserve(grid.token_count());
    double fd_sum = 0.0;
    std::size_t fd_edges = 0;
    double xi_total = 0.0, xi_kept = 0.0;
    for (float x : guidance.xi) xi_total += x;

    for (const auto& window : windows) {
        const std::size_t n = window.token_indices.size();
        Matrix local(n, grid.dim());
        std::vector<float> xi(n);
        std::vector<std::vector<std::uint32_t>> prov(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t g = window.token_indices[i];
            auto row = grid.embeddings.row(g);
            std::copy(row.begin(), row.end(), local.row(i).begin());
            xi[i] = guidance.xi[g];
            prov[i] = grid.provenance[g];
        }

        auto [a_idx, b_idx] = alternating_split(n);
        const std::size_t r = detail::removal_count(rho, n, a_idx.size(), strategy.removal_rule);

        if (strategy.eviction == EvictionMode::RandomEvict) {
            // Drop r tokens chosen uniformly without replacement; no merging.
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = 0; i < r; ++i) {
                const std::size_t j = i + stream.next_u64() % (n - i);
                std::swap(order[i], order[j]);
            }
            std::vector<bool> gone(n, false);
            for (std::size_t i = 0; i < r; ++i) gone[order[i]] = true;
            for (std::size_t i = 0; i < n; ++i) {
                if (gone[i]) continue;
                auto row = local.row(i);
                survivors.push_back({window.token_indices[i],
                                     {row.begin(), row.end()},
                                     grid.coords[window.token_indices[i]],
                                     std::move(prov[i])});
                xi_kept += xi[i];
            }
            report.per_window_removed.push_back(r);
            continue;
        }

        MergePlan plan = strategy.matching == MatchingMode::Bipartite
                             ? build_plan_bipartite(local, a_idx, b_idx, strategy.metric, r)
                             : build_plan_pairwise(local, strategy.metric,
                                                   std::min(r, n / 2));
        if (n >= 2 && r > 0) {
            report.comparison_ops += comparison_count(n, strategy.matching);
        }
        for (float fd : plan.edge_fd) {
            fd_sum += fd;
            ++fd_edges;
        }

        const WindowMergeResult merged = apply_merge(local, plan, xi, prov);
        for (std::size_t k = 0; k < merged.kept_local.size(); ++k) {
            const std::size_t li = merged.kept_local[k];
            const std::size_t g = window.token_indices[li];
            auto row = merged.embeddings.row(k);
            survivors.push_back({g, {row.begin(), row.end()}, grid.coords[g],
                                 merged.provenance[k]});
            xi_kept += xi[li];
        }
        report.per_window_removed.push_back(plan.removed.size());
    }

    TokenGrid next = reassemble(grid, std::move(survivors));
    report.tokens_after = next.token_count();
    report.mean_edge_fd = fd_edges > 0 ? fd_sum / fd_edges : 0.0;
    report.guidance_mass_retained = xi_total > 0.0 ? xi_kept / xi_total : 1.0;
    return {std::move(next), std::move(report)};
}

/// Full prefill with hierarchical compression between layers. The attention
/// tensor feeding stage i is the one emitted by layer lambda_i itself; prompt
/// tokens are never compressed.
inline PrefillTrace run_prefill(const DecoderConfig& cfg, const SequenceLayout& layout,
                                const Schedule& schedule, const Strategy& strategy,
                                const std::optional<Matrix>& vision_input = std::nullopt) {
    cfg.validate();
    layout.validate();
    const auto validation =
        validate_schedule(schedule, cfg.layers, layout.grid_height, layout.grid_width);
    if (!validation.ok()) {
        throw std::invalid_argument("run_prefill: invalid schedule: " + validation.errors.front());
    }

    const DecoderWeights weights = init_weights(cfg);
    Matrix hidden = embed_sequence(layout, cfg, vision_input);

    // Vision bookkeeping rides alongside the hidden matrix.
    Matrix vision_rows(layout.vision_count(), cfg.dim);
    std::copy(hidden.data.begin() + layout.pre_prompt_len * cfg.dim,
              hidden.data.begin() + (layout.pre_prompt_len + layout.vision_count()) * cfg.dim,
              vision_rows.data.begin());
    TokenGrid grid = TokenGrid::full(layout.grid_height, layout.grid_width, std::move(vision_rows));

    SeededStream stream(cfg.seed ^ 0x5DEECE66Dull);
    PrefillTrace trace;
    trace.per_layer_vision_tokens.reserve(cfg.layers);

    const std::uint32_t w_first = schedule.steps() > 0 ? schedule.windows.front() : 1;
    std::size_t next_stage = 0;

    for (std::size_t layer = 1; layer <= cfg.layers; ++layer) {
        trace.per_layer_vision_tokens.push_back(grid.token_count());
        auto [new_hidden, attn] = layer_forward(hidden, weights.layers[layer - 1], cfg.heads);
        hidden = std::move(new_hidden);

        if (next_stage < schedule.steps() && schedule.lambdas[next_stage] == layer) {
            const std::size_t v_cur = grid.token_count();
            // Sync grid embeddings with the post-layer hidden states.
            std::copy(hidden.data.begin() + layout.pre_prompt_len * cfg.dim,
                      hidden.data.begin() + (layout.pre_prompt_len + v_cur) * cfg.dim,
                      grid.embeddings.data.begin());

            PromptGuidance guidance;
            switch (strategy.guidance) {
                case GuidanceMode::Prompt: {
                    std::vector<std::size_t> prompt_idx;
                    for (std::size_t i = 0; i < layout.pre_prompt_len; ++i) prompt_idx.push_back(i);
                    for (std::size_t i = 0; i < layout.post_prompt_len; ++i) {
                        prompt_idx.push_back(layout.pre_prompt_len + v_cur + i);
                    }
                    guidance = accumulate_prompt_attention(attn, layout.pre_prompt_len,
                                                           layout.pre_prompt_len + v_cur,
                                                           prompt_idx);
                    break;
                }
                case GuidanceMode::Uniform:
                    guidance = uniform_guidance(v_cur);
                    break;
                case GuidanceMode::Random:
                    guidance = random_guidance(v_cur, stream);
                    break;
            }

            std::uint32_t w = schedule.windows[next_stage];
            if (strategy.scope == ScopeMode::GlobalOnly) w = 1;
            if (strategy.scope == ScopeMode::LocalOnly) w = w_first;

            auto [next_grid, report] =
                compress_stage(grid, guidance, w, schedule.ratios[next_stage], strategy, stream);
            report.layer = layer;
            trace.comparison_ops += report.comparison_ops;
            trace.stages.push_back(std::move(report));
            grid = std::move(next_grid);

            // Rebuild the hidden matrix with the shortened vision block.
            Matrix shortened(layout.prompt_count() + grid.token_count(), cfg.dim);
            auto out = shortened.data.begin();
            out = std::copy(hidden.data.begin(),
                            hidden.data.begin() + layout.pre_prompt_len * cfg.dim, out);
            out = std::copy(grid.embeddings.data.begin(), grid.embeddings.data.end(), out);
            std::copy(hidden.data.begin() + (layout.pre_prompt_len + v_cur) * cfg.dim,
                      hidden.data.end(), out);
            hidden = std::move(shortened);
            ++next_stage;
        }
    }

    trace.final_grid = std::move(grid);
    trace.final_hidden = std::move(hidden);
    return trace;
}

}  // namespace lkv
