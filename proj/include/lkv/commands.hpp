// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lkv/config.hpp"
#include "lkv/pipeline.hpp"
#include "lkv/profiler.hpp"
#include "lkv/tensor_io.hpp"

namespace lkv {

namespace detail {

/// Round to 6 significant digits for canonical report output.
inline double round_sig6(double v) {
    if (v == 0.0 || !std::isfinite(v)) return v;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::strtod(buf, nullptr);
}

inline std::string fmt_sig6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline const char* guidance_name(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::Prompt: return "prompt";
        case GuidanceMode::Uniform: return "uniform";
        case GuidanceMode::Random: return "random";
    }
    return "?";
}
inline const char* metric_name(FdMetric m) {
    switch (m) {
        case FdMetric::CosineDivergence: return "cosine";
        case FdMetric::Euclidean: return "euclidean";
        case FdMetric::L2Squared: return "l2sq";
    }
    return "?";
}
inline const char* matching_name(MatchingMode m) {
    return m == MatchingMode::Bipartite ? "bipartite" : "pairwise";
}
inline const char* scope_name(ScopeMode m) {
    switch (m) {
        case ScopeMode::Hierarchical: return "hierarchical";
        case ScopeMode::GlobalOnly: return "global-only";
        case ScopeMode::LocalOnly: return "local-only";
    }
    return "?";
}
inline const char* eviction_name(EvictionMode m) {
    return m == EvictionMode::Merge ? "merge" : "random-evict";
}

}  // namespace detail

/// Canonical run report: key-sorted JSON, LF endings, floats at 6 significant
/// digits. Byte-comparable across identical runs.
inline std::string render_report_json(const RunConfig& cfg, const PrefillTrace& trace,
                                      const CostReport& cost) {
    nlohmann::json j;
    j["config"]["seed"] = cfg.decoder.seed;
    j["config"]["layers"] = cfg.decoder.layers;
    j["config"]["heads"] = cfg.decoder.heads;
    j["config"]["dim"] = cfg.decoder.dim;
    j["config"]["ff_dim"] = cfg.decoder.ff_dim;
    j["config"]["grid"] = {cfg.layout.grid_height, cfg.layout.grid_width};
    j["config"]["prompt_pre"] = cfg.layout.pre_prompt_len;
    j["config"]["prompt_post"] = cfg.layout.post_prompt_len;
    j["config"]["schedule"]["layers"] = cfg.schedule.lambdas;
    j["config"]["schedule"]["windows"] = cfg.schedule.windows;
    j["config"]["schedule"]["ratios"] = cfg.schedule.ratios;
    j["config"]["strategy"]["guidance"] = detail::guidance_name(cfg.strategy.guidance);
    j["config"]["strategy"]["metric"] = detail::metric_name(cfg.strategy.metric);
    j["config"]["strategy"]["matching"] = detail::matching_name(cfg.strategy.matching);
    j["config"]["strategy"]["scope"] = detail::scope_name(cfg.strategy.scope);
    j["config"]["strategy"]["eviction"] = detail::eviction_name(cfg.strategy.eviction);

    j["per_layer_vision_tokens"] = trace.per_layer_vision_tokens;
    j["final_token_count"] = trace.final_grid.token_count();
    j["token_layers"] = detail::round_sig6(cost.token_layers);
    j["closed_form_token_layers"] = detail::round_sig6(cost.closed_form_token_layers);
    j["retention_ratio"] = detail::round_sig6(cost.retention_ratio);
    j["flops_estimate"] = detail::round_sig6(cost.flops_estimate);
    j["kv_bytes_estimate"] = detail::round_sig6(cost.kv_bytes_estimate);
    j["comparison_ops"] = cost.comparison_ops;

    auto& stages = j["stages"] = nlohmann::json::array();
    for (const auto& s : trace.stages) {
        nlohmann::json e;
        e["layer"] = s.layer;
        e["window_count"] = s.window_count;
        e["tokens_before"] = s.tokens_before;
        e["tokens_after"] = s.tokens_after;
        e["per_window_removed"] = s.per_window_removed;
        e["comparison_ops"] = s.comparison_ops;
        e["mean_edge_fd"] = detail::round_sig6(s.mean_edge_fd);
        e["guidance_mass_retained"] = detail::round_sig6(s.guidance_mass_retained);
        stages.push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

inline std::string render_report_csv(const PrefillTrace& trace) {
    std::string out =
        "layer,vision_tokens,compressed,window_count,removed,comparison_ops,mean_edge_fd,"
        "guidance_mass_retained\n";
    std::size_t stage = 0;
    for (std::size_t layer = 1; layer <= trace.per_layer_vision_tokens.size(); ++layer) {
        out += std::to_string(layer) + "," + std::to_string(trace.per_layer_vision_tokens[layer - 1]);
        if (stage < trace.stages.size() && trace.stages[stage].layer == layer) {
            const auto& s = trace.stages[stage];
            std::size_t removed = 0;
            for (std::size_t r : s.per_window_removed) removed += r;
            out += ",1," + std::to_string(s.window_count) + "," + std::to_string(removed) + "," +
                   std::to_string(s.comparison_ops) + "," + detail::fmt_sig6(s.mean_edge_fd) + "," +
                   detail::fmt_sig6(s.guidance_mass_retained);
            ++stage;
        } else {
            out += ",0,,,,,";
        }
        out += "\n";
    }
    return out;
}

/// Final token id -> list of original cell coordinates.
inline std::string render_provenance_json(const TokenGrid& grid) {
    nlohmann::json j;
    for (std::size_t i = 0; i < grid.token_count(); ++i) {
        auto cells = nlohmann::json::array();
        for (std::uint32_t cell : grid.provenance[i]) {
            cells.push_back({cell / grid.width, cell % grid.width});
        }
        j[std::to_string(i)] = std::move(cells);
    }
    return j.dump(2) + "\n";
}

/// P5 grayscale merge map: one pixel per original cell, intensity = the id of
/// the final token owning that cell, modulo 256.
inline std::string render_heatmap_pgm(const TokenGrid& grid) {
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(grid.height) * grid.width, 0);
    for (std::size_t i = 0; i < grid.token_count(); ++i) {
        for (std::uint32_t cell : grid.provenance[i]) {
            pixels[cell] = static_cast<std::uint8_t>(i % 256);
        }
    }
    std::string out = "P5\n" + std::to_string(grid.width) + " " + std::to_string(grid.height) +
                      "\n255\n";
    out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    return out;
}

/// Run the pipeline and write report.json, report.csv, provenance.json and
/// heatmap.pgm into out_dir.
inline void cmd_compress(const RunConfig& cfg, std::ostream& log) {
    std::optional<Matrix> vision;
    SequenceLayout layout = cfg.layout;
    if (!cfg.input_path.empty()) {
        TokenTensor t = read_token_tensor(cfg.input_path);
        layout.grid_height = t.height;
        layout.grid_width = t.width;
        if (t.embeddings.cols != cfg.decoder.dim) {
            throw TensorFormatError("tensor dim " + std::to_string(t.embeddings.cols) +
                                        " does not match decoder dim " +
                                        std::to_string(cfg.decoder.dim),
                                    16);
        }
        vision = std::move(t.embeddings);
    }

    const PrefillTrace trace = run_prefill(cfg.decoder, layout, cfg.schedule, cfg.strategy, vision);
    ModelShape shape{.layers = cfg.decoder.layers, .dim = cfg.decoder.dim,
                     .ff_dim = cfg.decoder.ff_dim, .heads = cfg.decoder.heads,
                     .kv_dtype_bytes = 2, .prompt_len = layout.prompt_count(),
                     .vision_tokens = layout.vision_count()};
    const CostReport cost = build_cost_report(trace, cfg.schedule, shape, layout.vision_count());

    RunConfig report_cfg = cfg;
    report_cfg.layout = layout;
    const std::filesystem::path out_dir = cfg.out_dir;
    std::filesystem::create_directories(out_dir);
    write_file_atomic(out_dir / "report.json", render_report_json(report_cfg, trace, cost));
    write_file_atomic(out_dir / "report.csv", render_report_csv(trace));
    write_file_atomic(out_dir / "provenance.json", render_provenance_json(trace.final_grid));
    write_file_atomic(out_dir / "heatmap.pgm", render_heatmap_pgm(trace.final_grid));
    log << "compress: " << layout.vision_count() << " -> " << trace.final_grid.token_count()
        << " vision tokens; reports in " << out_dir.string() << "\n";
}

/// Closed-form profile of a schedule against a model shape.
inline void cmd_profile(const ModelShape& shape, const Schedule& schedule, bool simulate,
                        std::ostream& out) {
    const double v = static_cast<double>(shape.vision_tokens);
    const double closed =
        token_layers_closed_form(v, shape.layers, schedule.lambdas, schedule.ratios);
    const double retention = closed / (v * static_cast<double>(shape.layers));
    const auto counts =
        per_layer_counts_closed_form(v, shape.layers, schedule.lambdas, schedule.ratios);
    const std::vector<double> vanilla(shape.layers, v);

    out << "token_layers_closed_form: " << detail::fmt_sig6(closed) << "\n";
    out << "retention_ratio: " << detail::fmt_sig6(retention) << " ("
        << detail::fmt_sig6(retention * 100.0) << "%)\n";
    out << "tokens_remaining_exact: "
        << detail::fmt_sig6(tokens_remaining(v, schedule.ratios)) << "\n";
    const double flops = estimate_flops(counts, shape, shape.prompt_len);
    const double flops_vanilla = estimate_flops(vanilla, shape, shape.prompt_len);
    out << "flops_estimate: " << detail::fmt_sig6(flops) << " (vanilla "
        << detail::fmt_sig6(flops_vanilla) << ", ratio "
        << detail::fmt_sig6(flops / flops_vanilla) << ")\n";
    const double kv = estimate_kv_bytes(counts, shape);
    const double kv_vanilla = estimate_kv_bytes(vanilla, shape);
    out << "kv_bytes_estimate: " << detail::fmt_sig6(kv) << " (vanilla "
        << detail::fmt_sig6(kv_vanilla) << ", ratio " << detail::fmt_sig6(kv / kv_vanilla)
        << ")\n";

    if (simulate) {
        // Desk-scale cross-check of the closed form against a real run.
        DecoderConfig dc;
        SequenceLayout layout;
        Schedule desk = schedule;
        // Scale lambda positions into the desk layer budget.
        for (auto& l : desk.lambdas) {
            l = std::max<std::size_t>(1, l * dc.layers / shape.layers);
        }
        for (std::size_t i = 1; i < desk.lambdas.size(); ++i) {
            desk.lambdas[i] = std::max(desk.lambdas[i], desk.lambdas[i - 1] + 1);
        }
        for (auto& w : desk.windows) {
            w = std::min(w, std::min(layout.grid_height, layout.grid_width));
        }
        const PrefillTrace trace = run_prefill(dc, layout, desk, Strategy{});
        double sim = 0.0;
        for (std::size_t c : trace.per_layer_vision_tokens) sim += static_cast<double>(c);
        const double desk_closed =
            token_layers_closed_form(static_cast<double>(layout.vision_count()), dc.layers,
                                     desk.lambdas, desk.ratios);
        out << "simulated_token_layers (desk scale): " << detail::fmt_sig6(sim)
            << " vs closed form " << detail::fmt_sig6(desk_closed) << "\n";
    }
}

/// Schedule search toward a target retention; prints the winner with the
/// closed-form breakdown terms.
inline void cmd_search(std::size_t num_layers, double target, std::size_t steps,
                       std::size_t lambda_min, std::ostream& out) {
    const Schedule s = schedule_search(num_layers, target, steps, lambda_min);
    const double retention =
        token_layers_closed_form(1.0, num_layers, s.lambdas, s.ratios) /
        static_cast<double>(num_layers);

    out << "schedule.layers: [";
    for (std::size_t i = 0; i < s.lambdas.size(); ++i) {
        out << (i ? "," : "") << s.lambdas[i];
    }
    out << "]\nschedule.windows: [";
    for (std::size_t i = 0; i < s.windows.size(); ++i) {
        out << (i ? "," : "") << s.windows[i];
    }
    out << "]\nschedule.ratios: [";
    for (std::size_t i = 0; i < s.ratios.size(); ++i) {
        out << (i ? "," : "") << detail::fmt_sig6(s.ratios[i]);
    }
    out << "]\nretention: " << detail::fmt_sig6(retention) << "\n";

    // Breakdown: (1) before the first step, (2) between steps, (3) after the last.
    double keep = 1.0;
    double term2 = 0.0;
    for (std::size_t i = 1; i < s.lambdas.size(); ++i) {
        keep *= 1.0 - s.ratios[i - 1];
        term2 += static_cast<double>(s.lambdas[i] - s.lambdas[i - 1]) * keep;
    }
    keep *= 1.0 - s.ratios.back();
    const double term3 = static_cast<double>(num_layers - s.lambdas.back()) * keep;
    out << "breakdown: (1) " << detail::fmt_sig6(static_cast<double>(s.lambdas.front()))
        << " + (2) " << detail::fmt_sig6(term2) << " + (3) " << detail::fmt_sig6(term3) << "\n";
}

struct AblationAxes {
    bool guidance = false;
    bool metric = false;
    bool matching = false;
    bool scope = false;
    bool eviction = false;
};

/// Cross product of the selected strategy axes with everything else fixed;
/// one CSV row per cell.
inline std::string run_ablation(const RunConfig& base, const AblationAxes& axes) {
    const std::vector<GuidanceMode> guidances =
        axes.guidance
            ? std::vector<GuidanceMode>{GuidanceMode::Prompt, GuidanceMode::Uniform,
                                        GuidanceMode::Random}
            : std::vector<GuidanceMode>{base.strategy.guidance};
    const std::vector<FdMetric> metrics =
        axes.metric ? std::vector<FdMetric>{FdMetric::CosineDivergence, FdMetric::Euclidean,
                                            FdMetric::L2Squared}
                    : std::vector<FdMetric>{base.strategy.metric};
    const std::vector<MatchingMode> matchings =
        axes.matching ? std::vector<MatchingMode>{MatchingMode::Bipartite, MatchingMode::Pairwise}
                      : std::vector<MatchingMode>{base.strategy.matching};
    const std::vector<ScopeMode> scopes =
        axes.scope ? std::vector<ScopeMode>{ScopeMode::Hierarchical, ScopeMode::GlobalOnly,
                                            ScopeMode::LocalOnly}
                   : std::vector<ScopeMode>{base.strategy.scope};
    const std::vector<EvictionMode> evictions =
        axes.eviction ? std::vector<EvictionMode>{EvictionMode::Merge, EvictionMode::RandomEvict}
                      : std::vector<EvictionMode>{base.strategy.eviction};

    std::string csv =
        "guidance,metric,matching,scope,eviction,final_tokens,token_layers,comparison_ops,"
        "mean_edge_fd,guidance_mass_retained\n";
    for (auto g : guidances) {
        for (auto m : metrics) {
            for (auto mt : matchings) {
                for (auto sc : scopes) {
                    for (auto ev : evictions) {
                        Strategy strat = base.strategy;
                        strat.guidance = g;
                        strat.metric = m;
                        strat.matching = mt;
                        strat.scope = sc;
                        strat.eviction = ev;
                        const PrefillTrace trace =
                            run_prefill(base.decoder, base.layout, base.schedule, strat);
                        double token_layers = 0.0;
                        for (std::size_t c : trace.per_layer_vision_tokens) token_layers += c;
                        double fd = 0.0, mass = 0.0;
                        for (const auto& s : trace.stages) {
                            fd += s.mean_edge_fd;
                            mass += s.guidance_mass_retained;
                        }
                        const double n = trace.stages.empty() ? 1.0 : trace.stages.size();
                        csv += std::string(detail::guidance_name(g)) + "," +
                               detail::metric_name(m) + "," + detail::matching_name(mt) + "," +
                               detail::scope_name(sc) + "," + detail::eviction_name(ev) + "," +
                               std::to_string(trace.final_grid.token_count()) + "," +
                               detail::fmt_sig6(token_layers) + "," +
                               std::to_string(trace.comparison_ops) + "," +
                               detail::fmt_sig6(fd / n) + "," + detail::fmt_sig6(mass / n) + "\n";
                    }
                }
            }
        }
    }
    return csv;
}

}  // namespace lkv
