// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "lkv/pipeline.hpp"
#include "lkv/profiler.hpp"
#include "lkv/simulator.hpp"

namespace lkv {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Everything one run needs: decoder, layout, schedule, strategy, IO paths.
struct RunConfig {
    DecoderConfig decoder;
    SequenceLayout layout;
    Schedule schedule;
    Strategy strategy;
    std::string preset;      // optional model-shape preset for profiling
    std::string input_path;  // optional LKVT vision tensor
    std::string out_dir = "out";
};

/// Named model shapes mirroring common LVLM sizes.
inline ModelShape shape_preset(const std::string& name) {
    if (name == "llava15-13b") {
        return {.layers = 40, .dim = 5120, .ff_dim = 13824, .heads = 40,
                .kv_dtype_bytes = 2, .prompt_len = 64, .vision_tokens = 576};
    }
    if (name == "llava15-7b") {
        return {.layers = 32, .dim = 4096, .ff_dim = 11008, .heads = 32,
                .kv_dtype_bytes = 2, .prompt_len = 64, .vision_tokens = 576};
    }
    if (name == "desk") {
        return {.layers = 8, .dim = 64, .ff_dim = 256, .heads = 4,
                .kv_dtype_bytes = 2, .prompt_len = 16, .vision_tokens = 256};
    }
    throw ConfigError("unknown preset '" + name + "' (known: llava15-13b, llava15-7b, desk)");
}

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                       const std::string& scope) {
    for (const auto& [key, _] : obj.items()) {
        if (!known.count(key)) {
            throw ConfigError("unknown key '" + (scope.empty() ? key : scope + "." + key) + "'");
        }
    }
}

template <typename T>
T require_type(const nlohmann::json& obj, const std::string& key, const std::string& scope) {
    const std::string full = scope.empty() ? key : scope + "." + key;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("invalid value for key '" + full + "'");
    }
}

}  // namespace detail

inline GuidanceMode parse_guidance(const std::string& s) {
    if (s == "prompt") return GuidanceMode::Prompt;
    if (s == "uniform") return GuidanceMode::Uniform;
    if (s == "random") return GuidanceMode::Random;
    throw ConfigError("strategy.guidance must be prompt|uniform|random, got '" + s + "'");
}

inline FdMetric parse_metric(const std::string& s) {
    if (s == "cosine") return FdMetric::CosineDivergence;
    if (s == "euclidean") return FdMetric::Euclidean;
    if (s == "l2sq") return FdMetric::L2Squared;
    throw ConfigError("strategy.metric must be cosine|euclidean|l2sq, got '" + s + "'");
}

inline MatchingMode parse_matching(const std::string& s) {
    if (s == "bipartite") return MatchingMode::Bipartite;
    if (s == "pairwise") return MatchingMode::Pairwise;
    throw ConfigError("strategy.matching must be bipartite|pairwise, got '" + s + "'");
}

inline ScopeMode parse_scope(const std::string& s) {
    if (s == "hierarchical") return ScopeMode::Hierarchical;
    if (s == "global-only") return ScopeMode::GlobalOnly;
    if (s == "local-only") return ScopeMode::LocalOnly;
    throw ConfigError("strategy.scope must be hierarchical|global-only|local-only, got '" + s +
                      "'");
}

inline EvictionMode parse_eviction(const std::string& s) {
    if (s == "merge") return EvictionMode::Merge;
    if (s == "random-evict") return EvictionMode::RandomEvict;
    throw ConfigError("strategy.eviction must be merge|random-evict, got '" + s + "'");
}

inline RemovalRule parse_removal_rule(const std::string& s) {
    if (s == "tokens") return RemovalRule::Tokens;
    if (s == "half-pairs") return RemovalRule::HalfPairs;
    throw ConfigError("strategy.removal_rule must be tokens|half-pairs, got '" + s + "'");
}

/// Parse a JSON run config, applying defaults and validating the schedule.
inline RunConfig parse_config_json(const nlohmann::json& j) {
    detail::check_keys(j, {"seed", "layers", "heads", "dim", "ff_dim", "grid", "prompt_pre",
                           "prompt_post", "schedule", "strategy", "preset", "input", "out"},
                       "");
    RunConfig cfg;
    if (j.contains("seed")) cfg.decoder.seed = detail::require_type<std::uint64_t>(j, "seed", "");
    if (j.contains("layers")) cfg.decoder.layers = detail::require_type<std::size_t>(j, "layers", "");
    if (j.contains("heads")) cfg.decoder.heads = detail::require_type<std::size_t>(j, "heads", "");
    if (j.contains("dim")) cfg.decoder.dim = detail::require_type<std::size_t>(j, "dim", "");
    if (j.contains("ff_dim")) cfg.decoder.ff_dim = detail::require_type<std::size_t>(j, "ff_dim", "");
    if (j.contains("grid")) {
        const auto grid = detail::require_type<std::vector<std::uint32_t>>(j, "grid", "");
        if (grid.size() != 2 || grid[0] < 1 || grid[1] < 1) {
            throw ConfigError("grid must be [height, width] with positive entries");
        }
        cfg.layout.grid_height = grid[0];
        cfg.layout.grid_width = grid[1];
    }
    if (j.contains("prompt_pre")) {
        cfg.layout.pre_prompt_len = detail::require_type<std::size_t>(j, "prompt_pre", "");
    }
    if (j.contains("prompt_post")) {
        cfg.layout.post_prompt_len = detail::require_type<std::size_t>(j, "prompt_post", "");
    }
    if (j.contains("preset")) cfg.preset = detail::require_type<std::string>(j, "preset", "");
    if (j.contains("input")) cfg.input_path = detail::require_type<std::string>(j, "input", "");
    if (j.contains("out")) cfg.out_dir = detail::require_type<std::string>(j, "out", "");

    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        if (!s.is_object()) throw ConfigError("schedule must be an object");
        detail::check_keys(s, {"layers", "windows", "ratios"}, "schedule");
        cfg.schedule.lambdas =
            detail::require_type<std::vector<std::size_t>>(s, "layers", "schedule");
        cfg.schedule.windows =
            detail::require_type<std::vector<std::uint32_t>>(s, "windows", "schedule");
        cfg.schedule.ratios = detail::require_type<std::vector<double>>(s, "ratios", "schedule");
    }

    if (j.contains("strategy")) {
        const auto& s = j.at("strategy");
        if (!s.is_object()) throw ConfigError("strategy must be an object");
        detail::check_keys(s, {"guidance", "metric", "matching", "scope", "eviction",
                               "removal_rule"},
                           "strategy");
        if (s.contains("guidance")) {
            cfg.strategy.guidance =
                parse_guidance(detail::require_type<std::string>(s, "guidance", "strategy"));
        }
        if (s.contains("metric")) {
            cfg.strategy.metric =
                parse_metric(detail::require_type<std::string>(s, "metric", "strategy"));
        }
        if (s.contains("matching")) {
            cfg.strategy.matching =
                parse_matching(detail::require_type<std::string>(s, "matching", "strategy"));
        }
        if (s.contains("scope")) {
            cfg.strategy.scope =
                parse_scope(detail::require_type<std::string>(s, "scope", "strategy"));
        }
        if (s.contains("eviction")) {
            cfg.strategy.eviction =
                parse_eviction(detail::require_type<std::string>(s, "eviction", "strategy"));
        }
        if (s.contains("removal_rule")) {
            cfg.strategy.removal_rule = parse_removal_rule(
                detail::require_type<std::string>(s, "removal_rule", "strategy"));
        }
    }

    cfg.decoder.validate();
    cfg.layout.validate();
    const auto validation = validate_schedule(cfg.schedule, cfg.decoder.layers,
                                              cfg.layout.grid_height, cfg.layout.grid_width);
    if (!validation.ok()) {
        std::string msg = "schedule validation failed:";
        for (const auto& e : validation.errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a single JSON object");
    return parse_config_json(j);
}

}  // namespace lkv
