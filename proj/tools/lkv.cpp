// SPDX-License-Identifier: Apache-2.0
//
// lkv: vision-token compression experiment runner.
//
// Subcommands:
//   compress  run prefill with a compression schedule and write reports
//   profile   closed-form cost/retention analysis of a schedule
//   search    find a schedule hitting a target retention
//   ablate    sweep strategy axes and emit a CSV matrix

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lkv/commands.hpp"
#include "lkv/config.hpp"
#include "lkv/tensor_io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitInfeasible = 4;

lkv::RunConfig load_config(const std::string& path, std::uint64_t seed_override, bool has_seed) {
    lkv::RunConfig cfg = path.empty() ? lkv::RunConfig{} : lkv::parse_config(path);
    if (has_seed) cfg.decoder.seed = seed_override;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lkv: prompt-guided hierarchical vision-token compression"};
    app.require_subcommand(1);

    std::string config_path, input_path, out_dir, preset_name, axes_arg;
    std::uint64_t seed = 0;
    bool simulate = false;
    double target_retention = 0.55;
    std::size_t num_layers = 40, steps = 3, lambda_min = 1;
    std::vector<std::size_t> sched_layers;
    std::vector<std::uint32_t> sched_windows;
    std::vector<double> sched_ratios;

    auto* compress = app.add_subcommand("compress", "run compression and write reports");
    compress->add_option("--config", config_path, "JSON run config");
    compress->add_option("--input", input_path, "LKVT vision tensor file");
    compress->add_option("--out", out_dir, "output directory (default: 'out' or config value)");
    auto* seed_opt_c = compress->add_option("--seed", seed, "override the config seed");

    auto* profile = app.add_subcommand("profile", "closed-form schedule profiling");
    profile->add_option("--config", config_path, "JSON run config");
    profile->add_option("--preset", preset_name, "model shape preset (llava15-13b, llava15-7b, desk)");
    profile->add_option("--schedule-layers", sched_layers, "compression layers");
    profile->add_option("--schedule-windows", sched_windows, "per-axis window counts");
    profile->add_option("--schedule-ratios", sched_ratios, "removal ratios");
    profile->add_flag("--simulate", simulate, "cross-check against a desk-scale simulation");

    auto* search = app.add_subcommand("search", "search schedules for a target retention");
    search->add_option("--target-retention", target_retention, "target retention in (0,1)")
        ->required();
    search->add_option("--layers", num_layers, "decoder layer count");
    search->add_option("--steps", steps, "number of compression steps");
    search->add_option("--lambda-min", lambda_min, "earliest allowed compression layer");

    auto* ablate = app.add_subcommand("ablate", "sweep strategy axes");
    ablate->add_option("--config", config_path, "JSON run config");
    ablate->add_option("--axes", axes_arg,
                       "comma-separated subset of guidance,metric,matching,scope,eviction");
    ablate->add_option("--out", out_dir, "output directory");
    auto* seed_opt_a = ablate->add_option("--seed", seed, "override the config seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (compress->parsed()) {
            lkv::RunConfig cfg = load_config(config_path, seed, seed_opt_c->count() > 0);
            if (!input_path.empty()) cfg.input_path = input_path;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            lkv::cmd_compress(cfg, std::cout);
            return kExitOk;
        }
        if (profile->parsed()) {
            lkv::ModelShape shape;
            lkv::Schedule schedule;
            if (!config_path.empty()) {
                const lkv::RunConfig cfg = lkv::parse_config(config_path);
                shape = {.layers = cfg.decoder.layers, .dim = cfg.decoder.dim,
                         .ff_dim = cfg.decoder.ff_dim, .heads = cfg.decoder.heads,
                         .kv_dtype_bytes = 2, .prompt_len = cfg.layout.prompt_count(),
                         .vision_tokens = cfg.layout.vision_count()};
                schedule = cfg.schedule;
            }
            if (!preset_name.empty()) shape = lkv::shape_preset(preset_name);
            if (!sched_layers.empty()) {
                schedule.lambdas = sched_layers;
                schedule.windows = sched_windows;
                schedule.ratios = sched_ratios;
                if (schedule.windows.empty()) {
                    schedule.windows.assign(schedule.lambdas.size(), 1);
                }
            }
            const auto validation = lkv::validate_schedule(
                schedule, shape.layers, 1u << 15, 1u << 15);  // grid bound not known here
            if (!validation.ok()) {
                for (const auto& e : validation.errors) std::cerr << "error: " << e << "\n";
                return kExitConfig;
            }
            for (const auto& w : validation.warnings) std::cerr << "warning: " << w << "\n";
            lkv::cmd_profile(shape, schedule, simulate, std::cout);
            return kExitOk;
        }
        if (search->parsed()) {
            lkv::cmd_search(num_layers, target_retention, steps, lambda_min, std::cout);
            return kExitOk;
        }
        if (ablate->parsed()) {
            lkv::RunConfig cfg = load_config(config_path, seed, seed_opt_a->count() > 0);
            lkv::AblationAxes axes;
            std::string rest = axes_arg;
            while (!rest.empty()) {
                const auto comma = rest.find(',');
                const std::string axis = rest.substr(0, comma);
                rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
                if (axis == "guidance") axes.guidance = true;
                else if (axis == "metric") axes.metric = true;
                else if (axis == "matching") axes.matching = true;
                else if (axis == "scope") axes.scope = true;
                else if (axis == "eviction") axes.eviction = true;
                else if (!axis.empty()) {
                    std::cerr << "error: unknown ablation axis '" << axis << "'\n";
                    return kExitConfig;
                }
            }
            const std::string csv = lkv::run_ablation(cfg, axes);
            std::cout << csv;
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                lkv::write_file_atomic(std::filesystem::path(out_dir) / "ablation.csv", csv);
            }
            return kExitOk;
        }
    } catch (const lkv::InfeasibleSearchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const lkv::TensorFormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const lkv::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
