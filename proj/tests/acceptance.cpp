// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: runs every release criterion and prints one PASS/FAIL
// line per criterion. Exit status is nonzero if any criterion fails.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lkv/commands.hpp"
#include "lkv/config.hpp"
#include "lkv/matching.hpp"
#include "lkv/merge.hpp"
#include "lkv/pipeline.hpp"
#include "lkv/profiler.hpp"

using namespace lkv;
namespace fs = std::filesystem;

namespace {

struct Check {
    std::string name;
    std::function<bool(std::string&)> run;
};

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

const DecoderConfig kDesk{.layers = 8, .heads = 2, .dim = 16, .ff_dim = 32, .seed = 20};

// Random schedule on a 16x16 grid whose per-window removal counts never
// floor: each stage's rho * (tokens per window) is kept integral.
Schedule random_divisible_schedule(SeededStream& s) {
    const std::size_t steps = 1 + s.next_u64() % 3;
    Schedule sched;
    std::size_t layer = 1 + s.next_u64() % 2;
    std::uint32_t w = 4;
    double total = 256.0;
    for (std::size_t i = 0; i < steps; ++i) {
        if (w > 1 && s.next_u64() % 2 == 0) w /= 2;
        const double per_window = total / (w * w);
        std::vector<double> exact;
        for (double rho : {0.25, 0.5}) {
            const double removed = rho * per_window;
            if (removed == std::floor(removed)) exact.push_back(rho);
        }
        if (exact.empty()) break;  // no exact step available at this width
        const double rho = exact[s.next_u64() % exact.size()];
        sched.lambdas.push_back(layer);
        sched.windows.push_back(w);
        sched.ratios.push_back(rho);
        total *= 1.0 - rho;
        layer += 1 + s.next_u64() % 2;
    }
    return sched;
}

double simulated_token_layers(const PrefillTrace& trace) {
    double sum = 0.0;
    for (std::size_t c : trace.per_layer_vision_tokens) sum += static_cast<double>(c);
    return sum;
}

}  // namespace

int main() {
    std::vector<Check> checks;

    checks.push_back({"criterion 1: closed form gives 46.875% for L=40, Lambda=[10,20,30]",
                      [](std::string& msg) {
        const double r =
            token_layers_closed_form(576, 40, {10, 20, 30}, {0.5, 0.5, 0.5}) / (576.0 * 40.0);
        msg = "retention " + std::to_string(r * 100.0) + "%";
        return near(r * 100.0, 46.9, 0.05);
    }});

    checks.push_back({"criterion 2: published 13B/7B schedules land near 55% retention",
                      [](std::string& msg) {
        const double r13 =
            token_layers_closed_form(576, 40, {15, 23, 31}, {0.5, 0.5, 0.5}) / (576.0 * 40.0);
        const double r7 =
            token_layers_closed_form(576, 32, {12, 18, 24}, {0.5, 0.5, 0.5}) / (576.0 * 32.0);
        msg = "13B " + std::to_string(r13 * 100.0) + "%, 7B " + std::to_string(r7 * 100.0) + "%";
        return near(r13 * 100.0, 55.31, 0.01) && near(r7 * 100.0, 54.69, 0.01) &&
               near(r13 * 100.0, 55.0, 1.0) && near(r7 * 100.0, 55.0, 1.0);
    }});

    checks.push_back({"criterion 3: closed form equals simulation on divisible grids",
                      [](std::string& msg) {
        SeededStream s(301);
        const SequenceLayout layout{.pre_prompt_len = 4, .grid_height = 16, .grid_width = 16,
                                    .post_prompt_len = 4};
        for (int trial = 0; trial < 50; ++trial) {
            const Schedule sched = random_divisible_schedule(s);
            DecoderConfig cfg = kDesk;
            cfg.seed = 1000 + trial;
            const auto trace = run_prefill(cfg, layout, sched, Strategy{});
            const double sim = simulated_token_layers(trace);
            const double closed =
                token_layers_closed_form(256, cfg.layers, sched.lambdas, sched.ratios);
            if (sim != closed) {
                msg = "trial " + std::to_string(trial) + ": sim " + std::to_string(sim) +
                      " vs closed " + std::to_string(closed);
                return false;
            }
        }
        // non-divisible grid: gap within one floored token per window per stage
        const SequenceLayout odd{.pre_prompt_len = 4, .grid_height = 7, .grid_width = 7,
                                 .post_prompt_len = 4};
        for (int trial = 0; trial < 20; ++trial) {
            Schedule sched = random_divisible_schedule(s);
            for (auto& w : sched.windows) w = std::min(w, 4u);
            const auto trace = run_prefill(kDesk, odd, sched, Strategy{});
            const double sim = simulated_token_layers(trace);
            const double closed =
                token_layers_closed_form(49, kDesk.layers, sched.lambdas, sched.ratios);
            double bound = 0.0;
            for (std::size_t i = 0; i < sched.steps(); ++i) {
                const double span =
                    static_cast<double>((i + 1 < sched.steps() ? sched.lambdas[i + 1]
                                                               : kDesk.layers) -
                                        sched.lambdas[i]);
                bound += static_cast<double>(sched.windows[i]) * sched.windows[i] * span;
            }
            if (std::abs(sim - closed) > bound) {
                msg = "non-divisible trial " + std::to_string(trial) + ": gap " +
                      std::to_string(std::abs(sim - closed)) + " > bound " +
                      std::to_string(bound);
                return false;
            }
        }
        msg = "50 divisible + 20 non-divisible schedules";
        return true;
    }});

    checks.push_back({"criterion 4: merged embeddings are invariant to guidance rescaling",
                      [](std::string& msg) {
        SeededStream s(401);
        int windows_checked = 0;
        while (windows_checked < 100) {
            const std::size_t n = 2 + s.next_u64() % 18;
            Matrix emb(n, 8);
            for (auto& v : emb.data) v = s.uniform_f32(-2.0f, 2.0f);
            const auto [a, b] = alternating_split(n);
            if (b.empty()) continue;
            const std::size_t r = s.next_u64() % (a.size() + 1);
            const auto plan = build_plan_bipartite(emb, a, b, FdMetric::CosineDivergence, r);
            std::vector<float> xi(n);
            for (auto& x : xi) x = s.uniform_f32(0.01f, 2.0f);
            std::vector<std::vector<std::uint32_t>> prov(n);
            for (std::size_t i = 0; i < n; ++i) prov[i] = {static_cast<std::uint32_t>(i)};
            const auto base = apply_merge(emb, plan, xi, prov);
            for (float c : {1e-3f, 1.0f, 1e3f}) {
                auto scaled = xi;
                for (auto& x : scaled) x *= c;
                const auto other = apply_merge(emb, plan, scaled, prov);
                for (std::size_t i = 0; i < base.embeddings.data.size(); ++i) {
                    const float ref = base.embeddings.data[i];
                    if (std::abs(other.embeddings.data[i] - ref) >
                        1e-5f * std::max(1.0f, std::abs(ref))) {
                        msg = "relative error above 1e-5 at c=" + std::to_string(c);
                        return false;
                    }
                }
            }
            ++windows_checked;
        }
        msg = "100 windows x 3 scales";
        return true;
    }});

    checks.push_back({"criterion 5: convexity, identical-input identity, empty-edge identity",
                      [](std::string& msg) {
        SeededStream s(501);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = 2 + s.next_u64() % 12;
            Matrix emb(n, 6);
            for (auto& v : emb.data) v = s.uniform_f32(-3.0f, 3.0f);
            const auto [a, b] = alternating_split(n);
            if (b.empty()) continue;
            const auto plan =
                build_plan_bipartite(emb, a, b, FdMetric::L2Squared, s.next_u64() % (a.size() + 1));
            std::vector<float> xi(n);
            for (auto& x : xi) x = s.uniform_f32(0.1f, 2.0f);
            std::vector<std::vector<std::uint32_t>> prov(n);
            for (std::size_t i = 0; i < n; ++i) prov[i] = {static_cast<std::uint32_t>(i)};
            const auto out = apply_merge(emb, plan, xi, prov);

            std::vector<std::vector<std::size_t>> contributors(n);
            for (std::size_t i = 0; i < n; ++i) contributors[i] = {i};
            for (const auto& [src, dst] : plan.edges) contributors[dst].push_back(src);
            for (std::size_t k = 0; k < plan.kept_order.size(); ++k) {
                const std::size_t idx = plan.kept_order[k];
                for (std::size_t d = 0; d < 6; ++d) {
                    float lo = 1e30f, hi = -1e30f;
                    for (std::size_t c : contributors[idx]) {
                        lo = std::min(lo, emb.at(c, d));
                        hi = std::max(hi, emb.at(c, d));
                    }
                    const float v = out.embeddings.at(k, d);
                    if (v < lo - 1e-6f || v > hi + 1e-6f) {
                        msg = "convexity violated";
                        return false;
                    }
                }
            }
        }
        // identical embeddings collapse to themselves
        Matrix same(4, 3);
        for (std::size_t i = 0; i < 4; ++i) {
            same.at(i, 0) = 1.5f;
            same.at(i, 1) = -0.5f;
            same.at(i, 2) = 2.0f;
        }
        MergePlan plan;
        plan.edges = {{0, 1}, {2, 1}};
        plan.removed = {0, 2};
        plan.kept_order = {1, 3};
        std::vector<std::vector<std::uint32_t>> prov{{0}, {1}, {2}, {3}};
        const auto out = apply_merge(same, plan, {1.0f, 0.3f, 2.0f, 1.0f}, prov);
        for (std::size_t d = 0; d < 3; ++d) {
            if (std::abs(out.embeddings.at(0, d) - same.at(1, d)) > 1e-6f) {
                msg = "identical-input merge drifted";
                return false;
            }
        }
        // empty edge set is exact
        MergePlan none;
        none.kept_order = {0, 1, 2, 3};
        const auto idout = apply_merge(same, none, {1, 1, 1, 1}, prov);
        if (idout.embeddings.data != same.data) {
            msg = "empty edge set not an exact identity";
            return false;
        }
        msg = "100 random windows + identity cases";
        return true;
    }});

    checks.push_back({"criterion 6: plans match brute-force oracles on small windows",
                      [](std::string& msg) {
        SeededStream s(601);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 2 + s.next_u64() % 11;
            Matrix emb(n, 4);
            for (auto& v : emb.data) v = s.uniform_f32(-1.0f, 1.0f);
            const auto metric = static_cast<FdMetric>(s.next_u64() % 3);

            // bipartite oracle: full FD table, per-A argmin, ascending pick
            const auto [a, b] = alternating_split(n);
            if (!b.empty()) {
                const std::size_t r = s.next_u64() % (a.size() + 1);
                struct E { float fd; std::size_t alpha, beta; };
                std::vector<E> props;
                for (std::size_t alpha : a) {
                    E best{1e30f, alpha, 0};
                    for (std::size_t beta : b) {
                        const float fd = feature_divergence(emb.row(alpha), emb.row(beta), metric);
                        if (fd < best.fd) best = {fd, alpha, beta};
                    }
                    props.push_back(best);
                }
                std::stable_sort(props.begin(), props.end(),
                                 [](const E& x, const E& y) { return x.fd < y.fd; });
                const auto got = build_plan_bipartite(emb, a, b, metric, r);
                for (std::size_t i = 0; i < r; ++i) {
                    if (got.edges[i] != std::pair<std::size_t, std::size_t>{props[i].alpha,
                                                                            props[i].beta}) {
                        msg = "bipartite mismatch at trial " + std::to_string(trial);
                        return false;
                    }
                }
            }

            // pairwise oracle: greedy over the sorted pair table
            const std::size_t rp = s.next_u64() % (n / 2 + 1);
            struct P { float fd; std::size_t i, j; };
            std::vector<P> pairs;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    pairs.push_back({feature_divergence(emb.row(i), emb.row(j), metric), i, j});
                }
            }
            std::stable_sort(pairs.begin(), pairs.end(),
                             [](const P& x, const P& y) { return x.fd < y.fd; });
            std::vector<bool> used(n, false);
            std::vector<std::pair<std::size_t, std::size_t>> want;
            for (const auto& p : pairs) {
                if (want.size() == rp) break;
                if (used[p.i] || used[p.j]) continue;
                used[p.i] = used[p.j] = true;
                want.emplace_back(p.i, p.j);
            }
            const auto got = build_plan_pairwise(emb, metric, rp);
            if (got.edges != want) {
                msg = "pairwise mismatch at trial " + std::to_string(trial);
                return false;
            }
        }
        msg = "200 instances, both modes";
        return true;
    }});

    checks.push_back({"criterion 7: bipartite comparisons cost about half of pairwise",
                      [](std::string& msg) {
        for (std::uint64_t v = 2; v <= 600; ++v) {
            if (comparison_count(v, MatchingMode::Bipartite) != ((v + 1) / 2) * (v / 2) ||
                comparison_count(v, MatchingMode::Pairwise) != v * (v - 1) / 2) {
                msg = "formula mismatch at v=" + std::to_string(v);
                return false;
            }
            if (v >= 16) {
                const double ratio =
                    static_cast<double>(comparison_count(v, MatchingMode::Pairwise)) /
                    static_cast<double>(comparison_count(v, MatchingMode::Bipartite));
                if (ratio < 1.9) {
                    // The pinned formulas give ratio = 2 - 2/v for even v, so
                    // the 1.9 threshold only holds from v = 20 onward; at
                    // v = 16 the exact value is 1.875. Reported as-is.
                    msg = "ratio " + std::to_string(ratio) + " below 1.9 at v=" +
                          std::to_string(v) + " (2 - 2/v first reaches 1.9 at v=20)";
                    return false;
                }
            }
        }
        msg = "v in [2, 600]";
        return true;
    }});

    checks.push_back({"criterion 8: uniform guidance reduces to the unweighted mean",
                      [](std::string& msg) {
        SeededStream s(801);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = 2 + s.next_u64() % 14;
            Matrix emb(n, 5);
            for (auto& v : emb.data) v = s.uniform_f32(-2.0f, 2.0f);
            const auto [a, b] = alternating_split(n);
            if (b.empty()) continue;
            const auto plan =
                build_plan_bipartite(emb, a, b, FdMetric::CosineDivergence,
                                     s.next_u64() % (a.size() + 1));
            std::vector<std::vector<std::uint32_t>> prov(n);
            for (std::size_t i = 0; i < n; ++i) prov[i] = {static_cast<std::uint32_t>(i)};
            const auto out = apply_merge(emb, plan, std::vector<float>(n, 1.0f), prov);

            // independent mean oracle
            std::vector<std::vector<std::size_t>> group(n);
            for (std::size_t i = 0; i < n; ++i) group[i] = {i};
            for (const auto& [src, dst] : plan.edges) group[dst].push_back(src);
            for (std::size_t k = 0; k < plan.kept_order.size(); ++k) {
                const std::size_t idx = plan.kept_order[k];
                for (std::size_t d = 0; d < 5; ++d) {
                    double mean = 0.0;
                    for (std::size_t m : group[idx]) mean += emb.at(m, d);
                    mean /= static_cast<double>(group[idx].size());
                    if (std::abs(out.embeddings.at(k, d) - mean) > 1e-6) {
                        msg = "mean mismatch at trial " + std::to_string(trial);
                        return false;
                    }
                }
            }
        }
        msg = "100 windows";
        return true;
    }});

    checks.push_back({"criterion 9: provenance partition survives full runs; local-only stays local",
                      [](std::string& msg) {
        const SequenceLayout layout{.pre_prompt_len = 4, .grid_height = 8, .grid_width = 8,
                                    .post_prompt_len = 4};
        const Schedule sched{.lambdas = {2, 4, 6}, .windows = {4, 2, 1},
                             .ratios = {0.5, 0.5, 0.5}};
        for (auto scope : {ScopeMode::Hierarchical, ScopeMode::GlobalOnly, ScopeMode::LocalOnly}) {
            Strategy strat;
            strat.scope = scope;
            const auto trace = run_prefill(kDesk, layout, sched, strat);
            std::set<std::uint32_t> cells;
            for (const auto& prov : trace.final_grid.provenance) {
                for (std::uint32_t c : prov) {
                    if (!cells.insert(c).second) {
                        msg = "duplicate cell in provenance";
                        return false;
                    }
                }
            }
            if (cells.size() != 64) {
                msg = "provenance union incomplete: " + std::to_string(cells.size());
                return false;
            }
            if (scope == ScopeMode::LocalOnly) {
                auto footprint = [](std::uint32_t cell) {
                    return (cell / 8 / 2) * 4 + (cell % 8) / 2;  // 2x2 blocks for w=4
                };
                for (const auto& prov : trace.final_grid.provenance) {
                    for (std::uint32_t c : prov) {
                        if (footprint(c) != footprint(prov.front())) {
                            msg = "local-only merge crossed a first-stage window";
                            return false;
                        }
                    }
                }
            }
        }
        msg = "3 scopes, full pipeline";
        return true;
    }});

    checks.push_back({"criterion 10: cmd_compress output is byte-identical across runs",
                      [](std::string& msg) {
        RunConfig cfg = parse_config_json(nlohmann::json{
            {"seed", 42}, {"layers", 8}, {"heads", 2}, {"dim", 16}, {"ff_dim", 32},
            {"grid", {8, 8}}, {"prompt_pre", 4}, {"prompt_post", 4},
            {"schedule",
             {{"layers", {2, 4, 6}}, {"windows", {4, 2, 1}}, {"ratios", {0.5, 0.5, 0.5}}}}});
        const auto base = fs::temp_directory_path() / "lkv_acceptance_10";
        fs::remove_all(base);
        std::ostringstream log;
        for (const char* run : {"a", "b"}) {
            cfg.out_dir = (base / run).string();
            cmd_compress(cfg, log);
        }
        for (const char* name : {"report.json", "provenance.json", "heatmap.pgm"}) {
            std::ifstream fa(base / "a" / name, std::ios::binary);
            std::ifstream fb(base / "b" / name, std::ios::binary);
            std::string sa((std::istreambuf_iterator<char>(fa)), {});
            std::string sb((std::istreambuf_iterator<char>(fb)), {});
            if (sa.empty() || sa != sb) {
                msg = std::string(name) + " differs or is empty";
                return false;
            }
        }
        msg = "report.json, provenance.json, heatmap.pgm";
        return true;
    }});

    checks.push_back({"criterion 11: 13B FLOPs ratio stays within [0.55, 0.75]",
                      [](std::string& msg) {
        const ModelShape shape = shape_preset("llava15-13b");
        const auto counts = per_layer_counts_closed_form(576, 40, {15, 23, 31}, {0.5, 0.5, 0.5});
        const std::vector<double> vanilla(40, 576.0);
        const double ratio =
            estimate_flops(counts, shape, 64) / estimate_flops(vanilla, shape, 64);
        msg = "ratio " + std::to_string(ratio);
        return ratio >= 0.55 && ratio <= 0.75;
    }});

    checks.push_back({"criterion 12: schedule search reaches the 0.553 target",
                      [](std::string& msg) {
        const Schedule s = schedule_search(40, 0.553, 3, 10);
        const double retention = token_layers_closed_form(1.0, 40, s.lambdas, s.ratios) / 40.0;
        const double known =
            token_layers_closed_form(1.0, 40, {15, 23, 31}, {0.5, 0.5, 0.5}) / 40.0;
        msg = "found retention " + std::to_string(retention) + ", known-good " +
              std::to_string(known);
        return std::abs(retention - 0.553) <= 0.005 && std::abs(known - 0.553) <= 0.005 &&
               s.lambdas.front() >= 10;
    }});

    int failures = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        std::string msg;
        bool ok = false;
        try {
            ok = checks[i].run(msg);
        } catch (const std::exception& e) {
            msg = std::string("exception: ") + e.what();
        }
        std::cout << (ok ? "PASS " : "FAIL ") << checks[i].name;
        if (!msg.empty()) std::cout << " [" << msg << "]";
        std::cout << "\n";
        if (!ok) ++failures;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
              << "\n";
    return failures == 0 ? 0 : 1;
}
