// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fuselab/analysis.hpp"
#include "fuselab/experiment.hpp"
#include "fuselab/losses.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/verify.hpp"
#include "fuselab/weighting.hpp"

namespace {

using namespace fuselab;
using namespace fuselab::experiment;
namespace fs = std::filesystem;

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Outcome {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o, double secs) {
    if (!o.ok) ++failures;
    std::cout << (o.ok ? "PASS " : "FAIL ") << id << ' ' << title << "  (" << fmt("%.1f s", secs)
              << (o.detail.empty() ? "" : "; " + o.detail) << ")" << std::endl;
}

std::size_t first_argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Outcome weighting_exactness() {
    Outcome o;
    CounterRng rng(derive_seed(2026, {1}));
    std::size_t log_domain = 0;
    for (int c = 0; c < 1000; ++c) {
        const std::size_t k = 1 + rng() % 8;
        const double alpha = std::pow(10.0, -4.0 + 7.0 * rng.uniform());
        std::vector<double> r(k);
        for (double& x : r) x = rng.uniform();
        const auto w = weighting::compute_model_weights(r, alpha);
        double sum = 0.0, sq = 0.0;
        for (double x : w) {
            sum += x;
            sq += x * x;
        }
        const std::string tag = "case " + std::to_string(c);
        o.require(std::abs(sum - 1.0) <= 1e-12, tag + " sum " + fmt("%.17g", sum));
        o.require(first_argmax(w) == first_argmax(r), tag + " argmax");
        const double shift = 20.0 * rng.uniform() - 10.0;
        std::vector<double> shifted(r);
        for (double& x : shifted) x += shift;
        const auto ws = weighting::compute_model_weights(shifted, alpha);
        for (std::size_t i = 0; i < k; ++i) o.require(std::abs(ws[i] - w[i]) <= 1e-12, tag + " shift");
        if (k >= 2) {
            if (sq < 1.0) continue;
            // Every non-max weight underflowed; 1 - sum w^2 >= 2 w_a w_b > 0 whenever
            // two log-weights are finite.
            ++log_domain;
            const double top = *std::max_element(r.begin(), r.end());
            std::size_t finite = 0;
            for (double x : r) finite += std::isfinite((x - top) / alpha) ? 1 : 0;
            o.require(finite >= 2, tag + " strict reduction");
        }
    }
    if (o.ok) o.detail = std::to_string(log_domain) + " cases decided in log domain";
    return o;
}

Outcome gradient_suite() {
    Outcome o;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& name : verify::loss_names()) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto c = verify::make_grad_case(name, seed);
            o.require(c.policy.param_count() <= 5000, name + " model too large");
            const auto r = verify::check_gradient(c);
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                worst_name = name;
            }
            o.require(r.max_rel_error <= verify::kGradTolerance,
                      name + " seed " + std::to_string(seed) + fmt(" rel %.3g", r.max_rel_error));
            o.require(r.grad_norm > 0.0, name + " zero gradient");
        }
    }
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("max rel err ") + fmt("%.3g", worst) + " (" +
                worst_name + ")";
    return o;
}

Outcome closed_forms() {
    Outcome o;
    double dpo_err = 0.0, simpo_err = 0.0, rloo_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        dpo_err = std::max(dpo_err, std::abs(verify::dpo_zero_margin_loss(seed) - std::log(2.0)));
        const double expect = std::log1p(std::exp(3.0));
        simpo_err = std::max(simpo_err, std::abs(verify::simpo_equal_reward_loss(10.0, 3.0, seed) - expect));
    }
    o.require(dpo_err <= 1e-9, "dpo zero margin off by " + fmt("%.3g", dpo_err));
    o.require(simpo_err <= 1e-6, "simpo equal reward off by " + fmt("%.3g", simpo_err));
    o.require(std::abs(std::log1p(std::exp(3.0)) - 3.048587) <= 1e-6, "simpo reference value");
    CounterRng rng(derive_seed(2026, {3}));
    for (int c = 0; c < 1000; ++c) {
        std::vector<double> r(2 + rng() % 7);
        for (double& x : r) x = 2.0 * rng.uniform() - 1.0;
        double s = 0.0;
        for (double a : losses::compute_rloo_advantages(r)) s += a;
        rloo_sum = std::max(rloo_sum, std::abs(s));
    }
    o.require(rloo_sum <= 1e-12, "rloo advantage sum " + fmt("%.3g", rloo_sum));
    if (o.ok) {
        o.detail = "dpo " + fmt("%.2g", dpo_err) + ", simpo " + fmt("%.2g", simpo_err) + ", rloo " +
                   fmt("%.2g", rloo_sum);
    }
    return o;
}

Outcome variance_reduction() {
    Outcome o;
    struct Case {
        std::string name;
        std::vector<double> w;
    };
    const auto skew = weighting::compute_model_weights(std::vector<double>{0.9, 0.7}, 0.1);
    std::vector<Case> cases{{"uniform4", {0.25, 0.25, 0.25, 0.25}}, {"skewed2", skew}, {"single", {1.0}}};
    CounterRng rng(derive_seed(2026, {4}));
    for (int i = 0; i < 3; ++i) {
        std::vector<double> r(2 + rng() % 5);
        for (double& x : r) x = rng.uniform();
        cases.push_back({"random" + std::to_string(i), weighting::compute_model_weights(r, 0.2)});
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        analysis::Prop2Config cfg;
        cfg.num_draws = 1'000'000;
        cfg.seed = derive_seed(2026, {40, i});
        cfg.sigma = 1.0;
        const auto r = analysis::verify_prop2(c.w, cfg);
        o.require(r.mean_ok, c.name + " mean");
        o.require(r.variance_ok, c.name + " variance rel err " + fmt("%.3g", r.variance_rel_error));
        if (c.w.size() >= 2) {
            o.require(r.strict_reduction.value_or(false), c.name + " strict reduction");
        } else {
            o.require(!r.strict_reduction.has_value(), c.name + " reduction should be not-applicable");
        }
        if (c.name == "uniform4") o.require(r.sum_w2 == 0.25, "uniform4 sum w^2");
        if (c.name == "skewed2") o.require(std::abs(r.sum_w2 - 0.7900) < 1e-4, "skewed2 sum w^2");
        if (c.name == "single") o.require(r.theoretical_variance == 1.0, "single variance");
        if (o.ok && i < 2) o.detail += (o.detail.empty() ? "" : ", ") + c.name + fmt(" %.4f", r.sample_variance);
    }
    return o;
}

Outcome linearity() {
    Outcome o;
    double worst = 0.0;
    const PrefMethod methods[] = {PrefMethod::dpo, PrefMethod::simpo, PrefMethod::rloo};
    for (std::uint64_t i = 0; i < 20; ++i) {
        const auto c = verify::make_linearity_case(methods[i % 3], 2 + i % 4, derive_seed(2026, {5, i}));
        const auto r = analysis::verify_prop1(c.weights, c.per_entry, c.aggregate, 1e-10);
        worst = std::max(worst, r.max_abs_error);
        o.require(r.linearity_ok, "configuration " + std::to_string(i) + fmt(" err %.3g", r.max_abs_error));
    }
    if (o.ok) o.detail = "max abs err " + fmt("%.3g", worst);
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void run_files(const ExperimentConfig& cfg) {
    cmd_gen_data(cfg);
    cmd_train(cfg, 1);
    cmd_train(cfg, 2);
    cmd_eval(cfg, "", "");
}

Outcome determinism(const ExperimentConfig& base, const fs::path& work) {
    Outcome o;
    auto a = base;
    auto b = base;
    a.output_dir = (work / "determinism_a").string();
    b.output_dir = (work / "determinism_b").string();
    fs::remove_all(a.output_dir);
    fs::remove_all(b.output_dir);
    run_files(a);
    run_files(b);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.output_dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a.output_dir);
        ++files;
        o.require(fs::exists(fs::path(b.output_dir) / rel), rel.string() + " missing");
        o.require(slurp(e.path()) == slurp(fs::path(b.output_dir) / rel), rel.string() + " differs");
    }
    o.require(files >= 9, "expected datasets, checkpoints, traces and a report");
    if (o.ok) o.detail = std::to_string(files) + " files byte-identical";
    return o;
}

struct Arm {
    std::map<std::string, double> metrics;
    std::vector<analysis::PromptResponse> responses;
};

struct SeedRun {
    std::uint64_t seed = 0;
    std::map<std::string, Arm> fused;
    std::map<std::string, Arm> baseline;
    double winrate_dpo = 0.0;
};

SeedRun run_seed(const ExperimentConfig& base, std::uint64_t seed) {
    SeedRun out;
    out.seed = seed;
    auto cfg = base;
    cfg.seed = seed;
    const auto data = generate_data(cfg);
    for (bool fused : {true, false}) {
        auto c1 = cfg;
        c1.stage1.stage = fused ? trainer::Stage::fusesft : trainer::Stage::sft;
        const auto s1 = run_stage1(c1, data.data.sft);
        for (PrefMethod m : {PrefMethod::dpo, PrefMethod::simpo, PrefMethod::rloo}) {
            auto c2 = c1;
            c2.stage2.stage = fused ? trainer::Stage::fusepo : trainer::Stage::po_baseline;
            c2.stage2.hyper.method = m;
            const auto s2 = run_stage2(c2, s1.model, data.data.po);
            auto ev = evaluate_model(c2, s2.model, data.data.eval);
            (fused ? out.fused : out.baseline)[to_string(m)] = {std::move(ev.metrics), std::move(ev.responses)};
        }
    }
    out.winrate_dpo =
        analysis::pairwise_winrate(out.fused.at("dpo").responses, out.baseline.at("dpo").responses, cfg.reward);
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Hand-built fixtures shared by criteria 8 and 9.
bool rank_fixtures_match() {
    auto sample = [](const std::string& id, const std::vector<std::vector<int>>& per_source) {
        FusionSample s;
        s.prompt = {id, {1}};
        for (std::size_t i = 0; i < per_source.size(); ++i) {
            SourceEntry e;
            e.source_id = "s" + std::to_string(i);
            for (std::size_t n = 0; n < per_source[i].size(); ++n) {
                e.responses.push_back({{{per_source[i][n], kEndToken}, e.source_id, static_cast<std::int32_t>(n)},
                                       per_source[i][n] / 10.0});
            }
            e.best_index = static_cast<std::int32_t>(argmax_reward(e.responses));
            s.per_source.push_back(e);
        }
        return s;
    };
    const std::vector<FusionSample> set{sample("a", {{1, 5, 3}, {2, 9, 4}, {6, 6, 6}}),
                                        sample("b", {{7, 2, 6}, {3, 3, 8}, {1, 4, 2}}),
                                        sample("c", {{4, 8, 1}, {5, 6, 7}, {9, 2, 3}})};
    const analysis::Scorer scorer = [](const Prompt& p, std::span<const Token> y) {
        return static_cast<double>(mix64(stable_hash(p.id) ^ static_cast<std::uint64_t>(y[0])) % 97);
    };
    // Enumeration oracle over the fixture.
    std::vector<double> hit(3, 0.0), cnt(3, 0.0);
    double cross_hit = 0.0, cross_cnt = 0.0;
    for (const auto& s : set) {
        std::vector<int> best;
        for (std::size_t i = 0; i < 3; ++i) {
            std::vector<int> toks;
            for (const auto& r : s.per_source[i].responses) toks.push_back(r.response.tokens[0]);
            const int hi = *std::max_element(toks.begin(), toks.end());
            const int lo = *std::min_element(toks.begin(), toks.end());
            best.push_back(hi);
            if (hi == lo) continue;
            cnt[i] += 1;
            if (scorer(s.prompt, TokenSeq{hi, kEndToken}) > scorer(s.prompt, TokenSeq{lo, kEndToken})) hit[i] += 1;
        }
        const int hi = *std::max_element(best.begin(), best.end());
        const int lo = *std::min_element(best.begin(), best.end());
        if (hi == lo) continue;
        cross_cnt += 1;
        if (scorer(s.prompt, TokenSeq{hi, kEndToken}) > scorer(s.prompt, TokenSeq{lo, kEndToken})) cross_hit += 1;
    }
    const auto intra = analysis::intra_rank_accuracy(scorer, set);
    const auto cross = analysis::cross_rank_accuracy(scorer, set);
    bool ok = cross.accuracy == cross_hit / cross_cnt;
    double mean = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        ok = ok && intra.per_source[i] == hit[i] / cnt[i];
        mean += hit[i] / cnt[i] / 3.0;
    }
    return ok && intra.mean == mean;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fuselab acceptance run"};
    std::string workdir = "acceptance_work";
    std::string config = std::string(FUSELAB_CONFIG_DIR) + "/desk.json";
    std::size_t seeds = 5;
    app.add_option("--workdir", workdir, "Scratch directory for pipeline outputs");
    app.add_option("--config", config, "Desk experiment config");
    app.add_option("--seeds", seeds, "Seeds for the desk experiment")->check(CLI::Range(1, 99));
    CLI11_PARSE(app, argc, argv);

    const fs::path work(workdir);
    fs::create_directories(work);
    ExperimentConfig desk;
    try {
        desk = load_config(config);
    } catch (const std::exception& e) {
        std::cerr << "acceptance: " << e.what() << '\n';
        return 2;
    }

    auto timed = [](int id, const std::string& title, double limit, auto&& fn) {
        Stopwatch sw;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.require(false, std::string("threw: ") + e.what());
        }
        const double secs = sw.seconds();
        if (limit > 0.0) o.require(secs < limit, "runtime limit " + fmt("%.0f s", limit) + " exceeded");
        report(id, title, o, secs);
    };

    timed(1, "weighting exactness", 1.0, weighting_exactness);
    timed(2, "gradient suite", 120.0, gradient_suite);
    timed(3, "closed-form spot checks", 0.0, closed_forms);
    timed(4, "variance reduction Monte Carlo", 30.0, variance_reduction);
    timed(5, "gradient linearity", 0.0, linearity);
    timed(6, "pipeline determinism", 0.0, [&] { return determinism(desk, work); });

    // Criteria 7-9 share one desk experiment over all seeds.
    std::vector<SeedRun> runs;
    std::string desk_error;
    const SeedRun* mid = nullptr;

    timed(7, "desk-scale fusion benefit", 1800.0, [&] {
        Outcome o;
        try {
            for (std::uint64_t s = 1; s <= seeds; ++s) runs.push_back(run_seed(desk, s));
        } catch (const std::exception& e) {
            desk_error = e.what();
        }
        o.require(desk_error.empty(), desk_error);
        if (!o.ok) return o;
        // Median seed: median DPO win rate, lower middle for even counts.
        std::vector<const SeedRun*> order;
        for (const auto& r : runs) order.push_back(&r);
        std::stable_sort(order.begin(), order.end(),
                         [](const SeedRun* a, const SeedRun* b) { return a->winrate_dpo < b->winrate_dpo; });
        mid = order[(order.size() - 1) / 2];
        for (const auto& r : runs) {
            std::cout << "  seed " << r.seed << fmt(": win rate %.3f", r.winrate_dpo);
            for (const char* m : {"dpo", "simpo", "rloo"}) {
                std::cout << ' ' << m << fmt(" %.4f", r.fused.at(m).metrics.at("mean_reward"))
                          << fmt("/%.4f", r.baseline.at(m).metrics.at("mean_reward"));
            }
            const auto& f = r.fused.at("dpo").metrics;
            const auto& b = r.baseline.at("dpo").metrics;
            std::cout << fmt(" | dpo intra %.4f", f.at("intra_rank")) << fmt("/%.4f", b.at("intra_rank"))
                      << fmt(" cross %.4f", f.at("cross_rank")) << fmt("/%.4f", b.at("cross_rank"))
                      << fmt(" bias %.4f", f.at("absolute_bias")) << fmt("/%.4f", b.at("absolute_bias")) << '\n';
        }
        o.require(desk.sources.size() == 4, "expected K = 4 sources");
        o.require(runs.front().fused.at("dpo").responses.size() >= 200, "fewer than 200 held-out prompts");
        o.require(runs.size() >= 5, "fewer than 5 seeds");
        std::vector<double> wr;
        for (const auto& r : runs) wr.push_back(r.winrate_dpo);
        const double med_wr = median(wr);
        o.require(med_wr >= 0.5, "median win rate " + fmt("%.3f", med_wr));
        std::string summary = "median win rate " + fmt("%.3f", med_wr);
        for (const char* m : {"dpo", "simpo", "rloo"}) {
            std::vector<double> f, b;
            for (const auto& r : runs) {
                f.push_back(r.fused.at(m).metrics.at("mean_reward"));
                b.push_back(r.baseline.at(m).metrics.at("mean_reward"));
            }
            o.require(median(f) >= median(b), std::string(m) + " median reward " + fmt("%.4f", median(f)) + " < " +
                                                  fmt("%.4f", median(b)));
            summary += std::string(", ") + m + fmt(" %.4f", median(f)) + fmt(" vs %.4f", median(b));
        }
        if (o.ok) o.detail = summary;
        return o;
    });

    timed(8, "rank accuracy", 0.0, [&] {
        Outcome o;
        o.require(rank_fixtures_match(), "metric fixtures disagree with enumeration");
        o.require(mid != nullptr, "desk experiment failed: " + desk_error);
        if (!mid) return o;
        const auto& f = mid->fused.at("dpo").metrics;
        const auto& b = mid->baseline.at("dpo").metrics;
        o.require(f.at("intra_rank") >= b.at("intra_rank"),
                  "intra " + fmt("%.4f", f.at("intra_rank")) + " < " + fmt("%.4f", b.at("intra_rank")));
        o.require(f.at("cross_rank") >= b.at("cross_rank"),
                  "cross " + fmt("%.4f", f.at("cross_rank")) + " < " + fmt("%.4f", b.at("cross_rank")));
        if (o.ok) {
            o.detail = "seed " + std::to_string(mid->seed) + ": intra " + fmt("%.4f", f.at("intra_rank")) +
                       fmt(" vs %.4f", b.at("intra_rank")) + ", cross " + fmt("%.4f", f.at("cross_rank")) +
                       fmt(" vs %.4f", b.at("cross_rank"));
        }
        return o;
    });

    timed(9, "bias and variance", 0.0, [&] {
        Outcome o;
        const auto fx = analysis::bias_variance_report(std::vector<double>{0.6, 0.2}, std::vector<double>{0.5, 0.5});
        o.require(std::abs(fx.absolute_bias - 0.2) <= 1e-15 && std::abs(fx.variance - 0.01) <= 1e-15,
                  "fixture " + fmt("%.17g", fx.absolute_bias) + fmt(" / %.17g", fx.variance));
        const auto fx2 = analysis::bias_variance_report(std::vector<double>{1.2, 1.8}, std::vector<double>{1.5, 1.5});
        o.require(std::abs(fx2.absolute_bias - 0.3) <= 1e-15 && fx2.variance <= 1e-30, "second fixture");
        o.require(mid != nullptr, "desk experiment failed: " + desk_error);
        if (!mid) return o;
        const double f = mid->fused.at("dpo").metrics.at("absolute_bias");
        const double b = mid->baseline.at("dpo").metrics.at("absolute_bias");
        o.require(f <= b, "bias " + fmt("%.4f", f) + " > " + fmt("%.4f", b));
        if (o.ok) o.detail = "seed " + std::to_string(mid->seed) + ": bias " + fmt("%.4f", f) + fmt(" vs %.4f", b);
        return o;
    });

    timed(10, "k_po sweep trend", 0.0, [&] {
        Outcome o;
        o.require(mid != nullptr, "desk experiment failed: " + desk_error);
        if (!mid) return o;
        auto cfg = desk;
        cfg.seed = mid->seed;
        cfg.output_dir = (work / "sweep_k_po").string();
        fs::remove_all(cfg.output_dir);
        const auto rows = cmd_sweep(cfg, SweepAxis::k_po, {"1", "2", "4"}, cfg.output_dir + "/table.tsv");
        std::string summary = "seed " + std::to_string(mid->seed) + ":";
        for (const auto& r : rows) {
            o.require(r.ok, "k_po=" + r.value + ": " + r.error);
            if (r.ok) summary += " " + r.value + fmt("=%.4f", r.metrics.at("mean_reward"));
        }
        o.require(non_decreasing(rows, "mean_reward"), "not non-decreasing (" + summary + ")");
        if (o.ok) o.detail = summary;
        return o;
    });

    return failures == 0 ? 0 : 1;
}
