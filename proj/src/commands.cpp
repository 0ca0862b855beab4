// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "fuselab/analysis.hpp"
#include "fuselab/error.hpp"
#include "fuselab/experiment.hpp"
#include "fuselab/losses.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/verify.hpp"

namespace fuselab::experiment {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

CheckOutcome check(std::string name, bool passed, std::string detail) {
    return {std::move(name), passed, std::move(detail)};
}

} // namespace

std::vector<CheckOutcome> run_verify(const ExperimentConfig& cfg, const VerifyOptions& opts) {
    std::vector<CheckOutcome> out;
    const std::uint64_t seed = derive_seed(cfg.seed, {0x7e});

    // Gradient checks.
    bool fault_matched = opts.inject_fault.empty();
    for (const auto& loss : verify::loss_names()) {
        double worst = 0.0;
        const double fault = opts.inject_fault == loss ? 1e-3 : 0.0;
        if (fault != 0.0) fault_matched = true;
        for (std::size_t k = 0; k < opts.cases_per_loss; ++k) {
            const auto c = verify::make_grad_case(loss, derive_seed(seed, {k}));
            worst = std::max(worst, verify::check_gradient(c, fault).max_rel_error);
        }
        out.push_back(check("gradcheck." + loss, worst <= verify::kGradTolerance, "max_rel_error=" + num(worst)));
    }
    if (!fault_matched) fail(ErrorKind::config, "--inject-fault: unknown loss '" + opts.inject_fault + "'");

    // Linearity of the aggregated preference gradient.
    {
        double worst = 0.0;
        bool ok = true;
        std::size_t n = 0;
        for (PrefMethod m : {PrefMethod::dpo, PrefMethod::simpo, PrefMethod::rloo}) {
            for (std::size_t k = 0; k < opts.cases_per_loss; ++k, ++n) {
                const auto c = verify::make_linearity_case(m, 2 + k % 3, derive_seed(seed, {0x100, k}));
                const auto r = analysis::verify_prop1(c.weights, c.per_entry, c.aggregate);
                worst = std::max(worst, r.max_abs_error);
                ok = ok && r.linearity_ok;
            }
        }
        out.push_back(check("linearity.aggregate", ok, std::to_string(n) + " cases, max_abs_error=" + num(worst)));
        const std::vector<double> w{0.8808, 0.1192};
        const auto c = verify::make_equal_norm_case(PrefMethod::dpo, w, seed);
        const auto r = analysis::verify_prop1(c.weights, c.per_entry, c.aggregate);
        out.push_back(check("linearity.weight_ranking", r.linearity_ok && r.equal_norm_case && r.ranking_ok &&
                                                        r.max_ratio_error <= 1e-9,
                            "ratio_error=" + num(r.max_ratio_error)));
    }

    // Variance reduction of the weighted aggregate.
    {
        struct Case {
            const char* name;
            std::vector<double> w;
            double expect;
        };
        const std::vector<Case> cases{{"variance.uniform4", {0.25, 0.25, 0.25, 0.25}, 0.25},
                                      {"variance.skewed2", {0.8808, 0.1192}, 0.8808 * 0.8808 + 0.1192 * 0.1192},
                                      {"variance.single", {1.0}, 1.0}};
        for (const auto& c : cases) {
            analysis::Prop2Config pc;
            pc.num_draws = opts.variance_draws;
            pc.seed = derive_seed(seed, {0x200, stable_hash(c.name)});
            const auto r = analysis::verify_prop2(c.w, pc);
            const bool analytic = std::abs(r.theoretical_variance - c.expect) <= 1e-12;
            std::string detail = "sum_w2=" + num(r.sum_w2) + " var=" + num(r.sample_variance) +
                                 " rel_err=" + num(r.variance_rel_error) + " strict=" +
                                 (r.strict_reduction ? (*r.strict_reduction ? "yes" : "no") : "n/a");
            out.push_back(check(c.name, r.ok() && analytic, detail));
        }
        const std::size_t n_large = opts.variance_draws;
        const std::size_t n_small = std::max<std::size_t>(n_large / 100, 2);
        const std::vector<double> w{0.8808, 0.1192};
        const double ratio = analysis::prop2_error_ratio(w, 1.0, n_small, n_large, 16, derive_seed(seed, {0x300}));
        out.push_back(check("variance.convergence", ratio >= 5.0 && ratio <= 20.0, "error_ratio=" + num(ratio)));
    }

    // Closed forms.
    {
        const double dpo = verify::dpo_zero_margin_loss(seed);
        out.push_back(check("closed.dpo_zero_margin", std::abs(dpo - std::log(2.0)) <= 1e-9, "loss=" + num(dpo)));
        const double simpo = verify::simpo_equal_reward_loss(10.0, 3.0, seed);
        const double expect = -std::log(1.0 / (1.0 + std::exp(3.0)));
        out.push_back(check("closed.simpo_equal_reward", std::abs(simpo - expect) <= 1e-6, "loss=" + num(simpo)));
        CounterRng rng(derive_seed(seed, {0x400}));
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            std::vector<double> r(2 + rng() % 7);
            for (double& v : r) v = rng.uniform() * 2.0 - 1.0;
            double sum = 0.0;
            for (double a : losses::compute_rloo_advantages(r)) sum += a;
            worst = std::max(worst, std::abs(sum));
        }
        out.push_back(check("closed.rloo_advantage_sum", worst <= 1e-12, "max_abs_sum=" + num(worst)));
    }
    return out;
}

bool cmd_verify(const ExperimentConfig& cfg, const VerifyOptions& opts, std::ostream& log) {
    bool all = true;
    for (const auto& c : run_verify(cfg, opts)) {
        log << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << '\n';
        all = all && c.passed;
    }
    return all;
}

// ---------------------------------------------------------------------------
// Sweeps.

const char* to_string(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::k_sft: return "k_sft";
    case SweepAxis::k_po: return "k_po";
    case SweepAxis::alpha_sft: return "alpha_sft";
    case SweepAxis::alpha_po: return "alpha_po";
    case SweepAxis::strategy: return "strategy";
    case SweepAxis::source_count: return "source_count";
    case SweepAxis::target_size: return "target_size";
    }
    return "?";
}

SweepAxis parse_sweep_axis(const std::string& text) {
    for (SweepAxis a : {SweepAxis::k_sft, SweepAxis::k_po, SweepAxis::alpha_sft, SweepAxis::alpha_po,
                        SweepAxis::strategy, SweepAxis::source_count, SweepAxis::target_size}) {
        if (text == to_string(a)) return a;
    }
    fail(ErrorKind::config, "unknown sweep axis '" + text + "'");
}

namespace {

std::int32_t parse_int(const std::string& v) {
    std::size_t pos = 0;
    int out = 0;
    try {
        out = std::stoi(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) fail(ErrorKind::config, "expected an integer, got '" + v + "'");
    return out;
}

double parse_real(const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) fail(ErrorKind::config, "expected a number, got '" + v + "'");
    return out;
}

} // namespace

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value) {
    ExperimentConfig cfg = base;
    switch (axis) {
    case SweepAxis::k_sft: cfg.weighting.k_sft = parse_int(value); break;
    case SweepAxis::k_po: cfg.weighting.k_po = parse_int(value); break;
    case SweepAxis::alpha_sft: cfg.weighting.alpha_sft = parse_real(value); break;
    case SweepAxis::alpha_po: cfg.weighting.alpha_po = parse_real(value); break;
    case SweepAxis::strategy: cfg.weighting.strategy = weighting::parse_strategy(value); break;
    case SweepAxis::source_count: {
        const auto k = parse_int(value);
        if (k < 1 || static_cast<std::size_t>(k) > base.sources.size()) {
            fail(ErrorKind::config, "source_count must lie in [1, " + std::to_string(base.sources.size()) + "]");
        }
        cfg.sources.resize(static_cast<std::size_t>(k));
        cfg.weighting.k_sft = std::min(cfg.weighting.k_sft, k * cfg.samples_per_source);
        if (cfg.weighting.k_po > k) cfg.weighting.k_po = k;
        break;
    }
    case SweepAxis::target_size: {
        // "H" or "H1xH2" hidden widths of the target.
        std::vector<std::int32_t> dims;
        std::stringstream ss(value);
        std::string part;
        while (std::getline(ss, part, 'x')) dims.push_back(parse_int(part));
        cfg.target.hidden_dims = dims;
        break;
    }
    }
    cfg.validate();
    return cfg;
}

std::map<std::string, double> run_pipeline(const ExperimentConfig& cfg) {
    const auto data = generate_data(cfg);
    const auto s1 = run_stage1(cfg, data.data.sft);
    const auto s2 = run_stage2(cfg, s1.model, data.data.po);
    return evaluate_model(cfg, s2.model, data.data.eval).metrics;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<std::string>& values,
                                const std::string& table_path) {
    if (values.empty()) fail(ErrorKind::config, "sweep needs at least one value");
    std::vector<SweepRow> rows;
    for (const auto& v : values) {
        SweepRow row;
        row.value = v;
        try {
            auto run_cfg = apply_axis(cfg, axis, v);
            run_cfg.output_dir = cfg.output_dir + "/" + to_string(axis) + "=" + v;
            cmd_gen_data(run_cfg);
            cmd_train(run_cfg, 1);
            cmd_train(run_cfg, 2);
            cmd_eval(run_cfg, "", "");
            std::ifstream in(Paths{run_cfg.output_dir}.report());
            row.metrics = read_report_metrics(in);
            row.ok = true;
        } catch (const Error& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }

    std::set<std::string> keys;
    for (const auto& r : rows) {
        for (const auto& [k, _] : r.metrics) keys.insert(k);
    }
    std::filesystem::create_directories(std::filesystem::path(table_path).parent_path().empty()
                                            ? std::filesystem::path(".")
                                            : std::filesystem::path(table_path).parent_path());
    std::ofstream out(table_path);
    if (!out) fail(ErrorKind::io, "cannot write '" + table_path + "'");
    out << to_string(axis) << "\tstatus";
    for (const auto& k : keys) out << '\t' << k;
    out << '\n';
    char buf[40];
    for (const auto& r : rows) {
        out << r.value << '\t' << (r.ok ? "ok" : "error");
        for (const auto& k : keys) {
            const auto it = r.metrics.find(k);
            if (it == r.metrics.end()) {
                out << "\t-";
            } else {
                std::snprintf(buf, sizeof buf, "%.17g", it->second);
                out << '\t' << buf;
            }
        }
        if (!r.ok) out << "\t# " << r.error;
        out << '\n';
    }
    out << "# trend mean_reward non_decreasing=" << (non_decreasing(rows, "mean_reward") ? "yes" : "no") << '\n';
    if (!out) fail(ErrorKind::io, "table write failed");
    return rows;
}

bool non_decreasing(const std::vector<SweepRow>& rows, const std::string& metric) {
    std::optional<double> prev;
    for (const auto& r : rows) {
        if (!r.ok) continue;
        const auto it = r.metrics.find(metric);
        if (it == r.metrics.end()) continue;
        if (prev && it->second < *prev) return false;
        prev = it->second;
    }
    return true;
}

} // namespace fuselab::experiment
