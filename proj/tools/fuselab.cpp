// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// fuselab: gen-data | train | eval | verify | sweep

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fuselab/error.hpp"
#include "fuselab/experiment.hpp"

namespace {

using namespace fuselab;

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config:
    case ErrorKind::digest: return 2;
    case ErrorKind::io:
    case ErrorKind::parse: return 3;
    default: return 1;
    }
}

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

experiment::ExperimentConfig load(const Common& c) {
    auto cfg = c.config.empty() ? experiment::default_config() : experiment::load_config(c.config);
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "Experiment config (JSON); built-in defaults when omitted");
    sub->add_option("--out", c.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", c.seed, "Global seed override");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fuselab: fusion of heterogeneous source policies into a target policy"};
    app.require_subcommand(1);

    Common common;
    int stage = 0;
    std::string checkpoint;
    std::string report;
    std::string axis;
    std::vector<std::string> values;
    std::string table;
    experiment::VerifyOptions vopts;

    auto* gen = app.add_subcommand("gen-data", "Pretrain sources, sample, score and write datasets");
    add_common(gen, common);

    auto* train = app.add_subcommand("train", "Run training stage 1 or 2");
    add_common(train, common);
    train->add_option("--stage", stage, "1 (fusesft/sft) or 2 (preference stage)")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out prompts");
    add_common(eval, common);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: stage 2 output)");
    eval->add_option("--report", report, "Report path (default: <out>/report.txt)");

    auto* ver = app.add_subcommand("verify", "Gradient, linearity and variance self-checks");
    add_common(ver, common);
    ver->add_option("--cases", vopts.cases_per_loss, "Random cases per loss");
    ver->add_option("--draws", vopts.variance_draws, "Monte Carlo draws per variance check");
    ver->add_option("--inject-fault", vopts.inject_fault, "Perturb the analytic gradient of one loss")
        ->group("");

    auto* sweep = app.add_subcommand("sweep", "Full pipeline per value of one axis");
    add_common(sweep, common);
    sweep->add_option("--axis", axis, "k_sft | k_po | alpha_sft | alpha_po | strategy | source_count | target_size")
        ->required();
    sweep->add_option("--values", values, "Axis values")->required()->delimiter(',');
    sweep->add_option("--table", table, "Table path (default: <out>/sweep_<axis>.tsv)");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = load(common);
        if (*gen) {
            experiment::cmd_gen_data(cfg);
        } else if (*train) {
            experiment::cmd_train(cfg, stage);
        } else if (*eval) {
            experiment::cmd_eval(cfg, checkpoint, report);
        } else if (*ver) {
            return experiment::cmd_verify(cfg, vopts, std::cout) ? 0 : 1;
        } else if (*sweep) {
            const auto a = experiment::parse_sweep_axis(axis);
            const std::string path = table.empty() ? cfg.output_dir + "/sweep_" + axis + ".tsv" : table;
            const auto rows = experiment::cmd_sweep(cfg, a, values, path);
            for (const auto& r : rows) {
                std::cout << axis << '=' << r.value << (r.ok ? " ok" : " error: " + r.error) << '\n';
            }
            std::cout << "table: " << path << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "fuselab: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "fuselab: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
