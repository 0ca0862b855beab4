// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, dataset persistence and the end-to-end pipeline
// driven by the command-line tool.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fuselab/analysis.hpp"
#include "fuselab/core.hpp"
#include "fuselab/tinylm.hpp"
#include "fuselab/trainer.hpp"
#include "fuselab/weighting.hpp"

namespace fuselab::experiment {

struct CorpusSpec {
    std::int32_t vocab_size = 32;
    std::int32_t train_prompts = 400;
    std::int32_t pretrain_prompts = 800;
    std::int32_t heldout_prompts = 200;
    std::int32_t min_len = 3;
    std::int32_t max_len = 5;
    std::uint64_t corpus_seed = 11;
};

struct PretrainSpec {
    // Prompt region this source specialises in; -1 trains on every region.
    std::int32_t region = -1;
    // Share of out-of-region pretraining prompts that are also used.
    double other_fraction = 0.0;
    trainer::TrainConfig train;
};

struct SourceSpec {
    std::string id;
    tinylm::ArchConfig arch;
    tinylm::SamplingParams sampling;
    PretrainSpec pretrain;
};

struct EvalSpec {
    bool mean_reward = true;
    bool rank_accuracy = true;
    bool bias_variance = true;
    // Decoding of target responses on held-out prompts.
    tinylm::SamplingParams sampling{1.0, 0.0, 1.0, 12, 0};
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    CorpusSpec corpus;
    tinylm::RewardSpec reward;
    std::vector<SourceSpec> sources;
    tinylm::ArchConfig target;
    weighting::WeightingConfig weighting;
    std::int32_t samples_per_source = 5;
    trainer::TrainConfig stage1;
    trainer::TrainConfig stage2;
    EvalSpec eval;

    void validate() const;
};

// Throws config errors naming the offending field path.
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// SHA-256 over the canonical JSON form, output_dir excluded.
std::string config_digest(const ExperimentConfig& cfg);

// Default desk-scale configuration with four heterogeneous sources.
ExperimentConfig default_config();

struct Corpus {
    std::vector<Prompt> pretrain;
    std::vector<Prompt> train;
    std::vector<Prompt> heldout;
};

Corpus make_corpus(const ExperimentConfig& cfg);

// Region of a prompt among `regions` equal buckets of its first token.
std::int32_t prompt_region(const Prompt& p, std::int32_t vocab_size, std::int32_t regions);

std::vector<tinylm::PolicyModel> pretrain_sources(const ExperimentConfig& cfg, const Corpus& corpus);

// Scores N samples per source for every prompt and builds the record.
std::vector<FusionSample> collect_samples(const ExperimentConfig& cfg, std::span<const tinylm::PolicyModel> sources,
                                          std::span<const Prompt> prompts, SplitTag stage, std::uint64_t stream_tag);

struct Dataset {
    std::vector<FusionSample> sft;
    std::vector<FusionSample> po;
    std::vector<FusionSample> eval;
};

struct GenDataResult {
    Corpus corpus;
    std::vector<tinylm::PolicyModel> sources;
    Dataset data;
};

GenDataResult generate_data(const ExperimentConfig& cfg);

inline constexpr int kDatasetVersion = 1;

void save_dataset(std::ostream& out, std::span<const FusionSample> samples, const std::string& digest);
std::vector<FusionSample> load_dataset(std::istream& in, std::string* digest = nullptr);
void save_dataset_file(const std::string& path, std::span<const FusionSample> samples, const std::string& digest);
std::vector<FusionSample> load_dataset_file(const std::string& path, std::string* digest = nullptr);

// Freshly initialised target model for this config's seed.
tinylm::PolicyModel initial_target(const ExperimentConfig& cfg);

trainer::TrainResult run_stage1(const ExperimentConfig& cfg, std::span<const FusionSample> sft);

trainer::TrainResult run_stage2(const ExperimentConfig& cfg, const tinylm::PolicyModel& stage1_model,
                                std::span<const FusionSample> po);

struct EvalResult {
    std::map<std::string, double> metrics;
    std::vector<analysis::PromptResponse> responses;
};

EvalResult evaluate_model(const ExperimentConfig& cfg, const tinylm::PolicyModel& model,
                          std::span<const FusionSample> eval_samples);

void write_report(std::ostream& out, const std::map<std::string, std::string>& header,
                  const std::map<std::string, double>& metrics);
std::map<std::string, double> read_report_metrics(std::istream& in);

// In-memory gen-data, both stages and evaluation; returns the metrics.
std::map<std::string, double> run_pipeline(const ExperimentConfig& cfg);

// File-backed commands; paths are rooted at cfg.output_dir.
struct Paths {
    std::string root;

    std::string dataset(SplitTag tag) const;
    std::string eval_set() const;
    std::string source_checkpoint(std::size_t i) const;
    std::string checkpoint(int stage) const;
    std::string trace(int stage) const;
    std::string report() const;
};

void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg, int stage);
void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path, const std::string& report_path);

struct VerifyOptions {
    // Test hook: perturbs one analytic gradient before comparison.
    std::string inject_fault;
    std::size_t cases_per_loss = 20;
    std::size_t variance_draws = 1'000'000;
};

struct CheckOutcome {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<CheckOutcome> run_verify(const ExperimentConfig& cfg, const VerifyOptions& opts);
bool cmd_verify(const ExperimentConfig& cfg, const VerifyOptions& opts, std::ostream& log);

enum class SweepAxis { k_sft, k_po, alpha_sft, alpha_po, strategy, source_count, target_size };

const char* to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& text);

// Configuration with `value` applied on `axis`.
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value);

struct SweepRow {
    std::string value;
    bool ok = false;
    std::string error;
    std::map<std::string, double> metrics;
};

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<std::string>& values,
                                const std::string& table_path);

// True when mean_reward never decreases along the rows that succeeded.
bool non_decreasing(const std::vector<SweepRow>& rows, const std::string& metric);

} // namespace fuselab::experiment
