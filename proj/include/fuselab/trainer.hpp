// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage optimisation: weighted SFT over fusion samples, then weighted
// preference optimisation against a frozen reference, plus the single-source
// baselines and on-policy variants.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuselab/core.hpp"
#include "fuselab/losses.hpp"
#include "fuselab/tinylm.hpp"

namespace fuselab::trainer {

using tinylm::PolicyModel;

enum class Stage { fusesft, fusepo, sft, po_baseline, on_policy_po };
enum class OptimizerKind { sgd, adaptive_moment };

const char* to_string(Stage s);
Stage parse_stage(const std::string& text);
const char* to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& text);

struct TrainConfig {
    Stage stage = Stage::fusesft;
    std::int32_t epochs = 3;
    std::int32_t batch_size = 8;
    double learning_rate = 1e-2;
    OptimizerKind optimizer = OptimizerKind::adaptive_moment;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::optional<double> grad_clip_norm;
    std::uint64_t seed = 0;
    losses::LossHyper hyper;
    std::int32_t on_policy_samples_per_prompt = 4;
    tinylm::SamplingParams on_policy_sampling;

    void validate() const;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;
};

// Clipping (if configured) is applied to `grads` before the update.
void optimizer_step(std::span<double> params, std::span<double> grads, OptimizerState& state,
                    const TrainConfig& cfg);

double l2_norm(std::span<const double> v);

struct TraceRecord {
    std::int64_t step = 0;
    Stage stage = Stage::fusesft;
    std::int32_t epoch = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::int64_t degenerate = 0;
    std::int64_t prompts = 0;
    // Response sequences that carried a supervised or preference signal.
    std::int64_t units = 0;
    bool skipped = false;
};

struct TrainResult {
    PolicyModel model;
    std::vector<TraceRecord> trace;
    // Models held in memory while training (policy + optional reference).
    int models_loaded = 1;
};

struct SftItem {
    Prompt prompt;
    std::vector<std::pair<double, TokenSeq>> units;
};

// fusesft: the sample's weighted units (pooled top-k or per-source best);
// sft: the single globally best pooled response with weight 1.
std::vector<SftItem> make_sft_items(std::span<const FusionSample> samples, Stage stage);

struct PoItem {
    Prompt prompt;
    PreferenceBatch batch;
};

std::vector<PoItem> make_po_items(std::span<const FusionSample> samples, PrefMethod method, std::size_t k_po,
                                  double alpha_po);

TrainResult train_fusesft(const PolicyModel& model, std::span<const SftItem> items, const TrainConfig& cfg);

TrainResult train_fusepo(const PolicyModel& model, const PolicyModel* reference, std::span<const PoItem> items,
                         const TrainConfig& cfg);

TrainResult train_on_policy(const PolicyModel& model, std::span<const Prompt> prompts,
                            const tinylm::RewardSpec& reward, const TrainConfig& cfg);

void write_trace(std::ostream& out, std::span<const TraceRecord> trace);
std::vector<TraceRecord> read_trace(std::istream& in);

} // namespace fuselab::trainer
