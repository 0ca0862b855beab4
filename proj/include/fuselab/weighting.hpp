// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Data construction and per-prompt source weighting: instruction split,
// pooled response selection and the reward softmax.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fuselab/core.hpp"

namespace fuselab::weighting {

enum class SelectionStrategy { topk_pooled, top1_per_source };

const char* to_string(SelectionStrategy s);
SelectionStrategy parse_strategy(const std::string& text);

struct WeightingConfig {
    double alpha_sft = 1e-2;
    double alpha_po = 5e-3;
    std::int32_t k_sft = 4;
    // Number of highest-scoring sources that contribute preference material;
    // 0 means all of them.
    std::int32_t k_po = 0;
    SelectionStrategy strategy = SelectionStrategy::topk_pooled;
    double split_ratio = 0.4;
    std::uint64_t split_seed = 0;

    void validate() const;
};

struct Split {
    std::vector<Prompt> sft;
    std::vector<Prompt> po;
};

Split split_instructions(std::span<const Prompt> prompts, const WeightingConfig& cfg);

// Softmax of rewards / alpha with max subtraction.
std::vector<double> compute_model_weights(std::span<const double> best_rewards, double alpha);

struct PooledIndex {
    std::size_t source = 0;
    std::size_t position = 0;
};

// Top-k over the pool, ordered by descending reward; ties keep the pool order.
std::vector<PooledIndex> select_topk_pooled_indices(
    std::span<const std::vector<RewardedResponse>> per_source, std::size_t k);

std::vector<RewardedResponse> select_topk_pooled(std::span<const RewardedResponse> pool, std::size_t k);

struct SourceResponses {
    std::string source_id;
    std::vector<RewardedResponse> responses;
};

FusionSample build_fusion_sample(const Prompt& prompt, std::span<const SourceResponses> sources,
                                 const WeightingConfig& cfg, SplitTag stage);

// Indices of the k sources with the largest best reward, in descending order.
std::vector<std::size_t> top_sources(const FusionSample& sample, std::size_t k);

// Per-source preference material for one po sample, restricted to the k_po
// best sources and reweighted over them with alpha.
PreferenceBatch build_preference_batch(const FusionSample& sample, PrefMethod method,
                                       std::size_t k_po, double alpha);

} // namespace fuselab::weighting
