// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics (rank accuracies, bias/variance against a judge
// reference, pairwise win rate) and checks of the two weighting properties:
// gradient linearity and variance reduction of the weighted aggregate.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuselab/core.hpp"
#include "fuselab/tinylm.hpp"

namespace fuselab::analysis {

// Predicted quality of a response; the model-based scorer is avg_logprob.
using Scorer = std::function<double(const Prompt&, std::span<const Token>)>;

Scorer logprob_scorer(const tinylm::PolicyModel& model);

struct IntraRankResult {
    std::vector<double> per_source;
    std::vector<std::size_t> counts;
    double mean = 0.0;
};

// Per source: RM-best vs RM-worst response of each prompt; RM ties excluded.
IntraRankResult intra_rank_accuracy(const Scorer& scorer, std::span<const FusionSample> samples);

enum class CrossRepresentative { rm_best, random_index };

struct CrossRankResult {
    double accuracy = 0.0;
    std::size_t count = 0;
};

// Per prompt: one representative per source, then RM-best vs RM-worst among
// the representatives.
CrossRankResult cross_rank_accuracy(const Scorer& scorer, std::span<const FusionSample> samples,
                                    CrossRepresentative rep = CrossRepresentative::rm_best,
                                    std::uint64_t seed = 0);

struct RankAccuracyReport {
    double intra_rank = 0.0;
    double cross_rank = 0.0;
    std::vector<double> per_source_intra;
    std::vector<std::size_t> intra_counts;
    std::size_t cross_count = 0;
};

RankAccuracyReport rank_accuracy_report(const Scorer& scorer, std::span<const FusionSample> samples);

struct BiasVarianceReport {
    std::vector<double> abs_errors;
    double absolute_bias = 0.0;
    double variance = 0.0;
};

BiasVarianceReport bias_variance_report(std::span<const double> model_scores, std::span<const double> reference_scores);

struct PromptResponse {
    std::string prompt_id;
    TokenSeq prompt;
    TokenSeq response;
};

// Fraction of prompts where a's reward beats b's; ties count one half.
double pairwise_winrate(std::span<const PromptResponse> a, std::span<const PromptResponse> b,
                        const tinylm::RewardSpec& spec);

struct Prop1Report {
    double max_abs_error = 0.0;
    bool linearity_ok = false;
    // Set when every per-source gradient has the same norm.
    bool equal_norm_case = false;
    bool ranking_ok = true;
    double max_ratio_error = 0.0;
    std::vector<double> contribution_norms;
};

Prop1Report verify_prop1(std::span<const double> weights, std::span<const std::vector<double>> source_grads,
                         std::span<const double> aggregate_grad, double tolerance = 1e-10);

struct Prop2Config {
    double mu = 0.5;
    double sigma = 1.0;
    std::size_t num_draws = 1'000'000;
    std::uint64_t seed = 0;
};

struct Prop2Report {
    double sum_w2 = 0.0;
    double theoretical_variance = 0.0;
    double sample_mean = 0.0;
    double standard_error = 0.0;
    bool mean_ok = false;
    double sample_variance = 0.0;
    double variance_rel_error = 0.0;
    bool variance_ok = false;
    // nullopt when there is nothing to aggregate (a single nonzero weight).
    std::optional<bool> strict_reduction;

    bool ok() const { return mean_ok && variance_ok && strict_reduction.value_or(true); }
};

Prop2Report verify_prop2(std::span<const double> weights, const Prop2Config& cfg);

// Ratio of RMS variance-estimate errors at n_small and n_large draws over
// `replicates` independent replicate runs.
double prop2_error_ratio(std::span<const double> weights, double sigma, std::size_t n_small, std::size_t n_large,
                         std::size_t replicates, std::uint64_t seed);

} // namespace fuselab::analysis
