// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Supervised, preference and policy-gradient losses built as tape nodes.
// Preference losses return std::nullopt for degenerate pairs: the caller
// skips them rather than treating them as an error.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fuselab/autodiff.hpp"
#include "fuselab/core.hpp"
#include "fuselab/tinylm.hpp"

namespace fuselab::losses {

using tinylm::PolicyModel;

struct LossHyper {
    double beta_dpo = 1e-2;
    double beta_simpo = 10.0;
    double gamma_simpo = 3.0;
    double kl_coeff = 1e-2;
    PrefMethod method = PrefMethod::dpo;

    void validate() const;
};

struct WeightedSequence {
    double weight = 0.0;
    std::span<const Token> tokens;
};

// -log pi(y|x)
ad::Var sft_loss(ad::Tape& tape, const PolicyModel& policy, std::span<const Token> x, std::span<const Token> y);

// sum_i w_i * sft_loss(y_i); weights must sum to 1.
ad::Var fusesft_loss(ad::Tape& tape, const PolicyModel& policy, std::span<const Token> x,
                     std::span<const WeightedSequence> responses);

// beta * (log pi(y|x) - log pi_ref(y|x))
double dpo_implicit_reward(const PolicyModel& policy, const PolicyModel& reference, std::span<const Token> x,
                           std::span<const Token> y, double beta);

std::optional<ad::Var> dpo_loss(ad::Tape& tape, const PolicyModel& policy, const PolicyModel& reference,
                                const PreferencePair& pair, std::span<const Token> x, double beta);

// (beta / |y|) * log pi(y|x)
double simpo_reward(const PolicyModel& policy, std::span<const Token> x, std::span<const Token> y, double beta);

std::optional<ad::Var> simpo_loss(ad::Tape& tape, const PolicyModel& policy, const PreferencePair& pair,
                                  std::span<const Token> x, double beta, double gamma);

// r - kl_coeff * (log pi(y|x) - log pi_ref(y|x)); carries no gradient.
double kl_adjusted_reward(double reward, const PolicyModel& policy, const PolicyModel& reference,
                          std::span<const Token> x, std::span<const Token> y, double kl_coeff);

// adv_i = r_i - mean_{j != i} r_j
std::vector<double> compute_rloo_advantages(std::span<const double> adjusted_rewards);

// -(1/k) sum_i adv_i * log pi(y_i|x) with advantages held constant.
ad::Var rloo_loss(ad::Tape& tape, const PolicyModel& policy, const PolicyModel& reference, std::span<const Token> x,
                  std::span<const RewardedResponse> responses, const LossHyper& hyper);

// Same surrogate with caller-supplied advantages.
ad::Var rloo_surrogate(ad::Tape& tape, const PolicyModel& policy, std::span<const Token> x,
                       std::span<const RewardedResponse> responses, std::span<const double> advantages);

struct FusePoTerms {
    ad::Var loss;
    // One node per entry; nullopt where the entry was skipped as degenerate.
    std::vector<std::optional<ad::Var>> per_entry;
    std::size_t degenerate_count = 0;
    double degenerate_weight = 0.0;
};

// sum_i w_i * L_pref(entry_i). `reference` may be null for SimPO.
FusePoTerms fusepo_loss(ad::Tape& tape, const PolicyModel& policy, const PolicyModel* reference,
                        const PreferenceBatch& batch, std::span<const Token> x, const LossHyper& hyper);

} // namespace fuselab::losses
