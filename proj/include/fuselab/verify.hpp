// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gradient checks and closed-form loss checks shared by `fuselab verify`
// and the acceptance suite.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fuselab/autodiff.hpp"
#include "fuselab/core.hpp"
#include "fuselab/tinylm.hpp"

namespace fuselab::verify {

// Central-difference step and the magnitude below which gradient entries are
// compared absolutely rather than relatively.
inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr double kGradFloor = 1e-6;
inline constexpr double kGradTolerance = 1e-4;

// Small model used for gradient checks.
tinylm::ArchConfig gradcheck_arch();

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor);

// sft, fusesft, dpo, simpo, rloo, fusepo.dpo, fusepo.simpo, fusepo.rloo
const std::vector<std::string>& loss_names();

struct GradCase {
    std::string name;
    tinylm::PolicyModel policy;
    tinylm::PolicyModel reference;
    TokenSeq prompt;
    // Builds the loss on `tape`; constant terms read the case's own models.
    std::function<ad::Var(ad::Tape&, const GradCase&)> loss;
};

GradCase make_grad_case(const std::string& loss, std::uint64_t seed);

struct GradResult {
    double max_rel_error = 0.0;
    double grad_norm = 0.0;
};

// `fault` is added to one analytic gradient entry before comparison.
GradResult check_gradient(const GradCase& c, double fault = 0.0);

// Aggregate fusepo gradient and the per-entry gradients of one random case.
struct LinearityCase {
    std::vector<double> weights;
    std::vector<std::vector<double>> per_entry;
    std::vector<double> aggregate;
};

LinearityCase make_linearity_case(PrefMethod method, std::size_t entries, std::uint64_t seed);

// Two entries carrying the same pair, so their per-entry gradients share a norm.
LinearityCase make_equal_norm_case(PrefMethod method, std::span<const double> weights, std::uint64_t seed);

// DPO loss with policy == reference (zero margin).
double dpo_zero_margin_loss(std::uint64_t seed);

// SimPO loss where chosen and rejected have equal length-normalised rewards.
double simpo_equal_reward_loss(double beta, double gamma, std::uint64_t seed);

} // namespace fuselab::verify
