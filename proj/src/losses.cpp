// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/losses.hpp"

#include <cmath>

#include "fuselab/error.hpp"

namespace fuselab::losses {

void LossHyper::validate() const {
    if (!(beta_dpo > 0.0)) fail(ErrorKind::config, "beta_dpo must be > 0");
    if (!(beta_simpo > 0.0)) fail(ErrorKind::config, "beta_simpo must be > 0");
    if (!(gamma_simpo >= 0.0)) fail(ErrorKind::config, "gamma_simpo must be >= 0");
    if (!(kl_coeff >= 0.0)) fail(ErrorKind::config, "kl_coeff must be >= 0");
}

ad::Var sft_loss(ad::Tape& tape, const PolicyModel& policy, std::span<const Token> x, std::span<const Token> y) {
    if (y.empty()) fail(ErrorKind::size, "sft loss of an empty response");
    return tape.neg(tinylm::sequence_logprob_node(tape, policy, x, y));
}

ad::Var fusesft_loss(ad::Tape& tape, const PolicyModel& policy, std::span<const Token> x,
                     std::span<const WeightedSequence> responses) {
    if (responses.empty()) fail(ErrorKind::size, "weighted sft loss needs at least one response");
    double sum = 0.0;
    std::vector<ad::Var> terms;
    std::vector<double> weights;
    for (const auto& r : responses) {
        sum += r.weight;
        terms.push_back(sft_loss(tape, policy, x, r.tokens));
        weights.push_back(r.weight);
    }
    if (std::abs(sum - 1.0) > kWeightSumTolerance) {
        fail(ErrorKind::domain, "response weights sum to " + std::to_string(sum) + ", expected 1");
    }
    return tape.weighted_sum(terms, weights);
}

double dpo_implicit_reward(const PolicyModel& policy, const PolicyModel& reference, std::span<const Token> x,
                           std::span<const Token> y, double beta) {
    return beta * (tinylm::sequence_logprob(policy, x, y).total - tinylm::sequence_logprob(reference, x, y).total);
}

std::optional<ad::Var> dpo_loss(ad::Tape& tape, const PolicyModel& policy, const PolicyModel& reference,
                                const PreferencePair& pair, std::span<const Token> x, double beta) {
    if (pair.degenerate) return std::nullopt;
    const auto& yw = pair.chosen.response.tokens;
    const auto& yl = pair.rejected.response.tokens;
    const ad::Var lw = tinylm::sequence_logprob_node(tape, policy, x, yw);
    const ad::Var ll = tinylm::sequence_logprob_node(tape, policy, x, yl);
    const double ref_gap =
        tinylm::sequence_logprob(reference, x, yw).total - tinylm::sequence_logprob(reference, x, yl).total;
    // m = beta * ((lw - ref_w) - (ll - ref_l))
    const ad::Var margin = tape.weighted_sum({lw, ll, tape.constant(ref_gap)}, {beta, -beta, -beta});
    return tape.neg(tape.log_sigmoid(margin));
}

double simpo_reward(const PolicyModel& policy, std::span<const Token> x, std::span<const Token> y, double beta) {
    if (y.empty()) fail(ErrorKind::size, "SimPO reward of an empty response");
    return beta / static_cast<double>(y.size()) * tinylm::sequence_logprob(policy, x, y).total;
}

std::optional<ad::Var> simpo_loss(ad::Tape& tape, const PolicyModel& policy, const PreferencePair& pair,
                                  std::span<const Token> x, double beta, double gamma) {
    if (pair.degenerate) return std::nullopt;
    const auto& yw = pair.chosen.response.tokens;
    const auto& yl = pair.rejected.response.tokens;
    if (yw.empty() || yl.empty()) fail(ErrorKind::size, "SimPO loss of an empty response");
    const ad::Var lw = tinylm::sequence_logprob_node(tape, policy, x, yw);
    const ad::Var ll = tinylm::sequence_logprob_node(tape, policy, x, yl);
    const double cw = beta / static_cast<double>(yw.size());
    const double cl = beta / static_cast<double>(yl.size());
    const ad::Var arg = tape.weighted_sum({lw, ll, tape.constant(gamma)}, {cw, -cl, -1.0});
    return tape.neg(tape.log_sigmoid(arg));
}

double kl_adjusted_reward(double reward, const PolicyModel& policy, const PolicyModel& reference,
                          std::span<const Token> x, std::span<const Token> y, double kl_coeff) {
    if (kl_coeff == 0.0) return reward;
    const double log_ratio =
        tinylm::sequence_logprob(policy, x, y).total - tinylm::sequence_logprob(reference, x, y).total;
    return reward - kl_coeff * log_ratio;
}

std::vector<double> compute_rloo_advantages(std::span<const double> r) {
    if (r.size() < 2) fail(ErrorKind::size, "leave-one-out baseline needs k >= 2 samples");
    const double others = static_cast<double>(r.size() - 1);
    std::vector<double> adv(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        double rest = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (j != i) rest += r[j];
        }
        adv[i] = r[i] - rest / others;
    }
    return adv;
}

ad::Var rloo_surrogate(ad::Tape& tape, const PolicyModel& policy, std::span<const Token> x,
                       std::span<const RewardedResponse> responses, std::span<const double> advantages) {
    if (responses.size() < 2) fail(ErrorKind::size, "RLOO needs at least 2 responses");
    if (advantages.size() != responses.size()) fail(ErrorKind::size, "one advantage per response required");
    const double k = static_cast<double>(responses.size());
    std::vector<ad::Var> terms;
    std::vector<double> coeffs;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        terms.push_back(tinylm::sequence_logprob_node(tape, policy, x, responses[i].response.tokens));
        coeffs.push_back(-advantages[i] / k);
    }
    return tape.weighted_sum(terms, coeffs);
}

ad::Var rloo_loss(ad::Tape& tape, const PolicyModel& policy, const PolicyModel& reference, std::span<const Token> x,
                  std::span<const RewardedResponse> responses, const LossHyper& hyper) {
    if (responses.size() < 2) fail(ErrorKind::size, "RLOO needs at least 2 responses");
    std::vector<double> adjusted;
    adjusted.reserve(responses.size());
    for (const auto& r : responses) {
        adjusted.push_back(
            kl_adjusted_reward(r.reward, policy, reference, x, r.response.tokens, hyper.kl_coeff));
    }
    const auto adv = compute_rloo_advantages(adjusted);
    return rloo_surrogate(tape, policy, x, responses, adv);
}

FusePoTerms fusepo_loss(ad::Tape& tape, const PolicyModel& policy, const PolicyModel* reference,
                        const PreferenceBatch& batch, std::span<const Token> x, const LossHyper& hyper) {
    if (batch.method != hyper.method) {
        fail(ErrorKind::config, std::string("batch built for ") + to_string(batch.method) + " but loss is " +
                                    to_string(hyper.method));
    }
    const auto violations = validate_batch(batch);
    if (!violations.empty()) {
        fail(ErrorKind::config, "preference batch '" + batch.prompt_id + "': " + violations.front().field + " " +
                                    violations.front().rule);
    }
    if (hyper.method != PrefMethod::simpo && reference == nullptr) {
        fail(ErrorKind::config, std::string(to_string(hyper.method)) + " needs a reference model");
    }

    FusePoTerms out;
    std::vector<ad::Var> terms;
    std::vector<double> weights;
    for (const auto& entry : batch.entries) {
        std::optional<ad::Var> term;
        switch (hyper.method) {
        case PrefMethod::dpo:
            term = dpo_loss(tape, policy, *reference, std::get<PreferencePair>(entry.material), x, hyper.beta_dpo);
            break;
        case PrefMethod::simpo:
            term = simpo_loss(tape, policy, std::get<PreferencePair>(entry.material), x, hyper.beta_simpo,
                              hyper.gamma_simpo);
            break;
        case PrefMethod::rloo:
            term = rloo_loss(tape, policy, *reference, x, std::get<std::vector<RewardedResponse>>(entry.material),
                             hyper);
            break;
        }
        out.per_entry.push_back(term);
        if (term) {
            terms.push_back(*term);
            weights.push_back(entry.weight);
        } else {
            ++out.degenerate_count;
            out.degenerate_weight += entry.weight;
        }
    }
    out.loss = terms.empty() ? tape.constant(0.0) : tape.weighted_sum(terms, weights);
    return out;
}

} // namespace fuselab::losses
