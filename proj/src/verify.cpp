// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-checks behind `fuselab verify`: finite-difference gradient checks for
// every loss, the two weighting properties, and closed-form loss values.

#include <algorithm>
#include <cmath>
#include <variant>

#include "fuselab/error.hpp"
#include "fuselab/losses.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/verify.hpp"
#include "fuselab/weighting.hpp"

namespace fuselab::verify {

namespace {

TokenSeq random_seq(CounterRng& rng, std::int32_t vocab, std::size_t min_len, std::size_t max_len, bool terminate) {
    const std::size_t len = min_len + rng() % (max_len - min_len + 1);
    TokenSeq out;
    for (std::size_t i = 0; i < len; ++i) out.push_back(1 + static_cast<Token>(rng() % (vocab - 1)));
    if (terminate) out.push_back(kEndToken);
    return out;
}

RewardedResponse random_response(CounterRng& rng, std::int32_t vocab, std::int32_t index) {
    RewardedResponse r;
    r.response.tokens = random_seq(rng, vocab, 1, 5, rng() % 2 == 0);
    r.response.sample_index = index;
    r.reward = rng.uniform();
    return r;
}

PreferenceBatch random_batch(CounterRng& rng, PrefMethod method, std::int32_t vocab, std::size_t entries) {
    PreferenceBatch batch;
    batch.prompt_id = "case";
    batch.method = method;
    std::vector<double> raw;
    for (std::size_t i = 0; i < entries; ++i) raw.push_back(rng.uniform());
    const auto w = weighting::compute_model_weights(raw, 0.2);
    for (std::size_t i = 0; i < entries; ++i) {
        PreferenceEntry e;
        e.source_id = "s" + std::to_string(i);
        e.weight = w[i];
        std::vector<RewardedResponse> rs;
        for (std::int32_t n = 0; n < 3; ++n) {
            rs.push_back(random_response(rng, vocab, n));
            rs.back().response.source_id = e.source_id;
        }
        if (method == PrefMethod::rloo) {
            e.material = rs;
        } else {
            e.material = form_preference_pair(rs, batch.prompt_id, e.source_id);
        }
        batch.entries.push_back(std::move(e));
    }
    return batch;
}

} // namespace

tinylm::ArchConfig gradcheck_arch() {
    tinylm::ArchConfig a;
    a.vocab_size = 12;
    a.context_width = 4;
    a.embed_dim = 6;
    a.hidden_dims = {12};
    a.init_scale = 0.5;
    return a;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    if (analytic.size() != numeric.size()) fail(ErrorKind::size, "gradient lengths differ");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

const std::vector<std::string>& loss_names() {
    static const std::vector<std::string> names{"sft",       "fusesft",      "dpo",          "simpo",
                                                "rloo",      "fusepo.dpo",   "fusepo.simpo", "fusepo.rloo"};
    return names;
}

GradCase make_grad_case(const std::string& loss, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, {stable_hash(loss)}));
    GradCase c;
    c.name = loss;
    tinylm::ArchConfig arch = gradcheck_arch();
    arch.init_seed = rng();
    c.policy = tinylm::init_model(arch);
    arch.init_seed = rng();
    c.reference = tinylm::init_model(arch);
    c.prompt = random_seq(rng, arch.vocab_size, 2, 5, false);
    const std::int32_t v = arch.vocab_size;
    // Betas are moderated so the sigmoid terms are not saturated or flat.
    losses::LossHyper h;
    h.beta_dpo = 1.0;
    h.beta_simpo = 1.0;
    h.gamma_simpo = 0.3;

    if (loss == "sft") {
        auto y = random_seq(rng, v, 1, 6, true);
        c.loss = [y](ad::Tape& t, const GradCase& g) { return losses::sft_loss(t, g.policy, g.prompt, y); };
    } else if (loss == "fusesft") {
        std::vector<TokenSeq> ys;
        std::vector<double> raw;
        for (int i = 0; i < 3; ++i) {
            ys.push_back(random_seq(rng, v, 1, 6, true));
            raw.push_back(rng.uniform());
        }
        const auto w = weighting::compute_model_weights(raw, 0.3);
        c.loss = [ys, w](ad::Tape& t, const GradCase& g) {
            std::vector<losses::WeightedSequence> seqs;
            for (std::size_t i = 0; i < ys.size(); ++i) seqs.push_back({w[i], ys[i]});
            return losses::fusesft_loss(t, g.policy, g.prompt, seqs);
        };
    } else if (loss == "dpo" || loss == "simpo") {
        std::vector<RewardedResponse> rs{random_response(rng, v, 0), random_response(rng, v, 1)};
        rs[1].reward = rs[0].reward + 0.25;
        const auto pair = form_preference_pair(rs);
        if (loss == "dpo") {
            c.loss = [pair, h](ad::Tape& t, const GradCase& g) {
                return *losses::dpo_loss(t, g.policy, g.reference, pair, g.prompt, h.beta_dpo);
            };
        } else {
            c.loss = [pair, h](ad::Tape& t, const GradCase& g) {
                return *losses::simpo_loss(t, g.policy, pair, g.prompt, h.beta_simpo, h.gamma_simpo);
            };
        }
    } else if (loss == "rloo") {
        std::vector<RewardedResponse> rs;
        for (std::int32_t n = 0; n < 4; ++n) rs.push_back(random_response(rng, v, n));
        c.loss = [rs, h](ad::Tape& t, const GradCase& g) {
            return losses::rloo_loss(t, g.policy, g.reference, g.prompt, rs, h);
        };
    } else if (loss.rfind("fusepo.", 0) == 0) {
        h.method = parse_pref_method(loss.substr(7));
        const auto batch = random_batch(rng, h.method, v, 3);
        c.loss = [batch, h](ad::Tape& t, const GradCase& g) {
            return losses::fusepo_loss(t, g.policy, &g.reference, batch, g.prompt, h).loss;
        };
    } else {
        fail(ErrorKind::config, "unknown loss '" + loss + "'");
    }
    return c;
}

GradResult check_gradient(const GradCase& c, double fault) {
    const tinylm::LossBuilder build = [&c](ad::Tape& t) { return c.loss(t, c); };
    auto analytic = tinylm::backward(c.policy, build).grad;
    if (fault != 0.0) analytic[analytic.size() / 2] += fault;
    const auto numeric = tinylm::finite_diff_gradient(c.policy, build, kFiniteDiffStep);
    double norm = 0.0;
    for (double g : analytic) norm += g * g;
    return {max_relative_error(analytic, numeric, kGradFloor), std::sqrt(norm)};
}

namespace {

std::vector<double> entry_gradient(const tinylm::PolicyModel& policy, const tinylm::PolicyModel& reference,
                                   const PreferenceEntry& e, const TokenSeq& x, const losses::LossHyper& h) {
    const tinylm::LossBuilder build = [&](ad::Tape& t) -> ad::Var {
        if (const auto* pair = std::get_if<PreferencePair>(&e.material)) {
            const auto node = h.method == PrefMethod::dpo
                                  ? losses::dpo_loss(t, policy, reference, *pair, x, h.beta_dpo)
                                  : losses::simpo_loss(t, policy, *pair, x, h.beta_simpo, h.gamma_simpo);
            return node ? *node : t.constant(0.0);
        }
        return losses::rloo_loss(t, policy, reference, x, std::get<std::vector<RewardedResponse>>(e.material), h);
    };
    return tinylm::backward(policy, build).grad;
}

LinearityCase linearity_from(const tinylm::PolicyModel& policy, const tinylm::PolicyModel& reference,
                             const PreferenceBatch& batch, const TokenSeq& x, const losses::LossHyper& h) {
    LinearityCase out;
    for (const auto& e : batch.entries) {
        out.weights.push_back(e.weight);
        out.per_entry.push_back(entry_gradient(policy, reference, e, x, h));
    }
    out.aggregate = tinylm::backward(policy, [&](ad::Tape& t) {
                        return losses::fusepo_loss(t, policy, &reference, batch, x, h).loss;
                    }).grad;
    return out;
}

struct Models {
    tinylm::PolicyModel policy;
    tinylm::PolicyModel reference;
    TokenSeq prompt;
};

Models random_models(CounterRng& rng) {
    tinylm::ArchConfig arch = gradcheck_arch();
    arch.init_seed = rng();
    auto policy = tinylm::init_model(arch);
    arch.init_seed = rng();
    auto reference = tinylm::init_model(arch);
    auto prompt = random_seq(rng, arch.vocab_size, 2, 5, false);
    return {std::move(policy), std::move(reference), std::move(prompt)};
}

losses::LossHyper default_hyper(PrefMethod method) {
    losses::LossHyper h;
    h.method = method;
    return h;
}

} // namespace

LinearityCase make_linearity_case(PrefMethod method, std::size_t entries, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, {0x11, static_cast<std::uint64_t>(method)}));
    const auto m = random_models(rng);
    const auto batch = random_batch(rng, method, m.policy.arch.vocab_size, entries);
    return linearity_from(m.policy, m.reference, batch, m.prompt, default_hyper(method));
}

LinearityCase make_equal_norm_case(PrefMethod method, std::span<const double> weights, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, {0x12, static_cast<std::uint64_t>(method)}));
    const auto m = random_models(rng);
    auto batch = random_batch(rng, method, m.policy.arch.vocab_size, 1);
    const auto material = batch.entries.front().material;
    batch.entries.clear();
    for (std::size_t i = 0; i < weights.size(); ++i) {
        batch.entries.push_back({"s" + std::to_string(i), weights[i], material});
    }
    return linearity_from(m.policy, m.reference, batch, m.prompt, default_hyper(method));
}

double dpo_zero_margin_loss(std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, {0x13}));
    const auto m = random_models(rng);
    std::vector<RewardedResponse> rs{random_response(rng, 12, 0), random_response(rng, 12, 1)};
    rs[0].reward = 0.9;
    rs[1].reward = 0.1;
    const auto pair = form_preference_pair(rs);
    ad::Tape tape(m.policy.params);
    return tape.scalar(*losses::dpo_loss(tape, m.policy, m.policy, pair, m.prompt, 1e-2));
}

double simpo_equal_reward_loss(double beta, double gamma, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, {0x14}));
    const auto m = random_models(rng);
    auto chosen = random_response(rng, 12, 0);
    auto rejected = chosen;
    rejected.response.sample_index = 1;
    chosen.reward = 0.9;
    rejected.reward = 0.1;
    const PreferencePair pair{"case", "s0", chosen, rejected, false};
    ad::Tape tape(m.policy.params);
    return tape.scalar(*losses::simpo_loss(tape, m.policy, pair, m.prompt, beta, gamma));
}

} // namespace fuselab::verify
