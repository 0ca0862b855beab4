// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "fuselab/losses.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/verify.hpp"
#include "fuselab/weighting.hpp"
#include "helpers.hpp"

namespace fuselab::losses {
namespace {

using testing::rr;

tinylm::ArchConfig small_arch(std::int32_t vocab = 10) {
    tinylm::ArchConfig a;
    a.vocab_size = vocab;
    a.context_width = 4;
    a.embed_dim = 4;
    a.hidden_dims = {6};
    a.init_scale = 0.5;
    return a;
}

PolicyModel random_model(std::uint64_t seed) {
    auto a = small_arch();
    a.init_seed = seed;
    return tinylm::init_model(a);
}

PolicyModel constant_logits(std::vector<double> logits) {
    auto m = tinylm::zero_model(small_arch(static_cast<std::int32_t>(logits.size())));
    const auto& b = m.layout.at("output.bias");
    for (std::size_t i = 0; i < logits.size(); ++i) m.params[b.offset + i] = logits[i];
    return m;
}

double value(const PolicyModel& m, const tinylm::LossBuilder& build) { return tinylm::evaluate(m, build); }

std::vector<double> grad(const PolicyModel& m, const tinylm::LossBuilder& build) {
    return tinylm::backward(m, build).grad;
}

double neg_log_sigmoid(double z) { return std::log1p(std::exp(-z)); }

PreferencePair pair_of(TokenSeq chosen, TokenSeq rejected, bool degenerate = false) {
    return {"p", "s", rr(0.9, 0, std::move(chosen)), rr(0.1, 1, std::move(rejected)), degenerate};
}

const TokenSeq kX{2, 3};

TEST(Sft, UniformModel) {
    const auto m = tinylm::zero_model(small_arch(32));
    const TokenSeq y{4, 5, kEndToken};
    EXPECT_NEAR(value(m, [&](ad::Tape& t) { return sft_loss(t, m, kX, y); }), 3.0 * std::log(32.0), 1e-9);
}

TEST(FuseSft, CollapsesAndRecomposes) {
    const auto m = random_model(1);
    const TokenSeq y{4, 5, kEndToken};
    const double single = value(m, [&](ad::Tape& t) { return sft_loss(t, m, kX, y); });
    const std::vector<WeightedSequence> one{{1.0, y}};
    EXPECT_DOUBLE_EQ(value(m, [&](ad::Tape& t) { return fusesft_loss(t, m, kX, one); }), single);
    const std::vector<WeightedSequence> same{{0.2, y}, {0.5, y}, {0.3, y}};
    EXPECT_NEAR(value(m, [&](ad::Tape& t) { return fusesft_loss(t, m, kX, same); }), single, 1e-12);

    const std::vector<TokenSeq> ys{{1, kEndToken}, {7, 7, kEndToken}, {9}, {3, 4, 5, 6}};
    const std::vector<double> best{0.8, 0.3, 0.5, 0.65};
    const auto w = weighting::compute_model_weights(best, 0.1);
    std::vector<WeightedSequence> four;
    double oracle = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        four.push_back({w[i], ys[i]});
        oracle += w[i] * value(m, [&](ad::Tape& t) { return sft_loss(t, m, kX, ys[i]); });
    }
    EXPECT_NEAR(value(m, [&](ad::Tape& t) { return fusesft_loss(t, m, kX, four); }), oracle, 1e-12);
}

TEST(FuseSft, RejectsUnnormalisedWeights) {
    const auto m = random_model(1);
    const TokenSeq y{4};
    const std::vector<WeightedSequence> bad{{0.5, y}, {0.4, y}};
    ad::Tape t(m.params);
    EXPECT_FUSELAB_ERROR(fusesft_loss(t, m, kX, bad), ErrorKind::domain);
}

TEST(Dpo, ImplicitReward) {
    const auto pi = random_model(2);
    const auto ref = random_model(3);
    const TokenSeq y{5, 6, kEndToken};
    EXPECT_EQ(dpo_implicit_reward(pi, pi, kX, y, 0.1), 0.0);
    const double r = dpo_implicit_reward(pi, ref, kX, y, 0.1);
    EXPECT_NEAR(dpo_implicit_reward(pi, ref, kX, y, 0.2), 2.0 * r, 1e-15);
    const double oracle =
        0.1 * (tinylm::sequence_logprob(pi, kX, y).total - tinylm::sequence_logprob(ref, kX, y).total);
    EXPECT_DOUBLE_EQ(r, oracle);
}

TEST(Dpo, ZeroMarginIsLn2) {
    const auto pi = random_model(4);
    const auto p = pair_of({1, kEndToken}, {2, 3});
    EXPECT_NEAR(value(pi, [&](ad::Tape& t) { return *dpo_loss(t, pi, pi, p, kX, 0.01); }), std::log(2.0), 1e-9);
}

TEST(Dpo, UnitMarginAndSwap) {
    // Policy prefers token 1 by one nat over token 0; the reference is uniform.
    const auto pi = constant_logits({0.0, 1.0});
    const auto ref = constant_logits({0.0, 0.0});
    const auto p = pair_of({1}, {0});
    const double loss = value(pi, [&](ad::Tape& t) { return *dpo_loss(t, pi, ref, p, TokenSeq{1}, 1.0); });
    EXPECT_NEAR(loss, neg_log_sigmoid(1.0), 1e-12);
    EXPECT_NEAR(loss, 0.313262, 1e-6);
    const auto swapped = pair_of({0}, {1});
    const double loss2 = value(pi, [&](ad::Tape& t) { return *dpo_loss(t, pi, ref, swapped, TokenSeq{1}, 1.0); });
    EXPECT_NEAR(std::exp(-loss) + std::exp(-loss2), 1.0, 1e-12);
}

TEST(Dpo, DegenerateIsSkipped) {
    const auto pi = random_model(5);
    ad::Tape t(pi.params);
    EXPECT_FALSE(dpo_loss(t, pi, pi, pair_of({1}, {1}, true), kX, 0.1).has_value());
    EXPECT_FALSE(simpo_loss(t, pi, pair_of({1}, {1}, true), kX, 10.0, 3.0).has_value());
}

TEST(SimPo, Reward) {
    const auto m = constant_logits({std::log(std::exp(1.0) - 1.0), 0.0});
    const TokenSeq y{1, 1, 1, 1, 1};
    ASSERT_NEAR(tinylm::sequence_logprob(m, TokenSeq{1}, y).total, -5.0, 1e-12);
    EXPECT_NEAR(simpo_reward(m, TokenSeq{1}, y, 10.0), -10.0, 1e-11);
    EXPECT_FUSELAB_ERROR(simpo_reward(m, TokenSeq{1}, TokenSeq{}, 10.0), ErrorKind::size);
}

TEST(SimPo, EqualRewards) {
    const auto m = random_model(6);
    const auto p = pair_of({4, 5, kEndToken}, {4, 5, kEndToken});
    auto loss = [&](double gamma) {
        return value(m, [&](ad::Tape& t) { return *simpo_loss(t, m, p, kX, 10.0, gamma); });
    };
    EXPECT_NEAR(loss(0.0), std::log(2.0), 1e-12);
    EXPECT_NEAR(loss(3.0), neg_log_sigmoid(-3.0), 1e-12);
    EXPECT_NEAR(loss(3.0), 3.048587, 1e-6);
    EXPECT_LT(loss(1.0), loss(1.5));
}

TEST(SimPo, LengthNormalisedClosedForm) {
    const auto m = random_model(7);
    const TokenSeq yw{4, 5, kEndToken}, yl{6, kEndToken};
    const auto p = pair_of(yw, yl);
    const double beta = 2.0, gamma = 0.5;
    const double z = beta / 3.0 * tinylm::sequence_logprob(m, kX, yw).total -
                     beta / 2.0 * tinylm::sequence_logprob(m, kX, yl).total - gamma;
    EXPECT_NEAR(value(m, [&](ad::Tape& t) { return *simpo_loss(t, m, p, kX, beta, gamma); }), neg_log_sigmoid(z),
                1e-12);
}

TEST(Kl, AdjustedReward) {
    const auto pi = random_model(8);
    const auto ref = random_model(9);
    const TokenSeq y{3, kEndToken};
    EXPECT_EQ(kl_adjusted_reward(0.5, pi, pi, kX, y, 1e-2), 0.5);
    EXPECT_EQ(kl_adjusted_reward(0.5, pi, ref, kX, y, 0.0), 0.5);
    // Uniform reference over 10 tokens; the policy puts log(1/10) + 2 on token 1.
    const auto uni = constant_logits(std::vector<double>(10, 0.0));
    const double p1 = std::exp(2.0 - std::log(10.0));
    std::vector<double> logits(10, 0.0);
    logits[1] = std::log(9.0 * p1 / (1.0 - p1));
    const auto sharp = constant_logits(logits);
    EXPECT_NEAR(kl_adjusted_reward(0.5, sharp, uni, TokenSeq{1}, TokenSeq{1}, 1e-2), 0.48, 1e-12);
}

TEST(Rloo, Advantages) {
    EXPECT_EQ(compute_rloo_advantages(std::vector<double>{1.0, 0.0}), (std::vector<double>{1.0, -1.0}));
    for (double a : compute_rloo_advantages(std::vector<double>{0.3, 0.3, 0.3})) EXPECT_EQ(a, 0.0);
    EXPECT_FUSELAB_ERROR(compute_rloo_advantages(std::vector<double>{1.0}), ErrorKind::size);
    CounterRng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> r(4);
        for (double& v : r) v = rng.uniform();
        const auto adv = compute_rloo_advantages(r);
        double sum = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            double others = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                if (j != i) others += r[j];
            }
            EXPECT_NEAR(adv[i], r[i] - others / 3.0, 1e-15);
            sum += adv[i];
        }
        EXPECT_NEAR(sum, 0.0, 1e-12);
    }
}

TEST(Rloo, ZeroAdvantagesGiveZeroLossAndGradient) {
    const auto m = random_model(11);
    const std::vector<RewardedResponse> rs{rr(0.4, 0, {1, kEndToken}), rr(0.4, 1, {2, 3})};
    LossHyper h;
    h.kl_coeff = 0.0;
    const auto ev = tinylm::backward(m, [&](ad::Tape& t) { return rloo_loss(t, m, m, kX, rs, h); });
    EXPECT_EQ(ev.value, 0.0);
    for (double g : ev.grad) EXPECT_EQ(g, 0.0);
}

TEST(Rloo, TwoSampleRecomposition) {
    const auto m = random_model(12);
    const auto ref = random_model(13);
    const TokenSeq y1{1, 2, kEndToken}, y2{4, kEndToken};
    const std::vector<RewardedResponse> rs{rr(0.9, 0, y1), rr(0.2, 1, y2)};
    LossHyper h;
    const double r1 = kl_adjusted_reward(0.9, m, ref, kX, y1, h.kl_coeff);
    const double r2 = kl_adjusted_reward(0.2, m, ref, kX, y2, h.kl_coeff);
    const double a = r1 - r2;
    const auto g = grad(m, [&](ad::Tape& t) { return rloo_loss(t, m, ref, kX, rs, h); });
    // grad sft_loss = -grad log pi.
    const auto s1 = grad(m, [&](ad::Tape& t) { return sft_loss(t, m, kX, y1); });
    const auto s2 = grad(m, [&](ad::Tape& t) { return sft_loss(t, m, kX, y2); });
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], (a / 2.0) * (s1[i] - s2[i]), 1e-12);
}

TEST(Rloo, FrozenAdvantagesPassFiniteDifferences) {
    const auto c = verify::make_grad_case("rloo", 5);
    EXPECT_LE(verify::check_gradient(c).max_rel_error, 1e-4);
}

PreferenceBatch dpo_batch(const std::vector<double>& weights, std::uint64_t seed) {
    CounterRng rng(seed);
    PreferenceBatch b;
    b.prompt_id = "p";
    b.method = PrefMethod::dpo;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        TokenSeq yw{static_cast<Token>(1 + rng() % 9), kEndToken};
        TokenSeq yl{static_cast<Token>(1 + rng() % 9), static_cast<Token>(1 + rng() % 9)};
        PreferenceEntry e;
        e.source_id = "s" + std::to_string(i);
        e.weight = weights[i];
        e.material = PreferencePair{"p", e.source_id, rr(0.8, 0, yw, e.source_id), rr(0.2, 1, yl, e.source_id), false};
        b.entries.push_back(e);
    }
    return b;
}

double inner_dpo(const PolicyModel& pi, const PolicyModel& ref, const PreferenceEntry& e, double beta) {
    return tinylm::evaluate(pi, [&](ad::Tape& t) {
        return *dpo_loss(t, pi, ref, std::get<PreferencePair>(e.material), kX, beta);
    });
}

TEST(FusePo, SingleEntryCollapses) {
    const auto pi = random_model(14);
    const auto ref = random_model(15);
    const auto b = dpo_batch({1.0}, 1);
    LossHyper h;
    EXPECT_EQ(value(pi, [&](ad::Tape& t) { return fusepo_loss(t, pi, &ref, b, kX, h).loss; }),
              inner_dpo(pi, ref, b.entries[0], h.beta_dpo));
}

TEST(FusePo, UniformWeightsGiveMean) {
    const auto pi = random_model(16);
    const auto ref = random_model(17);
    const auto b = dpo_batch({0.25, 0.25, 0.25, 0.25}, 2);
    LossHyper h;
    double mean = 0.0;
    for (const auto& e : b.entries) mean += inner_dpo(pi, ref, e, h.beta_dpo) / 4.0;
    EXPECT_NEAR(value(pi, [&](ad::Tape& t) { return fusepo_loss(t, pi, &ref, b, kX, h).loss; }), mean, 1e-12);
}

TEST(FusePo, WeightedRecomposition) {
    const auto pi = random_model(18);
    const auto ref = random_model(19);
    const auto w = weighting::compute_model_weights(std::vector<double>{0.9, 0.85, 0.6, 0.88}, 5e-3 * 10);
    const auto b = dpo_batch(w, 3);
    LossHyper h;
    h.beta_dpo = 0.5;
    double oracle = 0.0;
    for (const auto& e : b.entries) oracle += e.weight * inner_dpo(pi, ref, e, h.beta_dpo);
    EXPECT_NEAR(value(pi, [&](ad::Tape& t) { return fusepo_loss(t, pi, &ref, b, kX, h).loss; }), oracle, 1e-12);
}

TEST(FusePo, DegenerateEntriesAreCounted) {
    const auto pi = random_model(20);
    auto b = dpo_batch({0.6, 0.4}, 4);
    std::get<PreferencePair>(b.entries[1].material).degenerate = true;
    std::get<PreferencePair>(b.entries[1].material).rejected.reward = 0.8;
    LossHyper h;
    ad::Tape t(pi.params);
    const auto terms = fusepo_loss(t, pi, &pi, b, kX, h);
    EXPECT_EQ(terms.degenerate_count, 1u);
    EXPECT_DOUBLE_EQ(terms.degenerate_weight, 0.4);
    EXPECT_FALSE(terms.per_entry[1].has_value());
    EXPECT_NEAR(t.scalar(terms.loss), 0.6 * std::log(2.0), 1e-12);
}

TEST(FusePo, MismatchesRejected) {
    const auto pi = random_model(21);
    const auto b = dpo_batch({1.0}, 5);
    LossHyper h;
    h.method = PrefMethod::simpo;
    ad::Tape t(pi.params);
    EXPECT_FUSELAB_ERROR(fusepo_loss(t, pi, &pi, b, kX, h), ErrorKind::config);
    h.method = PrefMethod::dpo;
    EXPECT_FUSELAB_ERROR(fusepo_loss(t, pi, nullptr, b, kX, h), ErrorKind::config);
}

TEST(GradCheck, EveryLossPasses) {
    for (const auto& name : verify::loss_names()) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto c = verify::make_grad_case(name, seed);
            const auto r = verify::check_gradient(c);
            EXPECT_LE(r.max_rel_error, verify::kGradTolerance) << name << " seed " << seed;
            EXPECT_GT(r.grad_norm, 0.0) << name;
        }
    }
}

TEST(GradCheck, InjectedFaultIsCaught) {
    const auto c = verify::make_grad_case("fusesft", 1);
    EXPECT_GT(verify::check_gradient(c, 1e-3).max_rel_error, verify::kGradTolerance);
}

} // namespace
} // namespace fuselab::losses
