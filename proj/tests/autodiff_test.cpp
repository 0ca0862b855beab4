// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "fuselab/autodiff.hpp"
#include "fuselab/losses.hpp"
#include "fuselab/tinylm.hpp"
#include "helpers.hpp"

namespace fuselab {
namespace {

tinylm::PolicyModel small_model(std::uint64_t seed) {
    tinylm::ArchConfig a;
    a.vocab_size = 10;
    a.context_width = 4;
    a.embed_dim = 5;
    a.hidden_dims = {8};
    a.init_seed = seed;
    a.init_scale = 0.5;
    return tinylm::init_model(a);
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-6}));
    }
    return worst;
}

TEST(Tape, ConstantLossHasZeroGradient) {
    const auto m = small_model(1);
    const auto g = tinylm::backward(m, [](ad::Tape& t) { return t.constant(3.0); }).grad;
    ASSERT_EQ(g.size(), m.param_count());
    for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Tape, ElementaryDerivatives) {
    const std::vector<double> p{0.3, -1.2};
    ad::Tape t(p);
    const std::vector<std::size_t> rows{0, 1};
    const auto x = t.gather(0, 1, rows);
    const auto a = t.pick(t.tanh(x), 0);
    const auto b = t.log_sigmoid(t.pick(x, 1));
    const auto loss = t.weighted_sum({a, b}, {2.0, -1.0});
    const auto g = t.gradient(loss);
    const double th = std::tanh(0.3);
    EXPECT_NEAR(g[0], 2.0 * (1.0 - th * th), 1e-15);
    EXPECT_NEAR(g[1], -(1.0 - 1.0 / (1.0 + std::exp(1.2))), 1e-15);
    EXPECT_NEAR(t.scalar(loss), 2.0 * th + std::log1p(std::exp(1.2)), 1e-15);
}

TEST(Tape, LogSoftmaxGradientSumsToZero) {
    const std::vector<double> p{0.5, -0.25, 1.0, 2.0};
    ad::Tape t(p);
    const std::vector<std::size_t> rows{0, 1, 2, 3};
    const auto ls = t.log_softmax(t.gather(0, 1, rows));
    const auto g = t.gradient(t.pick(ls, 2));
    double s = 0.0;
    for (double v : g) s += v;
    EXPECT_NEAR(s, 0.0, 1e-15);
}

TEST(Tape, NonFiniteNodeIsNamed) {
    const std::vector<double> p{std::numeric_limits<double>::infinity()};
    ad::Tape t(p);
    const std::vector<std::size_t> rows{0};
    const auto loss = t.pick(t.gather(0, 1, rows), 0);
    try {
        (void)t.gradient(t.scale(loss, 2.0));
        FAIL() << "expected numeric error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
        EXPECT_NE(std::string(e.what()).find("node"), std::string::npos) << e.what();
    }
}

TEST(Backward, SftMatchesFiniteDifferences) {
    const auto m = small_model(2);
    ASSERT_LE(m.param_count(), 5000u);
    const TokenSeq x{3, 4}, y{5, 6, kEndToken};
    const tinylm::LossBuilder build = [&](ad::Tape& t) { return losses::sft_loss(t, m, x, y); };
    const auto analytic = tinylm::backward(m, build).grad;
    const auto numeric = tinylm::finite_diff_gradient(m, build, 1e-5);
    EXPECT_LE(max_rel(analytic, numeric), 1e-4);
}

TEST(Backward, LinearInLosses) {
    const auto m = small_model(3);
    const TokenSeq x{1, 2}, y1{3, kEndToken}, y2{7, 8, 9};
    const double a = 0.7, b = -1.9;
    const auto g1 = tinylm::backward(m, [&](ad::Tape& t) { return losses::sft_loss(t, m, x, y1); }).grad;
    const auto g2 = tinylm::backward(m, [&](ad::Tape& t) { return losses::sft_loss(t, m, x, y2); }).grad;
    const auto g = tinylm::backward(m, [&](ad::Tape& t) {
                       return t.weighted_sum({losses::sft_loss(t, m, x, y1), losses::sft_loss(t, m, x, y2)}, {a, b});
                   }).grad;
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], a * g1[i] + b * g2[i], 1e-12);
}

TEST(FiniteDiff, SecondOrderAccurate) {
    const auto m = small_model(4);
    // Sum of log-sigmoids: the exact gradient is 1 - sigmoid(theta).
    const tinylm::LossBuilder build = [&m](ad::Tape& t) {
        std::vector<std::size_t> rows(m.param_count());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        const auto v = t.gather(0, 1, rows);
        std::vector<ad::Var> terms;
        for (std::size_t i = 0; i < rows.size(); ++i) terms.push_back(t.log_sigmoid(t.pick(v, i)));
        return t.sum(terms);
    };
    std::vector<double> exact;
    for (double th : m.params) exact.push_back(1.0 - 1.0 / (1.0 + std::exp(-th)));
    auto err = [&](double h) {
        const auto g = tinylm::finite_diff_gradient(m, build, h);
        double worst = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - exact[i]));
        return worst;
    };
    EXPECT_LE(max_rel(tinylm::backward(m, build).grad, exact), 1e-12);
    const double coarse = err(2e-2);
    const double fine = err(1e-2);
    EXPECT_GT(coarse / fine, 3.5);
    EXPECT_LT(coarse / fine, 4.5);
}

} // namespace
} // namespace fuselab
