// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fuselab/error.hpp"
#include "fuselab/rng.hpp"

namespace fuselab::analysis {

Scorer logprob_scorer(const tinylm::PolicyModel& model) {
    return [&model](const Prompt& p, std::span<const Token> y) { return tinylm::avg_logprob(model, p.text, y); };
}

IntraRankResult intra_rank_accuracy(const Scorer& scorer, std::span<const FusionSample> samples) {
    if (samples.empty()) fail(ErrorKind::size, "intra-rank accuracy over an empty evaluation set");
    const std::size_t k = samples.front().per_source.size();
    std::vector<std::size_t> correct(k, 0);
    IntraRankResult out;
    out.counts.assign(k, 0);
    for (const auto& s : samples) {
        if (s.per_source.size() != k) fail(ErrorKind::size, "evaluation samples disagree on the source count");
        for (std::size_t i = 0; i < k; ++i) {
            const auto& responses = s.per_source[i].responses;
            if (responses.size() < 2) fail(ErrorKind::size, "intra-rank needs >= 2 responses per source");
            const auto pair = form_preference_pair(responses);
            if (pair.degenerate) continue;
            ++out.counts[i];
            if (scorer(s.prompt, pair.chosen.response.tokens) > scorer(s.prompt, pair.rejected.response.tokens)) {
                ++correct[i];
            }
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (out.counts[i] == 0) {
            fail(ErrorKind::size, "source " + std::to_string(i) + " has no prompt with distinct rewards");
        }
        out.per_source.push_back(static_cast<double>(correct[i]) / static_cast<double>(out.counts[i]));
    }
    double sum = 0.0;
    for (double a : out.per_source) sum += a;
    out.mean = sum / static_cast<double>(k);
    return out;
}

CrossRankResult cross_rank_accuracy(const Scorer& scorer, std::span<const FusionSample> samples,
                                    CrossRepresentative rep, std::uint64_t seed) {
    if (samples.empty()) fail(ErrorKind::size, "cross-rank accuracy over an empty evaluation set");
    std::size_t correct = 0;
    CrossRankResult out;
    for (std::size_t p = 0; p < samples.size(); ++p) {
        const auto& s = samples[p];
        if (s.per_source.size() < 2) fail(ErrorKind::size, "cross-rank needs at least 2 sources");
        std::vector<RewardedResponse> reps;
        for (std::size_t i = 0; i < s.per_source.size(); ++i) {
            const auto& e = s.per_source[i];
            if (rep == CrossRepresentative::rm_best) {
                reps.push_back(e.responses.at(argmax_reward(e.responses)));
            } else {
                CounterRng rng(derive_seed(seed, {p, i}));
                reps.push_back(e.responses.at(rng() % e.responses.size()));
            }
            // Pair tie-breaks run on sample_index; make it the source position here.
            reps.back().response.sample_index = static_cast<std::int32_t>(i);
        }
        const auto pair = form_preference_pair(reps);
        if (pair.degenerate) continue;
        ++out.count;
        if (scorer(s.prompt, pair.chosen.response.tokens) > scorer(s.prompt, pair.rejected.response.tokens)) {
            ++correct;
        }
    }
    if (out.count == 0) fail(ErrorKind::size, "cross-rank accuracy has an empty denominator (all rewards tied)");
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.count);
    return out;
}

RankAccuracyReport rank_accuracy_report(const Scorer& scorer, std::span<const FusionSample> samples) {
    const auto intra = intra_rank_accuracy(scorer, samples);
    const auto cross = cross_rank_accuracy(scorer, samples);
    return {intra.mean, cross.accuracy, intra.per_source, intra.counts, cross.count};
}

BiasVarianceReport bias_variance_report(std::span<const double> model_scores, std::span<const double> reference_scores) {
    if (model_scores.size() != reference_scores.size()) {
        fail(ErrorKind::size, "bias/variance needs equal-length score lists (" + std::to_string(model_scores.size()) +
                                  " vs " + std::to_string(reference_scores.size()) + ")");
    }
    if (model_scores.empty()) fail(ErrorKind::size, "bias/variance over empty score lists");
    BiasVarianceReport r;
    for (std::size_t i = 0; i < model_scores.size(); ++i) {
        r.abs_errors.push_back(std::abs(model_scores[i] - reference_scores[i]));
    }
    const double n = static_cast<double>(r.abs_errors.size());
    for (double e : r.abs_errors) r.absolute_bias += e;
    r.absolute_bias /= n;
    for (double e : r.abs_errors) r.variance += (e - r.absolute_bias) * (e - r.absolute_bias);
    r.variance /= n;
    return r;
}

double pairwise_winrate(std::span<const PromptResponse> a, std::span<const PromptResponse> b,
                        const tinylm::RewardSpec& spec) {
    if (a.size() != b.size()) fail(ErrorKind::size, "win rate needs the same prompt list for both models");
    if (a.empty()) fail(ErrorKind::size, "win rate over an empty prompt list");
    double wins = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].prompt_id != b[i].prompt_id || a[i].prompt != b[i].prompt) {
            fail(ErrorKind::domain, "prompt mismatch at position " + std::to_string(i));
        }
        const double ra = tinylm::reward_score(spec, a[i].prompt, a[i].response);
        const double rb = tinylm::reward_score(spec, b[i].prompt, b[i].response);
        if (ra > rb) {
            wins += 1.0;
        } else if (ra == rb) {
            wins += 0.5;
        }
    }
    return wins / static_cast<double>(a.size());
}

Prop1Report verify_prop1(std::span<const double> weights, std::span<const std::vector<double>> source_grads,
                         std::span<const double> aggregate_grad, double tolerance) {
    if (weights.size() != source_grads.size()) fail(ErrorKind::size, "one gradient per weight required");
    for (const auto& g : source_grads) {
        if (g.size() != aggregate_grad.size()) fail(ErrorKind::size, "gradient vectors differ in length");
    }
    Prop1Report r;
    for (std::size_t j = 0; j < aggregate_grad.size(); ++j) {
        double expect = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) expect += weights[i] * source_grads[i][j];
        r.max_abs_error = std::max(r.max_abs_error, std::abs(expect - aggregate_grad[j]));
    }
    r.linearity_ok = r.max_abs_error <= tolerance;

    std::vector<double> norms;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        double s = 0.0;
        for (double v : source_grads[i]) s += v * v;
        norms.push_back(std::sqrt(s));
        r.contribution_norms.push_back(std::abs(weights[i]) * norms.back());
    }
    const double ref = norms.empty() ? 0.0 : norms.front();
    r.equal_norm_case = ref > 0.0 && std::all_of(norms.begin(), norms.end(), [&](double n) {
        return std::abs(n - ref) <= 1e-9 * ref;
    });
    if (r.equal_norm_case) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            for (std::size_t j = 0; j < weights.size(); ++j) {
                if (weights[i] > weights[j] && !(r.contribution_norms[i] > r.contribution_norms[j])) {
                    r.ranking_ok = false;
                }
            }
            // contribution_i / norm = w_i
            r.max_ratio_error = std::max(r.max_ratio_error, std::abs(r.contribution_norms[i] / ref - weights[i]));
        }
    }
    return r;
}

namespace {

struct MomentEstimate {
    double mean = 0.0;
    double variance = 0.0;
};

MomentEstimate draw_aggregate(std::span<const double> weights, double mu, double sigma, std::size_t n,
                              std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, {0x9e02u}));
    std::normal_distribution<double> normal(mu, sigma);
    // Welford accumulation.
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
        double agg = 0.0;
        for (double w : weights) agg += w * normal(rng);
        const double delta = agg - mean;
        mean += delta / static_cast<double>(d + 1);
        m2 += delta * (agg - mean);
    }
    return {mean, n > 1 ? m2 / static_cast<double>(n - 1) : 0.0};
}

double sum_squares(std::span<const double> w) {
    double s = 0.0;
    for (double v : w) s += v * v;
    return s;
}

void check_weights(std::span<const double> weights) {
    if (weights.empty()) fail(ErrorKind::size, "no weights given");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) fail(ErrorKind::domain, "weights must be non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > kWeightSumTolerance) fail(ErrorKind::domain, "weights must sum to 1");
}

} // namespace

Prop2Report verify_prop2(std::span<const double> weights, const Prop2Config& cfg) {
    check_weights(weights);
    if (!(cfg.sigma > 0.0)) fail(ErrorKind::domain, "sigma must be > 0");
    if (cfg.num_draws < 2) fail(ErrorKind::size, "need at least 2 draws");
    Prop2Report r;
    r.sum_w2 = sum_squares(weights);
    const double s2 = cfg.sigma * cfg.sigma;
    r.theoretical_variance = s2 * r.sum_w2;
    const auto est = draw_aggregate(weights, cfg.mu, cfg.sigma, cfg.num_draws, cfg.seed);
    r.sample_mean = est.mean;
    r.standard_error = std::sqrt(r.theoretical_variance / static_cast<double>(cfg.num_draws));
    r.mean_ok = std::abs(r.sample_mean - cfg.mu) <= 5.0 * r.standard_error;
    r.sample_variance = est.variance;
    r.variance_rel_error = std::abs(r.sample_variance - r.theoretical_variance) / r.theoretical_variance;
    r.variance_ok = r.variance_rel_error <= 0.05;
    const auto nonzero = std::count_if(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
    if (nonzero >= 2) r.strict_reduction = r.theoretical_variance < s2;
    return r;
}

double prop2_error_ratio(std::span<const double> weights, double sigma, std::size_t n_small, std::size_t n_large,
                         std::size_t replicates, std::uint64_t seed) {
    check_weights(weights);
    const double theory = sigma * sigma * sum_squares(weights);
    auto rms = [&](std::size_t n, std::uint64_t tag) {
        double acc = 0.0;
        for (std::size_t k = 0; k < replicates; ++k) {
            const auto est = draw_aggregate(weights, 0.0, sigma, n, derive_seed(seed, {tag, k}));
            acc += (est.variance - theory) * (est.variance - theory);
        }
        return std::sqrt(acc / static_cast<double>(replicates));
    };
    return rms(n_small, 1) / rms(n_large, 2);
}

} // namespace fuselab::analysis
