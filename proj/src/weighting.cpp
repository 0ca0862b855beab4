// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fuselab/error.hpp"
#include "fuselab/rng.hpp"

namespace fuselab::weighting {

const char* to_string(SelectionStrategy s) {
    return s == SelectionStrategy::topk_pooled ? "topk_pooled" : "top1_per_source";
}

SelectionStrategy parse_strategy(const std::string& text) {
    if (text == "topk_pooled") return SelectionStrategy::topk_pooled;
    if (text == "top1_per_source") return SelectionStrategy::top1_per_source;
    fail(ErrorKind::config, "unknown selection strategy '" + text + "'");
}

void WeightingConfig::validate() const {
    if (!(alpha_sft > 0.0) || !(alpha_po > 0.0)) fail(ErrorKind::config, "weighting alphas must be > 0");
    if (k_sft < 1) fail(ErrorKind::config, "k_sft must be >= 1");
    if (k_po < 0) fail(ErrorKind::config, "k_po must be >= 0");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail(ErrorKind::config, "split_ratio must lie in (0, 1)");
}

Split split_instructions(std::span<const Prompt> prompts, const WeightingConfig& cfg) {
    if (prompts.empty()) fail(ErrorKind::config, "cannot split an empty prompt list");
    if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) {
        fail(ErrorKind::config, "split_ratio must lie in (0, 1)");
    }
    const auto total = prompts.size();
    const auto n_sft = static_cast<std::size_t>(std::floor(cfg.split_ratio * static_cast<double>(total) + 0.5));
    if (n_sft == 0 || n_sft == total) {
        fail(ErrorKind::config, "split of " + std::to_string(total) + " prompts at ratio " +
                                    std::to_string(cfg.split_ratio) + " leaves an empty partition");
    }
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(derive_seed(cfg.split_seed, {0x5711u}));
    std::shuffle(order.begin(), order.end(), rng);

    Split out;
    out.sft.reserve(n_sft);
    out.po.reserve(total - n_sft);
    for (std::size_t i = 0; i < total; ++i) {
        (i < n_sft ? out.sft : out.po).push_back(prompts[order[i]]);
    }
    return out;
}

std::vector<double> compute_model_weights(std::span<const double> best_rewards, double alpha) {
    if (best_rewards.empty()) fail(ErrorKind::size, "weights need at least one reward");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) fail(ErrorKind::domain, "alpha must be finite and > 0");
    double top = best_rewards.front();
    for (double r : best_rewards) {
        if (!std::isfinite(r)) fail(ErrorKind::domain, "rewards must be finite");
        top = std::max(top, r);
    }
    std::vector<double> w(best_rewards.size());
    double z = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp((best_rewards[i] - top) / alpha);
        z += w[i];
    }
    for (double& v : w) v /= z;
    return w;
}

std::vector<PooledIndex> select_topk_pooled_indices(
    std::span<const std::vector<RewardedResponse>> per_source, std::size_t k) {
    std::vector<PooledIndex> pool;
    for (std::size_t s = 0; s < per_source.size(); ++s) {
        for (std::size_t j = 0; j < per_source[s].size(); ++j) pool.push_back({s, j});
    }
    if (k < 1 || k > pool.size()) {
        fail(ErrorKind::size, "top-k selection with k=" + std::to_string(k) + " over a pool of " +
                                  std::to_string(pool.size()));
    }
    auto reward = [&](const PooledIndex& p) { return per_source[p.source][p.position].reward; };
    auto sample = [&](const PooledIndex& p) { return per_source[p.source][p.position].response.sample_index; };
    std::stable_sort(pool.begin(), pool.end(), [&](const PooledIndex& a, const PooledIndex& b) {
        if (reward(a) != reward(b)) return reward(a) > reward(b);
        if (a.source != b.source) return a.source < b.source;
        return sample(a) < sample(b);
    });
    pool.resize(k);
    return pool;
}

std::vector<RewardedResponse> select_topk_pooled(std::span<const RewardedResponse> pool, std::size_t k) {
    // Source order is the order of first appearance in the pool.
    std::vector<std::string> ids;
    std::vector<std::vector<RewardedResponse>> groups;
    for (const auto& r : pool) {
        auto it = std::find(ids.begin(), ids.end(), r.response.source_id);
        if (it == ids.end()) {
            ids.push_back(r.response.source_id);
            groups.emplace_back();
            it = ids.end() - 1;
        }
        groups[static_cast<std::size_t>(it - ids.begin())].push_back(r);
    }
    const auto picked = select_topk_pooled_indices(groups, k);
    std::vector<RewardedResponse> out;
    out.reserve(k);
    for (const auto& p : picked) out.push_back(groups[p.source][p.position]);
    return out;
}

FusionSample build_fusion_sample(const Prompt& prompt, std::span<const SourceResponses> sources,
                                 const WeightingConfig& cfg, SplitTag stage) {
    if (sources.empty()) fail(ErrorKind::size, "fusion sample needs at least one source");
    cfg.validate();

    FusionSample sample;
    sample.prompt = prompt;
    sample.split_tag = stage;
    std::vector<double> best;
    std::vector<std::vector<RewardedResponse>> sets;
    for (const auto& src : sources) {
        if (src.responses.empty()) fail(ErrorKind::size, "source '" + src.source_id + "' has no responses");
        SourceEntry e;
        e.source_id = src.source_id;
        e.responses = src.responses;
        e.best_index = static_cast<std::int32_t>(argmax_reward(e.responses));
        best.push_back(e.best().reward);
        sets.push_back(e.responses);
        sample.per_source.push_back(std::move(e));
    }

    const double alpha = stage == SplitTag::po ? cfg.alpha_po : cfg.alpha_sft;
    const auto w = compute_model_weights(best, alpha);
    for (std::size_t i = 0; i < w.size(); ++i) sample.per_source[i].weight = w[i];

    if (stage == SplitTag::sft) {
        if (cfg.strategy == SelectionStrategy::topk_pooled) {
            const auto picked = select_topk_pooled_indices(sets, static_cast<std::size_t>(cfg.k_sft));
            std::vector<double> rewards;
            for (const auto& p : picked) rewards.push_back(sets[p.source][p.position].reward);
            const auto uw = compute_model_weights(rewards, cfg.alpha_sft);
            for (std::size_t u = 0; u < picked.size(); ++u) {
                const auto& r = sets[picked[u].source][picked[u].position];
                sample.units.push_back({static_cast<std::int32_t>(picked[u].source),
                                        r.response.sample_index, uw[u]});
            }
        } else {
            for (std::size_t i = 0; i < sample.per_source.size(); ++i) {
                const auto& e = sample.per_source[i];
                sample.units.push_back({static_cast<std::int32_t>(i), e.best().response.sample_index, e.weight});
            }
        }
    }
    return sample;
}

std::vector<std::size_t> top_sources(const FusionSample& sample, std::size_t k) {
    const std::size_t n = sample.per_source.size();
    if (k == 0 || k > n) k = n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sample.per_source[a].best().reward > sample.per_source[b].best().reward;
    });
    order.resize(k);
    return order;
}

PreferenceBatch build_preference_batch(const FusionSample& sample, PrefMethod method,
                                       std::size_t k_po, double alpha) {
    const auto chosen = top_sources(sample, k_po);
    std::vector<double> best;
    for (std::size_t i : chosen) best.push_back(sample.per_source[i].best().reward);
    const auto w = compute_model_weights(best, alpha);

    PreferenceBatch batch;
    batch.prompt_id = sample.prompt.id;
    batch.method = method;
    for (std::size_t u = 0; u < chosen.size(); ++u) {
        const auto& e = sample.per_source[chosen[u]];
        PreferenceEntry entry;
        entry.source_id = e.source_id;
        entry.weight = w[u];
        if (method == PrefMethod::rloo) {
            entry.material = e.responses;
        } else {
            entry.material = form_preference_pair(e.responses, sample.prompt.id, e.source_id);
        }
        batch.entries.push_back(std::move(entry));
    }
    return batch;
}

} // namespace fuselab::weighting
