// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fuselab/error.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/weighting.hpp"

namespace fuselab::trainer {

const char* to_string(Stage s) {
    switch (s) {
    case Stage::fusesft: return "fusesft";
    case Stage::fusepo: return "fusepo";
    case Stage::sft: return "sft";
    case Stage::po_baseline: return "po_baseline";
    case Stage::on_policy_po: return "on_policy_po";
    }
    return "?";
}

Stage parse_stage(const std::string& text) {
    for (Stage s : {Stage::fusesft, Stage::fusepo, Stage::sft, Stage::po_baseline, Stage::on_policy_po}) {
        if (text == to_string(s)) return s;
    }
    fail(ErrorKind::config, "unknown stage '" + text + "'");
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adaptive_moment"; }

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "sgd") return OptimizerKind::sgd;
    if (text == "adaptive_moment") return OptimizerKind::adaptive_moment;
    fail(ErrorKind::config, "unknown optimizer '" + text + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) fail(ErrorKind::config, "learning_rate must be >= 0");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) fail(ErrorKind::config, "grad_clip_norm must be > 0");
    hyper.validate();
    if (stage == Stage::on_policy_po) {
        if (on_policy_samples_per_prompt < 2) fail(ErrorKind::config, "on-policy training needs >= 2 samples per prompt");
        on_policy_sampling.validate();
    }
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void optimizer_step(std::span<double> params, std::span<double> grads, OptimizerState& state,
                    const TrainConfig& cfg) {
    if (params.size() != grads.size()) {
        fail(ErrorKind::size, "gradient length " + std::to_string(grads.size()) + " does not match " +
                                  std::to_string(params.size()) + " parameters");
    }
    if (cfg.grad_clip_norm) {
        const double norm = l2_norm(grads);
        if (norm > *cfg.grad_clip_norm) {
            const double s = *cfg.grad_clip_norm / norm;
            for (double& g : grads) g *= s;
        }
    }
    const double lr = cfg.learning_rate;
    if (cfg.optimizer == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
        ++state.t;
        return;
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.t = 0;
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

std::vector<SftItem> make_sft_items(std::span<const FusionSample> samples, Stage stage) {
    std::vector<SftItem> items;
    items.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.split_tag != SplitTag::sft) {
            fail(ErrorKind::config, "sample '" + s.prompt.id + "' is not tagged for the sft stage");
        }
        SftItem item;
        item.prompt = s.prompt;
        if (stage == Stage::sft) {
            std::vector<std::vector<RewardedResponse>> sets;
            for (const auto& e : s.per_source) sets.push_back(e.responses);
            const auto top = weighting::select_topk_pooled_indices(sets, 1).front();
            item.units.emplace_back(1.0, sets[top.source][top.position].response.tokens);
        } else if (!s.units.empty()) {
            for (const auto& u : s.units) item.units.emplace_back(u.weight, s.unit_response(u).response.tokens);
        } else {
            for (const auto& e : s.per_source) item.units.emplace_back(e.weight, e.best().response.tokens);
        }
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<PoItem> make_po_items(std::span<const FusionSample> samples, PrefMethod method, std::size_t k_po,
                                  double alpha_po) {
    std::vector<PoItem> items;
    items.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.split_tag != SplitTag::po) {
            fail(ErrorKind::config, "sample '" + s.prompt.id + "' is not tagged for the po stage");
        }
        items.push_back({s.prompt, weighting::build_preference_batch(s, method, k_po, alpha_po)});
    }
    return items;
}

namespace {

struct ItemLoss {
    ad::Var loss;
    std::int64_t degenerate = 0;
    std::int64_t units = 0;
    bool has_signal = true;
};

// Shared epoch/batch loop. `build(tape, model, index, epoch, step)` builds the
// loss for one item against the current parameters.
template <class Build>
void run_loop(TrainResult& result, std::size_t item_count, const TrainConfig& cfg, Build&& build) {
    cfg.validate();
    if (item_count == 0) fail(ErrorKind::size, "training set is empty");
    PolicyModel& model = result.model;
    OptimizerState opt;
    std::int64_t step = 0;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    std::vector<double> acc(model.params.size());

    for (std::int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(item_count);
        std::iota(order.begin(), order.end(), std::size_t{0});
        CounterRng rng(derive_seed(cfg.seed, {0xe90cu, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), rng);

        for (std::size_t begin = 0; begin < item_count; begin += batch) {
            const std::size_t end = std::min(item_count, begin + batch);
            const double inv = 1.0 / static_cast<double>(end - begin);
            std::fill(acc.begin(), acc.end(), 0.0);
            TraceRecord rec;
            rec.step = step;
            rec.stage = cfg.stage;
            rec.epoch = epoch;
            bool any_signal = false;
            // Items are reduced in batch order.
            for (std::size_t k = begin; k < end; ++k) {
                ad::Tape tape(model.params);
                const ItemLoss il = build(tape, model, order[k], epoch, step);
                const double value = tape.scalar(il.loss);
                if (!std::isfinite(value)) {
                    fail(ErrorKind::numeric, std::string(to_string(cfg.stage)) + " step " + std::to_string(step) +
                                                 ": non-finite loss");
                }
                rec.loss += inv * value;
                rec.degenerate += il.degenerate;
                rec.units += il.units;
                rec.prompts += 1;
                if (!il.has_signal) continue;
                any_signal = true;
                const auto g = tape.gradient(il.loss);
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += inv * g[i];
            }
            rec.grad_norm = l2_norm(acc);
            if (any_signal) {
                optimizer_step(model.params, acc, opt, cfg);
            } else {
                rec.skipped = true;
            }
            result.trace.push_back(rec);
            ++step;
        }
    }
}

} // namespace

TrainResult train_fusesft(const PolicyModel& model, std::span<const SftItem> items, const TrainConfig& cfg) {
    TrainResult result{model, {}, 1};
    run_loop(result, items.size(), cfg,
             [&](ad::Tape& tape, const PolicyModel& m, std::size_t idx, std::int32_t, std::int64_t) {
                 const auto& item = items[idx];
                 std::vector<losses::WeightedSequence> ws;
                 for (const auto& [w, toks] : item.units) ws.push_back({w, toks});
                 ItemLoss il;
                 il.loss = losses::fusesft_loss(tape, m, item.prompt.text, ws);
                 il.units = static_cast<std::int64_t>(ws.size());
                 return il;
             });
    return result;
}

TrainResult train_fusepo(const PolicyModel& model, const PolicyModel* reference, std::span<const PoItem> items,
                         const TrainConfig& cfg) {
    const bool needs_reference = cfg.hyper.method != PrefMethod::simpo;
    if (needs_reference && reference == nullptr) {
        fail(ErrorKind::config, std::string(to_string(cfg.hyper.method)) + " training needs a reference model");
    }
    TrainResult result{model, {}, needs_reference ? 2 : 1};
    const PolicyModel* ref = needs_reference ? reference : nullptr;
    run_loop(result, items.size(), cfg,
             [&](ad::Tape& tape, const PolicyModel& m, std::size_t idx, std::int32_t, std::int64_t) {
                 const auto& item = items[idx];
                 const auto terms = losses::fusepo_loss(tape, m, ref, item.batch, item.prompt.text, cfg.hyper);
                 ItemLoss il;
                 il.loss = terms.loss;
                 il.degenerate = static_cast<std::int64_t>(terms.degenerate_count);
                 il.has_signal = terms.degenerate_count < item.batch.entries.size();
                 for (const auto& e : terms.per_entry) il.units += e ? 1 : 0;
                 return il;
             });
    return result;
}

TrainResult train_on_policy(const PolicyModel& model, std::span<const Prompt> prompts,
                            const tinylm::RewardSpec& reward, const TrainConfig& cfg) {
    cfg.validate();
    const bool needs_reference = cfg.hyper.method != PrefMethod::simpo;
    // The reference is the policy as it was when on-policy training started.
    const PolicyModel reference = model;
    TrainResult result{model, {}, needs_reference ? 2 : 1};
    run_loop(result, prompts.size(), cfg,
             [&](ad::Tape& tape, const PolicyModel& m, std::size_t idx, std::int32_t epoch, std::int64_t step) {
                 const Prompt& p = prompts[idx];
                 std::vector<RewardedResponse> scored;
                 for (std::int32_t s = 0; s < cfg.on_policy_samples_per_prompt; ++s) {
                     tinylm::SamplingParams sp = cfg.on_policy_sampling;
                     sp.seed = derive_seed(cfg.seed, {0x0b0cu, static_cast<std::uint64_t>(epoch),
                                                      static_cast<std::uint64_t>(step), idx,
                                                      static_cast<std::uint64_t>(s)});
                     auto resp = tinylm::sample_response(m, p.text, sp, "policy", s);
                     const double r = tinylm::reward_score(reward, p.text, resp.tokens);
                     scored.push_back({std::move(resp), r});
                 }
                 PreferenceBatch batch;
                 batch.prompt_id = p.id;
                 batch.method = cfg.hyper.method;
                 PreferenceEntry entry;
                 entry.source_id = "policy";
                 entry.weight = 1.0;
                 if (cfg.hyper.method == PrefMethod::rloo) {
                     entry.material = scored;
                 } else {
                     entry.material = form_preference_pair(scored, p.id, "policy");
                 }
                 batch.entries.push_back(std::move(entry));
                 const auto terms = losses::fusepo_loss(tape, m, needs_reference ? &reference : nullptr, batch,
                                                        p.text, cfg.hyper);
                 ItemLoss il;
                 il.loss = terms.loss;
                 il.degenerate = static_cast<std::int64_t>(terms.degenerate_count);
                 il.has_signal = terms.degenerate_count == 0;
                 il.units = il.has_signal ? 1 : 0;
                 return il;
             });
    return result;
}

void write_trace(std::ostream& out, std::span<const TraceRecord> trace) {
    out << "step\tstage\tepoch\tloss\tgrad_norm\tdegenerate\tprompts\tunits\tskipped\n";
    char buf[64];
    for (const auto& r : trace) {
        out << r.step << '\t' << to_string(r.stage) << '\t' << r.epoch << '\t';
        std::snprintf(buf, sizeof buf, "%.17g", r.loss);
        out << buf << '\t';
        std::snprintf(buf, sizeof buf, "%.17g", r.grad_norm);
        out << buf << '\t' << r.degenerate << '\t' << r.prompts << '\t' << r.units << '\t'
            << (r.skipped ? 1 : 0) << '\n';
    }
}

std::vector<TraceRecord> read_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::parse, "empty trace");
    std::vector<TraceRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        TraceRecord r;
        std::string stage;
        int skipped = 0;
        if (!(ss >> r.step >> stage >> r.epoch >> r.loss >> r.grad_norm >> r.degenerate >> r.prompts >> r.units >>
              skipped)) {
            fail(ErrorKind::parse, "trace line " + std::to_string(line_no) + " is malformed");
        }
        r.stage = parse_stage(stage);
        r.skipped = skipped != 0;
        out.push_back(r);
    }
    return out;
}

} // namespace fuselab::trainer
