// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/core.hpp"

#include <cmath>
#include <string>

#include "fuselab/error.hpp"

namespace fuselab {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::size: return "size error";
    case ErrorKind::domain: return "domain error";
    case ErrorKind::config: return "configuration error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::digest: return "digest error";
    case ErrorKind::check: return "check failure";
    }
    return "error";
}

void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, std::string(to_string(kind)) + ": " + what);
}

const char* to_string(SplitTag tag) { return tag == SplitTag::sft ? "sft" : "po"; }

SplitTag parse_split_tag(const std::string& text) {
    if (text == "sft") return SplitTag::sft;
    if (text == "po") return SplitTag::po;
    fail(ErrorKind::parse, "unknown split tag '" + text + "'");
}

const char* to_string(PrefMethod method) {
    switch (method) {
    case PrefMethod::dpo: return "dpo";
    case PrefMethod::simpo: return "simpo";
    case PrefMethod::rloo: return "rloo";
    }
    return "?";
}

PrefMethod parse_pref_method(const std::string& text) {
    if (text == "dpo") return PrefMethod::dpo;
    if (text == "simpo") return PrefMethod::simpo;
    if (text == "rloo") return PrefMethod::rloo;
    fail(ErrorKind::config, "unknown preference method '" + text + "'");
}

const RewardedResponse& FusionSample::unit_response(const WeightedUnit& unit) const {
    const auto& entry = per_source.at(static_cast<std::size_t>(unit.source_index));
    for (const auto& r : entry.responses) {
        if (r.response.sample_index == unit.sample_index) return r;
    }
    fail(ErrorKind::domain, "unit references missing sample " + std::to_string(unit.sample_index));
}

namespace {

// True when a should win a tie-broken comparison against b for the max.
bool ranks_above(const RewardedResponse& a, const RewardedResponse& b) {
    if (a.reward != b.reward) return a.reward > b.reward;
    return a.response.sample_index < b.response.sample_index;
}

bool ranks_below(const RewardedResponse& a, const RewardedResponse& b) {
    if (a.reward != b.reward) return a.reward < b.reward;
    return a.response.sample_index < b.response.sample_index;
}

} // namespace

std::size_t argmax_reward(std::span<const RewardedResponse> responses) {
    if (responses.empty()) fail(ErrorKind::size, "argmax over an empty response set");
    std::size_t best = 0;
    for (std::size_t i = 1; i < responses.size(); ++i) {
        if (ranks_above(responses[i], responses[best])) best = i;
    }
    return best;
}

std::size_t argmin_reward(std::span<const RewardedResponse> responses) {
    if (responses.empty()) fail(ErrorKind::size, "argmin over an empty response set");
    std::size_t worst = 0;
    for (std::size_t i = 1; i < responses.size(); ++i) {
        if (ranks_below(responses[i], responses[worst])) worst = i;
    }
    return worst;
}

PreferencePair form_preference_pair(std::span<const RewardedResponse> responses,
                                    const std::string& prompt_id,
                                    const std::string& source_id) {
    if (responses.size() < 2) {
        fail(ErrorKind::size, "a preference pair needs at least 2 responses, got " +
                                  std::to_string(responses.size()));
    }
    const std::size_t chosen = argmax_reward(responses);
    std::size_t rejected = chosen == 0 ? 1 : 0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        if (i != chosen && ranks_below(responses[i], responses[rejected])) rejected = i;
    }
    PreferencePair pair;
    pair.prompt_id = prompt_id;
    pair.source_id = source_id;
    pair.chosen = responses[chosen];
    pair.rejected = responses[rejected];
    pair.degenerate = pair.chosen.reward == pair.rejected.reward;
    return pair;
}

std::vector<Violation> validate_sample(const FusionSample& s) {
    std::vector<Violation> out;
    auto add = [&out](std::string field, std::string rule) {
        out.push_back({std::move(field), std::move(rule)});
    };

    if (s.prompt.id.empty()) add("prompt.id", "must be non-empty");
    if (s.prompt.text.empty()) add("prompt.text", "must be non-empty");
    for (Token t : s.prompt.text) {
        if (t == kEndToken) {
            add("prompt.text", "must not contain the end token");
            break;
        }
    }
    if (s.per_source.empty()) {
        add("per_source", "must hold at least one source");
        return out;
    }

    const std::size_t n = s.per_source.front().responses.size();
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < s.per_source.size(); ++i) {
        const auto& e = s.per_source[i];
        const std::string prefix = "per_source[" + std::to_string(i) + "]";
        weight_sum += e.weight;
        if (!(e.weight > 0.0 && e.weight <= 1.0)) add(prefix + ".weight", "must lie in (0, 1]");
        if (e.responses.size() != n) add(prefix + ".responses", "all sources must hold the same N");
        if (e.responses.empty()) {
            add(prefix + ".responses", "must be non-empty");
            continue;
        }
        for (std::size_t j = 0; j < e.responses.size(); ++j) {
            const auto& r = e.responses[j];
            if (!std::isfinite(r.reward)) {
                add(prefix + ".responses[" + std::to_string(j) + "].reward", "must be finite");
            }
            if (r.response.tokens.empty()) {
                add(prefix + ".responses[" + std::to_string(j) + "].tokens", "must be non-empty");
            }
        }
        if (e.best_index < 0 || static_cast<std::size_t>(e.best_index) >= e.responses.size()) {
            add(prefix + ".best_index", "out of range");
        } else if (e.responses[static_cast<std::size_t>(e.best_index)].reward <
                   e.responses[argmax_reward(e.responses)].reward) {
            add(prefix + ".best_index", "must point at a maximal reward");
        }
    }
    if (std::abs(weight_sum - 1.0) > kWeightSumTolerance) {
        add("per_source.weight", "weights must sum to 1 (got " + std::to_string(weight_sum) + ")");
    }

    if (!s.units.empty()) {
        if (s.split_tag != SplitTag::sft) add("units", "only sft samples carry weighted units");
        double unit_sum = 0.0;
        for (std::size_t u = 0; u < s.units.size(); ++u) {
            const auto& unit = s.units[u];
            unit_sum += unit.weight;
            const std::string prefix = "units[" + std::to_string(u) + "]";
            if (unit.source_index < 0 || static_cast<std::size_t>(unit.source_index) >= s.per_source.size()) {
                add(prefix + ".source_index", "out of range");
                continue;
            }
            bool found = false;
            for (const auto& r : s.per_source[static_cast<std::size_t>(unit.source_index)].responses) {
                found = found || r.response.sample_index == unit.sample_index;
            }
            if (!found) add(prefix + ".sample_index", "does not name a stored response");
        }
        if (std::abs(unit_sum - 1.0) > kWeightSumTolerance) {
            add("units.weight", "weights must sum to 1");
        }
    }
    return out;
}

std::vector<Violation> validate_batch(const PreferenceBatch& b) {
    std::vector<Violation> out;
    double sum = 0.0;
    for (std::size_t i = 0; i < b.entries.size(); ++i) {
        const auto& e = b.entries[i];
        sum += e.weight;
        const bool is_pair = std::holds_alternative<PreferencePair>(e.material);
        const bool wants_pair = b.method != PrefMethod::rloo;
        if (is_pair != wants_pair) {
            out.push_back({"entries[" + std::to_string(i) + "]",
                           std::string("shape inconsistent with method ") + to_string(b.method)});
        }
    }
    if (b.entries.empty()) out.push_back({"entries", "must be non-empty"});
    if (std::abs(sum - 1.0) > kWeightSumTolerance) out.push_back({"entries.weight", "weights must sum to 1"});
    return out;
}

} // namespace fuselab
