// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Domain types shared across the fusion pipeline: prompts, scored responses,
// per-prompt fusion records and the preference material derived from them.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fuselab {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Token 0 terminates every sequence; prompts never contain it.
inline constexpr Token kEndToken = 0;

inline constexpr double kWeightSumTolerance = 1e-9;

struct Prompt {
    std::string id;
    TokenSeq text;

    bool operator==(const Prompt&) const = default;
};

struct Response {
    TokenSeq tokens;
    std::string source_id;
    std::int32_t sample_index = 0;

    bool operator==(const Response&) const = default;
};

struct RewardedResponse {
    Response response;
    double reward = 0.0;

    bool operator==(const RewardedResponse&) const = default;
};

enum class SplitTag { sft, po };

const char* to_string(SplitTag tag);
SplitTag parse_split_tag(const std::string& text);

struct SourceEntry {
    std::string source_id;
    std::vector<RewardedResponse> responses;
    std::int32_t best_index = 0;
    double weight = 0.0;

    const RewardedResponse& best() const { return responses.at(static_cast<std::size_t>(best_index)); }

    bool operator==(const SourceEntry&) const = default;
};

// One weighted response used by weighted supervised fine-tuning.
struct WeightedUnit {
    std::int32_t source_index = 0;
    std::int32_t sample_index = 0;
    double weight = 0.0;

    bool operator==(const WeightedUnit&) const = default;
};

// Algorithm-1 record for one prompt. `units` is only populated for sft
// samples built with pooled top-k selection; it indexes into per_source.
struct FusionSample {
    Prompt prompt;
    std::vector<SourceEntry> per_source;
    SplitTag split_tag = SplitTag::po;
    std::vector<WeightedUnit> units;

    const RewardedResponse& unit_response(const WeightedUnit& unit) const;

    bool operator==(const FusionSample&) const = default;
};

struct PreferencePair {
    std::string prompt_id;
    std::string source_id;
    RewardedResponse chosen;
    RewardedResponse rejected;
    bool degenerate = false;

    bool operator==(const PreferencePair&) const = default;
};

enum class PrefMethod { dpo, simpo, rloo };

const char* to_string(PrefMethod method);
PrefMethod parse_pref_method(const std::string& text);

struct PreferenceEntry {
    std::string source_id;
    double weight = 0.0;
    std::variant<PreferencePair, std::vector<RewardedResponse>> material;
};

struct PreferenceBatch {
    std::string prompt_id;
    std::vector<PreferenceEntry> entries;
    PrefMethod method = PrefMethod::dpo;
};

struct Violation {
    std::string field;
    std::string rule;
};

// Empty result iff every FusionSample invariant holds.
std::vector<Violation> validate_sample(const FusionSample& sample);

// Structural and weight checks for a preference batch.
std::vector<Violation> validate_batch(const PreferenceBatch& batch);

// Index of the maximal reward; ties resolve to the lowest sample_index.
std::size_t argmax_reward(std::span<const RewardedResponse> responses);

// Index of the minimal reward; ties resolve to the lowest sample_index.
std::size_t argmin_reward(std::span<const RewardedResponse> responses);

// chosen = highest reward, rejected = lowest reward.
PreferencePair form_preference_pair(std::span<const RewardedResponse> responses,
                                    const std::string& prompt_id = {},
                                    const std::string& source_id = {});

} // namespace fuselab
