// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tiny fixed-window autoregressive policy: embeddings of the last
// `context_width` tokens are concatenated, passed through tanh hidden layers
// and projected to vocabulary logits.
//
// The conditioning stream for a response is  prompt ++ [end] ++ response;
// slots left of the stream are filled with a dedicated padding row, so the
// embedding table has vocab_size + 1 rows.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuselab/autodiff.hpp"
#include "fuselab/core.hpp"

namespace fuselab::tinylm {

struct ArchConfig {
    std::int32_t vocab_size = 32;
    std::int32_t context_width = 8;
    std::vector<std::int32_t> hidden_dims{32};
    std::int32_t embed_dim = 16;
    std::uint64_t init_seed = 0;
    double init_scale = 0.08;

    void validate() const;
    bool operator==(const ArchConfig&) const = default;
};

struct ParamSegment {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
};

struct ParamLayout {
    std::vector<ParamSegment> segments;
    std::size_t total = 0;

    const ParamSegment& at(const std::string& name) const;
};

ParamLayout make_layout(const ArchConfig& arch);

struct PolicyModel {
    ArchConfig arch;
    std::vector<double> params;
    ParamLayout layout;

    std::size_t param_count() const { return params.size(); }
};

PolicyModel init_model(const ArchConfig& arch);

// Model with every parameter zero; the next-token distribution is uniform.
PolicyModel zero_model(const ArchConfig& arch);

// Embedding rows fed to the model when predicting stream position `pos`.
std::vector<std::size_t> context_rows(const ArchConfig& arch, std::span<const Token> stream, std::size_t pos);

// Conditioning stream prompt ++ [end] ++ response.
TokenSeq make_stream(std::span<const Token> prompt, std::span<const Token> response);

ad::Var next_token_logits(ad::Tape& tape, const PolicyModel& model, std::span<const std::size_t> rows);

std::vector<double> next_token_logits(const PolicyModel& model, std::span<const Token> stream, std::size_t pos);

// Per-token log-probability nodes of `y` given prompt `x`.
std::vector<ad::Var> token_logprobs(ad::Tape& tape, const PolicyModel& model, std::span<const Token> x,
                                    std::span<const Token> y);

// Sum of token_logprobs as a single node.
ad::Var sequence_logprob_node(ad::Tape& tape, const PolicyModel& model, std::span<const Token> x,
                              std::span<const Token> y);

struct SequenceLogprob {
    double total = 0.0;
    std::vector<double> per_token;
};

SequenceLogprob sequence_logprob(const PolicyModel& model, std::span<const Token> x, std::span<const Token> y);

double avg_logprob(const PolicyModel& model, std::span<const Token> x, std::span<const Token> y);

struct SamplingParams {
    double top_p = 1.0;
    double temperature = 1.0;
    double repetition_penalty = 1.0;
    std::int32_t max_len = 12;
    std::uint64_t seed = 0;

    void validate() const;
};

// Divides positive logits and multiplies non-positive logits of every token
// already present in `history`. A penalty of 1 leaves logits untouched.
void apply_repetition_penalty(std::span<double> logits, std::span<const Token> history, double penalty);

// Temperature, nucleus truncation and the draw for a single step.
// `uniform` must lie in [0, 1); it is ignored for temperature 0.
Token choose_token(std::span<const double> logits, double temperature, double top_p, double uniform);

Response sample_response(const PolicyModel& model, std::span<const Token> x, const SamplingParams& sp,
                         const std::string& source_id = {}, std::int32_t sample_index = 0);

enum class IdealMap { reversal, identity, increment };

const char* to_string(IdealMap m);
IdealMap parse_ideal_map(const std::string& text);

struct RewardSpec {
    IdealMap ideal_map = IdealMap::reversal;
    // Responses and ideals are truncated to this many tokens; 0 disables.
    std::int32_t length_cap = 16;
    std::int32_t vocab_size = 32;
};

TokenSeq ideal_response(const RewardSpec& spec, std::span<const Token> x);

// Tokens before the first end token.
std::span<const Token> response_content(std::span<const Token> y);

std::size_t levenshtein(std::span<const Token> a, std::span<const Token> b);

double reward_score(const RewardSpec& spec, std::span<const Token> x, std::span<const Token> y);

using LossBuilder = std::function<ad::Var(ad::Tape&)>;

struct LossEval {
    double value = 0.0;
    std::vector<double> grad;
};

// Builds the loss on a fresh tape bound to the model and runs the reverse pass.
LossEval backward(const PolicyModel& model, const LossBuilder& build);

// Value only, no reverse pass.
double evaluate(const PolicyModel& model, const LossBuilder& build);

// Central differences, one coordinate at a time.
std::vector<double> finite_diff_gradient(const PolicyModel& model, const LossBuilder& build, double h);

struct Checkpoint {
    PolicyModel model;
    std::string config_digest;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const PolicyModel& model, const std::string& config_digest);
Checkpoint load_checkpoint(std::istream& in);

void save_checkpoint_file(const std::string& path, const PolicyModel& model, const std::string& config_digest);
Checkpoint load_checkpoint_file(const std::string& path);

} // namespace fuselab::tinylm
