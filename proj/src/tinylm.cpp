// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fuselab/error.hpp"
#include "fuselab/hexword.hpp"
#include "fuselab/rng.hpp"

namespace fuselab::tinylm {

void ArchConfig::validate() const {
    if (vocab_size < 2) fail(ErrorKind::config, "vocab_size must be >= 2");
    if (context_width < 1) fail(ErrorKind::config, "context_width must be >= 1");
    if (embed_dim < 1) fail(ErrorKind::config, "embed_dim must be >= 1");
    for (auto h : hidden_dims) {
        if (h < 1) fail(ErrorKind::config, "hidden layer widths must be >= 1");
    }
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) fail(ErrorKind::config, "init_scale must be finite and >= 0");
}

const ParamSegment& ParamLayout::at(const std::string& name) const {
    for (const auto& s : segments) {
        if (s.name == name) return s;
    }
    fail(ErrorKind::domain, "no parameter segment named '" + name + "'");
}

ParamLayout make_layout(const ArchConfig& arch) {
    arch.validate();
    ParamLayout layout;
    auto add = [&layout](std::string name, std::size_t rows, std::size_t cols) {
        layout.segments.push_back({std::move(name), layout.total, rows, cols});
        layout.total += rows * cols;
    };
    const auto v = static_cast<std::size_t>(arch.vocab_size);
    add("embedding", v + 1, static_cast<std::size_t>(arch.embed_dim));
    std::size_t in = static_cast<std::size_t>(arch.context_width * arch.embed_dim);
    for (std::size_t l = 0; l < arch.hidden_dims.size(); ++l) {
        const auto out = static_cast<std::size_t>(arch.hidden_dims[l]);
        add("hidden." + std::to_string(l) + ".weight", out, in);
        add("hidden." + std::to_string(l) + ".bias", 1, out);
        in = out;
    }
    add("output.weight", v, in);
    add("output.bias", 1, v);
    return layout;
}

PolicyModel init_model(const ArchConfig& arch) {
    PolicyModel m;
    m.arch = arch;
    m.layout = make_layout(arch);
    m.params.resize(m.layout.total);
    CounterRng rng(derive_seed(arch.init_seed, {0x1417u}));
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const double u = static_cast<double>(rng.at(i) >> 11) * 0x1.0p-53;
        m.params[i] = arch.init_scale * (2.0 * u - 1.0);
    }
    return m;
}

PolicyModel zero_model(const ArchConfig& arch) {
    ArchConfig a = arch;
    a.init_scale = 0.0;
    return init_model(a);
}

TokenSeq make_stream(std::span<const Token> prompt, std::span<const Token> response) {
    TokenSeq s;
    s.reserve(prompt.size() + 1 + response.size());
    s.insert(s.end(), prompt.begin(), prompt.end());
    s.push_back(kEndToken);
    s.insert(s.end(), response.begin(), response.end());
    return s;
}

std::vector<std::size_t> context_rows(const ArchConfig& arch, std::span<const Token> stream, std::size_t pos) {
    const auto w = static_cast<std::size_t>(arch.context_width);
    const auto pad = static_cast<std::size_t>(arch.vocab_size);
    std::vector<std::size_t> rows(w, pad);
    for (std::size_t k = 0; k < w; ++k) {
        // slot k holds stream[pos - w + k]
        if (pos + k >= w) {
            const std::size_t idx = pos + k - w;
            const Token t = stream[idx];
            if (t < 0 || t >= arch.vocab_size) {
                fail(ErrorKind::domain, "token " + std::to_string(t) + " outside the vocabulary");
            }
            rows[k] = static_cast<std::size_t>(t);
        }
    }
    return rows;
}

ad::Var next_token_logits(ad::Tape& tape, const PolicyModel& model, std::span<const std::size_t> rows) {
    const auto& layout = model.layout;
    const auto& emb = layout.at("embedding");
    ad::Var h = tape.gather(emb.offset, emb.cols, rows);
    // Segments after the embedding come in (weight, bias) pairs.
    for (std::size_t s = 1; s + 1 < layout.segments.size(); s += 2) {
        const auto& w = layout.segments[s];
        const auto& b = layout.segments[s + 1];
        h = tape.affine(w.offset, b.offset, w.rows, h);
        if (s + 2 < layout.segments.size()) h = tape.tanh(h);
    }
    return h;
}

std::vector<double> next_token_logits(const PolicyModel& model, std::span<const Token> stream, std::size_t pos) {
    ad::Tape tape(model.params);
    const auto rows = context_rows(model.arch, stream, pos);
    return tape.value(next_token_logits(tape, model, rows));
}

namespace {

void check_vocab(const ArchConfig& arch, std::span<const Token> y) {
    for (Token t : y) {
        if (t < 0 || t >= arch.vocab_size) {
            fail(ErrorKind::domain, "token " + std::to_string(t) + " outside the vocabulary of size " +
                                        std::to_string(arch.vocab_size));
        }
    }
}

} // namespace

std::vector<ad::Var> token_logprobs(ad::Tape& tape, const PolicyModel& model, std::span<const Token> x,
                                    std::span<const Token> y) {
    if (y.empty()) fail(ErrorKind::size, "log-probability of an empty response");
    check_vocab(model.arch, x);
    check_vocab(model.arch, y);
    const TokenSeq stream = make_stream(x, y);
    const std::size_t start = x.size() + 1;
    std::vector<ad::Var> out;
    out.reserve(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) {
        const auto rows = context_rows(model.arch, stream, start + t);
        const ad::Var logp = tape.log_softmax(next_token_logits(tape, model, rows));
        out.push_back(tape.pick(logp, static_cast<std::size_t>(y[t])));
    }
    return out;
}

ad::Var sequence_logprob_node(ad::Tape& tape, const PolicyModel& model, std::span<const Token> x,
                              std::span<const Token> y) {
    const auto per = token_logprobs(tape, model, x, y);
    return tape.sum(per);
}

SequenceLogprob sequence_logprob(const PolicyModel& model, std::span<const Token> x, std::span<const Token> y) {
    ad::Tape tape(model.params);
    const auto per = token_logprobs(tape, model, x, y);
    SequenceLogprob out;
    out.per_token.reserve(per.size());
    for (auto v : per) {
        out.per_token.push_back(tape.scalar(v));
        out.total += out.per_token.back();
    }
    return out;
}

double avg_logprob(const PolicyModel& model, std::span<const Token> x, std::span<const Token> y) {
    if (y.empty()) fail(ErrorKind::size, "average log-probability of an empty response");
    return sequence_logprob(model, x, y).total / static_cast<double>(y.size());
}

void SamplingParams::validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) fail(ErrorKind::config, "top_p must lie in (0, 1]");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) fail(ErrorKind::config, "temperature must be >= 0");
    if (!(repetition_penalty >= 1.0)) fail(ErrorKind::config, "repetition_penalty must be >= 1");
    if (max_len < 1) fail(ErrorKind::config, "max_len must be >= 1");
}

void apply_repetition_penalty(std::span<double> logits, std::span<const Token> history, double penalty) {
    if (penalty == 1.0) return;
    std::vector<bool> seen(logits.size(), false);
    for (Token t : history) {
        if (t >= 0 && static_cast<std::size_t>(t) < logits.size()) seen[static_cast<std::size_t>(t)] = true;
    }
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!seen[i]) continue;
        logits[i] = logits[i] > 0.0 ? logits[i] / penalty : logits[i] * penalty;
    }
}

Token choose_token(std::span<const double> logits, double temperature, double top_p, double uniform) {
    if (logits.empty()) fail(ErrorKind::size, "cannot sample from empty logits");
    if (temperature == 0.0) {
        return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp((logits[i] - top) / temperature);
        z += p[i];
    }
    for (double& v : p) v /= z;

    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });

    // Smallest prefix whose mass reaches top_p.
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < order.size()) {
        mass += p[order[keep]];
        ++keep;
        if (mass >= top_p) break;
    }
    const double target = uniform * mass;
    double acc = 0.0;
    for (std::size_t k = 0; k < keep; ++k) {
        acc += p[order[k]];
        if (target < acc) return static_cast<Token>(order[k]);
    }
    return static_cast<Token>(order[keep - 1]);
}

Response sample_response(const PolicyModel& model, std::span<const Token> x, const SamplingParams& sp,
                         const std::string& source_id, std::int32_t sample_index) {
    sp.validate();
    check_vocab(model.arch, x);
    CounterRng rng(derive_seed(sp.seed, {0x5a3bu}));
    TokenSeq stream = make_stream(x, {});
    const std::size_t start = stream.size();
    Response r;
    r.source_id = source_id;
    r.sample_index = sample_index;
    for (std::int32_t step = 0; step < sp.max_len; ++step) {
        auto logits = next_token_logits(model, stream, stream.size());
        apply_repetition_penalty(logits, std::span(stream).subspan(start), sp.repetition_penalty);
        const double u = rng.uniform();
        const Token t = choose_token(logits, sp.temperature, sp.top_p, u);
        stream.push_back(t);
        r.tokens.push_back(t);
        if (t == kEndToken) break;
    }
    return r;
}

const char* to_string(IdealMap m) {
    switch (m) {
    case IdealMap::reversal: return "reversal";
    case IdealMap::identity: return "identity";
    case IdealMap::increment: return "increment";
    }
    return "?";
}

IdealMap parse_ideal_map(const std::string& text) {
    if (text == "reversal") return IdealMap::reversal;
    if (text == "identity") return IdealMap::identity;
    if (text == "increment") return IdealMap::increment;
    fail(ErrorKind::config, "unknown ideal map '" + text + "'");
}

TokenSeq ideal_response(const RewardSpec& spec, std::span<const Token> x) {
    TokenSeq out(x.begin(), x.end());
    switch (spec.ideal_map) {
    case IdealMap::reversal:
        std::reverse(out.begin(), out.end());
        break;
    case IdealMap::identity:
        break;
    case IdealMap::increment:
        // Content tokens are 1..vocab-1; wrap inside that range.
        for (Token& t : out) t = t % (spec.vocab_size - 1) + 1;
        break;
    }
    if (spec.length_cap > 0 && out.size() > static_cast<std::size_t>(spec.length_cap)) {
        out.resize(static_cast<std::size_t>(spec.length_cap));
    }
    return out;
}

std::span<const Token> response_content(std::span<const Token> y) {
    const auto end = std::find(y.begin(), y.end(), kEndToken);
    return y.first(static_cast<std::size_t>(end - y.begin()));
}

std::size_t levenshtein(std::span<const Token> a, std::span<const Token> b) {
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double reward_score(const RewardSpec& spec, std::span<const Token> x, std::span<const Token> y) {
    if (y.empty()) fail(ErrorKind::size, "reward of an empty response");
    auto content = response_content(y);
    if (spec.length_cap > 0 && content.size() > static_cast<std::size_t>(spec.length_cap)) {
        content = content.first(static_cast<std::size_t>(spec.length_cap));
    }
    const TokenSeq ideal = ideal_response(spec, x);
    const double denom = static_cast<double>(std::max({content.size(), ideal.size(), std::size_t{1}}));
    return 1.0 - static_cast<double>(levenshtein(content, ideal)) / denom;
}

LossEval backward(const PolicyModel& model, const LossBuilder& build) {
    ad::Tape tape(model.params);
    const ad::Var loss = build(tape);
    return {tape.scalar(loss), tape.gradient(loss)};
}

double evaluate(const PolicyModel& model, const LossBuilder& build) {
    ad::Tape tape(model.params);
    return tape.scalar(build(tape));
}

std::vector<double> finite_diff_gradient(const PolicyModel& model, const LossBuilder& build, double h) {
    if (!(h > 0.0)) fail(ErrorKind::domain, "finite-difference step must be > 0");
    PolicyModel probe = model;
    std::vector<double> grad(model.params.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double orig = probe.params[i];
        probe.params[i] = orig + h;
        const double up = evaluate(probe, build);
        probe.params[i] = orig - h;
        const double down = evaluate(probe, build);
        probe.params[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

namespace {

std::string join_dims(const std::vector<std::int32_t>& dims) {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(dims[i]);
    }
    return s.empty() ? "-" : s;
}

std::vector<std::int32_t> parse_dims(const std::string& text) {
    std::vector<std::int32_t> dims;
    if (text == "-") return dims;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) dims.push_back(std::stoi(item));
    return dims;
}

} // namespace

void save_checkpoint(std::ostream& out, const PolicyModel& model, const std::string& config_digest) {
    const auto& a = model.arch;
    out << "fuselab-checkpoint " << kCheckpointVersion << '\n'
        << "config_digest " << (config_digest.empty() ? "-" : config_digest) << '\n'
        << "vocab_size " << a.vocab_size << '\n'
        << "context_width " << a.context_width << '\n'
        << "embed_dim " << a.embed_dim << '\n'
        << "hidden_dims " << join_dims(a.hidden_dims) << '\n'
        << "init_seed " << a.init_seed << '\n'
        << "init_scale " << to_hex_word(a.init_scale) << '\n'
        << "param_count " << model.params.size() << '\n';
    for (double p : model.params) out << to_hex_word(p) << '\n';
}

Checkpoint load_checkpoint(std::istream& in) {
    std::size_t line_no = 0;
    auto next_line = [&](std::string& line) {
        if (!std::getline(in, line)) fail(ErrorKind::parse, "checkpoint truncated after line " + std::to_string(line_no));
        ++line_no;
    };
    auto field = [&](const std::string& key) {
        std::string line;
        next_line(line);
        const auto sp = line.find(' ');
        if (sp == std::string::npos || line.substr(0, sp) != key) {
            fail(ErrorKind::parse, "checkpoint line " + std::to_string(line_no) + ": expected '" + key + "'");
        }
        return line.substr(sp + 1);
    };

    const std::string version = field("fuselab-checkpoint");
    if (version != std::to_string(kCheckpointVersion)) {
        fail(ErrorKind::parse, "unsupported checkpoint version '" + version + "'");
    }
    Checkpoint ck;
    ck.config_digest = field("config_digest");
    if (ck.config_digest == "-") ck.config_digest.clear();
    ArchConfig a;
    std::size_t count = 0;
    try {
        a.vocab_size = std::stoi(field("vocab_size"));
        a.context_width = std::stoi(field("context_width"));
        a.embed_dim = std::stoi(field("embed_dim"));
        a.hidden_dims = parse_dims(field("hidden_dims"));
        a.init_seed = std::stoull(field("init_seed"));
        const auto scale = from_hex_word(field("init_scale"));
        if (!scale) fail(ErrorKind::parse, "checkpoint line " + std::to_string(line_no) + ": malformed hex word");
        a.init_scale = *scale;
        count = std::stoull(field("param_count"));
    } catch (const std::logic_error&) {
        fail(ErrorKind::parse, "checkpoint line " + std::to_string(line_no) + ": malformed integer");
    }
    try {
        a.validate();
    } catch (const Error& e) {
        fail(ErrorKind::parse, std::string("checkpoint architecture: ") + e.what());
    }

    ck.model.arch = a;
    ck.model.layout = make_layout(a);
    if (ck.model.layout.total != count) {
        fail(ErrorKind::parse, "checkpoint parameter count " + std::to_string(count) +
                                   " does not match the architecture (" + std::to_string(ck.model.layout.total) + ")");
    }
    ck.model.params.resize(count);
    std::string line;
    for (std::size_t i = 0; i < count; ++i) {
        next_line(line);
        const auto v = from_hex_word(line);
        if (!v) fail(ErrorKind::parse, "checkpoint line " + std::to_string(line_no) + ": malformed hex word");
        ck.model.params[i] = *v;
    }
    return ck;
}

void save_checkpoint_file(const std::string& path, const PolicyModel& model, const std::string& config_digest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    save_checkpoint(out, model, config_digest);
    if (!out) fail(ErrorKind::io, "failed writing '" + path + "'");
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
    return load_checkpoint(in);
}

} // namespace fuselab::tinylm
