// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON form of ExperimentConfig. Missing keys keep their defaults; unknown
// keys are rejected with their full path.

#include <openssl/evp.h>

#include <fstream>
#include <set>
#include <sstream>

#include "fuselab/error.hpp"
#include "fuselab/experiment.hpp"
#include "json.hpp"

namespace fuselab::experiment {

using json = nlohmann::ordered_json;

namespace {

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(ErrorKind::config, path_ + ": expected an object");
    }

    ~Reader() = default;

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            fail(ErrorKind::config, at(key) + ": wrong type");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    Reader child(const char* key) {
        seen_.insert(key);
        return Reader(j_.at(key), at(key));
    }

    const json& raw(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const std::string& path() const { return path_; }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) fail(ErrorKind::config, at(key) + ": unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json to_json(const tinylm::ArchConfig& a) {
    return json{{"vocab_size", a.vocab_size},   {"context_width", a.context_width}, {"hidden_dims", a.hidden_dims},
                {"embed_dim", a.embed_dim},     {"init_seed", a.init_seed},         {"init_scale", a.init_scale}};
}

void from_json(Reader r, tinylm::ArchConfig& a) {
    r.get("vocab_size", a.vocab_size);
    r.get("context_width", a.context_width);
    r.get("hidden_dims", a.hidden_dims);
    r.get("embed_dim", a.embed_dim);
    r.get("init_seed", a.init_seed);
    r.get("init_scale", a.init_scale);
    r.finish();
}

json to_json(const tinylm::SamplingParams& s) {
    return json{{"top_p", s.top_p},
                {"temperature", s.temperature},
                {"repetition_penalty", s.repetition_penalty},
                {"max_len", s.max_len},
                {"seed", s.seed}};
}

void from_json(Reader r, tinylm::SamplingParams& s) {
    r.get("top_p", s.top_p);
    r.get("temperature", s.temperature);
    r.get("repetition_penalty", s.repetition_penalty);
    r.get("max_len", s.max_len);
    r.get("seed", s.seed);
    r.finish();
}

json to_json(const losses::LossHyper& h) {
    return json{{"method", to_string(h.method)},
                {"beta_dpo", h.beta_dpo},
                {"beta_simpo", h.beta_simpo},
                {"gamma_simpo", h.gamma_simpo},
                {"kl_coeff", h.kl_coeff}};
}

void from_json(Reader r, losses::LossHyper& h) {
    std::string method = to_string(h.method);
    r.get("method", method);
    try {
        h.method = parse_pref_method(method);
    } catch (const Error& e) {
        fail(ErrorKind::config, r.at("method") + ": " + e.what());
    }
    r.get("beta_dpo", h.beta_dpo);
    r.get("beta_simpo", h.beta_simpo);
    r.get("gamma_simpo", h.gamma_simpo);
    r.get("kl_coeff", h.kl_coeff);
    r.finish();
}

json to_json(const trainer::TrainConfig& t) {
    json j{{"stage", trainer::to_string(t.stage)},
           {"epochs", t.epochs},
           {"batch_size", t.batch_size},
           {"learning_rate", t.learning_rate},
           {"optimizer", trainer::to_string(t.optimizer)},
           {"beta1", t.beta1},
           {"beta2", t.beta2},
           {"eps", t.eps},
           {"grad_clip_norm", nullptr},
           {"seed", t.seed},
           {"hyper", to_json(t.hyper)},
           {"on_policy_samples_per_prompt", t.on_policy_samples_per_prompt},
           {"on_policy_sampling", to_json(t.on_policy_sampling)}};
    if (t.grad_clip_norm) j["grad_clip_norm"] = *t.grad_clip_norm;
    return j;
}

void from_json(Reader r, trainer::TrainConfig& t) {
    std::string stage = trainer::to_string(t.stage);
    std::string optimizer = trainer::to_string(t.optimizer);
    r.get("stage", stage);
    r.get("optimizer", optimizer);
    try {
        t.stage = trainer::parse_stage(stage);
        t.optimizer = trainer::parse_optimizer(optimizer);
    } catch (const Error& e) {
        fail(ErrorKind::config, r.path() + ": " + e.what());
    }
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("learning_rate", t.learning_rate);
    r.get("beta1", t.beta1);
    r.get("beta2", t.beta2);
    r.get("eps", t.eps);
    if (r.has("grad_clip_norm")) {
        const auto& v = r.raw("grad_clip_norm");
        if (v.is_null()) {
            t.grad_clip_norm.reset();
        } else if (v.is_number()) {
            t.grad_clip_norm = v.get<double>();
        } else {
            fail(ErrorKind::config, r.at("grad_clip_norm") + ": expected a number or null");
        }
    }
    r.get("seed", t.seed);
    if (r.has("hyper")) from_json(r.child("hyper"), t.hyper);
    r.get("on_policy_samples_per_prompt", t.on_policy_samples_per_prompt);
    if (r.has("on_policy_sampling")) from_json(r.child("on_policy_sampling"), t.on_policy_sampling);
    r.finish();
}

json to_json(const ExperimentConfig& c, bool include_output) {
    json j;
    j["seed"] = c.seed;
    if (include_output) j["output_dir"] = c.output_dir;
    j["corpus"] = json{{"vocab_size", c.corpus.vocab_size},
                       {"train_prompts", c.corpus.train_prompts},
                       {"pretrain_prompts", c.corpus.pretrain_prompts},
                       {"heldout_prompts", c.corpus.heldout_prompts},
                       {"min_len", c.corpus.min_len},
                       {"max_len", c.corpus.max_len},
                       {"corpus_seed", c.corpus.corpus_seed}};
    j["reward"] = json{{"ideal_map", tinylm::to_string(c.reward.ideal_map)}, {"length_cap", c.reward.length_cap}};
    json sources = json::array();
    for (const auto& s : c.sources) {
        sources.push_back(json{{"id", s.id},
                               {"arch", to_json(s.arch)},
                               {"sampling", to_json(s.sampling)},
                               {"pretrain", json{{"region", s.pretrain.region},
                                                 {"other_fraction", s.pretrain.other_fraction},
                                                 {"train", to_json(s.pretrain.train)}}}});
    }
    j["sources"] = sources;
    j["target"] = to_json(c.target);
    j["weighting"] = json{{"alpha_sft", c.weighting.alpha_sft},
                          {"alpha_po", c.weighting.alpha_po},
                          {"k_sft", c.weighting.k_sft},
                          {"k_po", c.weighting.k_po},
                          {"strategy", weighting::to_string(c.weighting.strategy)},
                          {"split_ratio", c.weighting.split_ratio},
                          {"split_seed", c.weighting.split_seed}};
    j["samples_per_source"] = c.samples_per_source;
    j["stage1"] = to_json(c.stage1);
    j["stage2"] = to_json(c.stage2);
    j["eval"] = json{{"mean_reward", c.eval.mean_reward},
                     {"rank_accuracy", c.eval.rank_accuracy},
                     {"bias_variance", c.eval.bias_variance},
                     {"sampling", to_json(c.eval.sampling)}};
    return j;
}

} // namespace

void ExperimentConfig::validate() const {
    if (sources.empty()) fail(ErrorKind::config, "sources: at least one source model is required");
    if (corpus.vocab_size < 3) fail(ErrorKind::config, "corpus.vocab_size must be >= 3");
    if (corpus.min_len < 1 || corpus.max_len < corpus.min_len) fail(ErrorKind::config, "corpus: bad length range");
    if (corpus.train_prompts < 2) fail(ErrorKind::config, "corpus.train_prompts must be >= 2");
    if (corpus.heldout_prompts < 1) fail(ErrorKind::config, "corpus.heldout_prompts must be >= 1");
    if (corpus.pretrain_prompts < 1) fail(ErrorKind::config, "corpus.pretrain_prompts must be >= 1");
    if (samples_per_source < 2) fail(ErrorKind::config, "samples_per_source must be >= 2");
    auto check = [](const std::string& path, auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            fail(ErrorKind::config, path + ": " + e.what());
        }
    };
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& s = sources[i];
        const std::string p = "sources[" + std::to_string(i) + "]";
        if (s.id.empty()) fail(ErrorKind::config, p + ".id: must be non-empty");
        for (std::size_t j = 0; j < i; ++j) {
            if (sources[j].id == s.id) fail(ErrorKind::config, p + ".id: duplicate source id '" + s.id + "'");
        }
        if (s.arch.vocab_size != corpus.vocab_size) fail(ErrorKind::config, p + ".arch.vocab_size: must match corpus");
        check(p + ".arch", [&] { s.arch.validate(); });
        check(p + ".sampling", [&] { s.sampling.validate(); });
        check(p + ".pretrain.train", [&] { s.pretrain.train.validate(); });
    }
    if (target.vocab_size != corpus.vocab_size) fail(ErrorKind::config, "target.vocab_size: must match corpus");
    check("target", [&] { target.validate(); });
    check("weighting", [&] { weighting.validate(); });
    if (static_cast<std::size_t>(weighting.k_sft) > sources.size() * static_cast<std::size_t>(samples_per_source)) {
        fail(ErrorKind::config, "weighting.k_sft: exceeds the pooled response count");
    }
    check("stage1", [&] { stage1.validate(); });
    check("stage2", [&] { stage2.validate(); });
    if (stage1.stage != trainer::Stage::fusesft && stage1.stage != trainer::Stage::sft) {
        fail(ErrorKind::config, "stage1.stage: must be fusesft or sft");
    }
    if (stage2.stage != trainer::Stage::fusepo && stage2.stage != trainer::Stage::po_baseline &&
        stage2.stage != trainer::Stage::on_policy_po) {
        fail(ErrorKind::config, "stage2.stage: must be fusepo, po_baseline or on_policy_po");
    }
    check("eval.sampling", [&] { eval.sampling.validate(); });
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Reader r(j, "");
    r.get("seed", c.seed);
    r.get("output_dir", c.output_dir);
    if (r.has("corpus")) {
        Reader cr = r.child("corpus");
        cr.get("vocab_size", c.corpus.vocab_size);
        cr.get("train_prompts", c.corpus.train_prompts);
        cr.get("pretrain_prompts", c.corpus.pretrain_prompts);
        cr.get("heldout_prompts", c.corpus.heldout_prompts);
        cr.get("min_len", c.corpus.min_len);
        cr.get("max_len", c.corpus.max_len);
        cr.get("corpus_seed", c.corpus.corpus_seed);
        cr.finish();
    }
    if (r.has("reward")) {
        Reader rr = r.child("reward");
        std::string map = tinylm::to_string(c.reward.ideal_map);
        rr.get("ideal_map", map);
        try {
            c.reward.ideal_map = tinylm::parse_ideal_map(map);
        } catch (const Error& e) {
            fail(ErrorKind::config, std::string("reward.ideal_map: ") + e.what());
        }
        rr.get("length_cap", c.reward.length_cap);
        rr.finish();
    }
    if (r.has("sources")) {
        const auto& arr = r.raw("sources");
        if (!arr.is_array()) fail(ErrorKind::config, "sources: expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string p = "sources[" + std::to_string(i) + "]";
            Reader sr(arr[i], p);
            SourceSpec s;
            sr.get("id", s.id);
            if (sr.has("arch")) from_json(sr.child("arch"), s.arch);
            if (sr.has("sampling")) from_json(sr.child("sampling"), s.sampling);
            if (sr.has("pretrain")) {
                Reader pr = sr.child("pretrain");
                pr.get("region", s.pretrain.region);
                pr.get("other_fraction", s.pretrain.other_fraction);
                if (pr.has("train")) from_json(pr.child("train"), s.pretrain.train);
                pr.finish();
            }
            sr.finish();
            c.sources.push_back(std::move(s));
        }
    }
    if (r.has("target")) from_json(r.child("target"), c.target);
    if (r.has("weighting")) {
        Reader wr = r.child("weighting");
        wr.get("alpha_sft", c.weighting.alpha_sft);
        wr.get("alpha_po", c.weighting.alpha_po);
        wr.get("k_sft", c.weighting.k_sft);
        wr.get("k_po", c.weighting.k_po);
        std::string strategy = weighting::to_string(c.weighting.strategy);
        wr.get("strategy", strategy);
        try {
            c.weighting.strategy = weighting::parse_strategy(strategy);
        } catch (const Error& e) {
            fail(ErrorKind::config, std::string("weighting.strategy: ") + e.what());
        }
        wr.get("split_ratio", c.weighting.split_ratio);
        wr.get("split_seed", c.weighting.split_seed);
        wr.finish();
    }
    r.get("samples_per_source", c.samples_per_source);
    if (r.has("stage1")) from_json(r.child("stage1"), c.stage1);
    if (r.has("stage2")) from_json(r.child("stage2"), c.stage2);
    if (r.has("eval")) {
        Reader er = r.child("eval");
        er.get("mean_reward", c.eval.mean_reward);
        er.get("rank_accuracy", c.eval.rank_accuracy);
        er.get("bias_variance", c.eval.bias_variance);
        if (er.has("sampling")) from_json(er.child("sampling"), c.eval.sampling);
        er.finish();
    }
    r.finish();
    c.reward.vocab_size = c.corpus.vocab_size;
    c.validate();
    return c;
}

std::string config_to_json_text(const ExperimentConfig& cfg) { return to_json(cfg, true).dump(2) + "\n"; }

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_digest(const ExperimentConfig& cfg) {
    const std::string canonical = to_json(cfg, false).dump();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(canonical.data(), canonical.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        fail(ErrorKind::io, "SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

} // namespace fuselab::experiment
