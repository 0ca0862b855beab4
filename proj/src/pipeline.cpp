// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fuselab/error.hpp"
#include "fuselab/experiment.hpp"
#include "fuselab/hexword.hpp"
#include "fuselab/rng.hpp"
#include "json.hpp"

namespace fuselab::experiment {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

enum : std::uint64_t {
    kCorpusTag = 0xc0,
    kSourceInitTag = 0x5c,
    kSourceTrainTag = 0x5d,
    kSourceSliceTag = 0x5e,
    kTargetInitTag = 0x7a,
    kStage1Tag = 0x51,
    kStage2Tag = 0x52,
    kSplitTag = 0x5b,
    kSftStream = 1,
    kPoStream = 2,
    kEvalStream = 3,
};

std::string prompt_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%04zu", prefix, i);
    return buf;
}

trainer::TrainConfig reseeded(const trainer::TrainConfig& t, std::uint64_t root, std::uint64_t tag,
                              std::uint64_t index = 0) {
    trainer::TrainConfig out = t;
    out.seed = derive_seed(root, {tag, index, t.seed});
    out.on_policy_sampling.seed = derive_seed(root, {tag, index, t.on_policy_sampling.seed, 1});
    return out;
}

tinylm::RewardSpec reward_spec(const ExperimentConfig& cfg) {
    tinylm::RewardSpec r = cfg.reward;
    r.vocab_size = cfg.corpus.vocab_size;
    return r;
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) fail(ErrorKind::io, "cannot create directory '" + parent.string() + "': " + ec.message());
}

std::ofstream open_out(const std::string& path) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
    return in;
}

void write_checkpoint(const std::string& path, const tinylm::PolicyModel& model, const std::string& digest) {
    auto out = open_out(path);
    tinylm::save_checkpoint(out, model, digest);
    if (!out) fail(ErrorKind::io, "checkpoint write failed: '" + path + "'");
}

void require_digest(const std::string& what, const std::string& found, const std::string& expected) {
    if (found != expected) {
        fail(ErrorKind::digest, what + " was produced under config digest " + found + ", current config is " + expected);
    }
}

} // namespace

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.corpus.train_prompts = 2000;
    cfg.corpus.pretrain_prompts = 800;
    cfg.corpus.heldout_prompts = 500;
    // Reversal of a 5-token prompt needs the whole prompt in view: 2 * 5 + 1 slots.
    cfg.target.context_width = 12;
    // Desk rewards move in steps of 1/len, far coarser than a learned reward
    // model, so the softmax temperatures are scaled up accordingly.
    cfg.weighting.alpha_sft = 0.1;
    cfg.weighting.alpha_po = 0.2;

    // Four sources, each pretrained mostly on its own quarter of the prompt space.
    const std::vector<std::vector<std::int32_t>> hidden{{32}, {24}, {32, 16}, {20}};
    const std::vector<std::int32_t> embed{16, 12, 12, 10};
    const std::vector<double> temperature{0.6, 0.7, 0.8, 0.7};
    const std::vector<double> top_p{0.95, 0.95, 0.8, 0.95};
    const std::vector<double> penalty{1.0, 1.05, 1.0, 1.05};
    for (std::size_t i = 0; i < 4; ++i) {
        SourceSpec s;
        s.id = "src" + std::to_string(i);
        s.arch.context_width = 12;
        s.arch.hidden_dims = hidden[i];
        s.arch.embed_dim = embed[i];
        s.arch.init_seed = i;
        s.sampling.temperature = temperature[i];
        s.sampling.top_p = top_p[i];
        s.sampling.repetition_penalty = penalty[i];
        s.sampling.max_len = 8;
        s.pretrain.region = static_cast<std::int32_t>(i);
        s.pretrain.other_fraction = 0.1;
        s.pretrain.train.stage = trainer::Stage::sft;
        s.pretrain.train.epochs = 30;
        s.pretrain.train.batch_size = 16;
        s.pretrain.train.learning_rate = 1e-2;
        cfg.sources.push_back(std::move(s));
    }
    cfg.stage1.stage = trainer::Stage::fusesft;
    cfg.stage1.epochs = 10;
    cfg.stage2.stage = trainer::Stage::fusepo;
    cfg.stage2.epochs = 2;
    cfg.stage2.learning_rate = 1e-3;
    cfg.stage2.hyper.method = PrefMethod::dpo;
    cfg.stage2.hyper.beta_dpo = 1.0;
    cfg.stage2.on_policy_sampling.max_len = 8;
    cfg.eval.sampling.max_len = 8;
    return cfg;
}

std::int32_t prompt_region(const Prompt& p, std::int32_t vocab_size, std::int32_t regions) {
    if (p.text.empty()) fail(ErrorKind::size, "prompt '" + p.id + "' is empty");
    if (regions < 1) fail(ErrorKind::domain, "region count must be >= 1");
    const std::int64_t t = p.text.front();
    if (t < 1 || t >= vocab_size) fail(ErrorKind::domain, "prompt token out of range");
    return static_cast<std::int32_t>((t - 1) * regions / (vocab_size - 1));
}

Corpus make_corpus(const ExperimentConfig& cfg) {
    const auto& c = cfg.corpus;
    CounterRng rng(derive_seed(cfg.seed, {kCorpusTag, c.corpus_seed}));
    std::set<TokenSeq> seen;
    const auto span = static_cast<std::uint64_t>(c.max_len - c.min_len + 1);
    const std::uint64_t total = static_cast<std::uint64_t>(c.pretrain_prompts) + c.train_prompts + c.heldout_prompts;
    std::uint64_t space = 0;
    for (std::int32_t len = c.min_len; len <= c.max_len && space < total * 4; ++len) {
        std::uint64_t n = 1;
        for (std::int32_t k = 0; k < len && n < total * 4; ++k) n *= static_cast<std::uint64_t>(c.vocab_size - 1);
        space += n;
    }
    if (space < total * 2) fail(ErrorKind::config, "corpus: too few distinct prompts for the requested counts");

    auto draw = [&](const char* prefix, std::int32_t count) {
        std::vector<Prompt> out;
        while (out.size() < static_cast<std::size_t>(count)) {
            const auto len = c.min_len + static_cast<std::int32_t>(rng() % span);
            TokenSeq text;
            for (std::int32_t k = 0; k < len; ++k) {
                text.push_back(1 + static_cast<Token>(rng() % static_cast<std::uint64_t>(c.vocab_size - 1)));
            }
            if (!seen.insert(text).second) continue;
            out.push_back({prompt_id(prefix, out.size()), std::move(text)});
        }
        return out;
    };
    Corpus corpus;
    corpus.pretrain = draw("pre", c.pretrain_prompts);
    corpus.train = draw("tr", c.train_prompts);
    corpus.heldout = draw("ho", c.heldout_prompts);
    return corpus;
}

std::vector<tinylm::PolicyModel> pretrain_sources(const ExperimentConfig& cfg, const Corpus& corpus) {
    const auto regions = static_cast<std::int32_t>(cfg.sources.size());
    const auto reward = reward_spec(cfg);
    std::vector<tinylm::PolicyModel> out;
    for (std::size_t i = 0; i < cfg.sources.size(); ++i) {
        const auto& s = cfg.sources[i];
        CounterRng slice(derive_seed(cfg.seed, {kSourceSliceTag, i}));
        std::vector<trainer::SftItem> items;
        for (std::size_t j = 0; j < corpus.pretrain.size(); ++j) {
            const auto& p = corpus.pretrain[j];
            const bool in_region =
                s.pretrain.region < 0 || prompt_region(p, cfg.corpus.vocab_size, regions) == s.pretrain.region;
            const double u = static_cast<double>(slice.at(j) >> 11) * 0x1.0p-53;
            if (!in_region && !(u < s.pretrain.other_fraction)) continue;
            TokenSeq target = tinylm::ideal_response(reward, p.text);
            target.push_back(kEndToken);
            items.push_back({p, {{1.0, std::move(target)}}});
        }
        tinylm::ArchConfig arch = s.arch;
        arch.init_seed = derive_seed(cfg.seed, {kSourceInitTag, i, s.arch.init_seed});
        auto model = tinylm::init_model(arch);
        if (items.empty()) {
            out.push_back(std::move(model));
            continue;
        }
        auto t = reseeded(s.pretrain.train, cfg.seed, kSourceTrainTag, i);
        t.stage = trainer::Stage::fusesft;
        out.push_back(trainer::train_fusesft(model, items, t).model);
    }
    return out;
}

std::vector<FusionSample> collect_samples(const ExperimentConfig& cfg, std::span<const tinylm::PolicyModel> sources,
                                          std::span<const Prompt> prompts, SplitTag stage, std::uint64_t stream_tag) {
    if (sources.size() != cfg.sources.size()) fail(ErrorKind::size, "one model per configured source required");
    const auto reward = reward_spec(cfg);
    std::vector<FusionSample> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) {
        std::vector<weighting::SourceResponses> per_source;
        for (std::size_t i = 0; i < sources.size(); ++i) {
            weighting::SourceResponses sr{cfg.sources[i].id, {}};
            for (std::int32_t n = 0; n < cfg.samples_per_source; ++n) {
                tinylm::SamplingParams sp = cfg.sources[i].sampling;
                sp.seed = derive_seed(cfg.seed, {stream_tag, stable_hash(p.id), i, static_cast<std::uint64_t>(n),
                                                 cfg.sources[i].sampling.seed});
                auto r = tinylm::sample_response(sources[i], p.text, sp, cfg.sources[i].id, n);
                const double score = tinylm::reward_score(reward, p.text, r.tokens);
                sr.responses.push_back({std::move(r), score});
            }
            per_source.push_back(std::move(sr));
        }
        out.push_back(weighting::build_fusion_sample(p, per_source, cfg.weighting, stage));
    }
    return out;
}

GenDataResult generate_data(const ExperimentConfig& cfg) {
    cfg.validate();
    GenDataResult r;
    r.corpus = make_corpus(cfg);
    r.sources = pretrain_sources(cfg, r.corpus);
    weighting::WeightingConfig wc = cfg.weighting;
    wc.split_seed = derive_seed(cfg.seed, {kSplitTag, cfg.weighting.split_seed});
    const auto split = weighting::split_instructions(r.corpus.train, wc);
    r.data.sft = collect_samples(cfg, r.sources, split.sft, SplitTag::sft, kSftStream);
    r.data.po = collect_samples(cfg, r.sources, split.po, SplitTag::po, kPoStream);
    r.data.eval = collect_samples(cfg, r.sources, r.corpus.heldout, SplitTag::po, kEvalStream);
    return r;
}

// ---------------------------------------------------------------------------
// Dataset files: a header line, then one FusionSample per line.

namespace {

json sample_to_json(const FusionSample& s) {
    json per_source = json::array();
    for (const auto& e : s.per_source) {
        json responses = json::array();
        for (const auto& r : e.responses) {
            responses.push_back(json{{"tokens", r.response.tokens},
                                     {"reward", to_hex_word(r.reward)},
                                     {"sample_index", r.response.sample_index}});
        }
        per_source.push_back(json{{"source_id", e.source_id},
                                  {"responses", std::move(responses)},
                                  {"best_index", e.best_index},
                                  {"weight", to_hex_word(e.weight)}});
    }
    json j{{"prompt_id", s.prompt.id},
           {"text", s.prompt.text},
           {"split_tag", to_string(s.split_tag)},
           {"per_source", std::move(per_source)}};
    if (!s.units.empty()) {
        json units = json::array();
        for (const auto& u : s.units) {
            units.push_back(json{{"source_index", u.source_index},
                                 {"sample_index", u.sample_index},
                                 {"weight", to_hex_word(u.weight)}});
        }
        j["units"] = std::move(units);
    }
    return j;
}

double hex_field(const json& j, const char* key) {
    const auto v = from_hex_word(j.at(key).get<std::string>());
    if (!v) throw std::invalid_argument(std::string("malformed hex word in '") + key + "'");
    return *v;
}

FusionSample sample_from_json(const json& j) {
    FusionSample s;
    s.prompt.id = j.at("prompt_id").get<std::string>();
    s.prompt.text = j.at("text").get<TokenSeq>();
    s.split_tag = parse_split_tag(j.at("split_tag").get<std::string>());
    for (const auto& e : j.at("per_source")) {
        SourceEntry entry;
        entry.source_id = e.at("source_id").get<std::string>();
        for (const auto& r : e.at("responses")) {
            RewardedResponse rr;
            rr.response.tokens = r.at("tokens").get<TokenSeq>();
            rr.response.source_id = entry.source_id;
            rr.response.sample_index = r.at("sample_index").get<std::int32_t>();
            rr.reward = hex_field(r, "reward");
            entry.responses.push_back(std::move(rr));
        }
        entry.best_index = e.at("best_index").get<std::int32_t>();
        entry.weight = hex_field(e, "weight");
        s.per_source.push_back(std::move(entry));
    }
    if (j.contains("units")) {
        for (const auto& u : j.at("units")) {
            s.units.push_back({u.at("source_index").get<std::int32_t>(), u.at("sample_index").get<std::int32_t>(),
                               hex_field(u, "weight")});
        }
    }
    return s;
}

} // namespace

void save_dataset(std::ostream& out, std::span<const FusionSample> samples, const std::string& digest) {
    out << json{{"format", "fuselab-dataset"}, {"version", kDatasetVersion}, {"config_digest", digest}}.dump() << '\n';
    for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
    if (!out) fail(ErrorKind::io, "dataset write failed");
}

std::vector<FusionSample> load_dataset(std::istream& in, std::string* digest) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::parse, "line 1: missing dataset header");
    try {
        const auto h = json::parse(line);
        if (h.at("format").get<std::string>() != "fuselab-dataset") {
            fail(ErrorKind::parse, "line 1: not a fuselab dataset");
        }
        const int version = h.at("version").get<int>();
        if (version != kDatasetVersion) {
            fail(ErrorKind::parse, "line 1: dataset version " + std::to_string(version) + ", expected " +
                                       std::to_string(kDatasetVersion));
        }
        if (digest) *digest = h.at("config_digest").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, std::string("line 1: bad dataset header: ") + e.what());
    }
    std::vector<FusionSample> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        FusionSample s;
        try {
            s = sample_from_json(json::parse(line));
        } catch (const Error& e) {
            fail(ErrorKind::parse, "line " + std::to_string(lineno) + ": " + e.what());
        } catch (const std::exception& e) {
            fail(ErrorKind::parse, "line " + std::to_string(lineno) + ": " + e.what());
        }
        const auto violations = validate_sample(s);
        if (!violations.empty()) {
            fail(ErrorKind::parse, "line " + std::to_string(lineno) + ": " + violations.front().field + ": " +
                                       violations.front().rule);
        }
        out.push_back(std::move(s));
    }
    return out;
}

void save_dataset_file(const std::string& path, std::span<const FusionSample> samples, const std::string& digest) {
    auto out = open_out(path);
    save_dataset(out, samples, digest);
}

std::vector<FusionSample> load_dataset_file(const std::string& path, std::string* digest) {
    auto in = open_in(path);
    try {
        return load_dataset(in, digest);
    } catch (const Error& e) {
        fail(e.kind(), path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Training stages.

tinylm::PolicyModel initial_target(const ExperimentConfig& cfg) {
    tinylm::ArchConfig arch = cfg.target;
    arch.init_seed = derive_seed(cfg.seed, {kTargetInitTag, cfg.target.init_seed});
    return tinylm::init_model(arch);
}

trainer::TrainResult run_stage1(const ExperimentConfig& cfg, std::span<const FusionSample> sft) {
    const auto items = trainer::make_sft_items(sft, cfg.stage1.stage);
    return trainer::train_fusesft(initial_target(cfg), items, reseeded(cfg.stage1, cfg.seed, kStage1Tag));
}

trainer::TrainResult run_stage2(const ExperimentConfig& cfg, const tinylm::PolicyModel& stage1_model,
                                std::span<const FusionSample> po) {
    const auto t = reseeded(cfg.stage2, cfg.seed, kStage2Tag);
    if (t.stage == trainer::Stage::on_policy_po) {
        std::vector<Prompt> prompts;
        for (const auto& s : po) prompts.push_back(s.prompt);
        return trainer::train_on_policy(stage1_model, prompts, reward_spec(cfg), t);
    }
    const std::size_t k_po =
        t.stage == trainer::Stage::po_baseline ? 1 : static_cast<std::size_t>(cfg.weighting.k_po);
    const auto items = trainer::make_po_items(po, t.hyper.method, k_po, cfg.weighting.alpha_po);
    const tinylm::PolicyModel* reference = t.hyper.method == PrefMethod::simpo ? nullptr : &stage1_model;
    return trainer::train_fusepo(stage1_model, reference, items, t);
}

// ---------------------------------------------------------------------------
// Evaluation.

EvalResult evaluate_model(const ExperimentConfig& cfg, const tinylm::PolicyModel& model,
                          std::span<const FusionSample> eval_samples) {
    if (eval_samples.empty()) fail(ErrorKind::size, "evaluation set is empty");
    if (model.arch.vocab_size != cfg.corpus.vocab_size) {
        fail(ErrorKind::config, "checkpoint vocabulary " + std::to_string(model.arch.vocab_size) +
                                    " does not match config vocabulary " + std::to_string(cfg.corpus.vocab_size));
    }
    const auto reward = reward_spec(cfg);
    EvalResult r;
    std::vector<double> model_scores;
    std::vector<double> reference_scores;
    for (std::size_t i = 0; i < eval_samples.size(); ++i) {
        const auto& s = eval_samples[i];
        tinylm::SamplingParams sp = cfg.eval.sampling;
        sp.seed = derive_seed(cfg.eval.sampling.seed, {stable_hash(s.prompt.id)});
        auto y = tinylm::sample_response(model, s.prompt.text, sp).tokens;
        model_scores.push_back(tinylm::reward_score(reward, s.prompt.text, y));
        double best = s.per_source.front().best().reward;
        for (const auto& e : s.per_source) best = std::max(best, e.best().reward);
        reference_scores.push_back(best);
        r.responses.push_back({s.prompt.id, s.prompt.text, std::move(y)});
    }
    if (cfg.eval.mean_reward) {
        double sum = 0.0;
        for (double v : model_scores) sum += v;
        r.metrics["mean_reward"] = sum / static_cast<double>(model_scores.size());
    }
    if (cfg.eval.rank_accuracy) {
        const auto scorer = analysis::logprob_scorer(model);
        const auto intra = analysis::intra_rank_accuracy(scorer, eval_samples);
        r.metrics["intra_rank"] = intra.mean;
        for (std::size_t i = 0; i < intra.per_source.size(); ++i) {
            r.metrics["intra_rank." + eval_samples.front().per_source[i].source_id] = intra.per_source[i];
        }
        if (eval_samples.front().per_source.size() >= 2) {
            r.metrics["cross_rank"] = analysis::cross_rank_accuracy(scorer, eval_samples).accuracy;
        }
    }
    if (cfg.eval.bias_variance) {
        const auto bv = analysis::bias_variance_report(model_scores, reference_scores);
        r.metrics["absolute_bias"] = bv.absolute_bias;
        r.metrics["variance"] = bv.variance;
    }
    return r;
}

void write_report(std::ostream& out, const std::map<std::string, std::string>& header,
                  const std::map<std::string, double>& metrics) {
    out << "# fuselab evaluation report\n";
    for (const auto& [k, v] : header) out << k << " = " << v << '\n';
    char buf[64];
    for (const auto& [k, v] : metrics) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << "metric." << k << " = " << buf << '\n';
    }
}

std::map<std::string, double> read_report_metrics(std::istream& in) {
    std::map<std::string, double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.rfind("metric.", 0) != 0) continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) fail(ErrorKind::parse, "report line " + std::to_string(lineno) + ": no '='");
        try {
            out[line.substr(7, eq - 7)] = std::stod(line.substr(eq + 3));
        } catch (const std::exception&) {
            fail(ErrorKind::parse, "report line " + std::to_string(lineno) + ": bad number");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands.

std::string Paths::dataset(SplitTag tag) const { return root + "/data/" + to_string(tag) + ".jsonl"; }
std::string Paths::eval_set() const { return root + "/data/eval.jsonl"; }
std::string Paths::source_checkpoint(std::size_t i) const {
    return root + "/sources/source" + std::to_string(i) + ".ckpt";
}
std::string Paths::checkpoint(int stage) const { return root + "/checkpoints/stage" + std::to_string(stage) + ".ckpt"; }
std::string Paths::trace(int stage) const { return root + "/traces/stage" + std::to_string(stage) + ".tsv"; }
std::string Paths::report() const { return root + "/report.txt"; }

void cmd_gen_data(const ExperimentConfig& cfg) {
    const auto digest = config_digest(cfg);
    const Paths paths{cfg.output_dir};
    const auto r = generate_data(cfg);
    for (std::size_t i = 0; i < r.sources.size(); ++i) {
        write_checkpoint(paths.source_checkpoint(i), r.sources[i], digest);
    }
    save_dataset_file(paths.dataset(SplitTag::sft), r.data.sft, digest);
    save_dataset_file(paths.dataset(SplitTag::po), r.data.po, digest);
    save_dataset_file(paths.eval_set(), r.data.eval, digest);
}

void cmd_train(const ExperimentConfig& cfg, int stage) {
    if (stage != 1 && stage != 2) fail(ErrorKind::config, "--stage must be 1 or 2");
    const auto digest = config_digest(cfg);
    const Paths paths{cfg.output_dir};
    std::string found;
    trainer::TrainResult result;
    if (stage == 1) {
        const auto sft = load_dataset_file(paths.dataset(SplitTag::sft), &found);
        require_digest(paths.dataset(SplitTag::sft), found, digest);
        result = run_stage1(cfg, sft);
    } else {
        const auto ckpt = tinylm::load_checkpoint_file(paths.checkpoint(1));
        require_digest(paths.checkpoint(1), ckpt.config_digest, digest);
        const auto po = load_dataset_file(paths.dataset(SplitTag::po), &found);
        require_digest(paths.dataset(SplitTag::po), found, digest);
        result = run_stage2(cfg, ckpt.model, po);
    }
    write_checkpoint(paths.checkpoint(stage), result.model, digest);
    auto out = open_out(paths.trace(stage));
    out << "# config_digest " << digest << '\n';
    trainer::write_trace(out, result.trace);
    if (!out) fail(ErrorKind::io, "trace write failed");
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path, const std::string& report_path) {
    const auto digest = config_digest(cfg);
    const Paths paths{cfg.output_dir};
    const std::string ckpt_path = checkpoint_path.empty() ? paths.checkpoint(2) : checkpoint_path;
    const auto ckpt = tinylm::load_checkpoint_file(ckpt_path);
    if (ckpt.model.arch.vocab_size != cfg.corpus.vocab_size) {
        fail(ErrorKind::config, "checkpoint vocabulary " + std::to_string(ckpt.model.arch.vocab_size) +
                                    " does not match config vocabulary " + std::to_string(cfg.corpus.vocab_size));
    }
    require_digest(ckpt_path, ckpt.config_digest, digest);
    std::string found;
    const auto eval = load_dataset_file(paths.eval_set(), &found);
    require_digest(paths.eval_set(), found, digest);
    const auto r = evaluate_model(cfg, ckpt.model, eval);
    auto out = open_out(report_path.empty() ? paths.report() : report_path);
    write_report(out,
                 {{"config_digest", digest},
                  {"seed", std::to_string(cfg.seed)},
                  {"checkpoint", fs::path(ckpt_path).filename().string()},
                  {"prompts", std::to_string(eval.size())}},
                 r.metrics);
    if (!out) fail(ErrorKind::io, "report write failed");
}

} // namespace fuselab::experiment
