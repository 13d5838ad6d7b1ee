#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fame/decode.hpp"
#include "fame/gradcheck.hpp"
#include "fame/metrics.hpp"
#include "fame/synth.hpp"
#include "fame/train.hpp"

namespace fame {

/// Flat key=value configuration: fixed key registry per command, optional
/// config file, command-line overrides. Unknown keys are rejected and every
/// run can serialize its fully resolved configuration.
class ParamSet {
public:
    void define(const std::string& key, const std::string& default_value, const std::string& help) {
        order_.push_back(key);
        values_[key] = default_value;
        help_[key] = help;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path + "'");
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
            }
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    long long get_int(const std::string& key) const {
        try {
            size_t used = 0;
            const long long v = std::stoll(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects an integer, got '" + get(key) + "'");
        }
    }

    uint64_t get_u64(const std::string& key) const {
        try {
            size_t used = 0;
            const uint64_t v = std::stoull(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" +
                              get(key) + "'");
        }
    }

    double get_double(const std::string& key) const {
        try {
            size_t used = 0;
            const double v = std::stod(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects a number, got '" + get(key) + "'");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "1" || v == "true" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "no") return false;
        throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
    }

    /// Sorted key=value lines; the reproducibility contract for every run.
    std::string resolved() const {
        std::vector<std::string> keys = order_;
        std::sort(keys.begin(), keys.end());
        std::string out;
        for (const std::string& k : keys) out += k + "=" + values_.at(k) + "\n";
        return out;
    }

    std::string usage(const std::string& command) const {
        std::string out = "usage: fame " + command + " [--config FILE] [--KEY VALUE]...\nkeys:\n";
        for (const std::string& k : order_) {
            out += "  " + k + " (default: " + (values_.at(k).empty() ? "<empty>" : values_.at(k)) +
                   ") " + help_.at(k) + "\n";
        }
        return out;
    }

    /// Applies --config and --key value pairs (key dashes map to underscores).
    void parse_args(const std::vector<std::string>& args) {
        size_t i = 0;
        while (i < args.size()) {
            std::string arg = args[i];
            if (arg.rfind("--", 0) != 0) {
                throw ConfigError("expected --key, got '" + arg + "'");
            }
            arg = arg.substr(2);
            std::string value;
            const size_t eq = arg.find('=');
            bool have_value = false;
            if (eq != std::string::npos) {
                value = arg.substr(eq + 1);
                arg.resize(eq);
                have_value = true;
            }
            std::replace(arg.begin(), arg.end(), '-', '_');
            if (!have_value) {
                if (i + 1 >= args.size()) throw ConfigError("missing value for '--" + arg + "'");
                value = args[++i];
            }
            if (arg == "config") {
                load_file(value);
            } else {
                set(arg, value);
            }
            ++i;
        }
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> help_;
};

namespace cli_detail {


inline bool wants_help(const std::vector<std::string>& args) {
    return std::find(args.begin(), args.end(), "--help") != args.end();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << content;
}

inline void define_model_keys(ParamSet& p) {
    p.define("num_layers", "2", "encoder/decoder layers");
    p.define("hidden", "64", "hidden size");
    p.define("filter", "128", "feed-forward filter size");
    p.define("heads", "4", "attention heads");
    p.define("vocab_size", "512", "vocabulary size incl. reserved ids");
    p.define("n_max", "64", "max input tokens");
    p.define("m_max", "24", "max output tokens");
    p.define("share_encoder_decoder", "true", "tie encoder and decoder stacks");
    p.define("use_focus_bias", "true", "add the focus bias to output logits");
    p.define("dropout", "0", "dropout rate during training");
    p.define("head_mix", "mean", "cross-attention head reduction: mean|max|index");
    p.define("head_index", "0", "head used when head_mix=index");
}

inline ModelConfig model_config_from(const ParamSet& p) {
    ModelConfig cfg;
    cfg.num_layers = static_cast<size_t>(p.get_int("num_layers"));
    cfg.hidden = static_cast<size_t>(p.get_int("hidden"));
    cfg.filter = static_cast<size_t>(p.get_int("filter"));
    cfg.num_heads = static_cast<size_t>(p.get_int("heads"));
    cfg.vocab_size = static_cast<size_t>(p.get_int("vocab_size"));
    cfg.max_input_len = static_cast<size_t>(p.get_int("n_max"));
    cfg.max_output_len = static_cast<size_t>(p.get_int("m_max"));
    cfg.share_encoder_decoder = p.get_bool("share_encoder_decoder");
    cfg.use_focus_bias = p.get_bool("use_focus_bias");
    cfg.dropout = p.get_double("dropout");
    cfg.head_mix = head_mix_from_name(p.get("head_mix"));
    cfg.head_index = static_cast<size_t>(p.get_int("head_index"));
    cfg.validate();
    return cfg;
}

inline std::vector<std::string> corpus_tokens(const std::vector<RawExample>& raw) {
    std::vector<std::string> tokens;
    for (const RawExample& ex : raw) {
        for (const std::string& w : split_words(ex.document)) tokens.push_back(w);
        for (const std::string& w : split_words(ex.summary)) tokens.push_back(w);
    }
    return tokens;
}

inline std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace cli_detail

inline int cmd_train(const std::vector<std::string>& args, std::ostream& out) {
    ParamSet p;
    p.define("corpus", "", "training corpus (jsonl)");
    p.define("val_corpus", "", "validation corpus; defaults to the training corpus");
    p.define("out", "", "output directory");
    cli_detail::define_model_keys(p);
    p.define("freq_set_size", "32", "size of the frequent-token set F");
    p.define("lambda", "0.5", "weight of the cross-entropy loss term");
    p.define("lr", "0.001", "peak learning rate");
    p.define("warmup", "200", "linear warmup steps");
    p.define("steps", "1000", "total optimizer steps");
    p.define("batch", "8", "batch size");
    p.define("seed", "1", "seed for init, batching and dropout");
    p.define("checkpoint_every", "200", "steps between checkpoints");
    p.define("clip_norm", "1", "global gradient-norm clip; 0 disables");
    if (cli_detail::wants_help(args)) {
        out << p.usage("train");
        return 0;
    }
    p.parse_args(args);

    if (p.get("corpus").empty()) throw ConfigError("train: missing required key 'corpus'");
    if (p.get("out").empty()) throw ConfigError("train: missing required key 'out'");

    const auto raw = load_jsonl(p.get("corpus"));
    if (raw.empty()) throw InputError("train: corpus '" + p.get("corpus") + "' is empty");
    auto [vocab, frequent] = build_vocab(cli_detail::corpus_tokens(raw),
                                         static_cast<size_t>(p.get_int("vocab_size")),
                                         static_cast<size_t>(p.get_int("freq_set_size")));

    ModelConfig model_cfg = cli_detail::model_config_from(p);
    model_cfg.vocab_size = vocab.size();  // corpus may have fewer distinct tokens

    TrainConfig tcfg;
    tcfg.lambda = p.get_double("lambda");
    tcfg.lr = p.get_double("lr");
    tcfg.warmup_steps = static_cast<size_t>(p.get_int("warmup"));
    tcfg.total_steps = static_cast<size_t>(p.get_int("steps"));
    tcfg.batch_size = static_cast<size_t>(p.get_int("batch"));
    tcfg.seed = p.get_u64("seed");
    tcfg.checkpoint_every = static_cast<size_t>(p.get_int("checkpoint_every"));
    tcfg.clip_norm = p.get_double("clip_norm");
    tcfg.freq_set_size = static_cast<size_t>(p.get_int("freq_set_size"));
    tcfg.validate();

    const std::string out_dir = p.get("out");
    std::filesystem::create_directories(out_dir);
    cli_detail::write_text_file(out_dir + "/resolved.cfg", p.resolved());
    vocab.save(out_dir + "/vocab.txt");

    const auto train_set = prepare_corpus(raw, vocab, model_cfg.max_input_len,
                                          model_cfg.max_output_len);
    std::vector<Example> val_set = train_set;
    if (!p.get("val_corpus").empty()) {
        val_set = prepare_corpus(load_jsonl(p.get("val_corpus")), vocab, model_cfg.max_input_len,
                                 model_cfg.max_output_len);
    }

    ModelParams params = init_params(model_cfg, tcfg.seed);
    std::ofstream log(out_dir + "/train.log", std::ios::binary);
    TrainResult result =
        train_model(params, model_cfg, tcfg, train_set, val_set, frequent, vocab, out_dir, &log);
    out << "trained " << result.steps << " steps; best step " << result.best_step
        << " val_rouge_l " << cli_detail::format_double(result.best_val_rouge_l) << "\n";
    out << "checkpoints in " << out_dir << "\n";
    return 0;
}

namespace cli_detail {

struct LoadedModel {
    ModelConfig cfg;
    ModelParams params;
    Vocabulary vocab;
    FrequentSet frequent;
};

inline LoadedModel load_model(const std::string& ckpt_path, const std::string& vocab_path,
                              size_t freq_set_size) {
    LoadedModel m;
    auto [cfg, params] = load_checkpoint(ckpt_path);
    m.cfg = cfg;
    m.params = params;
    m.vocab = Vocabulary::load(vocab_path);
    if (m.vocab.size() != cfg.vocab_size) {
        throw InputError("vocab '" + vocab_path + "' has " + std::to_string(m.vocab.size()) +
                         " entries but the checkpoint expects " + std::to_string(cfg.vocab_size));
    }
    m.frequent = FrequentSet::from_vocab(m.vocab, freq_set_size);
    return m;
}

}  // namespace cli_detail

inline int cmd_decode(const std::vector<std::string>& args, std::ostream& out) {
    ParamSet p;
    p.define("ckpt", "", "checkpoint file");
    p.define("vocab", "", "vocabulary file");
    p.define("corpus", "", "input corpus (jsonl)");
    p.define("out", "", "output directory");
    p.define("strategy", "beam", "greedy|beam|topk|nucleus|focus|focus_controlled|oracle_focus");
    p.define("beam", "4", "beam size");
    p.define("k", "640", "top-k sampling truncation");
    p.define("p", "0.95", "nucleus probability mass");
    p.define("focus_k", "10000", "focus vocabulary size (clamped to |V|)");
    p.define("samples", "10", "samples per input for sampling strategies");
    p.define("seed", "0", "base seed; sample s uses a stream derived from (seed, s)");
    p.define("max_len", "0", "max emitted tokens; 0 means the model limit");
    p.define("combine", "none", "none|topk|nucleus (with strategy=focus)");
    p.define("literal_mask", "false", "score masked steps without renormalizing");
    p.define("length_normalize", "false", "divide beam scores by length");
    p.define("freq_set_size", "32", "size of the frequent-token set F");
    if (cli_detail::wants_help(args)) {
        out << p.usage("decode");
        return 0;
    }
    p.parse_args(args);

    for (const char* key : {"ckpt", "vocab", "corpus", "out"}) {
        if (p.get(key).empty()) throw ConfigError("decode: missing required key '" + std::string(key) + "'");
    }

    auto model = cli_detail::load_model(p.get("ckpt"), p.get("vocab"),
                                        static_cast<size_t>(p.get_int("freq_set_size")));
    DecodeConfig dcfg;
    dcfg.strategy = strategy_from_name(p.get("strategy"));
    dcfg.beam_size = static_cast<size_t>(p.get_int("beam"));
    dcfg.sample_k = static_cast<size_t>(p.get_int("k"));
    dcfg.nucleus_p = p.get_double("p");
    dcfg.focus_k = static_cast<size_t>(p.get_int("focus_k"));
    dcfg.num_samples = static_cast<size_t>(p.get_int("samples"));
    dcfg.seed = p.get_u64("seed");
    const size_t max_len = static_cast<size_t>(p.get_int("max_len"));
    dcfg.max_len = max_len == 0 ? model.cfg.max_output_len - 1 : max_len;
    const std::string combine = p.get("combine");
    if (combine == "topk") dcfg.combine = Combine::kTopK;
    else if (combine == "nucleus") dcfg.combine = Combine::kNucleus;
    else if (combine != "none") throw ConfigError("decode: unknown combine '" + combine + "'");
    dcfg.literal_mask = p.get_bool("literal_mask");
    dcfg.length_normalize = p.get_bool("length_normalize");
    dcfg.validate();

    const auto raw = load_jsonl(p.get("corpus"));
    const auto examples = prepare_corpus(raw, model.vocab, model.cfg.max_input_len,
                                         model.cfg.max_output_len);

    const std::string out_dir = p.get("out");
    std::filesystem::create_directories(out_dir);
    cli_detail::write_text_file(out_dir + "/resolved.cfg", p.resolved());
    std::ofstream pred(out_dir + "/predictions.jsonl", std::ios::binary);
    if (!pred) throw InputError("cannot write " + out_dir + "/predictions.jsonl");

    const char* name = strategy_name(dcfg.strategy, dcfg.combine);
    for (size_t id = 0; id < examples.size(); ++id) {
        const auto hyps = decode_document(model.params, model.cfg, model.frequent,
                                          examples[id].document, dcfg, &examples[id].reference);
        for (size_t s = 0; s < hyps.size(); ++s) {
            nlohmann::ordered_json rec;
            rec["id"] = id;
            rec["strategy"] = name;
            rec["sample_index"] = s;
            rec["tokens"] = hyps[s].tokens;
            rec["text"] = detokenize(hyps[s].tokens, model.vocab);
            rec["logprob"] = hyps[s].log_prob;
            pred << rec.dump() << "\n";
        }
    }
    out << "wrote " << out_dir << "/predictions.jsonl\n";
    return 0;
}

inline int cmd_eval(const std::vector<std::string>& args, std::ostream& out) {
    ParamSet p;
    p.define("predictions", "", "predictions file (jsonl)");
    p.define("corpus", "", "corpus with documents and references (jsonl)");
    p.define("vocab", "", "vocabulary file");
    p.define("out", "", "output directory");
    p.define("ckpt", "", "optional checkpoint for the peakiness diagnostic");
    p.define("freq_set_size", "32", "size of the frequent-token set F");
    if (cli_detail::wants_help(args)) {
        out << p.usage("eval");
        return 0;
    }
    p.parse_args(args);
    for (const char* key : {"predictions", "corpus", "vocab", "out"}) {
        if (p.get(key).empty()) throw ConfigError("eval: missing required key '" + std::string(key) + "'");
    }

    Vocabulary vocab = Vocabulary::load(p.get("vocab"));
    FrequentSet frequent =
        FrequentSet::from_vocab(vocab, static_cast<size_t>(p.get_int("freq_set_size")));
    const auto raw = load_jsonl(p.get("corpus"));

    std::ifstream pred_in(p.get("predictions"), std::ios::binary);
    if (!pred_in) throw InputError("eval: cannot open " + p.get("predictions"));
    struct Pred {
        std::string text;
        std::vector<int> tokens;
    };
    std::map<size_t, std::vector<Pred>> by_input;
    std::string line;
    size_t lineno = 0;
    std::set<size_t> unknown_ids;
    while (std::getline(pred_in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("id") || !rec.contains("text") ||
            !rec.contains("tokens")) {
            throw ParseError(p.get("predictions") + ":" + std::to_string(lineno) +
                             ": expected {id, strategy, sample_index, tokens, text, logprob}");
        }
        const size_t id = rec["id"].get<size_t>();
        if (id >= raw.size()) {
            unknown_ids.insert(id);
            continue;
        }
        by_input[id].push_back({rec["text"].get<std::string>(), rec["tokens"].get<std::vector<int>>()});
    }

    std::vector<size_t> missing;
    for (size_t id = 0; id < raw.size(); ++id) {
        if (!by_input.count(id)) missing.push_back(id);
    }
    if (!missing.empty() || !unknown_ids.empty()) {
        std::string msg = "eval: id mismatch;";
        if (!missing.empty()) {
            msg += " missing predictions for ids:";
            for (size_t id : missing) msg += " " + std::to_string(id);
        }
        if (!unknown_ids.empty()) {
            msg += " predictions for unknown ids:";
            for (size_t id : unknown_ids) msg += " " + std::to_string(id);
        }
        throw InputError(msg);
    }

    bool have_model = !p.get("ckpt").empty();
    ModelConfig model_cfg;
    ModelParams params;
    if (have_model) {
        auto loaded = load_checkpoint(p.get("ckpt"));
        model_cfg = loaded.first;
        params = loaded.second;
    }

    std::vector<MetricsInput> inputs;
    for (size_t id = 0; id < raw.size(); ++id) {
        MetricsInput in;
        in.document_words = split_words(raw[id].document);
        in.document_ids = tokenize(raw[id].document, vocab);
        in.reference_words = split_words(raw[id].summary);
        for (const Pred& pr : by_input[id]) {
            in.summary_texts.push_back(pr.text);
            in.summary_words.push_back(split_words(pr.text));
            std::vector<int> content_ids;
            for (int t : pr.tokens) {
                if (t >= kNumReserved) content_ids.push_back(t);
            }
            in.summary_ids.push_back(std::move(content_ids));
        }
        if (have_model) {
            std::vector<int> doc = in.document_ids;
            if (doc.size() > model_cfg.max_input_len) doc.resize(model_cfg.max_input_len);
            DecodeContext ctx = build_decode_context(params, model_cfg, doc);
            in.peakiness = peakiness(ctx.t_x);
        }
        inputs.push_back(std::move(in));
    }

    MetricsReport report = aggregate_metrics(inputs, frequent);
    const std::string table = report_table(report);
    out << table;
    std::filesystem::create_directories(p.get("out"));
    cli_detail::write_text_file(p.get("out") + "/resolved.cfg", p.resolved());
    cli_detail::write_text_file(p.get("out") + "/metrics.txt", table);
    cli_detail::write_text_file(p.get("out") + "/metrics.json", report_json(report).dump(2) + "\n");
    return 0;
}

inline int cmd_synth(const std::vector<std::string>& args, std::ostream& out) {
    ParamSet p;
    p.define("out", "", "output directory");
    p.define("topics", "8", "number of topics");
    p.define("keywords_per_topic", "6", "keyword lexicon size per topic");
    p.define("distractors", "64", "distractor vocabulary size");
    p.define("doc_len", "24", "tokens per document");
    p.define("examples", "128", "number of examples");
    p.define("topic_first", "0", "first topic index to draw from");
    p.define("topic_last", "-1", "last topic index to draw from; -1 means all");
    p.define("seed", "1", "generator seed");
    if (cli_detail::wants_help(args)) {
        out << p.usage("synth");
        return 0;
    }
    p.parse_args(args);
    if (p.get("out").empty()) throw ConfigError("synth: missing required key 'out'");

    SyntheticTaskConfig cfg;
    cfg.num_topics = static_cast<size_t>(p.get_int("topics"));
    cfg.keywords_per_topic = static_cast<size_t>(p.get_int("keywords_per_topic"));
    cfg.distractor_vocab_size = static_cast<size_t>(p.get_int("distractors"));
    cfg.doc_len = static_cast<size_t>(p.get_int("doc_len"));
    cfg.num_examples = static_cast<size_t>(p.get_int("examples"));
    cfg.topic_first = static_cast<size_t>(p.get_int("topic_first"));
    const long long last = p.get_int("topic_last");
    cfg.topic_last = last < 0 ? SIZE_MAX : static_cast<size_t>(last);
    cfg.seed = p.get_u64("seed");

    const auto corpus = synth_generate(cfg);
    std::filesystem::create_directories(p.get("out"));
    cli_detail::write_text_file(p.get("out") + "/resolved.cfg", p.resolved());
    save_jsonl(p.get("out") + "/corpus.jsonl", corpus);

    nlohmann::ordered_json manifest;
    manifest["num_topics"] = cfg.num_topics;
    manifest["keywords_per_topic"] = cfg.keywords_per_topic;
    manifest["distractor_vocab_size"] = cfg.distractor_vocab_size;
    manifest["doc_len"] = cfg.doc_len;
    manifest["num_examples"] = cfg.num_examples;
    manifest["topic_first"] = cfg.topic_first;
    manifest["topic_last"] = std::min(cfg.topic_last, cfg.num_topics - 1);
    manifest["seed"] = cfg.seed;
    cli_detail::write_text_file(p.get("out") + "/manifest.json", manifest.dump(2) + "\n");
    out << "wrote " << corpus.size() << " examples to " << p.get("out") << "/corpus.jsonl\n";
    return 0;
}

inline int cmd_inspect_topic(const std::vector<std::string>& args, std::ostream& out) {
    ParamSet p;
    p.define("ckpt", "", "checkpoint file");
    p.define("vocab", "", "vocabulary file");
    p.define("corpus", "", "input corpus (jsonl)");
    p.define("top_n", "40", "pairs to emit per input");
    p.define("out", "", "optional output directory; stdout when empty");
    p.define("freq_set_size", "32", "size of the frequent-token set F");
    if (cli_detail::wants_help(args)) {
        out << p.usage("inspect-topic");
        return 0;
    }
    p.parse_args(args);
    for (const char* key : {"ckpt", "vocab", "corpus"}) {
        if (p.get(key).empty()) {
            throw ConfigError("inspect-topic: missing required key '" + std::string(key) + "'");
        }
    }
    auto model = cli_detail::load_model(p.get("ckpt"), p.get("vocab"),
                                        static_cast<size_t>(p.get_int("freq_set_size")));
    const auto raw = load_jsonl(p.get("corpus"));
    const auto examples = prepare_corpus(raw, model.vocab, model.cfg.max_input_len,
                                         model.cfg.max_output_len);
    const size_t top_n = static_cast<size_t>(p.get_int("top_n"));

    std::ostringstream text;
    for (size_t id = 0; id < examples.size(); ++id) {
        DecodeContext ctx = build_decode_context(model.params, model.cfg, examples[id].document);
        std::vector<int> order(model.cfg.vocab_size);
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (ctx.t_x.at(a) != ctx.t_x.at(b)) return ctx.t_x.at(a) > ctx.t_x.at(b);
            return a < b;
        });
        text << "input " << id << " peakiness " << cli_detail::format_double(peakiness(ctx.t_x))
             << "\n";
        for (size_t r = 0; r < std::min(top_n, order.size()); ++r) {
            text << r + 1 << " " << model.vocab.token(order[r]) << " "
                 << cli_detail::format_double(ctx.t_x.at(order[r])) << "\n";
        }
    }
    if (p.get("out").empty()) {
        out << text.str();
    } else {
        std::filesystem::create_directories(p.get("out"));
        cli_detail::write_text_file(p.get("out") + "/resolved.cfg", p.resolved());
        cli_detail::write_text_file(p.get("out") + "/topics.txt", text.str());
        out << "wrote " << p.get("out") << "/topics.txt\n";
    }
    return 0;
}

namespace cli_detail {

/// Adds zero to the loss while recording a deliberately wrong backward rule;
/// lets `verify --inject-gradient-fault true` prove the checker catches a
/// corrupted gradient.
inline Tensor gradient_fault(Tape* tape, Tensor target) {
    Tensor out = Tensor::scalar(0.0);
    if (tape) {
        tape->record([target, out]() mutable {
            if (!out.has_grad()) return;
            auto& g = target.grad();
            for (double& v : g) v += 0.01 * out.grad()[0];
        });
    }
    return out;
}

}  // namespace cli_detail

inline int cmd_verify(const std::vector<std::string>& args, std::ostream& out) {
    ParamSet p;
    p.define("seed", "1", "model init seed");
    p.define("eps", "0.00001", "finite-difference step");
    p.define("tol", "0.0001", "max relative error tolerance");
    p.define("inject_gradient_fault", "false", "corrupt one backward rule; the check must fail");
    if (cli_detail::wants_help(args)) {
        out << p.usage("verify");
        return 0;
    }
    p.parse_args(args);

    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden = 16;
    cfg.filter = 32;
    cfg.num_heads = 2;
    cfg.vocab_size = 50;
    cfg.max_input_len = 8;
    cfg.max_output_len = 6;
    ModelParams params = init_params(cfg, p.get_u64("seed"));
    const bool fault = p.get_bool("inject_gradient_fault");

    std::vector<int> doc{5, 6, 7, 8, 9, 10, 11, kPad};
    std::vector<int> ref{12, 13, 14, 15, 16, kEos};
    FrequentSet frequent;
    frequent.member.assign(cfg.vocab_size, 0);
    frequent.member[5] = 1;
    frequent.ids = {5};
    TopicTarget target = make_topic_target(ref, cfg.vocab_size, frequent);

    auto loss = [&](Tape* tape) {
        LossBreakdown parts = example_losses(tape, params, cfg, doc, ref, target);
        Tensor combined = combined_loss(tape, parts.mle, parts.topic, 0.5);
        if (fault) combined = add(tape, combined, cli_detail::gradient_fault(tape, params.focus.w1));
        return combined;
    };
    GradCheckReport report =
        grad_check(loss, named_tensors(params), p.get_double("eps"), p.get_double("tol"));
    out << "gradient check: " << report.checked << " coordinates, max relative error "
        << report.max_rel_err << " (worst: " << report.worst.tensor << ")\n";

    bool ok = report.pass;

    // Reduction identities.
    {
        ModelParams zero_focus = init_params(cfg, p.get_u64("seed") + 1);
        for (double& v : zero_focus.focus.w1.values()) v = 0.0;
        for (double& v : zero_focus.focus.w2.values()) v = 0.0;
        ModelConfig plain = cfg;
        plain.use_focus_bias = false;
        TopicTarget none;
        none.membership.assign(cfg.vocab_size, 0);
        const double with_bias =
            example_losses(nullptr, zero_focus, cfg, doc, ref, none).mle.item();
        const double without =
            example_losses(nullptr, zero_focus, plain, doc, ref, none).mle.item();
        const bool reduction_ok = with_bias == without;
        out << "zero-focus reduction: " << (reduction_ok ? "ok" : "FAILED") << "\n";
        ok = ok && reduction_ok;

        ModelParams uniform = init_params(cfg, p.get_u64("seed") + 2);
        for (double& v : uniform.embedding.values()) v = 0.0;
        const double lnv = std::log(static_cast<double>(cfg.vocab_size));
        const double uniform_loss = mle_loss(uniform, cfg, doc, ref);
        const bool lnv_ok = std::abs(uniform_loss - lnv) <= 1e-12;
        out << "uniform-logit loss ≈ ln|V|: " << (lnv_ok ? "ok" : "FAILED") << "\n";
        ok = ok && lnv_ok;
    }

    out << (ok ? "verify passed\n" : "verify FAILED\n");
    return ok ? 0 : 1;
}

inline int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    static const char* usage =
        "usage: fame <command> [--config FILE] [--KEY VALUE]...\n"
        "commands: train, decode, eval, synth, inspect-topic, verify\n"
        "run 'fame <command> --help' for the command's keys\n";
    if (argv.empty()) {
        err << usage;
        return 2;
    }
    const std::string cmd = argv[0];
    std::vector<std::string> rest(argv.begin() + 1, argv.end());
    try {
        if (cmd == "train") return cmd_train(rest, out);
        if (cmd == "decode") return cmd_decode(rest, out);
        if (cmd == "eval") return cmd_eval(rest, out);
        if (cmd == "synth") return cmd_synth(rest, out);
        if (cmd == "inspect-topic") return cmd_inspect_topic(rest, out);
        if (cmd == "verify") return cmd_verify(rest, out);
        err << "unknown command '" << cmd << "'\n" << usage;
        return 2;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        err << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fame
