#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "fame/checkpoint.hpp"
#include "fame/corpus.hpp"
#include "fame/decode.hpp"
#include "fame/metrics.hpp"
#include "fame/model.hpp"

namespace fame {

struct TrainConfig {
    double lambda = 0.5;       // weight of the cross-entropy term
    double lr = 1e-3;
    size_t warmup_steps = 200;
    size_t total_steps = 1000;
    size_t batch_size = 8;
    uint64_t seed = 1;
    size_t checkpoint_every = 200;
    double clip_norm = 1.0;    // global-norm gradient clipping; 0 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    size_t freq_set_size = 32;

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train: lambda must lie in [0, 1]");
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (warmup_steps < 1) throw ConfigError("train: warmup_steps must be >= 1");
        if (warmup_steps > total_steps) throw ConfigError("train: warmup_steps exceeds total_steps");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    }
};

/// Linear warmup to `lr`, then square-root decay; continuous at the joint.
inline double lr_schedule(size_t step, const TrainConfig& cfg) {
    if (step < 1) throw ConfigError("lr_schedule: step must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(cfg.warmup_steps);
    return cfg.lr * std::min(s / w, std::sqrt(w / s));
}

struct TrainState {
    size_t step = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    double best_val_rouge_l = -1.0;
    size_t best_step = 0;

    static TrainState init(const ModelParams& params) {
        TrainState state;
        for (const auto& [name, t] : named_tensors(params)) {
            state.first_moment.emplace_back(t.shape());
            state.second_moment.emplace_back(t.shape());
        }
        return state;
    }
};

struct StepLosses {
    double mle = 0.0;
    double topic = 0.0;
    double combined = 0.0;
};

/// One Adam update on the mean combined loss over the batch.
inline StepLosses train_step(ModelParams& params, const ModelConfig& model_cfg,
                             const std::vector<Example>& batch, const FrequentSet& frequent,
                             const TrainConfig& cfg, TrainState& state, size_t batch_id = 0) {
    if (batch.empty()) throw InputError("train_step: empty batch");
    auto tensors = named_tensors(params);
    for (auto& [name, t] : tensors) t.zero_grad();

    Rng dropout_rng(derive_stream(cfg.seed, state.step, 4));
    Rng* drop = model_cfg.dropout > 0.0 ? &dropout_rng : nullptr;

    Tape tape;
    Tensor mle_sum = Tensor::scalar(0.0);
    Tensor topic_sum = Tensor::scalar(0.0);
    for (const Example& ex : batch) {
        TopicTarget target = make_topic_target(ex.reference, model_cfg.vocab_size, frequent);
        LossBreakdown parts =
            example_losses(&tape, params, model_cfg, ex.document, ex.reference, target, drop);
        mle_sum = add(&tape, mle_sum, parts.mle);
        topic_sum = add(&tape, topic_sum, parts.topic);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    Tensor mle_mean = scale(&tape, mle_sum, inv);
    Tensor topic_mean = scale(&tape, topic_sum, inv);
    Tensor loss = combined_loss(&tape, mle_mean, topic_mean, cfg.lambda);

    StepLosses out{mle_mean.item(), topic_mean.item(), loss.item()};
    if (!std::isfinite(out.combined) || !std::isfinite(out.mle) || !std::isfinite(out.topic)) {
        throw TrainingError("training aborted at step " + std::to_string(state.step) + " (batch " +
                            std::to_string(batch_id) + "): non-finite loss");
    }
    tape.backward(loss);

    if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (auto& [name, t] : tensors) {
            for (double g : t.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
            const double scale_by = cfg.clip_norm / norm;
            for (auto& [name, t] : tensors) {
                for (double& g : t.grad()) g *= scale_by;
            }
        }
    }

    ++state.step;
    const double lr_t = lr_schedule(state.step, cfg);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < tensors.size(); ++i) {
        Tensor& t = tensors[i].second;
        auto& m = state.first_moment[i].values();
        auto& v = state.second_moment[i].values();
        const auto& g = t.grad();
        for (size_t j = 0; j < t.size(); ++j) {
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            t.at(j) -= lr_t * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        if (!std::isfinite(t.at(0))) {
            throw TrainingError("training aborted at step " + std::to_string(state.step) +
                                ": non-finite parameter in " + tensors[i].first);
        }
    }
    return out;
}

/// Teacher-forced next-token accuracy over non-pad reference positions.
inline double next_token_accuracy(const ModelParams& params, const ModelConfig& cfg,
                                  const std::vector<Example>& examples) {
    size_t correct = 0, total = 0;
    for (const Example& ex : examples) {
        EncoderState enc = encode(nullptr, params, cfg, ex.document);
        std::vector<int> inputs;
        inputs.push_back(kBos);
        for (size_t i = 0; i + 1 < ex.reference.size(); ++i) inputs.push_back(ex.reference[i]);
        DecoderTrace trace = decode_positions(nullptr, params, cfg, enc, inputs);
        Tensor logits = matmul_nt(nullptr, trace.y, params.embedding);
        if (cfg.use_focus_bias) {
            Tensor per_token =
                token_vocab_distribution(nullptr, params.focus, params.embedding, enc.x);
            logits = add(nullptr, logits, focus_bias(nullptr, trace.cross_attention, per_token));
        }
        for (size_t i = 0; i < ex.reference.size(); ++i) {
            if (ex.reference[i] == kPad) continue;
            size_t best = 0;
            for (size_t j = 1; j < cfg.vocab_size; ++j) {
                if (logits.at(i, j) > logits.at(i, best)) best = j;
            }
            correct += static_cast<int>(best) == ex.reference[i] ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

/// Mean ROUGE-L of greedy decoding against the references.
inline double validation_rouge_l(const ModelParams& params, const ModelConfig& cfg,
                                 const FrequentSet& frequent, const Vocabulary& vocab,
                                 const std::vector<Example>& val) {
    if (val.empty()) return 0.0;
    DecodeConfig dcfg;
    dcfg.strategy = Strategy::kGreedy;
    dcfg.max_len = cfg.max_output_len - 1;
    double total = 0.0;
    for (const Example& ex : val) {
        Hypothesis hyp = decode_document(params, cfg, frequent, ex.document, dcfg)[0];
        const std::vector<std::string> cand = split_words(detokenize(hyp.tokens, vocab));
        const std::vector<std::string> ref = split_words(detokenize(ex.reference, vocab));
        total += rouge_l_f1(cand, ref);
    }
    return total / static_cast<double>(val.size());
}

struct TrainResult {
    size_t steps = 0;
    size_t best_step = 0;
    double best_val_rouge_l = 0.0;
    std::string best_checkpoint;
    StepLosses last;
};

namespace detail {

inline void copy_file_bytes(const std::string& from, const std::string& to) {
    std::ifstream in(from, std::ios::binary);
    std::ofstream out(to, std::ios::binary);
    if (!in || !out) throw InputError("checkpoint: cannot copy " + from + " to " + to);
    out << in.rdbuf();
}

}  // namespace detail

/// Full loop: seeded epoch batching, periodic checkpoints, and best-model
/// selection by validation ROUGE-L of greedy decoding. `out_dir` empty means
/// train in memory only. One structured log line per step.
inline TrainResult train_model(ModelParams& params, const ModelConfig& model_cfg,
                               const TrainConfig& cfg, const std::vector<Example>& train_set,
                               const std::vector<Example>& val_set, const FrequentSet& frequent,
                               const Vocabulary& vocab, const std::string& out_dir,
                               std::ostream* log = nullptr) {
    cfg.validate();
    if (train_set.empty()) throw InputError("train: empty corpus");
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    TrainState state = TrainState::init(params);
    TrainResult result;
    auto checkpoint_path = [&](size_t step) {
        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_step%06zu.ckpt", step);
        return out_dir + "/" + name;
    };
    auto evaluate_and_checkpoint = [&]() {
        const double val = validation_rouge_l(params, model_cfg, frequent, vocab, val_set);
        if (!out_dir.empty()) save_checkpoint(checkpoint_path(state.step), model_cfg, params);
        if (val > state.best_val_rouge_l) {
            state.best_val_rouge_l = val;
            state.best_step = state.step;
        }
        if (log) {
            (*log) << "eval step=" << state.step << " val_rouge_l=" << val << "\n";
        }
    };

    size_t epoch = 0;
    std::vector<std::vector<size_t>> batches;
    size_t batch_index = 0;
    while (state.step < cfg.total_steps) {
        if (batch_index == batches.size()) {
            batches = make_batches(train_set.size(), cfg.batch_size, cfg.seed, epoch++);
            batch_index = 0;
        }
        std::vector<Example> batch;
        for (size_t idx : batches[batch_index]) batch.push_back(train_set[idx]);
        StepLosses losses =
            train_step(params, model_cfg, batch, frequent, cfg, state, batch_index);
        ++batch_index;
        result.last = losses;
        if (log) {
            (*log) << "step=" << state.step << " lr=" << lr_schedule(state.step, cfg)
                   << " mle=" << losses.mle << " topic=" << losses.topic
                   << " loss=" << losses.combined << "\n";
        }
        if (state.step % cfg.checkpoint_every == 0 || state.step == cfg.total_steps) {
            evaluate_and_checkpoint();
        }
    }

    result.steps = state.step;
    result.best_step = state.best_step;
    result.best_val_rouge_l = state.best_val_rouge_l;
    if (!out_dir.empty()) {
        result.best_checkpoint = out_dir + "/best.ckpt";
        detail::copy_file_bytes(checkpoint_path(state.best_step), result.best_checkpoint);
        std::ofstream marker(out_dir + "/best.txt");
        marker << "step " << state.best_step << "\nval_rouge_l " << state.best_val_rouge_l << "\n";
    }
    return result;
}

}  // namespace fame
