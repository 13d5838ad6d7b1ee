#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fame/focus.hpp"
#include "fame/ops.hpp"
#include "fame/rng.hpp"
#include "fame/vocab.hpp"

namespace fame {

enum class HeadMix { kMean, kMax, kIndex };

inline const char* head_mix_name(HeadMix m) {
    switch (m) {
        case HeadMix::kMean: return "mean";
        case HeadMix::kMax: return "max";
        default: return "index";
    }
}

inline HeadMix head_mix_from_name(const std::string& name) {
    if (name == "mean") return HeadMix::kMean;
    if (name == "max") return HeadMix::kMax;
    if (name == "index") return HeadMix::kIndex;
    throw ConfigError("head_mix: unknown value '" + name + "'");
}

struct ModelConfig {
    size_t num_layers = 2;
    size_t hidden = 64;
    size_t filter = 128;
    size_t num_heads = 4;
    size_t vocab_size = 512;
    size_t max_input_len = 64;
    size_t max_output_len = 24;
    bool share_encoder_decoder = true;
    bool use_focus_bias = true;
    double dropout = 0.0;
    HeadMix head_mix = HeadMix::kMean;
    size_t head_index = 0;

    void validate() const {
        if (num_layers == 0 || hidden == 0 || filter == 0 || num_heads == 0 || vocab_size == 0 ||
            max_input_len == 0 || max_output_len == 0) {
            throw ConfigError("model config: all sizes must be positive");
        }
        if (hidden % num_heads != 0) {
            throw ConfigError("model config: hidden " + std::to_string(hidden) +
                              " not divisible by num_heads " + std::to_string(num_heads));
        }
        if (vocab_size < kNumReserved + 1) {
            throw ConfigError("model config: vocab_size must exceed the reserved tokens");
        }
        if (head_index >= num_heads) throw ConfigError("model config: head_index out of range");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model config: dropout must be in [0, 1)");
    }
};

struct LayerParams {
    // self attention
    Tensor wq, wk, wv, wo;   // [h x h]
    Tensor ln1_gain, ln1_bias;
    // encoder-decoder attention (used on the decoder path only)
    Tensor cq, ck, cv, co;   // [h x h]
    Tensor lnc_gain, lnc_bias;
    // position-wise feed-forward
    Tensor ffn_w1, ffn_w2;   // [h x h'], [h' x h]
    Tensor ln2_gain, ln2_bias;
};

/// All learned tensors. The embedding is shared between the input lookup,
/// the output projection and the focus layer's vocabulary map. With
/// share_encoder_decoder the encoder runs on the decoder stack's self
/// attention and feed-forward weights and enc_layers stays empty.
struct ModelParams {
    Tensor embedding;  // [V x h]
    std::vector<LayerParams> enc_layers;
    std::vector<LayerParams> dec_layers;
    Tensor enc_ln_gain, enc_ln_bias;
    Tensor dec_ln_gain, dec_ln_bias;
    FocusLayer focus;
};

namespace detail {

inline Tensor gaussian_tensor(std::vector<size_t> shape, Rng& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = std_dev * rng.next_gaussian();
    return t;
}

inline LayerParams init_layer(const ModelConfig& cfg, Rng& rng) {
    const size_t h = cfg.hidden, f = cfg.filter;
    LayerParams layer;
    layer.wq = gaussian_tensor({h, h}, rng, 0.02);
    layer.wk = gaussian_tensor({h, h}, rng, 0.02);
    layer.wv = gaussian_tensor({h, h}, rng, 0.02);
    layer.wo = gaussian_tensor({h, h}, rng, 0.02);
    layer.ln1_gain = Tensor::full({h}, 1.0);
    layer.ln1_bias = Tensor({h});
    layer.cq = gaussian_tensor({h, h}, rng, 0.02);
    layer.ck = gaussian_tensor({h, h}, rng, 0.02);
    layer.cv = gaussian_tensor({h, h}, rng, 0.02);
    layer.co = gaussian_tensor({h, h}, rng, 0.02);
    layer.lnc_gain = Tensor::full({h}, 1.0);
    layer.lnc_bias = Tensor({h});
    layer.ffn_w1 = gaussian_tensor({h, f}, rng, 0.02);
    layer.ffn_w2 = gaussian_tensor({f, h}, rng, 0.02);
    layer.ln2_gain = Tensor::full({h}, 1.0);
    layer.ln2_bias = Tensor({h});
    return layer;
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_stream(seed, 0, 0));
    ModelParams params;
    params.embedding = detail::gaussian_tensor({cfg.vocab_size, cfg.hidden}, rng, 0.02);
    if (!cfg.share_encoder_decoder) {
        for (size_t l = 0; l < cfg.num_layers; ++l)
            params.enc_layers.push_back(detail::init_layer(cfg, rng));
    }
    for (size_t l = 0; l < cfg.num_layers; ++l)
        params.dec_layers.push_back(detail::init_layer(cfg, rng));
    params.enc_ln_gain = Tensor::full({cfg.hidden}, 1.0);
    params.enc_ln_bias = Tensor({cfg.hidden});
    params.dec_ln_gain = Tensor::full({cfg.hidden}, 1.0);
    params.dec_ln_bias = Tensor({cfg.hidden});
    params.focus.w1 = detail::gaussian_tensor({cfg.hidden, cfg.filter}, rng, 0.02);
    params.focus.w2 = detail::gaussian_tensor({cfg.filter, cfg.hidden}, rng, 0.02);
    return params;
}

/// Canonical (name, tensor) listing; fixes checkpoint and optimizer order.
inline std::vector<std::pair<std::string, Tensor>> named_tensors(const ModelParams& params) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embedding", params.embedding);
    auto add_stack = [&out](const char* prefix, const std::vector<LayerParams>& layers) {
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string base = std::string(prefix) + "." + std::to_string(l) + ".";
            const LayerParams& lp = layers[l];
            out.emplace_back(base + "self.wq", lp.wq);
            out.emplace_back(base + "self.wk", lp.wk);
            out.emplace_back(base + "self.wv", lp.wv);
            out.emplace_back(base + "self.wo", lp.wo);
            out.emplace_back(base + "ln1.gain", lp.ln1_gain);
            out.emplace_back(base + "ln1.bias", lp.ln1_bias);
            out.emplace_back(base + "cross.wq", lp.cq);
            out.emplace_back(base + "cross.wk", lp.ck);
            out.emplace_back(base + "cross.wv", lp.cv);
            out.emplace_back(base + "cross.wo", lp.co);
            out.emplace_back(base + "lnc.gain", lp.lnc_gain);
            out.emplace_back(base + "lnc.bias", lp.lnc_bias);
            out.emplace_back(base + "ffn.w1", lp.ffn_w1);
            out.emplace_back(base + "ffn.w2", lp.ffn_w2);
            out.emplace_back(base + "ln2.gain", lp.ln2_gain);
            out.emplace_back(base + "ln2.bias", lp.ln2_bias);
        }
    };
    add_stack("enc", params.enc_layers);
    add_stack("dec", params.dec_layers);
    out.emplace_back("enc_ln.gain", params.enc_ln_gain);
    out.emplace_back("enc_ln.bias", params.enc_ln_bias);
    out.emplace_back("dec_ln.gain", params.dec_ln_gain);
    out.emplace_back("dec_ln.bias", params.dec_ln_bias);
    out.emplace_back("focus.w1", params.focus.w1);
    out.emplace_back("focus.w2", params.focus.w2);
    return out;
}

struct EncoderState {
    Tensor x;                        // [n x h] contextual vectors
    std::vector<uint8_t> token_mask; // non-pad positions
};

struct DecoderStepState {
    Tensor y_t;        // [h] final-layer representation of the next position
    Tensor attention;  // [num_heads x n] cross-attention rows for that position
};

namespace detail {

inline Tensor positional_encoding(size_t len, size_t hidden) {
    Tensor pe({len, hidden});
    for (size_t pos = 0; pos < len; ++pos) {
        for (size_t i = 0; i < hidden; i += 2) {
            const double rate = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(hidden));
            pe.at(pos, i) = std::sin(static_cast<double>(pos) / rate);
            if (i + 1 < hidden) pe.at(pos, i + 1) = std::cos(static_cast<double>(pos) / rate);
        }
    }
    return pe;
}

struct AttentionOut {
    Tensor out;                      // [Tq x h]
    std::vector<Tensor> head_probs;  // per head [Tq x Tk]
};

inline AttentionOut multi_head_attention(Tape* tape, const ModelConfig& cfg, Tensor queries,
                                         Tensor keys_values, Tensor wq, Tensor wk, Tensor wv,
                                         Tensor wo, const std::vector<uint8_t>& allowed) {
    const size_t d = cfg.hidden / cfg.num_heads;
    Tensor q = matmul(tape, queries, wq);
    Tensor k = matmul(tape, keys_values, wk);
    Tensor v = matmul(tape, keys_values, wv);
    AttentionOut result;
    std::vector<Tensor> contexts;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (size_t head = 0; head < cfg.num_heads; ++head) {
        Tensor qh = slice_cols(tape, q, head * d, (head + 1) * d);
        Tensor kh = slice_cols(tape, k, head * d, (head + 1) * d);
        Tensor vh = slice_cols(tape, v, head * d, (head + 1) * d);
        Tensor scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_d);
        Tensor probs = masked_softmax_rows(tape, scores, &allowed);
        result.head_probs.push_back(probs);
        contexts.push_back(matmul(tape, probs, vh));
    }
    result.out = matmul(tape, concat_cols(tape, contexts), wo);
    return result;
}

inline Tensor mix_heads(Tape* tape, const ModelConfig& cfg, const std::vector<Tensor>& heads) {
    switch (cfg.head_mix) {
        case HeadMix::kMean: {
            Tensor acc = heads[0];
            for (size_t h = 1; h < heads.size(); ++h) acc = add(tape, acc, heads[h]);
            return scale(tape, acc, 1.0 / static_cast<double>(heads.size()));
        }
        case HeadMix::kMax: {
            Tensor acc = heads[0];
            for (size_t h = 1; h < heads.size(); ++h) acc = maximum(tape, acc, heads[h]);
            return normalize_rows(tape, acc);
        }
        default:
            return heads[cfg.head_index];
    }
}

inline const std::vector<LayerParams>& encoder_stack(const ModelParams& params,
                                                     const ModelConfig& cfg) {
    return cfg.share_encoder_decoder ? params.dec_layers : params.enc_layers;
}

inline Tensor maybe_dropout(Tape* tape, const ModelConfig& cfg, Tensor x, Rng* rng) {
    if (cfg.dropout == 0.0 || rng == nullptr) return x;
    return dropout(tape, x, cfg.dropout, *rng);
}

}  // namespace detail

/// Runs the encoder stack; pad positions are masked out of all attention.
inline EncoderState encode(Tape* tape, const ModelParams& params, const ModelConfig& cfg,
                           const std::vector<int>& tokens, Rng* dropout_rng = nullptr) {
    if (tokens.empty()) throw InputError("encode: empty input");
    if (tokens.size() > cfg.max_input_len) {
        throw InputError("encode: input length " + std::to_string(tokens.size()) +
                         " exceeds max_input_len " + std::to_string(cfg.max_input_len));
    }
    for (int id : tokens) {
        if (id < 0 || static_cast<size_t>(id) >= cfg.vocab_size) {
            throw InputError("encode: token id " + std::to_string(id) + " out of range");
        }
    }
    const size_t n = tokens.size();
    EncoderState state;
    state.token_mask.resize(n);
    for (size_t i = 0; i < n; ++i) state.token_mask[i] = tokens[i] != kPad;
    bool any_live = false;
    for (uint8_t b : state.token_mask) any_live |= b != 0;
    if (!any_live) throw InputError("encode: all positions are padding");

    std::vector<uint8_t> allowed(n * n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) allowed[i * n + j] = state.token_mask[j];

    Tensor h = add(tape, embed(tape, params.embedding, tokens),
                   detail::positional_encoding(n, cfg.hidden));
    for (const LayerParams& layer : detail::encoder_stack(params, cfg)) {
        Tensor normed = layer_norm(tape, h, layer.ln1_gain, layer.ln1_bias);
        auto attn = detail::multi_head_attention(tape, cfg, normed, normed, layer.wq, layer.wk,
                                                 layer.wv, layer.wo, allowed);
        h = add(tape, h, detail::maybe_dropout(tape, cfg, attn.out, dropout_rng));
        Tensor ffn_in = layer_norm(tape, h, layer.ln2_gain, layer.ln2_bias);
        Tensor ffn = matmul(tape, gelu(tape, matmul(tape, ffn_in, layer.ffn_w1)), layer.ffn_w2);
        h = add(tape, h, detail::maybe_dropout(tape, cfg, ffn, dropout_rng));
    }
    state.x = layer_norm(tape, h, params.enc_ln_gain, params.enc_ln_bias);
    return state;
}

struct DecoderTrace {
    Tensor y;                        // [m x h] final-layer representations
    Tensor cross_attention;          // [m x n] head-mixed final-layer attention
    std::vector<Tensor> head_rows;   // per head [m x n]
};

/// Runs the decoder stack over the whole (bos-prefixed) input with causal
/// self-attention; returns every position's representation plus the final
/// layer's cross-attention.
inline DecoderTrace decode_positions(Tape* tape, const ModelParams& params, const ModelConfig& cfg,
                                     const EncoderState& enc, const std::vector<int>& inputs,
                                     Rng* dropout_rng = nullptr) {
    if (inputs.empty()) throw InputError("decode: empty prefix");
    if (inputs.size() > cfg.max_output_len) {
        throw InputError("decode: prefix length " + std::to_string(inputs.size()) +
                         " exceeds max_output_len " + std::to_string(cfg.max_output_len));
    }
    const size_t m = inputs.size();
    const size_t n = enc.token_mask.size();

    std::vector<uint8_t> causal(m * m, 0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j <= i; ++j) causal[i * m + j] = 1;
    std::vector<uint8_t> cross(m * n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) cross[i * n + j] = enc.token_mask[j];

    Tensor h = add(tape, embed(tape, params.embedding, inputs),
                   detail::positional_encoding(m, cfg.hidden));
    DecoderTrace trace;
    for (size_t l = 0; l < params.dec_layers.size(); ++l) {
        const LayerParams& layer = params.dec_layers[l];
        Tensor normed = layer_norm(tape, h, layer.ln1_gain, layer.ln1_bias);
        auto self = detail::multi_head_attention(tape, cfg, normed, normed, layer.wq, layer.wk,
                                                 layer.wv, layer.wo, causal);
        h = add(tape, h, detail::maybe_dropout(tape, cfg, self.out, dropout_rng));

        Tensor cross_in = layer_norm(tape, h, layer.lnc_gain, layer.lnc_bias);
        auto xattn = detail::multi_head_attention(tape, cfg, cross_in, enc.x, layer.cq, layer.ck,
                                                  layer.cv, layer.co, cross);
        h = add(tape, h, detail::maybe_dropout(tape, cfg, xattn.out, dropout_rng));
        if (l + 1 == params.dec_layers.size()) trace.head_rows = xattn.head_probs;

        Tensor ffn_in = layer_norm(tape, h, layer.ln2_gain, layer.ln2_bias);
        Tensor ffn = matmul(tape, gelu(tape, matmul(tape, ffn_in, layer.ffn_w1)), layer.ffn_w2);
        h = add(tape, h, detail::maybe_dropout(tape, cfg, ffn, dropout_rng));
    }
    trace.y = layer_norm(tape, h, params.dec_ln_gain, params.dec_ln_bias);
    trace.cross_attention = detail::mix_heads(tape, cfg, trace.head_rows);
    return trace;
}

/// One decoding step: representation and per-head cross-attention of the
/// position following the given prefix.
inline DecoderStepState decode_step(const ModelParams& params, const ModelConfig& cfg,
                                    const EncoderState& enc, const std::vector<int>& prefix) {
    if (prefix.empty() || prefix[0] != kBos) {
        throw InputError("decode_step: prefix must start with <bos>");
    }
    DecoderTrace trace = decode_positions(nullptr, params, cfg, enc, prefix);
    const size_t m = prefix.size();
    const size_t n = enc.token_mask.size();
    const size_t heads = trace.head_rows.size();
    DecoderStepState step;
    step.y_t = Tensor({cfg.hidden});
    for (size_t j = 0; j < cfg.hidden; ++j) step.y_t.at(j) = trace.y.at(m - 1, j);
    step.attention = Tensor({heads, n});
    for (size_t hd = 0; hd < heads; ++hd) {
        for (size_t j = 0; j < n; ++j) step.attention.at(hd, j) = trace.head_rows[hd].at(m - 1, j);
    }
    return step;
}

/// Pre-softmax output logits E y_t for one position.
inline Tensor output_logits(Tape* tape, const ModelParams& params, Tensor y_t) {
    return matmul_nt(tape, y_t, params.embedding);
}

struct LossBreakdown {
    Tensor mle;    // scalar
    Tensor topic;  // scalar
    Tensor t_x;    // [V] topic distribution of the document
};

/// Teacher-forced losses for one example. The decoder input is the
/// bos-shifted reference; steps whose target is <pad> are excluded. With
/// use_focus_bias the per-step distribution is the focused one.
inline LossBreakdown example_losses(Tape* tape, const ModelParams& params, const ModelConfig& cfg,
                                    const std::vector<int>& document,
                                    const std::vector<int>& reference, const TopicTarget& target,
                                    Rng* dropout_rng = nullptr) {
    if (reference.empty()) throw InputError("loss: empty reference");
    EncoderState enc = encode(tape, params, cfg, document, dropout_rng);

    std::vector<int> inputs;
    inputs.reserve(reference.size());
    inputs.push_back(kBos);
    for (size_t i = 0; i + 1 < reference.size(); ++i) inputs.push_back(reference[i]);
    DecoderTrace trace = decode_positions(tape, params, cfg, enc, inputs, dropout_rng);

    Tensor logits = matmul_nt(tape, trace.y, params.embedding);
    Tensor per_token = token_vocab_distribution(tape, params.focus, params.embedding, enc.x);
    if (cfg.use_focus_bias) {
        Tensor bias = focus_bias(tape, trace.cross_attention, per_token);
        logits = add(tape, logits, bias);
    }
    std::vector<uint8_t> use(reference.size());
    for (size_t i = 0; i < reference.size(); ++i) use[i] = reference[i] != kPad;

    LossBreakdown out;
    out.mle = pick_nll_mean(tape, log_softmax_rows(tape, logits), reference, use);
    out.t_x = source_vocab_distribution(tape, per_token, enc.token_mask);
    out.topic = topic_loss(tape, out.t_x, target);
    return out;
}

/// Mean per-step cross-entropy of the next-token distribution against the
/// reference (teacher forcing).
inline double mle_loss(const ModelParams& params, const ModelConfig& cfg,
                       const std::vector<int>& document, const std::vector<int>& reference) {
    TopicTarget empty;
    empty.membership.assign(cfg.vocab_size, 0);
    return example_losses(nullptr, params, cfg, document, reference, empty).mle.item();
}

}  // namespace fame
