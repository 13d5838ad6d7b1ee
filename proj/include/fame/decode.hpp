#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fame/focus.hpp"
#include "fame/model.hpp"
#include "fame/rng.hpp"

namespace fame {

enum class Strategy { kGreedy, kBeam, kTopK, kNucleus, kFocus, kFocusControlled, kOracleFocus };
enum class Combine { kNone, kTopK, kNucleus };

inline const char* strategy_name(Strategy s, Combine c) {
    switch (s) {
        case Strategy::kGreedy: return "greedy";
        case Strategy::kBeam: return "beam";
        case Strategy::kTopK: return "topk";
        case Strategy::kNucleus: return "nucleus";
        case Strategy::kFocus:
            return c == Combine::kTopK ? "focus+topk"
                                       : (c == Combine::kNucleus ? "focus+nucleus" : "focus");
        case Strategy::kFocusControlled: return "focus_controlled";
        default: return "oracle_focus";
    }
}

inline Strategy strategy_from_name(const std::string& name) {
    if (name == "greedy") return Strategy::kGreedy;
    if (name == "beam") return Strategy::kBeam;
    if (name == "topk") return Strategy::kTopK;
    if (name == "nucleus") return Strategy::kNucleus;
    if (name == "focus") return Strategy::kFocus;
    if (name == "focus_controlled") return Strategy::kFocusControlled;
    if (name == "oracle_focus") return Strategy::kOracleFocus;
    throw ConfigError("decode: unknown strategy '" + name + "'");
}

struct DecodeConfig {
    Strategy strategy = Strategy::kBeam;
    size_t beam_size = 4;       // standard beam decoding
    size_t sample_k = 640;      // top-k sampling truncation
    double nucleus_p = 0.95;    // nucleus sampling mass
    size_t focus_k = 10000;     // focus vocabulary size, clamped to |V|
    size_t num_samples = 10;    // sequences per input for sampling strategies
    uint64_t seed = 0;
    size_t max_len = 24;        // emitted tokens, including <eos>
    Combine combine = Combine::kNone;
    bool literal_mask = false;       // score masked steps without renormalizing
    bool length_normalize = false;  // divide beam scores by hypothesis length

    void validate() const {
        if (beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
        if (sample_k < 1) throw ConfigError("decode: sample_k must be >= 1");
        if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) {
            throw ConfigError("decode: nucleus_p must lie in (0, 1]");
        }
        if (focus_k < 1) throw ConfigError("decode: focus_k must be >= 1");
        if (num_samples < 1) throw ConfigError("decode: num_samples must be >= 1");
        if (max_len < 1) throw ConfigError("decode: max_len must be >= 1");
        if (combine != Combine::kNone && strategy != Strategy::kFocus) {
            throw ConfigError("decode: combine requires strategy=focus");
        }
    }
};

struct Hypothesis {
    std::vector<int> tokens;  // emitted tokens; ends with <eos> when finished
    double log_prob = 0.0;    // sum of per-step log-probs under the decoding distribution
    bool finished = false;
};

struct AllowedVocab {
    enum class Provenance { kFull, kSampledVk, kTopkVk, kOracle };
    std::vector<uint8_t> mask;
    Provenance provenance = Provenance::kFull;

    bool allows(int id) const { return mask[static_cast<size_t>(id)] != 0; }
    size_t count() const {
        size_t c = 0;
        for (uint8_t b : mask) c += b ? 1 : 0;
        return c;
    }
};

inline AllowedVocab full_vocab(size_t vocab_size) {
    AllowedVocab v;
    v.mask.assign(vocab_size, 1);
    v.provenance = AllowedVocab::Provenance::kFull;
    return v;
}

namespace detail {

inline void add_frequent_and_eos(AllowedVocab& v, const FrequentSet& frequent) {
    for (int id : frequent.ids) v.mask[static_cast<size_t>(id)] = 1;
    v.mask[kEos] = 1;
}

}  // namespace detail

/// Draws k distinct tokens from softmax(t_x) via Gumbel-top-k, then adds the
/// frequent set and <eos>. Deterministic per seed.
inline AllowedVocab sample_focus_vocab(const Tensor& t_x, size_t k, const FrequentSet& frequent,
                                       uint64_t seed) {
    const size_t v = t_x.size();
    if (k < 1) throw ConfigError("sample_focus_vocab: k must be >= 1");
    k = std::min(k, v);
    Rng rng(seed);
    std::vector<std::pair<double, int>> keys(v);
    for (size_t i = 0; i < v; ++i) {
        keys[i] = {t_x.at(i) + rng.next_gumbel(), static_cast<int>(i)};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<long>(k), keys.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    AllowedVocab out;
    out.mask.assign(v, 0);
    for (size_t i = 0; i < k; ++i) out.mask[static_cast<size_t>(keys[i].second)] = 1;
    out.provenance = AllowedVocab::Provenance::kSampledVk;
    detail::add_frequent_and_eos(out, frequent);
    return out;
}

/// Deterministic top-k of t_x by logit, ties broken by lower token id, plus
/// the frequent set and <eos>.
inline AllowedVocab topk_focus_vocab(const Tensor& t_x, size_t k, const FrequentSet& frequent) {
    const size_t v = t_x.size();
    if (k < 1) throw ConfigError("topk_focus_vocab: k must be >= 1");
    k = std::min(k, v);
    std::vector<int> order(v);
    for (size_t i = 0; i < v; ++i) order[i] = static_cast<int>(i);
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                      [&](int a, int b) {
                          if (t_x.at(a) != t_x.at(b)) return t_x.at(a) > t_x.at(b);
                          return a < b;
                      });
    AllowedVocab out;
    out.mask.assign(v, 0);
    for (size_t i = 0; i < k; ++i) out.mask[static_cast<size_t>(order[i])] = 1;
    out.provenance = AllowedVocab::Provenance::kTopkVk;
    detail::add_frequent_and_eos(out, frequent);
    return out;
}

/// softmax(logits + bias) restricted to the allowed set and renormalized;
/// disallowed entries are exactly 0.
inline Tensor masked_distribution(Tensor logits, Tensor bias, const AllowedVocab& allowed) {
    Tensor summed = add(nullptr, logits, bias);
    if (allowed.mask.size() != summed.size()) {
        throw DimensionError("masked_distribution: mask size does not match vocabulary");
    }
    return masked_softmax_rows(nullptr, summed, &allowed.mask);
}

/// Per-step interface consumed by every strategy: log-probabilities of the
/// next token given the emitted prefix, under the decoding distribution in
/// effect (masking included). Disallowed tokens report -inf.
class StepScorer {
public:
    virtual ~StepScorer() = default;
    virtual size_t vocab_size() const = 0;
    virtual std::vector<double> step_log_probs(const std::vector<int>& prefix) = 0;
};

/// Scores next tokens with the model's (optionally focused, optionally
/// masked) output distribution. Holds shared tensor handles; cheap to copy.
class ModelStepScorer : public StepScorer {
public:
    ModelStepScorer(const ModelParams& params, const ModelConfig& cfg, EncoderState enc,
                    Tensor per_token, AllowedVocab allowed, bool literal_mask)
        : params_(params),
          cfg_(cfg),
          enc_(std::move(enc)),
          per_token_(std::move(per_token)),
          allowed_(std::move(allowed)),
          literal_mask_(literal_mask) {}

    size_t vocab_size() const override { return cfg_.vocab_size; }

    std::vector<double> step_log_probs(const std::vector<int>& prefix) override {
        std::vector<int> inputs;
        inputs.reserve(prefix.size() + 1);
        inputs.push_back(kBos);
        inputs.insert(inputs.end(), prefix.begin(), prefix.end());
        DecoderTrace trace = decode_positions(nullptr, params_, cfg_, enc_, inputs);

        const size_t m = inputs.size();
        Tensor y_t({cfg_.hidden});
        for (size_t j = 0; j < cfg_.hidden; ++j) y_t.at(j) = trace.y.at(m - 1, j);
        Tensor logits = output_logits(nullptr, params_, y_t);
        if (cfg_.use_focus_bias) {
            const size_t n = enc_.token_mask.size();
            Tensor attn({n});
            for (size_t j = 0; j < n; ++j) attn.at(j) = trace.cross_attention.at(m - 1, j);
            logits = add(nullptr, logits, focus_bias(nullptr, attn, per_token_));
        }

        const size_t v = cfg_.vocab_size;
        std::vector<double> out(v, -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < v; ++i) {
            if (!literal_mask_ && !allowed_.allows(static_cast<int>(i))) continue;
            mx = std::max(mx, logits.at(i));
        }
        double denom = 0.0;
        for (size_t i = 0; i < v; ++i) {
            if (!literal_mask_ && !allowed_.allows(static_cast<int>(i))) continue;
            denom += std::exp(logits.at(i) - mx);
        }
        const double lse = mx + std::log(denom);
        for (size_t i = 0; i < v; ++i) {
            if (allowed_.allows(static_cast<int>(i))) out[i] = logits.at(i) - lse;
        }
        return out;
    }

private:
    ModelParams params_;
    ModelConfig cfg_;
    EncoderState enc_;
    Tensor per_token_;
    AllowedVocab allowed_;
    bool literal_mask_;
};

namespace detail {

inline size_t argmax_log_probs(const std::vector<double>& lp) {
    size_t best = 0;
    for (size_t i = 1; i < lp.size(); ++i) {
        if (lp[i] > lp[best]) best = i;
    }
    return best;
}

/// Probability-sorted support of a truncated distribution. kind: 0 = full,
/// 1 = top-k, 2 = nucleus. Ties sort by lower token id.
inline std::vector<size_t> truncated_support(const std::vector<double>& probs, int kind,
                                             size_t top_k, double nucleus_p) {
    std::vector<size_t> order;
    order.reserve(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    if (kind == 1) {
        if (order.size() > top_k) order.resize(top_k);
    } else if (kind == 2) {
        double mass = 0.0;
        size_t keep = 0;
        for (size_t i = 0; i < order.size(); ++i) {
            mass += probs[order[i]];
            keep = i + 1;
            if (mass >= nucleus_p) break;
        }
        order.resize(keep);
    }
    return order;
}

/// Inverse-CDF draw over the (renormalized) support; reports the log of the
/// renormalized probability actually used.
inline size_t draw_from_support(const std::vector<double>& probs, const std::vector<size_t>& support,
                                Rng& rng, double* step_log_prob) {
    double total = 0.0;
    for (size_t id : support) total += probs[id];
    const double u = rng.next_double() * total;
    double acc = 0.0;
    size_t chosen = support.back();
    for (size_t id : support) {
        acc += probs[id];
        if (u < acc) {
            chosen = id;
            break;
        }
    }
    if (step_log_prob) *step_log_prob = std::log(probs[chosen] / total);
    return chosen;
}

}  // namespace detail

inline Hypothesis greedy_decode(StepScorer& scorer, size_t max_len) {
    Hypothesis hyp;
    for (size_t step = 0; step < max_len; ++step) {
        const std::vector<double> lp = scorer.step_log_probs(hyp.tokens);
        const size_t next = detail::argmax_log_probs(lp);
        hyp.tokens.push_back(static_cast<int>(next));
        hyp.log_prob += lp[next];
        if (static_cast<int>(next) == kEos) {
            hyp.finished = true;
            break;
        }
    }
    return hyp;
}

/// Plain cumulative log-probability beam search. Hypotheses that emit <eos>
/// move to the finished pool; the search stops once no live hypothesis can
/// beat the best finished score (scores only decrease without length
/// normalization).
inline Hypothesis beam_search(StepScorer& scorer, size_t beam_size, size_t max_len,
                              bool length_normalize = false) {
    struct Beam {
        std::vector<int> tokens;
        double log_prob = 0.0;
    };
    auto final_score = [length_normalize](const Beam& b) {
        if (!length_normalize || b.tokens.empty()) return b.log_prob;
        return b.log_prob / static_cast<double>(b.tokens.size());
    };

    std::vector<Beam> live{{{}, 0.0}};
    std::vector<Beam> finished;
    for (size_t step = 0; step < max_len && !live.empty(); ++step) {
        struct Candidate {
            size_t parent;
            int token;
            double score;
        };
        std::vector<Candidate> candidates;
        for (size_t p = 0; p < live.size(); ++p) {
            const std::vector<double> lp = scorer.step_log_probs(live[p].tokens);
            for (size_t i = 0; i < lp.size(); ++i) {
                if (std::isinf(lp[i])) continue;
                candidates.push_back({p, static_cast<int>(i), live[p].log_prob + lp[i]});
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.parent < b.parent;
        });
        // Only the top beam_size continuations survive; an <eos> among them
        // finalizes its hypothesis, the rest stay live. Lower-ranked <eos>
        // candidates are discarded, which keeps beam(1) identical to greedy.
        std::vector<Beam> next;
        const size_t keep = std::min(beam_size, candidates.size());
        for (size_t c = 0; c < keep; ++c) {
            Beam extended = live[candidates[c].parent];
            extended.tokens.push_back(candidates[c].token);
            extended.log_prob = candidates[c].score;
            if (candidates[c].token == kEos) {
                finished.push_back(std::move(extended));
            } else {
                next.push_back(std::move(extended));
            }
        }
        live = std::move(next);
        if (!length_normalize && !finished.empty() && !live.empty()) {
            double best_finished = finished[0].log_prob;
            for (const Beam& b : finished) best_finished = std::max(best_finished, b.log_prob);
            double best_live = live[0].log_prob;
            for (const Beam& b : live) best_live = std::max(best_live, b.log_prob);
            if (best_finished >= best_live) break;
        }
    }

    const Beam* best = nullptr;
    bool best_finished = false;
    for (const Beam& b : finished) {
        if (!best || final_score(b) > final_score(*best)) {
            best = &b;
            best_finished = true;
        }
    }
    if (!best) {
        for (const Beam& b : live) {
            if (!best || final_score(b) > final_score(*best)) best = &b;
        }
    }
    Hypothesis hyp;
    if (best) {
        hyp.tokens = best->tokens;
        hyp.log_prob = best->log_prob;
        hyp.finished = best_finished;
    }
    return hyp;
}

/// One sampled sequence. kind: 0 = full distribution, 1 = top-k, 2 = nucleus.
inline Hypothesis sample_sequence(StepScorer& scorer, int kind, size_t top_k, double nucleus_p,
                                  Rng& rng, size_t max_len) {
    Hypothesis hyp;
    for (size_t step = 0; step < max_len; ++step) {
        const std::vector<double> lp = scorer.step_log_probs(hyp.tokens);
        std::vector<double> probs(lp.size(), 0.0);
        for (size_t i = 0; i < lp.size(); ++i) {
            if (!std::isinf(lp[i])) probs[i] = std::exp(lp[i]);
        }
        const std::vector<size_t> support =
            detail::truncated_support(probs, kind, top_k, nucleus_p);
        double step_lp = 0.0;
        const size_t next = detail::draw_from_support(probs, support, rng, &step_lp);
        hyp.tokens.push_back(static_cast<int>(next));
        hyp.log_prob += step_lp;
        if (static_cast<int>(next) == kEos) {
            hyp.finished = true;
            break;
        }
    }
    return hyp;
}

/// Everything decode-time that depends only on the document (and, for the
/// oracle mode, the reference): encoder state plus the topic machinery.
struct DecodeContext {
    EncoderState enc;
    Tensor per_token;  // [n x V]
    Tensor t_x;        // [V]
};

inline DecodeContext build_decode_context(const ModelParams& params, const ModelConfig& cfg,
                                          const std::vector<int>& document) {
    DecodeContext ctx;
    ctx.enc = encode(nullptr, params, cfg, document);
    ctx.per_token = token_vocab_distribution(nullptr, params.focus, params.embedding, ctx.enc.x);
    ctx.t_x = source_vocab_distribution(nullptr, ctx.per_token, ctx.enc.token_mask);
    return ctx;
}

/// Runs the configured strategy over one document. Sampling strategies
/// return cfg.num_samples hypotheses; deterministic ones return a single
/// hypothesis. `reference` is consulted only by the oracle strategy.
inline std::vector<Hypothesis> decode_document(const ModelParams& params, const ModelConfig& cfg,
                                               const FrequentSet& frequent,
                                               const std::vector<int>& document,
                                               const DecodeConfig& dcfg,
                                               const std::vector<int>* reference = nullptr) {
    dcfg.validate();
    const size_t max_len = std::min(dcfg.max_len, cfg.max_output_len - 1);
    DecodeContext ctx = build_decode_context(params, cfg, document);

    auto scorer_with = [&](const AllowedVocab& allowed, const DecodeContext& c) {
        return ModelStepScorer(params, cfg, c.enc, c.per_token, allowed, dcfg.literal_mask);
    };

    switch (dcfg.strategy) {
        case Strategy::kGreedy: {
            ModelStepScorer scorer = scorer_with(full_vocab(cfg.vocab_size), ctx);
            return {greedy_decode(scorer, max_len)};
        }
        case Strategy::kBeam: {
            ModelStepScorer scorer = scorer_with(full_vocab(cfg.vocab_size), ctx);
            return {beam_search(scorer, dcfg.beam_size, max_len, dcfg.length_normalize)};
        }
        case Strategy::kFocusControlled: {
            AllowedVocab allowed = topk_focus_vocab(ctx.t_x, dcfg.focus_k, frequent);
            ModelStepScorer scorer = scorer_with(allowed, ctx);
            return {beam_search(scorer, dcfg.beam_size, max_len, dcfg.length_normalize)};
        }
        case Strategy::kOracleFocus: {
            if (!reference || reference->empty()) {
                throw InputError("decode: oracle_focus requires the reference summary");
            }
            TopicDistribution oracle =
                oracle_topic(*reference, cfg.vocab_size, ctx.enc.token_mask.size());
            DecodeContext octx = ctx;
            octx.per_token = oracle.per_token;
            octx.t_x = oracle.t_x;
            size_t k = 0;
            for (size_t i = 0; i < oracle.t_x.size(); ++i) {
                if (oracle.t_x.at(i) == kOracleLogit) ++k;
            }
            AllowedVocab allowed = topk_focus_vocab(oracle.t_x, k, frequent);
            allowed.provenance = AllowedVocab::Provenance::kOracle;
            ModelStepScorer scorer = scorer_with(allowed, octx);
            return {beam_search(scorer, dcfg.beam_size, max_len, dcfg.length_normalize)};
        }
        case Strategy::kTopK:
        case Strategy::kNucleus: {
            const int kind = dcfg.strategy == Strategy::kTopK ? 1 : 2;
            std::vector<Hypothesis> out;
            for (size_t s = 0; s < dcfg.num_samples; ++s) {
                ModelStepScorer scorer = scorer_with(full_vocab(cfg.vocab_size), ctx);
                Rng rng(derive_stream(dcfg.seed, s, 2));
                out.push_back(sample_sequence(scorer, kind, dcfg.sample_k, dcfg.nucleus_p, rng,
                                              max_len));
            }
            return out;
        }
        case Strategy::kFocus: {
            std::vector<Hypothesis> out;
            for (size_t s = 0; s < dcfg.num_samples; ++s) {
                AllowedVocab allowed = sample_focus_vocab(ctx.t_x, dcfg.focus_k, frequent,
                                                          derive_stream(dcfg.seed, s, 1));
                ModelStepScorer scorer = scorer_with(allowed, ctx);
                if (dcfg.combine == Combine::kNone) {
                    out.push_back(beam_search(scorer, dcfg.beam_size, max_len,
                                              dcfg.length_normalize));
                } else {
                    const int kind = dcfg.combine == Combine::kTopK ? 1 : 2;
                    Rng rng(derive_stream(dcfg.seed, s, 2));
                    out.push_back(sample_sequence(scorer, kind, dcfg.sample_k, dcfg.nucleus_p, rng,
                                                  max_len));
                }
            }
            return out;
        }
    }
    throw ConfigError("decode: unhandled strategy");
}

}  // namespace fame
