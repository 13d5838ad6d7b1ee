#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "fame/ops.hpp"
#include "fame/vocab.hpp"

// Focus attention: a source-conditioned bias on the vocabulary logits. Each
// source position gets similarity logits over the whole vocabulary; their
// attention-weighted mixture is added to the decoder output logits, and
// their mean (the topic distribution) is supervised towards the reference's
// content-token types.

namespace fame {

struct FocusLayer {
    Tensor w1;  // [hidden x filter]
    Tensor w2;  // [filter x hidden]
};

/// gelu(x W1) W2 Et. `x` may be a single vector [h] or all source rows
/// [n x h]; the result has one vocabulary row per input row.
inline Tensor token_vocab_distribution(Tape* tape, const FocusLayer& focus, Tensor embedding,
                                       Tensor x) {
    Tensor hidden = gelu(tape, matmul(tape, x, focus.w1));
    Tensor back = matmul(tape, hidden, focus.w2);
    return matmul_nt(tape, back, embedding);
}

/// Mean of the per-token vocabulary rows over non-pad source positions.
inline Tensor source_vocab_distribution(Tape* tape, Tensor per_token,
                                        const std::vector<uint8_t>& token_mask) {
    return masked_row_mean(tape, per_token, token_mask);
}

/// Attention-weighted mixture of per-token vocabulary rows. `attention` is a
/// distribution over source positions (one row per decoding step); every row
/// must sum to 1 within 1e-6.
inline Tensor focus_bias(Tape* tape, Tensor attention, Tensor per_token) {
    const size_t rows = attention.rows(), n = attention.cols();
    if (n != per_token.rows()) {
        throw DimensionError("focus_bias: attention covers " + std::to_string(n) +
                             " positions but per-token matrix has " +
                             std::to_string(per_token.rows()) + " rows");
    }
    for (size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) s += attention.at(i * n + j);
        if (std::abs(s - 1.0) > 1e-6) {
            throw ContractError("focus_bias: attention row " + std::to_string(i) +
                                " sums to " + std::to_string(s));
        }
    }
    return matmul(tape, attention, per_token);
}

/// softmax(logits + bias): the focused probability distribution.
inline Tensor focused_distribution(Tape* tape, Tensor logits, Tensor bias) {
    return softmax(tape, add(tape, logits, bias));
}

/// Indicator of the reference's content-token types: token types of the
/// reference minus the frequent set, reserved ids excluded.
struct TopicTarget {
    std::vector<uint8_t> membership;
};

inline TopicTarget make_topic_target(const std::vector<int>& reference, size_t vocab_size,
                                     const FrequentSet& frequent) {
    TopicTarget target;
    target.membership.assign(vocab_size, 0);
    for (int id : reference) {
        if (id < kNumReserved) continue;
        if (frequent.contains(id)) continue;
        if (id < 0 || static_cast<size_t>(id) >= vocab_size) {
            throw InputError("topic target: reference id " + std::to_string(id) + " out of range");
        }
        target.membership[static_cast<size_t>(id)] = 1;
    }
    return target;
}

/// Per-vocabulary-item binary cross-entropy between sigmoid(t_x) and the
/// content-type indicator, averaged over the full vocabulary.
inline Tensor topic_loss(Tape* tape, Tensor t_x, const TopicTarget& target) {
    if (t_x.size() != target.membership.size()) {
        throw DimensionError("topic_loss: distribution size " + std::to_string(t_x.size()) +
                             " vs target size " + std::to_string(target.membership.size()));
    }
    return bce_with_logits_mean(tape, t_x, target.membership);
}

inline double combined_loss(double mle, double topic, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("combined_loss: lambda must lie in [0, 1]");
    }
    return lambda * mle + (1.0 - lambda) * topic;
}

inline Tensor combined_loss(Tape* tape, Tensor mle, Tensor topic, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("combined_loss: lambda must lie in [0, 1]");
    }
    return add(tape, scale(tape, mle, lambda), scale(tape, topic, 1.0 - lambda));
}

/// Slope between the top-1st and top-w-th sorted logits, w = min(100, |V|).
inline double peakiness(const Tensor& t_x) {
    if (t_x.size() < 2) throw InputError("peakiness: need at least 2 logits");
    std::vector<double> sorted(t_x.values());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    const size_t w = std::min<size_t>(100, sorted.size());
    return (sorted[0] - sorted[w - 1]) / static_cast<double>(w - 1);
}

/// Reference-derived replacement for the topic distribution: +M logits on
/// the reference's token types, -M elsewhere. Every per-token row is the
/// same vector, so the focus bias equals it under any attention.
constexpr double kOracleLogit = 20.0;

struct TopicDistribution {
    Tensor t_x;       // [V]
    Tensor per_token; // [n x V]
};

inline TopicDistribution oracle_topic(const std::vector<int>& reference, size_t vocab_size,
                                      size_t num_source_positions) {
    if (reference.empty()) throw InputError("oracle_topic: empty reference");
    std::unordered_set<int> types(reference.begin(), reference.end());
    TopicDistribution oracle;
    oracle.t_x = Tensor({vocab_size});
    for (size_t i = 0; i < vocab_size; ++i) {
        oracle.t_x.at(i) = types.count(static_cast<int>(i)) ? kOracleLogit : -kOracleLogit;
    }
    oracle.per_token = Tensor({num_source_positions, vocab_size});
    for (size_t r = 0; r < num_source_positions; ++r) {
        std::copy(oracle.t_x.values().begin(), oracle.t_x.values().end(),
                  oracle.per_token.values().begin() + r * vocab_size);
    }
    return oracle;
}

}  // namespace fame
