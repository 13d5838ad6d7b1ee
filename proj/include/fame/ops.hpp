#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "fame/rng.hpp"
#include "fame/tensor.hpp"

// Differentiable primitives. Every op takes the recording tape as its first
// argument; pass nullptr to run forward-only (decoding, finite differences).
// Backward closures accumulate with += so parameter reuse (shared embeddings,
// tied encoder/decoder stacks) falls out of the linear replay for free.

namespace fame {

namespace detail {

inline void require_same_shape(Tensor a, Tensor b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() +
                             " vs " + b.shape_string());
    }
}

inline void require_matrix_like(const Tensor& t, const char* op) {
    if (t.rank() != 1 && t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + t.shape_string());
    }
}

inline double stable_row_max(const double* row, size_t n, const uint8_t* allowed) {
    double m = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
        if (allowed && !allowed[j]) continue;
        m = std::max(m, row[j]);
    }
    return m;
}

}  // namespace detail

inline Tensor add(Tape* tape, Tensor a, Tensor b) {
    detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + b.at(i);
    if (tape) {
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor scale(Tape* tape, Tensor a, double c) {
    Tensor out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * c;
    if (tape) {
        tape->record([a, out, c]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }
    return out;
}

inline Tensor mul(Tape* tape, Tensor a, Tensor b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
    if (tape) {
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * b.at(i);
                gb[i] += g[i] * a.at(i);
            }
        });
    }
    return out;
}

// Elementwise max; ties send the gradient to the first operand.
inline Tensor maximum(Tape* tape, Tensor a, Tensor b) {
    detail::require_same_shape(a, b, "maximum");
    Tensor out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) >= b.at(i) ? a.at(i) : b.at(i);
    if (tape) {
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& ga = a.grad();
            auto& gb = b.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                if (a.at(i) >= b.at(i)) ga[i] += g[i];
                else gb[i] += g[i];
            }
        });
    }
    return out;
}

/// a[m×k] · b[k×n] -> [m×n]. A rank-1 `a` is treated as a single row and
/// yields a rank-1 result. Backward: dA = dC·Bt, dB = At·dC.
inline Tensor matmul(Tape* tape, Tensor a, Tensor b) {
    detail::require_matrix_like(a, "matmul");
    if (b.rank() != 2) throw DimensionError("matmul: rhs must be rank 2, got " + b.shape_string());
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (k != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    Tensor out(a.rank() == 1 ? std::vector<size_t>{n} : std::vector<size_t>{m, n});
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* pc = out.values().data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = pb + kk * n;
            double* crow = pc + i * n;
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    if (tape) {
        tape->record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* pa = a.values().data();
            const double* pb = b.values().data();
            double* ga = a.grad().data();
            double* gb = b.grad().data();
            for (size_t i = 0; i < m; ++i) {
                for (size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (size_t kk = 0; kk < k; ++kk) {
                        ga[i * k + kk] += gij * pb[kk * n + j];
                        gb[kk * n + j] += pa[i * k + kk] * gij;
                    }
                }
            }
        });
    }
    return out;
}

/// a[m×k] · b[n×k]t -> [m×n] without materializing the transpose.
inline Tensor matmul_nt(Tape* tape, Tensor a, Tensor b) {
    detail::require_matrix_like(a, "matmul_nt");
    if (b.rank() != 2) throw DimensionError("matmul_nt: rhs must be rank 2, got " + b.shape_string());
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (k != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions disagree, " + a.shape_string() + " vs " +
                             b.shape_string() + " transposed");
    }
    Tensor out(a.rank() == 1 ? std::vector<size_t>{n} : std::vector<size_t>{m, n});
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* pc = out.values().data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* arow = pa + i * k;
            const double* brow = pb + j * k;
            for (size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            pc[i * n + j] = acc;
        }
    }
    if (tape) {
        tape->record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* pa = a.values().data();
            const double* pb = b.values().data();
            double* ga = a.grad().data();
            double* gb = b.grad().data();
            for (size_t i = 0; i < m; ++i) {
                for (size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (size_t kk = 0; kk < k; ++kk) {
                        ga[i * k + kk] += gij * pb[j * k + kk];
                        gb[j * k + kk] += gij * pa[i * k + kk];
                    }
                }
            }
        });
    }
    return out;
}

/// Row gather: out[t,:] = table[ids[t],:]. Backward scatter-adds into table.
inline Tensor embed(Tape* tape, Tensor table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embed: table must be rank 2");
    const size_t v = table.rows(), h = table.cols();
    if (ids.empty()) throw InputError("embed: empty id sequence");
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= v) {
            throw InputError("embed: token id " + std::to_string(id) + " out of range for vocab " +
                             std::to_string(v));
        }
    }
    Tensor out({ids.size(), h});
    for (size_t t = 0; t < ids.size(); ++t) {
        const double* src = table.values().data() + static_cast<size_t>(ids[t]) * h;
        std::copy(src, src + h, out.values().data() + t * h);
    }
    if (tape) {
        tape->record([table, out, ids, h]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* gt = table.grad().data();
            for (size_t t = 0; t < ids.size(); ++t) {
                double* dst = gt + static_cast<size_t>(ids[t]) * h;
                const double* src = g + t * h;
                for (size_t j = 0; j < h; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

/// Exact GELU, x·Phi(x) with the erf-based Gaussian CDF.
inline Tensor gelu(Tape* tape, Tensor x) {
    Tensor out(x.shape());
    for (size_t i = 0; i < x.size(); ++i) {
        const double v = x.at(i);
        out.at(i) = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244));
    }
    if (tape) {
        tape->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                const double v = x.at(i);
                const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
                const double pdf = std::exp(-0.5 * v * v) * 0.3989422804014326779;
                gx[i] += g[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

inline Tensor sigmoid(Tape* tape, Tensor x) {
    Tensor out(x.shape());
    for (size_t i = 0; i < x.size(); ++i) {
        const double v = x.at(i);
        out.at(i) = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                             : std::exp(v) / (1.0 + std::exp(v));
    }
    if (tape) {
        tape->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                const double s = out.at(i);
                gx[i] += g[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

constexpr double kLayerNormEps = 1e-6;

/// Per-row layer normalization with affine gain/bias over the last axis.
inline Tensor layer_norm(Tape* tape, Tensor x, Tensor gain, Tensor bias) {
    detail::require_matrix_like(x, "layer_norm");
    const size_t m = x.rows(), n = x.cols();
    if (n < 2) throw DimensionError("layer_norm: need at least 2 features, got " + x.shape_string());
    if (gain.size() != n || bias.size() != n) {
        throw DimensionError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
    }
    Tensor out(x.shape());
    std::vector<double> means(m), inv_stds(m);
    for (size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        means[i] = mean;
        inv_stds[i] = inv;
        double* orow = out.values().data() + i * n;
        for (size_t j = 0; j < n; ++j) {
            orow[j] = (row[j] - mean) * inv * gain.at(j) + bias.at(j);
        }
    }
    if (tape) {
        tape->record([x, gain, bias, out, means, inv_stds, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            double* gg = gain.grad().data();
            double* gb = bias.grad().data();
            for (size_t i = 0; i < m; ++i) {
                const double* row = x.values().data() + i * n;
                const double* grow = g + i * n;
                const double mean = means[i], inv = inv_stds[i];
                double dvar = 0.0, dmean = 0.0, dsum = 0.0;
                for (size_t j = 0; j < n; ++j) {
                    const double xhat = (row[j] - mean) * inv;
                    const double dxhat = grow[j] * gain.at(j);
                    gg[j] += grow[j] * xhat;
                    gb[j] += grow[j];
                    dvar += dxhat * (row[j] - mean);
                    dmean += dxhat;
                    dsum += row[j] - mean;
                }
                dvar *= -0.5 * inv * inv * inv;
                dmean = -dmean * inv + dvar * (-2.0 / static_cast<double>(n)) * dsum;
                double* gxrow = gx + i * n;
                for (size_t j = 0; j < n; ++j) {
                    const double dxhat = grow[j] * gain.at(j);
                    gxrow[j] += dxhat * inv +
                                dvar * 2.0 * (row[j] - mean) / static_cast<double>(n) +
                                dmean / static_cast<double>(n);
                }
            }
        });
    }
    return out;
}

/// Row-wise softmax restricted to `allowed` entries (row-major bytes, same
/// extent as x; nullptr = all allowed). Disallowed entries are exactly 0 in
/// the output and receive exactly 0 gradient. Max-subtraction throughout.
inline Tensor masked_softmax_rows(Tape* tape, Tensor x, const std::vector<uint8_t>* allowed) {
    detail::require_matrix_like(x, "softmax");
    const size_t m = x.rows(), n = x.cols();
    if (n == 0 || x.size() == 0) throw DimensionError("softmax: empty input");
    if (allowed && allowed->size() != m * n) {
        throw DimensionError("softmax: mask size " + std::to_string(allowed->size()) +
                             " does not match " + x.shape_string());
    }
    Tensor out(x.shape());
    for (size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        const uint8_t* arow = allowed ? allowed->data() + i * n : nullptr;
        size_t live = 0;
        if (arow) {
            for (size_t j = 0; j < n; ++j) live += arow[j] ? 1 : 0;
        } else {
            live = n;
        }
        if (live == 0) throw ContractError("softmax: row " + std::to_string(i) + " has no allowed entries");
        const double mx = detail::stable_row_max(row, n, arow);
        double denom = 0.0;
        double* orow = out.values().data() + i * n;
        for (size_t j = 0; j < n; ++j) {
            if (arow && !arow[j]) {
                orow[j] = 0.0;
                continue;
            }
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (size_t j = 0; j < n; ++j) orow[j] /= denom;
    }
    if (tape) {
        tape->record([x, out, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            for (size_t i = 0; i < m; ++i) {
                const double* p = out.values().data() + i * n;
                const double* grow = g + i * n;
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j) dot += p[j] * grow[j];
                double* gxrow = gx + i * n;
                for (size_t j = 0; j < n; ++j) gxrow[j] += p[j] * (grow[j] - dot);
            }
        });
    }
    return out;
}

inline Tensor softmax(Tape* tape, Tensor x) { return masked_softmax_rows(tape, x, nullptr); }

/// Row-wise log-softmax (stable): out = x - logsumexp(row).
inline Tensor log_softmax_rows(Tape* tape, Tensor x) {
    detail::require_matrix_like(x, "log_softmax");
    const size_t m = x.rows(), n = x.cols();
    if (n == 0 || x.size() == 0) throw DimensionError("log_softmax: empty input");
    Tensor out(x.shape());
    for (size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        const double mx = detail::stable_row_max(row, n, nullptr);
        double denom = 0.0;
        for (size_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
        const double lse = mx + std::log(denom);
        double* orow = out.values().data() + i * n;
        for (size_t j = 0; j < n; ++j) orow[j] = row[j] - lse;
    }
    if (tape) {
        tape->record([x, out, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            for (size_t i = 0; i < m; ++i) {
                const double* lp = out.values().data() + i * n;
                const double* grow = g + i * n;
                double gsum = 0.0;
                for (size_t j = 0; j < n; ++j) gsum += grow[j];
                double* gxrow = gx + i * n;
                for (size_t j = 0; j < n; ++j) gxrow[j] += grow[j] - std::exp(lp[j]) * gsum;
            }
        });
    }
    return out;
}

/// -logp[target] for a log-distribution over n classes.
inline Tensor cross_entropy(Tape* tape, Tensor logp, size_t target_index) {
    if (logp.rank() != 1 || logp.size() == 0) {
        throw DimensionError("cross_entropy: expected non-empty vector, got " + logp.shape_string());
    }
    if (target_index >= logp.size()) {
        throw IndexError("cross_entropy: target " + std::to_string(target_index) +
                         " out of range for " + std::to_string(logp.size()) + " classes");
    }
    const double mx = detail::stable_row_max(logp.values().data(), logp.size(), nullptr);
    double denom = 0.0;
    for (size_t j = 0; j < logp.size(); ++j) denom += std::exp(logp.at(j) - mx);
    const double lse = mx + std::log(denom);
    if (std::abs(lse) > 1e-9) {
        throw ContractError("cross_entropy: input is not a log-distribution (logsumexp = " +
                            std::to_string(lse) + ")");
    }
    Tensor out = Tensor::scalar(-logp.at(target_index));
    if (tape) {
        tape->record([logp, out, target_index]() mutable {
            if (!out.has_grad()) return;
            logp.grad()[target_index] -= out.grad()[0];
        });
    }
    return out;
}

/// Mean of -logp[i, target_i] over the rows where use[i] is set.
inline Tensor pick_nll_mean(Tape* tape, Tensor logp, const std::vector<int>& targets,
                            const std::vector<uint8_t>& use) {
    if (logp.rank() != 2) throw DimensionError("pick_nll_mean: expected rank 2");
    const size_t m = logp.rows(), n = logp.cols();
    if (targets.size() != m || use.size() != m) {
        throw DimensionError("pick_nll_mean: targets/use length must match rows");
    }
    size_t count = 0;
    double acc = 0.0;
    for (size_t i = 0; i < m; ++i) {
        if (!use[i]) continue;
        if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= n) {
            throw IndexError("pick_nll_mean: target out of range at row " + std::to_string(i));
        }
        acc -= logp.at(i, static_cast<size_t>(targets[i]));
        ++count;
    }
    if (count == 0) throw InputError("pick_nll_mean: no rows in use");
    Tensor out = Tensor::scalar(acc / static_cast<double>(count));
    if (tape) {
        tape->record([logp, out, targets, use, count, n]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0] / static_cast<double>(count);
            double* gl = logp.grad().data();
            for (size_t i = 0; i < targets.size(); ++i) {
                if (use[i]) gl[i * n + static_cast<size_t>(targets[i])] -= g;
            }
        });
    }
    return out;
}

/// Mean of the rows selected by `mask` -> vector over columns.
inline Tensor masked_row_mean(Tape* tape, Tensor x, const std::vector<uint8_t>& mask) {
    if (x.rank() != 2) throw DimensionError("masked_row_mean: expected rank 2");
    const size_t m = x.rows(), n = x.cols();
    if (mask.size() != m) throw DimensionError("masked_row_mean: mask length must match rows");
    size_t count = 0;
    for (uint8_t b : mask) count += b ? 1 : 0;
    if (count == 0) throw InputError("masked_row_mean: every row is masked out");
    Tensor out({n});
    for (size_t i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        const double* row = x.values().data() + i * n;
        for (size_t j = 0; j < n; ++j) out.at(j) += row[j];
    }
    for (size_t j = 0; j < n; ++j) out.at(j) /= static_cast<double>(count);
    if (tape) {
        tape->record([x, out, mask, count, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            const double inv = 1.0 / static_cast<double>(count);
            for (size_t i = 0; i < m; ++i) {
                if (!mask[i]) continue;
                double* gxrow = gx + i * n;
                for (size_t j = 0; j < n; ++j) gxrow[j] += g[j] * inv;
            }
        });
    }
    return out;
}

/// Mean over all classes of the binary cross-entropy between sigmoid(logit)
/// and the 0/1 target, computed in log-space via softplus.
inline Tensor bce_with_logits_mean(Tape* tape, Tensor logits,
                                   const std::vector<uint8_t>& targets) {
    if (logits.rank() != 1 || logits.size() == 0) {
        throw DimensionError("bce_with_logits_mean: expected non-empty vector");
    }
    const size_t n = logits.size();
    if (targets.size() != n) throw DimensionError("bce_with_logits_mean: target length mismatch");
    auto softplus = [](double v) {
        return std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0);
    };
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double v = logits.at(i);
        acc += targets[i] ? softplus(-v) : softplus(v);
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    if (tape) {
        tape->record([logits, out, targets, n]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0] / static_cast<double>(n);
            double* gl = logits.grad().data();
            for (size_t i = 0; i < n; ++i) {
                const double v = logits.at(i);
                const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                          : std::exp(v) / (1.0 + std::exp(v));
                gl[i] += g * (s - (targets[i] ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

inline Tensor sum(Tape* tape, Tensor x) {
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += x.at(i);
    Tensor out = Tensor::scalar(acc);
    if (tape) {
        tape->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0];
            auto& gx = x.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

inline Tensor slice_cols(Tape* tape, Tensor x, size_t c0, size_t c1) {
    if (x.rank() != 2) throw DimensionError("slice_cols: expected rank 2");
    const size_t m = x.rows(), n = x.cols();
    if (c0 >= c1 || c1 > n) throw IndexError("slice_cols: bad column range");
    const size_t w = c1 - c0;
    Tensor out({m, w});
    for (size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n + c0;
        std::copy(row, row + w, out.values().data() + i * w);
    }
    if (tape) {
        tape->record([x, out, c0, m, n, w]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            for (size_t i = 0; i < m; ++i) {
                for (size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
            }
        });
    }
    return out;
}

inline Tensor concat_cols(Tape* tape, std::vector<Tensor> parts) {
    if (parts.empty()) throw InputError("concat_cols: nothing to concatenate");
    const size_t m = parts[0].rows();
    size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
        total += p.cols();
    }
    Tensor out({m, total});
    size_t off = 0;
    for (const Tensor& p : parts) {
        const size_t w = p.cols();
        for (size_t i = 0; i < m; ++i) {
            const double* row = p.values().data() + i * w;
            std::copy(row, row + w, out.values().data() + i * total + off);
        }
        off += w;
    }
    if (tape) {
        tape->record([parts, out, m, total]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            size_t off = 0;
            for (Tensor& p : parts) {
                const size_t w = p.cols();
                double* gp = p.grad().data();
                for (size_t i = 0; i < m; ++i) {
                    for (size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
                }
                off += w;
            }
        });
    }
    return out;
}

/// Divide each row by its sum. Rows must have nonzero sum.
inline Tensor normalize_rows(Tape* tape, Tensor x) {
    detail::require_matrix_like(x, "normalize_rows");
    const size_t m = x.rows(), n = x.cols();
    Tensor out(x.shape());
    std::vector<double> sums(m);
    for (size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) s += row[j];
        if (s == 0.0) throw ContractError("normalize_rows: row " + std::to_string(i) + " sums to 0");
        sums[i] = s;
        double* orow = out.values().data() + i * n;
        for (size_t j = 0; j < n; ++j) orow[j] = row[j] / s;
    }
    if (tape) {
        tape->record([x, out, sums, m, n]() mutable {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            for (size_t i = 0; i < m; ++i) {
                const double* row = x.values().data() + i * n;
                const double* grow = g + i * n;
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j) dot += grow[j] * row[j];
                const double inv = 1.0 / sums[i];
                double* gxrow = gx + i * n;
                for (size_t j = 0; j < n; ++j) gxrow[j] += grow[j] * inv - dot * inv * inv;
            }
        });
    }
    return out;
}

/// Inverted dropout; a no-op when rate == 0. Draws one uniform per element.
inline Tensor dropout(Tape* tape, Tensor x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
    if (rate == 0.0) return x;
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x.size());
    Tensor out(x.shape());
    for (size_t i = 0; i < x.size(); ++i) {
        (*mask)[i] = rng.next_double() < keep ? 1.0 / keep : 0.0;
        out.at(i) = x.at(i) * (*mask)[i];
    }
    if (tape) {
        tape->record([x, out, mask]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        });
    }
    return out;
}

}  // namespace fame
