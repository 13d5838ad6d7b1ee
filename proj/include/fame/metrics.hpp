#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "fame/vocab.hpp"

// Evaluation suite: lexical overlap against references, diversity across
// samples, repetition, length, and unigram precision against the source
// document. Simplified ROUGE: lowercased tokens, no stemming, no bootstrap.

namespace fame {

namespace detail {

inline std::unordered_map<std::string, size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                            size_t n) {
    std::unordered_map<std::string, size_t> counts;
    if (tokens.size() < n || n == 0) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (size_t j = 1; j < n; ++j) {
            key += '\x1f';
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

inline double f1_percent(double match, double cand_total, double ref_total) {
    if (match <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
    const double p = match / cand_total;
    const double r = match / ref_total;
    return 100.0 * 2.0 * p * r / (p + r);
}

}  // namespace detail

/// F1 of clipped n-gram overlap, as a percentage. 0 when either side has no
/// n-grams.
inline double rouge_n_f1(const std::vector<std::string>& candidate,
                         const std::vector<std::string>& reference, size_t n) {
    if (n < 1 || n > 2) throw ConfigError("rouge_n_f1: n must be 1 or 2");
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    double cand_total = 0.0, ref_total = 0.0, match = 0.0;
    for (const auto& [g, c] : cand) cand_total += static_cast<double>(c);
    for (const auto& [g, c] : ref) ref_total += static_cast<double>(c);
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) match += static_cast<double>(std::min(c, it->second));
    }
    return detail::f1_percent(match, cand_total, ref_total);
}

/// F1 from the longest common subsequence, as a percentage.
inline double rouge_l_f1(const std::vector<std::string>& candidate,
                         const std::vector<std::string>& reference) {
    const size_t a = candidate.size(), b = reference.size();
    if (a == 0 || b == 0) return 0.0;
    std::vector<size_t> prev(b + 1, 0), cur(b + 1, 0);
    for (size_t i = 1; i <= a; ++i) {
        for (size_t j = 1; j <= b; ++j) {
            cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                          : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return detail::f1_percent(static_cast<double>(prev[b]), static_cast<double>(a),
                              static_cast<double>(b));
}

/// Distinct n-grams over total n-grams, pooled across all summaries.
/// 0 when there are no n-grams at all.
inline double distinct_n(const std::vector<std::vector<std::string>>& summaries, size_t n) {
    if (n < 1 || n > 3) throw ConfigError("distinct_n: n must be 1, 2 or 3");
    std::unordered_set<std::string> distinct;
    size_t total = 0;
    for (const auto& tokens : summaries) {
        for (const auto& [g, c] : detail::ngram_counts(tokens, n)) {
            distinct.insert(g);
            total += c;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

inline std::string normalize_whitespace(const std::string& text) {
    std::string out;
    bool in_space = true;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
        } else {
            if (in_space && !out.empty()) out += ' ';
            out += c;
            in_space = false;
        }
    }
    return out;
}

/// Number of distinct strings among one input's samples, after whitespace
/// normalization.
inline size_t unique_count(const std::vector<std::string>& summaries) {
    if (summaries.empty()) throw InputError("unique_count: no summaries");
    std::set<std::string> seen;
    for (const std::string& s : summaries) seen.insert(normalize_whitespace(s));
    return seen.size();
}

/// Percentage of summaries in which some non-frequent, non-reserved token
/// occurs at least twice.
inline double repetition_rate(const std::vector<std::vector<int>>& summaries,
                              const FrequentSet& frequent) {
    if (summaries.empty()) return 0.0;
    size_t repeated = 0;
    for (const auto& tokens : summaries) {
        std::unordered_map<int, size_t> counts;
        bool hit = false;
        for (int id : tokens) {
            if (id < kNumReserved || frequent.contains(id)) continue;
            if (++counts[id] >= 2) {
                hit = true;
                break;
            }
        }
        repeated += hit ? 1 : 0;
    }
    return 100.0 * static_cast<double>(repeated) / static_cast<double>(summaries.size());
}

/// Clipped unigram precision of the candidate against the document, as a
/// percentage. 0 for an empty candidate.
inline double r1_precision_vs_doc(const std::vector<std::string>& candidate,
                                  const std::vector<std::string>& document) {
    if (candidate.empty()) return 0.0;
    const auto cand = detail::ngram_counts(candidate, 1);
    const auto doc = detail::ngram_counts(document, 1);
    double match = 0.0;
    for (const auto& [g, c] : cand) {
        auto it = doc.find(g);
        if (it != doc.end()) match += static_cast<double>(std::min(c, it->second));
    }
    return 100.0 * match / static_cast<double>(candidate.size());
}

/// Source-support proxy: percentage of content tokens (not reserved, not in
/// the frequent set) whose type appears in the document. A summary with no
/// content tokens makes no unsupported claims and scores 100.
inline double keyword_precision(const std::vector<int>& candidate,
                                const std::vector<int>& document, const FrequentSet& frequent) {
    std::unordered_set<int> doc_types(document.begin(), document.end());
    size_t content = 0, supported = 0;
    for (int id : candidate) {
        if (id < kNumReserved || frequent.contains(id)) continue;
        ++content;
        if (doc_types.count(id)) ++supported;
    }
    if (content == 0) return 100.0;
    return 100.0 * static_cast<double>(supported) / static_cast<double>(content);
}

struct MetricsReport {
    double rouge1_f1 = 0.0;
    double rouge2_f1 = 0.0;
    double rougeL_f1 = 0.0;
    double distinct1 = 0.0;
    double distinct2 = 0.0;
    double distinct3 = 0.0;
    double unique = 0.0;          // mean distinct summaries per input
    double repetition_pct = 0.0;
    double mean_len = 0.0;        // content tokens per summary
    double r1_precision_vs_doc = 0.0;
    double keyword_precision_pct = 0.0;
    std::optional<double> peakiness_mean;
    size_t num_inputs = 0;
    size_t num_summaries = 0;
};

/// Everything the evaluator needs for one input: its document, reference and
/// the sampled summaries (words for text metrics, ids for the frequency
/// machinery).
struct MetricsInput {
    std::vector<std::string> document_words;
    std::vector<int> document_ids;
    std::vector<std::string> reference_words;
    std::vector<std::vector<std::string>> summary_words;
    std::vector<std::string> summary_texts;
    std::vector<std::vector<int>> summary_ids;
    std::optional<double> peakiness;
};

inline MetricsReport aggregate_metrics(const std::vector<MetricsInput>& inputs,
                                       const FrequentSet& frequent) {
    if (inputs.empty()) throw InputError("metrics: no inputs");
    MetricsReport report;
    std::vector<std::vector<std::string>> pooled_words;
    std::vector<std::vector<int>> pooled_ids;
    double peak_sum = 0.0;
    size_t peak_count = 0;
    for (const MetricsInput& in : inputs) {
        if (in.summary_words.empty()) throw InputError("metrics: input without summaries");
        ++report.num_inputs;
        report.unique += static_cast<double>(unique_count(in.summary_texts));
        for (size_t s = 0; s < in.summary_words.size(); ++s) {
            ++report.num_summaries;
            report.rouge1_f1 += rouge_n_f1(in.summary_words[s], in.reference_words, 1);
            report.rouge2_f1 += rouge_n_f1(in.summary_words[s], in.reference_words, 2);
            report.rougeL_f1 += rouge_l_f1(in.summary_words[s], in.reference_words);
            report.r1_precision_vs_doc +=
                fame::r1_precision_vs_doc(in.summary_words[s], in.document_words);
            report.keyword_precision_pct +=
                keyword_precision(in.summary_ids[s], in.document_ids, frequent);
            report.mean_len += static_cast<double>(in.summary_words[s].size());
            pooled_words.push_back(in.summary_words[s]);
            pooled_ids.push_back(in.summary_ids[s]);
        }
        if (in.peakiness) {
            peak_sum += *in.peakiness;
            ++peak_count;
        }
    }
    const double ns = static_cast<double>(report.num_summaries);
    report.rouge1_f1 /= ns;
    report.rouge2_f1 /= ns;
    report.rougeL_f1 /= ns;
    report.r1_precision_vs_doc /= ns;
    report.keyword_precision_pct /= ns;
    report.mean_len /= ns;
    report.unique /= static_cast<double>(report.num_inputs);
    report.distinct1 = distinct_n(pooled_words, 1);
    report.distinct2 = distinct_n(pooled_words, 2);
    report.distinct3 = distinct_n(pooled_words, 3);
    report.repetition_pct = repetition_rate(pooled_ids, frequent);
    if (peak_count > 0) report.peakiness_mean = peak_sum / static_cast<double>(peak_count);
    return report;
}

inline std::string report_table(const MetricsReport& r) {
    char buf[160];
    std::string out;
    auto line = [&](const char* name, double v) {
        std::snprintf(buf, sizeof(buf), "%-22s %10.4f\n", name, v);
        out += buf;
    };
    std::snprintf(buf, sizeof(buf), "%-22s %10zu\n", "inputs", r.num_inputs);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %10zu\n", "summaries", r.num_summaries);
    out += buf;
    line("rouge1_f1", r.rouge1_f1);
    line("rouge2_f1", r.rouge2_f1);
    line("rougeL_f1", r.rougeL_f1);
    line("distinct1", r.distinct1);
    line("distinct2", r.distinct2);
    line("distinct3", r.distinct3);
    line("unique", r.unique);
    line("repetition_pct", r.repetition_pct);
    line("mean_len", r.mean_len);
    line("r1_precision_vs_doc", r.r1_precision_vs_doc);
    line("keyword_precision_pct", r.keyword_precision_pct);
    if (r.peakiness_mean) {
        line("peakiness_mean", *r.peakiness_mean);
    } else {
        std::snprintf(buf, sizeof(buf), "%-22s %10s\n", "peakiness_mean", "-");
        out += buf;
    }
    return out;
}

inline nlohmann::ordered_json report_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["num_inputs"] = r.num_inputs;
    j["num_summaries"] = r.num_summaries;
    j["rouge1_f1"] = r.rouge1_f1;
    j["rouge2_f1"] = r.rouge2_f1;
    j["rougeL_f1"] = r.rougeL_f1;
    j["distinct1"] = r.distinct1;
    j["distinct2"] = r.distinct2;
    j["distinct3"] = r.distinct3;
    j["unique"] = r.unique;
    j["repetition_pct"] = r.repetition_pct;
    j["mean_len"] = r.mean_len;
    j["r1_precision_vs_doc"] = r.r1_precision_vs_doc;
    j["keyword_precision_pct"] = r.keyword_precision_pct;
    if (r.peakiness_mean) {
        j["peakiness_mean"] = *r.peakiness_mean;
    } else {
        j["peakiness_mean"] = nullptr;
    }
    return j;
}

}  // namespace fame
