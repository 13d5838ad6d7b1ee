#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fame/rng.hpp"
#include "fame/vocab.hpp"

namespace fame {

struct RawExample {
    std::string document;
    std::string summary;
};

/// Tokenized training pair. The reference always ends with <eos>.
struct Example {
    std::vector<int> document;
    std::vector<int> reference;
};

inline std::vector<RawExample> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("corpus: cannot open " + path);
    std::vector<RawExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object() || !obj.contains("document") ||
            !obj.contains("summary") || !obj["document"].is_string() || !obj["summary"].is_string()) {
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected {\"document\": str, \"summary\": str}");
        }
        out.push_back({obj["document"].get<std::string>(), obj["summary"].get<std::string>()});
    }
    return out;
}

inline void save_jsonl(const std::string& path, const std::vector<RawExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("corpus: cannot write " + path);
    for (const RawExample& ex : examples) {
        nlohmann::ordered_json obj;
        obj["document"] = ex.document;
        obj["summary"] = ex.summary;
        out << obj.dump() << '\n';
    }
}

/// Tokenizes and truncates one raw pair: documents keep their first n_max
/// tokens, references their first m_max-1 plus the closing <eos>.
inline Example prepare_example(const RawExample& raw, const Vocabulary& vocab, size_t n_max,
                               size_t m_max) {
    Example ex;
    ex.document = tokenize(raw.document, vocab);
    if (ex.document.empty()) throw InputError("corpus: empty document");
    if (ex.document.size() > n_max) ex.document.resize(n_max);
    ex.reference = tokenize(raw.summary, vocab);
    if (ex.reference.empty()) throw InputError("corpus: empty summary");
    if (ex.reference.size() > m_max - 1) ex.reference.resize(m_max - 1);
    ex.reference.push_back(kEos);
    return ex;
}

inline std::vector<Example> prepare_corpus(const std::vector<RawExample>& raw,
                                           const Vocabulary& vocab, size_t n_max, size_t m_max) {
    std::vector<Example> out;
    out.reserve(raw.size());
    for (const RawExample& r : raw) out.push_back(prepare_example(r, vocab, n_max, m_max));
    return out;
}

/// Deterministic epoch batching: a seeded Fisher-Yates shuffle of the index
/// set, then contiguous chunks. Every example appears exactly once.
inline std::vector<std::vector<size_t>> make_batches(size_t num_examples, size_t batch_size,
                                                     uint64_t seed, uint64_t epoch) {
    if (batch_size == 0) throw ConfigError("make_batches: batch_size must be positive");
    std::vector<size_t> order(num_examples);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(derive_stream(seed, epoch, 3));
    for (size_t i = num_examples; i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.next_u64() % i);
        std::swap(order[i - 1], order[j]);
    }
    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < num_examples; start += batch_size) {
        const size_t end = std::min(num_examples, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

}  // namespace fame
