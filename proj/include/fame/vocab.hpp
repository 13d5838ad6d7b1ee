#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fame/error.hpp"

namespace fame {

constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;
constexpr int kNumReserved = 4;

inline const char* reserved_token_string(int id) {
    switch (id) {
        case kPad: return "<pad>";
        case kBos: return "<bos>";
        case kEos: return "<eos>";
        default: return "<unk>";
    }
}

/// Frequency-ranked word vocabulary with fixed reserved ids.
class Vocabulary {
public:
    Vocabulary() {
        for (int i = 0; i < kNumReserved; ++i) {
            tokens_.push_back(reserved_token_string(i));
            freqs_.push_back(0);
        }
        for (int i = 0; i < kNumReserved; ++i) ids_[tokens_[i]] = i;
    }

    size_t size() const { return tokens_.size(); }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
            throw IndexError("vocab: id " + std::to_string(id) + " out of range");
        }
        return tokens_[static_cast<size_t>(id)];
    }

    int id_or_unk(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    uint64_t frequency(int id) const { return freqs_[static_cast<size_t>(id)]; }

    int add(const std::string& token, uint64_t freq) {
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        freqs_.push_back(freq);
        ids_[token] = id;
        return id;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw InputError("vocab: cannot write " + path);
        for (size_t i = 0; i < tokens_.size(); ++i) {
            out << tokens_[i] << '\t' << freqs_[i] << '\n';
        }
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw InputError("vocab: cannot read " + path);
        Vocabulary v;
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const size_t tab = line.find('\t');
            if (tab == std::string::npos) {
                throw ParseError("vocab: malformed line " + std::to_string(lineno) + " in " + path);
            }
            const std::string tok = line.substr(0, tab);
            const uint64_t freq = std::stoull(line.substr(tab + 1));
            if (lineno <= kNumReserved) {
                v.freqs_[lineno - 1] = freq;
            } else {
                v.add(tok, freq);
            }
        }
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::vector<uint64_t> freqs_;
    std::unordered_map<std::string, int> ids_;
};

/// The |F| most frequent non-reserved training tokens, ties broken by lower
/// token id. Always allowed during masked decoding.
struct FrequentSet {
    std::vector<int> ids;            // ordered by (frequency desc, id asc)
    std::vector<uint8_t> member;     // indexed by token id

    bool contains(int id) const {
        return id >= 0 && static_cast<size_t>(id) < member.size() && member[static_cast<size_t>(id)];
    }

    size_t size() const { return ids.size(); }

    static FrequentSet from_vocab(const Vocabulary& vocab, size_t freq_set_size) {
        std::vector<int> order;
        for (size_t id = kNumReserved; id < vocab.size(); ++id) order.push_back(static_cast<int>(id));
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (vocab.frequency(a) != vocab.frequency(b)) return vocab.frequency(a) > vocab.frequency(b);
            return a < b;
        });
        if (order.size() < freq_set_size) {
            throw InputError("frequent set: requested " + std::to_string(freq_set_size) +
                             " tokens but vocabulary has only " + std::to_string(order.size()) +
                             " non-reserved entries");
        }
        FrequentSet f;
        f.ids.assign(order.begin(), order.begin() + static_cast<long>(freq_set_size));
        f.member.assign(vocab.size(), 0);
        for (int id : f.ids) f.member[static_cast<size_t>(id)] = 1;
        return f;
    }
};

/// Lowercased whitespace word split.
inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

/// Builds the vocabulary from a stream of (already split) corpus tokens:
/// the size-4 highest-frequency words keep their own ids in rank order,
/// ties broken by first occurrence; everything else maps to <unk>.
inline std::pair<Vocabulary, FrequentSet> build_vocab(const std::vector<std::string>& corpus_tokens,
                                                      size_t size, size_t freq_set_size) {
    if (size <= freq_set_size + kNumReserved) {
        throw ConfigError("build_vocab: size must exceed freq_set_size + " +
                          std::to_string(kNumReserved));
    }
    std::unordered_map<std::string, uint64_t> freq;
    std::unordered_map<std::string, size_t> first_seen;
    for (size_t i = 0; i < corpus_tokens.size(); ++i) {
        const std::string& tok = corpus_tokens[i];
        if (++freq[tok] == 1) first_seen[tok] = i;
    }
    if (freq.empty()) throw InputError("build_vocab: empty corpus");
    if (freq.size() < freq_set_size) {
        throw InputError("build_vocab: corpus has only " + std::to_string(freq.size()) +
                         " distinct tokens, fewer than the frequent-set size " +
                         std::to_string(freq_set_size));
    }
    std::vector<std::string> order;
    order.reserve(freq.size());
    for (const auto& [tok, n] : freq) order.push_back(tok);
    std::sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
        if (freq[a] != freq[b]) return freq[a] > freq[b];
        return first_seen[a] < first_seen[b];
    });
    if (order.size() > size - kNumReserved) order.resize(size - kNumReserved);

    Vocabulary vocab;
    for (const std::string& tok : order) vocab.add(tok, freq[tok]);
    FrequentSet f = FrequentSet::from_vocab(vocab, freq_set_size);
    return {std::move(vocab), std::move(f)};
}

inline std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const std::string& w : split_words(text)) ids.push_back(vocab.id_or_unk(w));
    return ids;
}

/// Inverse of tokenize on in-vocabulary text; pad/bos/eos are dropped.
inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string text;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        if (!text.empty()) text += ' ';
        text += vocab.token(id);
    }
    return text;
}

}  // namespace fame
