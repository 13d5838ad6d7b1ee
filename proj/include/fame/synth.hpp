#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "fame/corpus.hpp"
#include "fame/rng.hpp"

namespace fame {

/// Desk-scale topical summarization task. Each document mixes one topic's
/// keyword lexicon with shared distractor words; the reference names the
/// topic and the first two distinct keywords of the document, so the target
/// is a deterministic function of the source and always source-supported.
struct SyntheticTaskConfig {
    size_t num_topics = 8;
    size_t keywords_per_topic = 6;
    size_t distractor_vocab_size = 64;
    size_t doc_len = 24;
    size_t num_examples = 128;
    size_t topic_first = 0;              // inclusive; restricts example topics
    size_t topic_last = SIZE_MAX;        // inclusive; clamped to num_topics-1
    uint64_t seed = 1;

    void validate() const {
        if (num_topics == 0 || keywords_per_topic < 2 || doc_len < 4 || num_examples == 0) {
            throw ConfigError("synth: need num_topics >= 1, keywords_per_topic >= 2, doc_len >= 4");
        }
        if (topic_first >= num_topics) throw ConfigError("synth: topic_first out of range");
    }
};

inline std::string synth_theme_word(size_t topic) { return "theme" + std::to_string(topic); }

inline std::string synth_keyword(size_t topic, size_t j) {
    return "kw" + std::to_string(topic) + "x" + std::to_string(j);
}

inline std::string synth_distractor(size_t d) { return "filler" + std::to_string(d); }

inline std::vector<RawExample> synth_generate(const SyntheticTaskConfig& cfg) {
    cfg.validate();
    const size_t last = std::min(cfg.topic_last, cfg.num_topics - 1);
    Rng rng(derive_stream(cfg.seed, 0, 3));
    std::vector<RawExample> out;
    out.reserve(cfg.num_examples);
    for (size_t e = 0; e < cfg.num_examples; ++e) {
        const size_t topic = cfg.topic_first + rng.next_u64() % (last - cfg.topic_first + 1);
        std::vector<std::string> doc(cfg.doc_len);
        const size_t theme_pos = rng.next_u64() % (cfg.doc_len / 4 + 1);
        for (size_t i = 0; i < cfg.doc_len; ++i) {
            if (i == theme_pos) {
                doc[i] = synth_theme_word(topic);
            } else if (rng.next_double() < 0.5) {
                doc[i] = synth_keyword(topic, rng.next_u64() % cfg.keywords_per_topic);
            } else {
                doc[i] = synth_distractor(rng.next_u64() % cfg.distractor_vocab_size);
            }
        }
        // Guarantee at least two distinct keywords; the reference needs them.
        auto distinct_kws = [&doc]() {
            std::unordered_set<std::string> s;
            for (const std::string& w : doc)
                if (w.rfind("kw", 0) == 0) s.insert(w);
            return s;
        };
        size_t fix = cfg.doc_len;
        for (auto seen = distinct_kws(); seen.size() < 2; seen = distinct_kws()) {
            const std::string kw = synth_keyword(topic, rng.next_u64() % cfg.keywords_per_topic);
            if (seen.count(kw)) continue;
            --fix;
            if (fix == theme_pos) --fix;
            doc[fix] = kw;
        }
        std::string kw1, kw2;
        for (const std::string& w : doc) {
            if (w.rfind("kw", 0) != 0) continue;
            if (kw1.empty()) {
                kw1 = w;
            } else if (w != kw1) {
                kw2 = w;
                break;
            }
        }
        std::string text;
        for (size_t i = 0; i < doc.size(); ++i) {
            if (i) text += ' ';
            text += doc[i];
        }
        out.push_back({text, "topic " + synth_theme_word(topic) + " about " + kw1 + " " + kw2});
    }
    return out;
}

}  // namespace fame
