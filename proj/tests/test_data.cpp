#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unistd.h>

#include "doctest.h"
#include "fame/corpus.hpp"
#include "fame/focus.hpp"
#include "fame/synth.hpp"
#include "fame/vocab.hpp"

namespace {

std::string temp_path(const std::string& name) {
    return std::string("/tmp/fame_test_") + std::to_string(::getpid()) + "_" + name;
}

}  // namespace

TEST_CASE("build_vocab frequency ranking and frequent set") {
    std::vector<std::string> corpus{"a", "a", "a", "b", "b", "c"};
    auto [vocab, f] = fame::build_vocab(corpus, 7, 1);
    CHECK(f.size() == 1);
    CHECK(vocab.token(f.ids[0]) == "a");
    CHECK(f.contains(vocab.id_or_unk("a")));
    CHECK_FALSE(f.contains(vocab.id_or_unk("b")));
    // Rank order: a before b before c.
    CHECK(vocab.id_or_unk("a") == fame::kNumReserved);
    CHECK(vocab.id_or_unk("b") == fame::kNumReserved + 1);
    CHECK(vocab.id_or_unk("c") == fame::kNumReserved + 2);

    CHECK_THROWS_AS(fame::build_vocab(corpus, 5, 1), fame::ConfigError);
    CHECK_THROWS_AS(fame::build_vocab({"x", "x"}, 16, 2), fame::InputError);
    CHECK_THROWS_AS(fame::build_vocab({}, 16, 1), fame::InputError);
}

TEST_CASE("frequent set breaks frequency ties by lower token id") {
    std::vector<std::string> corpus{"a", "b", "a", "b", "c", "d", "c", "e"};
    auto [vocab, f] = fame::build_vocab(corpus, 16, 3);
    // a and b tie at 2, c ties at 2; first-seen order fixes ids a<b<c.
    CHECK(f.ids.size() == 3);
    CHECK(vocab.token(f.ids[0]) == "a");
    CHECK(vocab.token(f.ids[1]) == "b");
    CHECK(vocab.token(f.ids[2]) == "c");
}

TEST_CASE("tokenize round trip, casing and unknowns") {
    auto [vocab, f] = fame::build_vocab({"alpha", "beta", "beta", "gamma"}, 16, 1);
    auto ids = fame::tokenize("A b", vocab);
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == fame::kUnk);  // "a" never seen in this corpus
    CHECK(ids[1] == fame::kUnk);

    const std::string text = "beta alpha gamma";
    CHECK(fame::detokenize(fame::tokenize(text, vocab), vocab) == text);
    CHECK(fame::tokenize("zzz", vocab)[0] == fame::kUnk);
}

TEST_CASE("vocabulary file round trip") {
    auto [vocab, f] = fame::build_vocab({"a", "a", "b", "c", "d"}, 16, 2);
    const std::string path = temp_path("vocab.txt");
    vocab.save(path);
    fame::Vocabulary loaded = fame::Vocabulary::load(path);
    CHECK(loaded.size() == vocab.size());
    for (size_t id = 0; id < vocab.size(); ++id) {
        CHECK(loaded.token(static_cast<int>(id)) == vocab.token(static_cast<int>(id)));
        CHECK(loaded.frequency(static_cast<int>(id)) == vocab.frequency(static_cast<int>(id)));
    }
    std::remove(path.c_str());
}

TEST_CASE("jsonl loading, truncation and errors") {
    const std::string path = temp_path("corpus.jsonl");

    SUBCASE("round trip and truncation") {
        std::string longdoc;
        for (int i = 0; i < 100; ++i) longdoc += "w" + std::to_string(i) + " ";
        std::vector<fame::RawExample> raw{
            {longdoc, "s1 s2"},
            {"short doc", "another summary"},
        };
        fame::save_jsonl(path, raw);
        auto loaded = fame::load_jsonl(path);
        REQUIRE(loaded.size() == 2);
        CHECK(loaded[0].document == raw[0].document);
        CHECK(loaded[1].summary == raw[1].summary);

        std::vector<std::string> tokens;
        for (const auto& ex : loaded) {
            for (const auto& w : fame::split_words(ex.document + " " + ex.summary))
                tokens.push_back(w);
        }
        auto [vocab, f] = fame::build_vocab(tokens, 256, 2);
        auto prepared = fame::prepare_corpus(loaded, vocab, 64, 8);
        CHECK(prepared[0].document.size() == 64);
        CHECK(prepared[0].document[0] == vocab.id_or_unk("w0"));
        CHECK(prepared[0].document[63] == vocab.id_or_unk("w63"));
        CHECK(prepared[0].reference.back() == fame::kEos);
        CHECK(prepared[0].reference.size() <= 8);
    }

    SUBCASE("empty file is an empty dataset") {
        std::ofstream(path).close();
        CHECK(fame::load_jsonl(path).empty());
    }

    SUBCASE("malformed line reports its number") {
        std::ofstream out(path);
        out << R"({"document": "d", "summary": "s"})" << "\n";
        out << "not json\n";
        out.close();
        try {
            fame::load_jsonl(path);
            FAIL("expected ParseError");
        } catch (const fame::ParseError& e) {
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }

    std::remove(path.c_str());
}

TEST_CASE("batching preserves the example multiset and is seed-deterministic") {
    auto batches = fame::make_batches(23, 5, 42, 0);
    std::multiset<size_t> all;
    for (const auto& b : batches)
        for (size_t i : b) all.insert(i);
    CHECK(all.size() == 23);
    for (size_t i = 0; i < 23; ++i) CHECK(all.count(i) == 1);

    auto again = fame::make_batches(23, 5, 42, 0);
    CHECK(batches == again);
    auto other_epoch = fame::make_batches(23, 5, 42, 1);
    CHECK(batches != other_epoch);
}

TEST_CASE("synthetic task construction invariants") {
    fame::SyntheticTaskConfig cfg;
    cfg.num_topics = 5;
    cfg.keywords_per_topic = 4;
    cfg.distractor_vocab_size = 30;
    cfg.doc_len = 20;
    cfg.num_examples = 60;
    cfg.seed = 7;
    auto corpus = fame::synth_generate(cfg);
    REQUIRE(corpus.size() == 60);

    std::map<std::string, std::set<std::string>> content_by_theme;
    for (const auto& ex : corpus) {
        auto doc = fame::split_words(ex.document);
        auto ref = fame::split_words(ex.summary);
        REQUIRE(ref.size() == 5);
        CHECK(ref[0] == "topic");
        CHECK(ref[2] == "about");
        std::set<std::string> doc_set(doc.begin(), doc.end());
        // Every reference content token appears in its document.
        CHECK(doc_set.count(ref[1]) == 1);
        CHECK(doc_set.count(ref[3]) == 1);
        CHECK(doc_set.count(ref[4]) == 1);
        CHECK(ref[3] != ref[4]);
        content_by_theme[ref[1]].insert(ref[1]);
        content_by_theme[ref[1]].insert(ref[3]);
        content_by_theme[ref[1]].insert(ref[4]);
    }
    // References of different topics share no content tokens.
    for (auto it = content_by_theme.begin(); it != content_by_theme.end(); ++it) {
        for (auto jt = std::next(it); jt != content_by_theme.end(); ++jt) {
            for (const std::string& w : it->second) CHECK(jt->second.count(w) == 0);
        }
    }
}

TEST_CASE("synthetic topic targets are always source-supported") {
    fame::SyntheticTaskConfig cfg;
    cfg.num_topics = 4;
    cfg.keywords_per_topic = 5;
    cfg.distractor_vocab_size = 24;
    cfg.doc_len = 16;
    cfg.num_examples = 48;
    cfg.seed = 11;
    auto corpus = fame::synth_generate(cfg);
    std::vector<std::string> tokens;
    for (const auto& ex : corpus) {
        for (const auto& w : fame::split_words(ex.document + " " + ex.summary)) tokens.push_back(w);
    }
    auto [vocab, f] = fame::build_vocab(tokens, 256, 4);
    // The template words are the most frequent tokens, so F absorbs them.
    CHECK(f.contains(vocab.id_or_unk("topic")));
    CHECK(f.contains(vocab.id_or_unk("about")));
    for (const auto& raw : corpus) {
        fame::Example ex = fame::prepare_example(raw, vocab, 64, 8);
        fame::TopicTarget target = fame::make_topic_target(ex.reference, vocab.size(), f);
        std::set<int> doc_types(ex.document.begin(), ex.document.end());
        size_t members = 0;
        for (size_t id = 0; id < target.membership.size(); ++id) {
            if (!target.membership[id]) continue;
            ++members;
            CHECK(doc_types.count(static_cast<int>(id)) == 1);
        }
        CHECK(members >= 1);  // at least the theme word survives F
    }
}

TEST_CASE("synthetic corpora differ across seeds and repeat within one") {
    fame::SyntheticTaskConfig a, b;
    a.seed = 1;
    b.seed = 2;
    auto ca = fame::synth_generate(a);
    auto cb = fame::synth_generate(b);
    auto ca2 = fame::synth_generate(a);
    auto text = [](const std::vector<fame::RawExample>& c) {
        std::string s;
        for (const auto& e : c) s += e.document + "|" + e.summary + "\n";
        return s;
    };
    CHECK(text(ca) != text(cb));
    CHECK(text(ca) == text(ca2));
}

TEST_CASE("topic range restriction") {
    fame::SyntheticTaskConfig cfg;
    cfg.num_topics = 6;
    cfg.topic_first = 4;
    cfg.topic_last = 5;
    cfg.num_examples = 40;
    auto corpus = fame::synth_generate(cfg);
    for (const auto& ex : corpus) {
        auto ref = fame::split_words(ex.summary);
        CHECK((ref[1] == "theme4" || ref[1] == "theme5"));
    }
}
