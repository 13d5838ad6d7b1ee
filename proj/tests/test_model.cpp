#include <cmath>

#include "doctest.h"
#include "fame/gradcheck.hpp"
#include "fame/model.hpp"

using fame::ModelConfig;
using fame::ModelParams;
using fame::Tape;
using fame::Tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden = 16;
    cfg.filter = 32;
    cfg.num_heads = 2;
    cfg.vocab_size = 50;
    cfg.max_input_len = 8;
    cfg.max_output_len = 6;
    cfg.share_encoder_decoder = true;
    return cfg;
}

}  // namespace

TEST_CASE("encode produces n x h outputs and rejects bad input") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 1);
    std::vector<int> tokens{5, 6, 7, 8, 9};
    fame::EncoderState enc = fame::encode(nullptr, params, cfg, tokens);
    CHECK(enc.x.shape() == std::vector<size_t>{5, cfg.hidden});

    CHECK_THROWS_AS(fame::encode(nullptr, params, cfg, {}), fame::InputError);
    CHECK_THROWS_AS(fame::encode(nullptr, params, cfg, {5, 999}), fame::InputError);
    CHECK_THROWS_AS(fame::encode(nullptr, params, cfg, std::vector<int>(9, 5)), fame::InputError);
    CHECK_THROWS_AS(fame::encode(nullptr, params, cfg, {fame::kPad, fame::kPad}), fame::InputError);
}

TEST_CASE("appending pad tokens does not change non-pad encoder outputs") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 2);
    std::vector<int> base{10, 11, 12};
    fame::EncoderState short_enc = fame::encode(nullptr, params, cfg, base);
    std::vector<int> padded = base;
    padded.push_back(fame::kPad);
    padded.push_back(fame::kPad);
    fame::EncoderState long_enc = fame::encode(nullptr, params, cfg, padded);
    for (size_t i = 0; i < base.size(); ++i) {
        for (size_t j = 0; j < cfg.hidden; ++j) {
            CHECK(short_enc.x.at(i, j) == long_enc.x.at(i, j));
        }
    }
}

TEST_CASE("distinct inputs give distinct encodings under seeded init") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 3);
    fame::EncoderState a = fame::encode(nullptr, params, cfg, {5, 6, 7});
    fame::EncoderState b = fame::encode(nullptr, params, cfg, {8, 9, 10});
    double max_diff = 0.0;
    for (size_t i = 0; i < a.x.size(); ++i) max_diff = std::max(max_diff, std::abs(a.x.at(i) - b.x.at(i)));
    CHECK(max_diff > 1e-6);
}

TEST_CASE("decode_step attention rows are distributions over non-pad positions") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 4);
    std::vector<int> doc{5, 6, 7, fame::kPad};
    fame::EncoderState enc = fame::encode(nullptr, params, cfg, doc);
    fame::DecoderStepState step = fame::decode_step(params, cfg, enc, {fame::kBos, 12, 13});
    REQUIRE(step.attention.shape() == std::vector<size_t>{cfg.num_heads, 4});
    for (size_t h = 0; h < cfg.num_heads; ++h) {
        double total = 0.0;
        for (size_t j = 0; j < 4; ++j) total += step.attention.at(h, j);
        CHECK(std::abs(total - 1.0) <= 1e-9);
        CHECK(step.attention.at(h, 3) == 0.0);  // pad position carries no mass
    }
    CHECK_THROWS_AS(fame::decode_step(params, cfg, enc, {12, 13}), fame::InputError);
    CHECK_THROWS_AS(fame::decode_step(params, cfg, enc, std::vector<int>(7, 5)), fame::InputError);
}

TEST_CASE("causal masking: extending the prefix leaves earlier positions unchanged") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 5);
    fame::EncoderState enc = fame::encode(nullptr, params, cfg, {20, 21, 22});
    std::vector<int> short_prefix{fame::kBos, 30, 31};
    std::vector<int> long_prefix{fame::kBos, 30, 31, 32, 33};
    fame::DecoderTrace a = fame::decode_positions(nullptr, params, cfg, enc, short_prefix);
    fame::DecoderTrace b = fame::decode_positions(nullptr, params, cfg, enc, long_prefix);
    for (size_t i = 0; i < short_prefix.size(); ++i) {
        for (size_t j = 0; j < cfg.hidden; ++j) CHECK(a.y.at(i, j) == b.y.at(i, j));
    }
}

TEST_CASE("gradient w.r.t. a future prefix token is exactly zero") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 6);
    // Token 41 appears only at the last prefix position; output coordinate
    // (0, 0) must not depend on it.
    std::vector<int> doc{20, 21};
    std::vector<int> prefix{fame::kBos, 30, 41};
    auto loss = [&](Tape* tape) {
        fame::EncoderState enc = fame::encode(tape, params, cfg, doc);
        fame::DecoderTrace trace = fame::decode_positions(tape, params, cfg, enc, prefix);
        Tensor pick({prefix.size(), cfg.hidden});
        pick.at(0, 0) = 1.0;
        return fame::sum(tape, fame::mul(tape, trace.y, pick));
    };
    params.embedding.zero_grad();
    Tape tape;
    Tensor value = loss(&tape);
    tape.backward(value);
    const size_t h = cfg.hidden;
    for (size_t j = 0; j < h; ++j) CHECK(params.embedding.grad()[41 * h + j] == 0.0);

    // Finite differences agree: perturbing row 41 leaves the output alone.
    const double base = value.item();
    for (size_t j = 0; j < h; j += 5) {
        const double saved = params.embedding.at(41, j);
        params.embedding.at(41, j) = saved + 1e-3;
        CHECK(loss(nullptr).item() == base);
        params.embedding.at(41, j) = saved;
    }
}

TEST_CASE("output_logits closed forms") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 7);

    Tensor zero_y({cfg.hidden});
    Tensor logits = fame::output_logits(nullptr, params, zero_y);
    for (size_t i = 0; i < logits.size(); ++i) CHECK(logits.at(i) == 0.0);

    fame::Rng rng(8);
    Tensor y({cfg.hidden});
    for (double& v : y.values()) v = -1.0 + 2.0 * rng.next_double();
    Tensor base = fame::output_logits(nullptr, params, y);
    ModelParams scaled = params;
    scaled.embedding = fame::scale(nullptr, params.embedding, 3.0);
    Tensor tripled = fame::output_logits(nullptr, scaled, y);
    for (size_t i = 0; i < base.size(); ++i) {
        CHECK(tripled.at(i) == doctest::Approx(3.0 * base.at(i)).epsilon(1e-12));
    }

    ModelParams hand = params;
    hand.embedding = Tensor({3, 2}, {1, 0, 0, 1, 1, 1});
    Tensor yv({2}, {2, 3});
    Tensor out = fame::output_logits(nullptr, hand, yv);
    CHECK(out.values() == std::vector<double>{2, 3, 5});
}

TEST_CASE("uniform-logit model has mle loss exactly ln V") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 9);
    for (double& v : params.embedding.values()) v = 0.0;
    std::vector<int> doc{5, 6, 7};
    std::vector<int> ref{10, 11, fame::kEos};
    const double loss = fame::mle_loss(params, cfg, doc, ref);
    CHECK(std::abs(loss - std::log(double(cfg.vocab_size))) <= 1e-12);
}

TEST_CASE("mle loss ignores pad tokens appended after eos") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 10);
    std::vector<int> doc{5, 6, 7, 8};
    std::vector<int> ref{12, 13, fame::kEos};
    const double base = fame::mle_loss(params, cfg, doc, ref);
    std::vector<int> padded = ref;
    padded.push_back(fame::kPad);
    padded.push_back(fame::kPad);
    CHECK(fame::mle_loss(params, cfg, doc, padded) == base);

    CHECK_THROWS_AS(fame::mle_loss(params, cfg, doc, {}), fame::InputError);
}

TEST_CASE("shared encoder/decoder weights receive gradient from both paths") {
    ModelConfig cfg = tiny_config();
    cfg.share_encoder_decoder = true;
    ModelParams params = fame::init_params(cfg, 11);
    std::vector<int> doc{5, 6, 7};
    std::vector<int> ref{10, 11, fame::kEos};
    fame::TopicTarget target;
    target.membership.assign(cfg.vocab_size, 0);

    // Encoder-only objective: the decoder stack's self-attention weights
    // still receive gradient because the encoder runs on them.
    for (auto& [name, t] : fame::named_tensors(params)) t.zero_grad();
    {
        Tape tape;
        fame::EncoderState enc = fame::encode(&tape, params, cfg, doc);
        Tensor probe = fame::sum(&tape, enc.x);
        tape.backward(probe);
    }
    double enc_path = 0.0;
    for (double g : params.dec_layers[0].wq.grad()) enc_path += std::abs(g);
    CHECK(enc_path > 0.0);

    // Full objective: same weights also accumulate from the decoder side.
    for (auto& [name, t] : fame::named_tensors(params)) t.zero_grad();
    {
        Tape tape;
        auto losses = fame::example_losses(&tape, params, cfg, doc, ref, target);
        tape.backward(losses.mle);
    }
    double joint = 0.0;
    for (double g : params.dec_layers[0].wq.grad()) joint += std::abs(g);
    CHECK(joint > 0.0);
}

TEST_CASE("full-model mle gradient matches finite differences on the tiny config") {
    ModelConfig cfg = tiny_config();
    ModelParams params = fame::init_params(cfg, 12);
    std::vector<int> doc{5, 6, 7, 8, 9, 10, 11, fame::kPad};
    std::vector<int> ref{12, 13, 14, 15, 16, fame::kEos};
    fame::TopicTarget target = fame::make_topic_target(
        ref, cfg.vocab_size, fame::FrequentSet{{}, std::vector<uint8_t>(cfg.vocab_size, 0)});
    auto f = [&](Tape* tape) {
        return fame::example_losses(tape, params, cfg, doc, ref, target).mle;
    };
    auto report = fame::grad_check(f, fame::named_tensors(params), 1e-5, 1e-4);
    CAPTURE(report.worst.tensor);
    CAPTURE(report.worst.analytic);
    CAPTURE(report.worst.numeric);
    CHECK(report.pass);
}
