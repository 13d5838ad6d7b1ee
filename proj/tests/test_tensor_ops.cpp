#include <cmath>
#include <vector>

#include "doctest.h"
#include "fame/gradcheck.hpp"
#include "fame/ops.hpp"

using fame::Tape;
using fame::Tensor;

namespace {

Tensor rand_tensor(std::vector<size_t> shape, fame::Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = lo + (hi - lo) * rng.next_double();
    return t;
}

// Independent brute-force product used as the oracle for matmul results.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 size_t m, size_t k, size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            for (size_t kk = 0; kk < k; ++kk) c[i * n + j] += a[i * k + kk] * b[kk * n + j];
    return c;
}

Tensor weighted(Tape* tape, const Tensor& x, const Tensor& w) {
    return fame::sum(tape, fame::mul(tape, x, w));
}

void expect_fd_match(const std::function<Tensor(Tape*)>& f,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    auto report = fame::grad_check(f, params, 1e-5, 1e-4);
    CAPTURE(report.worst.tensor);
    CAPTURE(report.worst.index);
    CAPTURE(report.worst.analytic);
    CAPTURE(report.worst.numeric);
    CHECK(report.pass);
}

}  // namespace

TEST_CASE("matmul identity, oracle and annihilator cases") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor prod = fame::matmul(nullptr, eye, a);
    CHECK(prod.values() == std::vector<double>{1, 2, 3, 4});

    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor ab = fame::matmul(nullptr, a, b);
    CHECK(ab.values() == std::vector<double>{19, 22, 43, 50});
    CHECK(ab.values() == naive_matmul(a.values(), b.values(), 2, 2, 2));

    fame::Rng rng(7);
    Tensor z = Tensor::zeros({2, 3});
    Tensor any = rand_tensor({3, 4}, rng);
    Tensor za = fame::matmul(nullptr, z, any);
    CHECK(za.shape() == std::vector<size_t>{2, 4});
    for (double v : za.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(fame::matmul(nullptr, a, any), fame::DimensionError);
}

TEST_CASE("matmul against brute-force oracle on random shapes") {
    fame::Rng rng(11);
    Tensor a = rand_tensor({3, 5}, rng);
    Tensor b = rand_tensor({5, 4}, rng);
    Tensor c = fame::matmul(nullptr, a, b);
    const auto oracle = naive_matmul(a.values(), b.values(), 3, 5, 4);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c.at(i) == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("softmax uniform, shift invariance and closed form") {
    Tensor c4({4}, {0.3, 0.3, 0.3, 0.3});
    Tensor s = fame::softmax(nullptr, c4);
    for (double v : s.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));

    fame::Rng rng(3);
    Tensor x = rand_tensor({6}, rng);
    Tensor shifted(x.shape());
    for (size_t i = 0; i < x.size(); ++i) shifted.at(i) = x.at(i) + 17.25;
    Tensor sx = fame::softmax(nullptr, x);
    Tensor ss = fame::softmax(nullptr, shifted);
    for (size_t i = 0; i < x.size(); ++i) CHECK(sx.at(i) == doctest::Approx(ss.at(i)).epsilon(1e-12));

    Tensor two({2}, {0.0, std::log(3.0)});
    Tensor st = fame::softmax(nullptr, two);
    CHECK(st.at(0) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(st.at(1) == doctest::Approx(0.75).epsilon(1e-14));

    CHECK_THROWS_AS(fame::softmax(nullptr, Tensor({0})), fame::DimensionError);
}

TEST_CASE("softmax sums to one within 1e-12 for |x| <= 50") {
    fame::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = rand_tensor({32}, rng, -50.0, 50.0);
        Tensor s = fame::softmax(nullptr, x);
        double total = 0.0;
        for (double v : s.values()) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax is deterministic") {
    fame::Rng rng(9);
    Tensor x = rand_tensor({16}, rng);
    Tensor a = fame::softmax(nullptr, x);
    Tensor b = fame::softmax(nullptr, x);
    CHECK(a.values() == b.values());
}

TEST_CASE("gelu fixed points") {
    Tensor x({3}, {0.0, 10.0, 1.0});
    Tensor y = fame::gelu(nullptr, x);
    CHECK(y.at(0) == 0.0);
    CHECK(y.at(1) == doctest::Approx(10.0).epsilon(1e-6));
    // Gaussian CDF oracle: gelu(1) = Phi(1) = 0.5*(1+erf(1/sqrt(2))).
    const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(phi1 == doctest::Approx(0.841345).epsilon(1e-5));
    CHECK(y.at(2) == doctest::Approx(phi1).epsilon(1e-12));
}

TEST_CASE("sigmoid closed forms and symmetry") {
    Tensor x({2}, {0.0, std::log(3.0)});
    Tensor s = fame::sigmoid(nullptr, x);
    CHECK(s.at(0) == 0.5);
    CHECK(s.at(1) == doctest::Approx(0.75).epsilon(1e-14));

    fame::Rng rng(13);
    Tensor r = rand_tensor({10}, rng, -8.0, 8.0);
    Tensor neg(r.shape());
    for (size_t i = 0; i < r.size(); ++i) neg.at(i) = -r.at(i);
    Tensor sp = fame::sigmoid(nullptr, r);
    Tensor sn = fame::sigmoid(nullptr, neg);
    for (size_t i = 0; i < r.size(); ++i) {
        CHECK(sp.at(i) + sn.at(i) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(sp.at(i) > 0.0);
        CHECK(sp.at(i) < 1.0);
    }
}

TEST_CASE("layer_norm zero-variance, standardization and scalar oracle") {
    Tensor ones({4}, {1, 1, 1, 1});
    Tensor zero({4});
    Tensor cvec({4}, {3.5, 3.5, 3.5, 3.5});
    Tensor out = fame::layer_norm(nullptr, cvec, ones, zero);
    for (double v : out.values()) CHECK(v == 0.0);

    fame::Rng rng(17);
    Tensor gain({8}, std::vector<double>(8, 1.0));
    Tensor bias({8});
    Tensor x = rand_tensor({8}, rng);
    Tensor norm = fame::layer_norm(nullptr, x, gain, bias);
    double mean = 0.0, var = 0.0;
    for (double v : norm.values()) mean += v;
    mean /= 8.0;
    for (double v : norm.values()) var += (v - mean) * (v - mean);
    var /= 8.0;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-5);  // eps in the denominator shifts var by ~1e-6

    Tensor pair({2}, {1.0, 3.0});
    Tensor g2({2}, {1.0, 1.0});
    Tensor b2({2});
    Tensor o2 = fame::layer_norm(nullptr, pair, g2, b2);
    CHECK(o2.at(0) == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(o2.at(1) == doctest::Approx(1.0).epsilon(1e-5));

    CHECK_THROWS_AS(fame::layer_norm(nullptr, Tensor({1}, {2.0}), Tensor({1}, {1.0}), Tensor({1})),
                    fame::DimensionError);
}

TEST_CASE("cross_entropy closed forms") {
    // One-hot log-distribution: all mass on class 0.
    Tensor onehot({3}, {0.0, -45.0, -45.0});
    CHECK(fame::cross_entropy(nullptr, onehot, 0).item() == 0.0);

    const size_t n = 7;
    Tensor uniform({n}, std::vector<double>(n, -std::log(double(n))));
    CHECK(fame::cross_entropy(nullptr, uniform, 3).item() ==
          doctest::Approx(std::log(double(n))).epsilon(1e-12));

    Tensor lp({3}, {std::log(0.1), std::log(0.2), std::log(0.7)});
    CHECK(fame::cross_entropy(nullptr, lp, 2).item() == doctest::Approx(0.356675).epsilon(1e-5));

    CHECK_THROWS_AS(fame::cross_entropy(nullptr, lp, 3), fame::IndexError);
    Tensor not_a_dist({3}, {0.0, 0.0, 0.0});
    CHECK_THROWS_AS(fame::cross_entropy(nullptr, not_a_dist, 0), fame::ContractError);
}

TEST_CASE("masked softmax zeroes disallowed entries exactly") {
    fame::Rng rng(23);
    Tensor x = rand_tensor({3, 5}, rng);
    std::vector<uint8_t> allowed(15, 1);
    allowed[2] = allowed[7] = allowed[8] = allowed[14] = 0;
    Tensor p = fame::masked_softmax_rows(nullptr, x, &allowed);
    for (size_t i = 0; i < 3; ++i) {
        double rowsum = 0.0;
        for (size_t j = 0; j < 5; ++j) {
            if (!allowed[i * 5 + j]) CHECK(p.at(i, j) == 0.0);
            rowsum += p.at(i, j);
        }
        CHECK(std::abs(rowsum - 1.0) <= 1e-12);
    }

    std::vector<uint8_t> none(5, 0);
    Tensor row = rand_tensor({1, 5}, rng);
    CHECK_THROWS_AS(fame::masked_softmax_rows(nullptr, row, &none), fame::ContractError);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), fame::DimensionError);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.grad().size() == t.size());
}

TEST_CASE("every primitive matches central finite differences") {
    fame::Rng rng(101);

    SUBCASE("add") {
        Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng), w = rand_tensor({2, 3}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::add(t, a, b), w); },
                        {{"a", a}, {"b", b}});
    }
    SUBCASE("scale") {
        Tensor a = rand_tensor({2, 3}, rng), w = rand_tensor({2, 3}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::scale(t, a, -1.7), w); }, {{"a", a}});
    }
    SUBCASE("mul") {
        Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng), w = rand_tensor({2, 3}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::mul(t, a, b), w); },
                        {{"a", a}, {"b", b}});
    }
    SUBCASE("maximum") {
        // Keep operands well separated so the finite-difference probe never
        // crosses the tie boundary.
        Tensor a = rand_tensor({2, 3}, rng);
        Tensor b(a.shape());
        for (size_t i = 0; i < a.size(); ++i)
            b.at(i) = a.at(i) + (i % 2 ? 0.5 : -0.5) * (1.0 + rng.next_double());
        Tensor w = rand_tensor({2, 3}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::maximum(t, a, b), w); },
                        {{"a", a}, {"b", b}});
    }
    SUBCASE("matmul") {
        Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 5}, rng), w = rand_tensor({3, 5}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::matmul(t, a, b), w); },
                        {{"a", a}, {"b", b}});
    }
    SUBCASE("matmul vector lhs") {
        Tensor a = rand_tensor({4}, rng), b = rand_tensor({4, 5}, rng), w = rand_tensor({5}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::matmul(t, a, b), w); },
                        {{"a", a}, {"b", b}});
    }
    SUBCASE("matmul_nt") {
        Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({5, 4}, rng), w = rand_tensor({3, 5}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::matmul_nt(t, a, b), w); },
                        {{"a", a}, {"b", b}});
    }
    SUBCASE("embed with repeated ids") {
        Tensor table = rand_tensor({7, 4}, rng);
        std::vector<int> ids{1, 0, 3, 3, 6};
        Tensor w = rand_tensor({5, 4}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::embed(t, table, ids), w); },
                        {{"table", table}});
    }
    SUBCASE("gelu") {
        Tensor a = rand_tensor({2, 5}, rng), w = rand_tensor({2, 5}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::gelu(t, a), w); }, {{"a", a}});
    }
    SUBCASE("sigmoid") {
        Tensor a = rand_tensor({2, 5}, rng), w = rand_tensor({2, 5}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::sigmoid(t, a), w); }, {{"a", a}});
    }
    SUBCASE("layer_norm") {
        Tensor x = rand_tensor({3, 6}, rng);
        Tensor gain = rand_tensor({6}, rng, 0.5, 1.5);
        Tensor bias = rand_tensor({6}, rng, -0.5, 0.5);
        Tensor w = rand_tensor({3, 6}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::layer_norm(t, x, gain, bias), w); },
                        {{"x", x}, {"gain", gain}, {"bias", bias}});
    }
    SUBCASE("softmax") {
        Tensor a = rand_tensor({7}, rng), w = rand_tensor({7}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::softmax(t, a), w); }, {{"a", a}});
    }
    SUBCASE("masked softmax rows") {
        Tensor a = rand_tensor({3, 5}, rng), w = rand_tensor({3, 5}, rng);
        std::vector<uint8_t> allowed(15, 1);
        allowed[1] = allowed[9] = allowed[12] = 0;
        expect_fd_match(
            [&](Tape* t) { return weighted(t, fame::masked_softmax_rows(t, a, &allowed), w); },
            {{"a", a}});
    }
    SUBCASE("log_softmax rows") {
        Tensor a = rand_tensor({3, 5}, rng), w = rand_tensor({3, 5}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::log_softmax_rows(t, a), w); },
                        {{"a", a}});
    }
    SUBCASE("cross_entropy of log_softmax") {
        Tensor a = rand_tensor({5}, rng);
        expect_fd_match(
            [&](Tape* t) { return fame::cross_entropy(t, fame::log_softmax_rows(t, a), 2); },
            {{"a", a}});
    }
    SUBCASE("pick_nll_mean with a skipped row") {
        Tensor a = rand_tensor({4, 6}, rng);
        std::vector<int> targets{1, 5, 0, 2};
        std::vector<uint8_t> use{1, 1, 0, 1};
        expect_fd_match(
            [&](Tape* t) {
                return fame::pick_nll_mean(t, fame::log_softmax_rows(t, a), targets, use);
            },
            {{"a", a}});
    }
    SUBCASE("masked_row_mean") {
        Tensor a = rand_tensor({4, 5}, rng), w = rand_tensor({5}, rng);
        std::vector<uint8_t> mask{1, 0, 1, 1};
        expect_fd_match([&](Tape* t) { return weighted(t, fame::masked_row_mean(t, a, mask), w); },
                        {{"a", a}});
    }
    SUBCASE("bce_with_logits_mean") {
        Tensor a = rand_tensor({8}, rng);
        std::vector<uint8_t> targets{1, 0, 0, 1, 1, 0, 1, 0};
        expect_fd_match([&](Tape* t) { return fame::bce_with_logits_mean(t, a, targets); },
                        {{"a", a}});
    }
    SUBCASE("sum") {
        Tensor a = rand_tensor({2, 3}, rng);
        expect_fd_match([&](Tape* t) { return fame::sum(t, a); }, {{"a", a}});
    }
    SUBCASE("slice and concat") {
        Tensor a = rand_tensor({3, 6}, rng), w = rand_tensor({3, 5}, rng);
        expect_fd_match(
            [&](Tape* t) {
                Tensor left = fame::slice_cols(t, a, 0, 2);
                Tensor right = fame::slice_cols(t, a, 3, 6);
                return weighted(t, fame::concat_cols(t, {left, right}), w);
            },
            {{"a", a}});
    }
    SUBCASE("normalize_rows") {
        Tensor a = rand_tensor({3, 4}, rng, 0.5, 2.5);
        Tensor w = rand_tensor({3, 4}, rng);
        expect_fd_match([&](Tape* t) { return weighted(t, fame::normalize_rows(t, a), w); },
                        {{"a", a}});
    }
    SUBCASE("dropout with a fixed stream") {
        Tensor a = rand_tensor({4, 4}, rng), w = rand_tensor({4, 4}, rng);
        expect_fd_match(
            [&](Tape* t) {
                fame::Rng local(424242);
                return weighted(t, fame::dropout(t, a, 0.25, local), w);
            },
            {{"a", a}});
    }
}

TEST_CASE("gradients accumulate when a tensor is reused") {
    Tensor x = Tensor::scalar(1.5);
    Tape tape;
    Tensor y = fame::mul(&tape, x, x);  // x^2
    Tensor z = fame::add(&tape, y, x);  // x^2 + x
    tape.backward(z);
    CHECK(x.grad()[0] == doctest::Approx(2.0 * 1.5 + 1.0).epsilon(1e-12));
}
