#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "debias/masker.hpp"
#include "test_util.hpp"

using namespace debias;

namespace {

// sentence of distinct non-special token ids
std::vector<TokenId> make_sentence(std::size_t n, Rng& rng, std::size_t vocab) {
    std::vector<TokenId> pool;
    for (std::size_t v = kNumSpecialTokens; v < vocab; ++v)
        pool.push_back(static_cast<TokenId>(v));
    for (std::size_t i = pool.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(pool[i - 1], pool[pick(rng)]);
    }
    return std::vector<TokenId>(pool.begin(), pool.begin() + n);
}

testutil::BowProbe make_probe(std::size_t vocab, Rng& rng) {
    testutil::BowProbe probe;
    probe.coef.resize(vocab, 0.0);
    std::uniform_real_distribution<double> u(-1.2, 1.6);
    for (std::size_t v = kNumSpecialTokens; v < vocab; ++v) probe.coef[v] = u(rng);
    probe.bias = -0.4;
    return probe;
}

std::vector<double> true_position_coefs(const testutil::BowProbe& probe,
                                        const std::vector<TokenId>& sent) {
    std::vector<double> out;
    for (auto t : sent) out.push_back(probe.coef[static_cast<std::size_t>(t)]);
    return out;
}

}  // namespace

TEST_CASE("constant classifier yields zero weights") {
    TextProbe probe = [](const std::vector<TokenId>&) { return 0.5; };
    std::vector<TokenId> sent = {5, 6, 7, 8, 9};
    auto attr = explain_tokens(probe, sent, 200, 1);
    REQUIRE(attr.weights.size() == sent.size());
    for (double w : attr.weights) CHECK(std::abs(w) < 1e-6);
    CHECK(attr.sample_count == 200);
}

TEST_CASE("explainer validates its inputs") {
    TextProbe probe = [](const std::vector<TokenId>&) { return 0.5; };
    std::vector<TokenId> sent = {5};
    CHECK_THROWS_AS(explain_tokens(probe, sent, 49, 1), std::invalid_argument);
    std::vector<TokenId> empty;
    CHECK_THROWS_AS(explain_tokens(probe, empty, 100, 1), std::invalid_argument);
}

TEST_CASE("explainer is deterministic under (seed, n_samples)") {
    Rng rng(31);
    auto probe = make_probe(40, rng);
    auto sent = make_sentence(8, rng, 40);
    TextProbe f = [&probe](const std::vector<TokenId>& t) { return probe(t); };
    auto a = explain_tokens(f, sent, 300, 99);
    auto b = explain_tokens(f, sent, 300, 99);
    CHECK(a.weights == b.weights);
    auto c = explain_tokens(f, sent, 300, 100);
    CHECK(a.weights != c.weights);
}

TEST_CASE("attributions rank-match known bag-of-words coefficients") {
    Rng rng(7);
    const std::size_t vocab = 60;
    auto probe = make_probe(vocab, rng);
    TextProbe f = [&probe](const std::vector<TokenId>& t) { return probe(t); };

    std::vector<double> rhos;
    for (int s = 0; s < 10; ++s) {
        auto sent = make_sentence(6 + (s % 5), rng, vocab);
        auto attr = explain_tokens(f, sent, 500, 1000 + s);
        rhos.push_back(testutil::spearman(attr.weights, true_position_coefs(probe, sent)));
    }
    std::sort(rhos.begin(), rhos.end());
    CHECK(rhos[rhos.size() / 2] >= 0.8);
}

TEST_CASE("sampled surrogate agrees with the exact enumeration surrogate") {
    Rng rng(17);
    const std::size_t vocab = 50;
    auto probe = make_probe(vocab, rng);
    TextProbe f = [&probe](const std::vector<TokenId>& t) { return probe(t); };

    std::vector<double> agreements;
    for (int s = 0; s < 8; ++s) {
        auto sent = make_sentence(6 + (s % 6), rng, vocab);  // <= 11 tokens
        auto attr = explain_tokens(f, sent, 2000, 500 + s);
        auto exact = testutil::enumerate_surrogate(
            [&probe](const std::vector<TokenId>& t) { return probe(t); }, sent);
        agreements.push_back(testutil::spearman(attr.weights, exact));
    }
    std::sort(agreements.begin(), agreements.end());
    CHECK(agreements[agreements.size() / 2] >= 0.9);
}

TEST_CASE("more samples never lower the median rank correlation") {
    Rng rng(23);
    const std::size_t vocab = 64;
    auto probe = make_probe(vocab, rng);
    TextProbe f = [&probe](const std::vector<TokenId>& t) { return probe(t); };

    std::vector<std::vector<TokenId>> suite;
    for (int s = 0; s < 12; ++s) suite.push_back(make_sentence(7 + (s % 4), rng, vocab));

    auto median_rho = [&](std::size_t n_samples) {
        std::vector<double> rhos;
        for (std::size_t s = 0; s < suite.size(); ++s) {
            auto attr = explain_tokens(f, suite[s], n_samples, 9000 + s);
            rhos.push_back(
                testutil::spearman(attr.weights, true_position_coefs(probe, suite[s])));
        }
        std::sort(rhos.begin(), rhos.end());
        return rhos[rhos.size() / 2];
    };

    const double m100 = median_rho(100);
    const double m500 = median_rho(500);
    const double m2000 = median_rho(2000);
    CHECK(m500 >= m100);
    CHECK(m2000 >= m500);
}

TEST_CASE("surrogate fit is reported") {
    Rng rng(3);
    auto probe = make_probe(30, rng);
    TextProbe f = [&probe](const std::vector<TokenId>& t) { return probe(t); };
    auto sent = make_sentence(8, rng, 30);
    auto attr = explain_tokens(f, sent, 800, 5);
    CHECK(attr.surrogate_fit > 0.5);
    CHECK(attr.surrogate_fit <= 1.0 + 1e-9);
}

TEST_CASE("mask_attributes masks exactly the positions above the threshold") {
    TextExample x;
    x.tokens = {10, 11, 12};
    x.surfaces = {"a", "b", "c"};
    Attribution attr;
    attr.weights = {0.4, 0.05, 0.2};
    auto masked = mask_attributes(attr, x, 0.1);
    CHECK(masked.masked_positions == std::set<std::size_t>{0, 2});
    CHECK(masked.tokens == std::vector<TokenId>{kMaskId, 11, kMaskId});
    CHECK(masked.tokens.size() == x.tokens.size());
}

TEST_CASE("mask_attributes passes through when nothing exceeds the threshold") {
    TextExample x;
    x.tokens = {10, 11};
    x.surfaces = {"a", "b"};
    Attribution attr;
    attr.weights = {0.05, 0.1};  // 0.1 is not > 0.1
    auto masked = mask_attributes(attr, x, 0.1);
    CHECK(masked.pass_through());
    CHECK(masked.tokens == x.tokens);
}

TEST_CASE("mask_attributes never masks special tokens") {
    TextExample x;
    x.tokens = {kUnkId, 11};
    x.surfaces = {"[UNK]", "b"};
    Attribution attr;
    attr.weights = {5.0, 5.0};
    auto masked = mask_attributes(attr, x, 0.1);
    CHECK(masked.masked_positions == std::set<std::size_t>{1});
    CHECK(masked.tokens[0] == kUnkId);
}

TEST_CASE("mask_attributes rejects misaligned attributions") {
    TextExample x;
    x.tokens = {10, 11};
    x.surfaces = {"a", "b"};
    Attribution attr;
    attr.weights = {0.4};
    CHECK_THROWS_AS(mask_attributes(attr, x, 0.1), std::invalid_argument);
}
