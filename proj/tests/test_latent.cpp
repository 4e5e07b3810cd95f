#include <doctest.h>

#include <cmath>

#include "debias/latent.hpp"
#include "test_util.hpp"

using namespace debias;

namespace {

EncoderConfig small_cfg() {
    EncoderConfig cfg;
    cfg.d = 64;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.ffn_width = 256;
    cfg.max_len = 40;
    cfg.dropout = 0.1;
    return cfg;
}

struct Fixture {
    Corpus train, dev;
    SourceContentEncoder sce;
    BiasDetector detector;

    Fixture() : sce(), detector() {
        auto assets = SynthAssets::builtin();
        train = synthesize_corpus(301, 600, assets);
        Corpus raw_dev = synthesize_corpus(302, 50, assets);
        dev.vocab = train.vocab;
        dev.split = Split::kDev;
        for (const auto& ex : raw_dev.examples)
            dev.examples.push_back(tokenize(ex.text(), train.vocab, 40, ex.label));

        SceTrainOptions opts;
        opts.epochs = 4;
        sce = train_source_content_encoder(train, dev, small_cfg(), 401, opts);

        auto latents = [&](const Corpus& c) {
            std::vector<LabeledLatent> out;
            for (const auto& e : c.examples) out.push_back({sce.encode(e.tokens), e.label});
            return out;
        };
        detector = train_bias_detector(latents(train), latents(dev), 402, {});
    }

    Corpus biased_subset(const Corpus& c) const {
        Corpus out;
        out.vocab = c.vocab;
        out.split = c.split;
        for (const auto& e : c.examples)
            if (e.label == StyleLabel::kBiased) out.examples.push_back(e);
        return out;
    }
};

Fixture& fixture() {
    static Fixture fx;
    return fx;
}

}  // namespace

TEST_CASE("lce_loss trivial values") {
    BiasDetectorT<double> det(4, 8, 1);
    std::vector<double> z = {1.0, 2.0, 0.5, -1.0};

    auto same = lce_loss<double>(z, z, det, 0.0);
    CHECK(same.l_sim == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<double> orth = {2.0, -1.0, 0.0, 0.0};
    std::vector<double> base = {1.0, 2.0, 0.0, 0.0};
    auto perp = lce_loss<double>(orth, base, det, 0.0);
    CHECK(perp.l_sim == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(lce_loss<double>(z, z, det, 1.5), std::invalid_argument);
    std::vector<double> zero(4, 0.0);
    CHECK_THROWS_AS(lce_loss<double>(zero, z, det, 0.5), std::invalid_argument);
}

TEST_CASE("lce_loss is linear in lambda") {
    BiasDetectorT<double> det(6, 12, 2);
    Rng rng(3);
    std::normal_distribution<double> g;
    std::vector<double> zhat(6), z(6);
    for (auto& v : zhat) v = g(rng);
    for (auto& v : z) v = g(rng);
    const double t0 = lce_loss<double>(zhat, z, det, 0.0).total;
    const double t1 = lce_loss<double>(zhat, z, det, 1.0).total;
    const double t05 = lce_loss<double>(zhat, z, det, 0.5).total;
    CHECK(t05 == doctest::Approx((t0 + t1) / 2.0).epsilon(1e-9));
}

TEST_CASE("encode_source produces the pooled vector") {
    auto& fx = fixture();
    const auto& ex = fx.dev.examples[0];
    auto z = encode_source(fx.sce, ex);
    CHECK(z.size() == fx.sce.encoder.config().d);
    auto z2 = encode_source(fx.sce, ex);
    CHECK(z == z2);

    EncoderActivations<float> acts;
    auto hidden = fx.sce.encoder.forward_from(fx.sce.encoder.embed_hard(ex.tokens), acts,
                                              false, nullptr);
    auto pooled = mean_pool(hidden);
    for (std::size_t j = 0; j < z.size(); ++j)
        CHECK(z[j] == doctest::Approx(pooled[j]).epsilon(1e-6));
}

TEST_CASE("source encodings separate styles and retain content") {
    auto& fx = fixture();

    // linear probe oracle on the pooled encodings
    std::vector<std::vector<float>> ztr, zdv;
    std::vector<float> ytr, ydv;
    for (const auto& ex : fx.train.examples) {
        ztr.push_back(fx.sce.encode(ex.tokens));
        ytr.push_back(ex.label == StyleLabel::kBiased ? 1.0f : 0.0f);
    }
    for (const auto& ex : fx.dev.examples) {
        zdv.push_back(fx.sce.encode(ex.tokens));
        ydv.push_back(ex.label == StyleLabel::kBiased ? 1.0f : 0.0f);
    }
    std::vector<float> w(small_cfg().d, 0.0f);
    float bias = 0.0f;
    for (int epoch = 0; epoch < 100; ++epoch) {
        for (std::size_t i = 0; i < ztr.size(); ++i) {
            float s = bias;
            for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * ztr[i][j];
            const float p = 1.0f / (1.0f + std::exp(-s));
            const float g = p - ytr[i];
            bias -= 0.5f * g;
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 0.5f * g * ztr[i][j];
        }
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < zdv.size(); ++i) {
        float s = bias;
        for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * zdv[i][j];
        if ((s > 0) == (ydv[i] > 0.5f)) ++correct;
    }
    const double probe_acc = static_cast<double>(correct) / zdv.size();
    INFO("linear probe accuracy = ", probe_acc);
    CHECK(probe_acc >= 0.9);

    // twins (same template, paired slot word) stay close in z space
    double cos_sum = 0.0;
    std::size_t n_twins = 0;
    for (std::size_t i = 0; i + 1 < fx.train.examples.size() && n_twins < 50; i += 2) {
        auto zb = fx.sce.encode(fx.train.examples[i].tokens);
        auto zn = fx.sce.encode(fx.train.examples[i + 1].tokens);
        cos_sum += cosine_similarity<float>(zb, zn);
        ++n_twins;
    }
    const double mean_twin_cos = cos_sum / n_twins;
    INFO("mean twin cosine = ", mean_twin_cos);
    CHECK(mean_twin_cos >= 0.7);
}

TEST_CASE("source content encoder training is deterministic and validates labels") {
    auto& fx = fixture();
    SceTrainOptions opts;
    opts.epochs = 1;
    SourceContentEncoder a =
        train_source_content_encoder(fx.train, fx.dev, small_cfg(), 9, opts);
    SourceContentEncoder b =
        train_source_content_encoder(fx.train, fx.dev, small_cfg(), 9, opts);
    CHECK(a.checksum() == b.checksum());

    Corpus biased_only = fx.biased_subset(fx.train);
    CHECK_THROWS_AS(
        train_source_content_encoder(biased_only, fx.dev, small_cfg(), 9, opts),
        std::invalid_argument);
}

TEST_CASE("latent encoder trains against the dual objective") {
    auto& fx = fixture();
    Corpus biased_train = fx.biased_subset(fx.train);
    Corpus biased_dev = fx.biased_subset(fx.dev);

    LceHyper hyper;
    hyper.lambda = 0.5f;
    hyper.epochs = 3;
    hyper.learning_rate = 5e-5f;
    hyper.seed = 21;

    const auto sce_sum = fx.sce.checksum();
    const auto det_sum = fx.detector.checksum();
    LceTrainReport rep;
    LatentEncoder lce =
        train_latent_encoder(biased_train, biased_dev, fx.sce, fx.detector, hyper, &rep);
    CHECK(fx.sce.checksum() == sce_sum);        // auxiliaries stayed frozen
    CHECK(fx.detector.checksum() == det_sum);

    INFO("dev mean cos = ", rep.dev_mean_cos, ", dev mean P(s_a) = ",
         rep.dev_mean_p_neutral);
    CHECK(rep.dev_mean_cos >= 0.8f);
    CHECK(rep.dev_mean_p_neutral >= 0.8f);

    // zhat departs from z on biased input once the detector term bites
    double max_cos = -1.0;
    for (const auto& ex : biased_dev.examples) {
        auto zhat = encode_latent(lce, ex);
        auto z = encode_source(fx.sce, ex);
        max_cos = std::max(max_cos, (double)cosine_similarity<float>(zhat, z));
    }
    CHECK(max_cos < 1.0 - 1e-4);

    CHECK(encode_latent(lce, biased_dev.examples[0]).size() == small_cfg().d);
}

TEST_CASE("lambda = 0 keeps zhat aligned with z") {
    auto& fx = fixture();
    Corpus biased_train = fx.biased_subset(fx.train);
    Corpus biased_dev = fx.biased_subset(fx.dev);
    LceHyper hyper;
    hyper.lambda = 0.0f;
    hyper.epochs = 1;
    hyper.seed = 22;
    LceTrainReport rep;
    train_latent_encoder(biased_train, biased_dev, fx.sce, fx.detector, hyper, &rep);
    CHECK(rep.dev_mean_cos >= 0.99f);
}

TEST_CASE("lambda = 1 drives the detector loss down with no similarity guarantee") {
    auto& fx = fixture();
    Corpus biased_train = fx.biased_subset(fx.train);
    Corpus biased_dev = fx.biased_subset(fx.dev);

    // initial detector loss on source encodings of biased dev text
    double initial = 0.0;
    for (const auto& ex : biased_dev.examples) {
        auto z = encode_source(fx.sce, ex);
        initial += -std::log(std::max(fx.detector.predict(z)[kClassNeutral], 1e-30f));
    }
    initial /= biased_dev.examples.size();

    LceHyper hyper;
    hyper.lambda = 1.0f;
    hyper.epochs = 2;
    hyper.seed = 23;
    LceTrainReport rep;
    LatentEncoder lce =
        train_latent_encoder(biased_train, biased_dev, fx.sce, fx.detector, hyper, &rep);
    double final_loss = 0.0;
    for (const auto& ex : biased_dev.examples) {
        auto zhat = encode_latent(lce, ex);
        final_loss +=
            -std::log(std::max(fx.detector.predict(zhat)[kClassNeutral], 1e-30f));
    }
    final_loss /= biased_dev.examples.size();
    INFO("detector loss ", initial, " -> ", final_loss);
    CHECK(final_loss < initial);
}

TEST_CASE("latent encoder rejects neutral training text and bad hypers") {
    auto& fx = fixture();
    LceHyper hyper;
    CHECK_THROWS_AS(
        train_latent_encoder(fx.train, fx.dev, fx.sce, fx.detector, hyper, nullptr),
        std::invalid_argument);
    hyper.lambda = 1.5f;
    CHECK_THROWS_AS(hyper.validate(), std::invalid_argument);
}
