#include <doctest.h>

#include <cmath>

#include "debias/classifier.hpp"
#include "debias/decoder.hpp"
#include "debias/latent.hpp"
#include "debias/mlm.hpp"
#include "debias/ops.hpp"
#include "test_util.hpp"

using namespace debias;

namespace {

EncoderConfig micro_cfg() {
    EncoderConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_width = 32;
    cfg.max_len = 8;
    cfg.dropout = 0.0;
    return cfg;
}

constexpr std::size_t kVocab = 16;
constexpr double kTol = 1e-3;

}  // namespace

TEST_CASE("masked-language loss gradients match finite differences") {
    MlmModelT<double> model(micro_cfg(), kVocab, 21);
    const std::vector<TokenId> input = {5, kMaskId, 7, kMaskId};
    const std::vector<TokenId> targets = {0, 9, 0, 12};
    const std::set<std::size_t> positions = {1, 3};

    auto loss = [&](bool backward) {
        EncoderActivations<double> acts;
        Matrix<double> hidden =
            model.encoder.forward_from(model.encoder.embed_hard(input), acts);
        Matrix<double> rows(positions.size(), hidden.cols());
        std::size_t r = 0;
        for (std::size_t pos : positions) {
            for (std::size_t j = 0; j < hidden.cols(); ++j) rows(r, j) = hidden(pos, j);
            ++r;
        }
        Matrix<double> logits = model.head.forward(rows);
        double total = 0.0;
        Matrix<double> dlogits(logits.rows(), logits.cols());
        r = 0;
        for (std::size_t pos : positions) {
            auto p = softmax<double>(std::span<const double>(logits.row(r), logits.cols()));
            total += -std::log(p[static_cast<std::size_t>(targets[pos])]);
            for (std::size_t v = 0; v < p.size(); ++v) dlogits(r, v) = p[v];
            dlogits(r, static_cast<std::size_t>(targets[pos])) -= 1.0;
            ++r;
        }
        if (backward) {
            Matrix<double> drows = model.head.backward(rows, dlogits);
            Matrix<double> dhidden(hidden.rows(), hidden.cols());
            r = 0;
            for (std::size_t pos : positions) {
                for (std::size_t j = 0; j < dhidden.cols(); ++j)
                    dhidden(pos, j) = drows(r, j);
                ++r;
            }
            Matrix<double> dx0 = model.encoder.backward(acts, dhidden);
            model.encoder.backward_embed_hard(input, dx0);
        }
        return total;
    };

    auto res = testutil::check_gradients(model.params(), loss);
    INFO("worst: ", res.worst_param, " rel err ", res.max_rel_err);
    CHECK(res.n_checked > 200);
    CHECK(res.max_rel_err < kTol);
}

TEST_CASE("style-classifier cross-entropy gradients match finite differences") {
    StyleClassifierT<double> model(micro_cfg(), kVocab, 33);
    const std::vector<TokenId> tokens = {6, 9, 12, 5};

    auto loss = [&](bool backward) {
        auto fw = model.forward_hard(tokens);
        const double value = -std::log(fw.probs[kClassBiased]);
        if (backward) {
            std::array<double, 2> dl = {fw.probs[0], fw.probs[1]};
            dl[kClassBiased] -= 1.0;
            model.backward(fw, dl);
        }
        return value;
    };

    auto res = testutil::check_gradients(model.params(), loss);
    INFO("worst: ", res.worst_param, " rel err ", res.max_rel_err);
    CHECK(res.max_rel_err < kTol);
}

TEST_CASE("soft-path classifier gradient w.r.t. soft rows matches finite differences") {
    StyleClassifierT<double> model(micro_cfg(), kVocab, 35);
    SoftTokenSequence<double> soft;
    soft.hard_ids = {6, 9, 12, 5};
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::vector<double> row(kVocab);
    double sum = 0;
    for (auto& v : row) {
        v = u(rng);
        sum += v;
    }
    for (auto& v : row) v /= sum;
    soft.soft_rows[1] = row;

    auto fw = model.forward_soft(soft);
    std::array<double, 2> dl = {fw.probs[0], fw.probs[1]};
    dl[kClassNeutral] -= 1.0;
    std::map<std::size_t, std::vector<double>> d_soft;
    model.backward(fw, dl, false, &d_soft);
    REQUIRE(d_soft.count(1) == 1);

    auto loss = [&]() {
        return -std::log(model.predict(soft)[kClassNeutral]);
    };
    // tiny step keeps the perturbed row within the row-sum tolerance
    double max_rel =
        testutil::check_vector_gradient(soft.soft_rows[1], d_soft[1], loss, 5e-7, 1e-5);
    CHECK(max_rel < kTol);
}

TEST_CASE("bias-detector gradient w.r.t. the latent vector matches finite differences") {
    BiasDetectorT<double> det(8, 16, 77);
    Rng rng(5);
    std::normal_distribution<double> g;
    std::vector<double> zhat(8);
    for (auto& v : zhat) v = g(rng);

    auto fw = det.forward(zhat);
    std::array<double, 2> dl = {fw.probs[0], fw.probs[1]};
    dl[kClassNeutral] -= 1.0;
    auto dz = det.backward(fw, dl, false);

    auto loss = [&]() { return -std::log(det.predict(zhat)[kClassNeutral]); };
    CHECK(testutil::check_vector_gradient(zhat, dz, loss) < kTol);

    // and the detector's own parameters
    auto param_loss = [&](bool backward) {
        auto f = det.forward(zhat);
        const double value = -std::log(f.probs[kClassNeutral]);
        if (backward) {
            std::array<double, 2> d = {f.probs[0], f.probs[1]};
            d[kClassNeutral] -= 1.0;
            det.backward(f, d, true);
        }
        return value;
    };
    auto res = testutil::check_gradients(det.params(), param_loss);
    CHECK(res.max_rel_err < kTol);
}

TEST_CASE("latent-encoder dual-objective gradient w.r.t. zhat matches finite differences") {
    BiasDetectorT<double> det(8, 16, 13);
    Rng rng(6);
    std::normal_distribution<double> g;
    std::vector<double> zhat(8), z(8);
    for (auto& v : zhat) v = g(rng);
    for (auto& v : z) v = g(rng);

    for (double lam : {0.0, 0.5, 1.0}) {
        std::vector<double> d_zhat;
        lce_loss_grad<double>(zhat, z, det, lam, d_zhat);
        auto loss = [&]() { return lce_loss<double>(zhat, z, det, lam).total; };
        INFO("lambda = ", lam);
        CHECK(testutil::check_vector_gradient(zhat, d_zhat, loss) < kTol);
    }
}

TEST_CASE("latent-encoder loss gradients flow through the encoder parameters") {
    auto cfg = micro_cfg();
    LatentEncoderT<double> lce;
    lce.encoder = TransformerEncoder<double>(cfg, kVocab, 91);
    BiasDetectorT<double> det(cfg.d, 16, 92);
    const std::vector<TokenId> tokens = {5, 8, 13, 6};
    Rng rng(7);
    std::normal_distribution<double> g;
    std::vector<double> z(cfg.d);
    for (auto& v : z) v = g(rng);
    const double lam = 0.5;

    auto loss = [&](bool backward) {
        EncoderActivations<double> acts;
        Matrix<double> hidden =
            lce.encoder.forward_from(lce.encoder.embed_hard(tokens), acts);
        auto zhat = mean_pool(hidden);
        std::vector<double> d_zhat;
        auto parts = lce_loss_grad<double>(zhat, z, det, lam, d_zhat);
        if (backward) {
            Matrix<double> dhidden(hidden.rows(), hidden.cols());
            const double inv_n = 1.0 / static_cast<double>(hidden.rows());
            for (std::size_t i = 0; i < dhidden.rows(); ++i)
                for (std::size_t j = 0; j < dhidden.cols(); ++j)
                    dhidden(i, j) = d_zhat[j] * inv_n;
            Matrix<double> dx0 = lce.encoder.backward(acts, dhidden);
            lce.encoder.backward_embed_hard(tokens, dx0);
        }
        return parts.total;
    };

    auto res = testutil::check_gradients(lce.encoder.params(), loss);
    INFO("worst: ", res.worst_param, " rel err ", res.max_rel_err);
    CHECK(res.max_rel_err < kTol);
}

TEST_CASE("decoder dual-objective gradients match finite differences") {
    auto cfg = micro_cfg();
    StyleClassifierT<double> f(cfg, kVocab, 55);
    Rng rng(8);
    LinearLayer<double> head(cfg.d, kVocab, rng, 0.2);

    const std::vector<TokenId> context = {6, 9, 12, 5};
    const std::set<std::size_t> pi = {1, 3};
    const std::vector<TokenId> targets = {9, 5};

    EmbeddingMatrix<double> w;
    w.values = Matrix<double>(context.size(), cfg.d);
    std::normal_distribution<double> g;
    for (auto& v : w.values.data()) v = g(rng);
    std::vector<double> zhat(cfg.d);
    for (auto& v : zhat) v = g(rng);

    for (double gamma : {0.0, 0.3, 1.0}) {
        FusedEmbeddingsT<double> fused = fuse_embeddings<double>(w, zhat, pi, 0.5);

        Matrix<double> d_fused_rows;
        td_loss_apply<double>(fused, context, targets, head, f, gamma, 1.0, 1.0, false,
                              &d_fused_rows);

        // gradient w.r.t. the fused rows, including the soft-sampling path
        std::vector<double> flat;
        std::vector<std::size_t> rows(pi.begin(), pi.end());
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t j = 0; j < cfg.d; ++j)
                flat.push_back(fused.values(rows[r], j));
        std::vector<double> analytic;
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t j = 0; j < cfg.d; ++j) analytic.push_back(d_fused_rows(r, j));

        auto loss = [&]() {
            FusedEmbeddingsT<double> current = fused;
            std::size_t k = 0;
            for (std::size_t row : rows)
                for (std::size_t j = 0; j < cfg.d; ++j) current.values(row, j) = flat[k++];
            return td_loss_apply<double>(current, context, targets, head, f, gamma, 1.0,
                                         1.0, false, nullptr)
                .total;
        };
        INFO("gamma = ", gamma);
        CHECK(testutil::check_vector_gradient(flat, analytic, loss) < kTol);

        // decoder-head parameter gradients
        std::vector<ParamRef<double>> head_params;
        head.collect("decoder", head_params);
        auto head_loss = [&](bool backward) {
            return td_loss_apply<double>(fused, context, targets, head, f, gamma, 1.0, 1.0,
                                         backward, nullptr)
                .total;
        };
        auto res = testutil::check_gradients(head_params, head_loss);
        INFO("gamma = ", gamma, " worst: ", res.worst_param);
        CHECK(res.max_rel_err < kTol);
    }
}

TEST_CASE("soft-sampling temperature shows up in the gradient path") {
    // tau scales the effective sharpness of the relaxed tokens; verify the
    // complete chain at a non-unit temperature too.
    auto cfg = micro_cfg();
    StyleClassifierT<double> f(cfg, kVocab, 56);
    Rng rng(9);
    LinearLayer<double> head(cfg.d, kVocab, rng, 0.2);
    const std::vector<TokenId> context = {7, 10, 5};
    const std::set<std::size_t> pi = {0, 2};
    const std::vector<TokenId> targets = {7, 5};
    EmbeddingMatrix<double> w;
    w.values = Matrix<double>(context.size(), cfg.d);
    std::normal_distribution<double> g;
    for (auto& v : w.values.data()) v = g(rng);
    std::vector<double> zhat(cfg.d);
    for (auto& v : zhat) v = g(rng);
    FusedEmbeddingsT<double> fused = fuse_embeddings<double>(w, zhat, pi, 0.5);

    std::vector<ParamRef<double>> head_params;
    head.collect("decoder", head_params);
    auto head_loss = [&](bool backward) {
        return td_loss_apply<double>(fused, context, targets, head, f, 0.4, 0.5, 1.0,
                                     backward, nullptr)
            .total;
    };
    auto res = testutil::check_gradients(head_params, head_loss);
    CHECK(res.max_rel_err < kTol);
}
