#include "debias/latent.hpp"

#include <cmath>
#include <stdexcept>

#include "debias/checkpoint.hpp"
#include "debias/ops.hpp"

namespace debias {

template <typename Real>
SourceContentEncoderT<Real>::SourceContentEncoderT(const EncoderConfig& cfg,
                                                   std::size_t vocab_size,
                                                   std::uint64_t init_seed)
    : encoder(cfg, vocab_size, init_seed) {
    Rng rng(derive_seed(init_seed, "sce_heads"));
    mlm_head = LinearLayer<Real>(cfg.d, vocab_size, rng);
    style_head = LinearLayer<Real>(cfg.d, 2, rng);
}

template <typename Real>
std::vector<Real> SourceContentEncoderT<Real>::encode(
    std::span<const TokenId> tokens) const {
    EncoderActivations<Real> acts;
    Matrix<Real> hidden = encoder.encode_hard(tokens, acts, false, nullptr);
    return mean_pool(hidden);
}

template <typename Real>
std::vector<ParamRef<Real>> SourceContentEncoderT<Real>::params() {
    auto out = encoder.params();
    mlm_head.collect("mlm_head", out);
    style_head.collect("style_head", out);
    return out;
}

template <typename Real>
void SourceContentEncoderT<Real>::zero_grads() {
    auto ps = params();
    debias::zero_grads(ps);
}

template <typename Real>
std::uint64_t SourceContentEncoderT<Real>::checksum() {
    auto ps = params();
    return param_checksum(ps);
}

std::vector<float> encode_source(const SourceContentEncoder& sce, const TextExample& x) {
    return sce.encode(x.tokens);
}

SourceContentEncoder train_source_content_encoder(const Corpus& corpus, const Corpus& dev,
                                                  const EncoderConfig& cfg,
                                                  std::uint64_t seed,
                                                  const SceTrainOptions& opts,
                                                  SceTrainReport* report) {
    if (corpus.count_label(StyleLabel::kNeutral) == 0 ||
        corpus.count_label(StyleLabel::kBiased) == 0)
        throw std::invalid_argument("train_source_content_encoder: both labels required");

    SourceContentEncoder model(cfg, corpus.vocab.size(), derive_seed(seed, "sce_init"));
    Rng rng(derive_seed(seed, "sce_train"));
    AdamOptimizer<float> adam(opts.learning_rate);
    auto params = model.params();

    SceTrainReport rep;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        auto order = shuffled_indices(corpus.examples.size(), rng);
        double mlm_sum = 0.0, style_sum = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(opts.batch_size, order.size() - done);
            model.zero_grads();
            const float inv_b = 1.0f / static_cast<float>(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                const auto& ex = corpus.examples[order[done + b]];

                // Masked-language objective.
                MlmMasked masked = apply_mlm_mask(ex.tokens, opts.mask_rate, rng);
                EncoderActivations<float> acts;
                Matrix<float> hidden = model.encoder.forward_from(
                    model.encoder.embed_hard(masked.input), acts, true, &rng);
                Matrix<float> rows(masked.positions.size(), hidden.cols());
                std::size_t r = 0;
                for (std::size_t pos : masked.positions) {
                    for (std::size_t j = 0; j < hidden.cols(); ++j)
                        rows(r, j) = hidden(pos, j);
                    ++r;
                }
                Matrix<float> logits = model.mlm_head.forward(rows);
                Matrix<float> dlogits(logits.rows(), logits.cols());
                r = 0;
                for (std::size_t pos : masked.positions) {
                    auto p = softmax<float>(
                        std::span<const float>(logits.row(r), logits.cols()));
                    const auto target = static_cast<std::size_t>(masked.targets[pos]);
                    mlm_sum += -std::log(std::max(p[target], 1e-30f));
                    for (std::size_t vI = 0; vI < p.size(); ++vI)
                        dlogits(r, vI) = p[vI] * inv_b;
                    dlogits(r, target) -= inv_b;
                    ++r;
                }
                Matrix<float> drows = model.mlm_head.backward(rows, dlogits);
                Matrix<float> dhidden(hidden.rows(), hidden.cols());
                r = 0;
                for (std::size_t pos : masked.positions) {
                    for (std::size_t j = 0; j < dhidden.cols(); ++j)
                        dhidden(pos, j) = drows(r, j);
                    ++r;
                }
                Matrix<float> dx0 = model.encoder.backward(acts, dhidden);
                model.encoder.backward_embed_hard(masked.input, dx0);

                // Pooled style objective on the clean sentence.
                EncoderActivations<float> acts2;
                Matrix<float> hidden2 = model.encoder.forward_from(
                    model.encoder.embed_hard(ex.tokens), acts2, true, &rng);
                auto pooled = mean_pool(hidden2);
                Matrix<float> pooled_m(1, pooled.size());
                for (std::size_t j = 0; j < pooled.size(); ++j) pooled_m(0, j) = pooled[j];
                Matrix<float> slog = model.style_head.forward(pooled_m);
                auto sp = softmax<float>(std::span<const float>(slog.data()));
                const std::size_t target = class_of(ex.label);
                style_sum += -std::log(std::max(sp[target], 1e-30f));
                const float sw = opts.style_weight * inv_b;
                Matrix<float> dslog(1, 2);
                dslog(0, 0) = sp[0] * sw;
                dslog(0, 1) = sp[1] * sw;
                dslog(0, target) -= sw;
                Matrix<float> dpooled = model.style_head.backward(pooled_m, dslog);
                Matrix<float> dhidden2(hidden2.rows(), hidden2.cols());
                const float inv_n = 1.0f / static_cast<float>(hidden2.rows());
                for (std::size_t i = 0; i < dhidden2.rows(); ++i)
                    for (std::size_t j = 0; j < dhidden2.cols(); ++j)
                        dhidden2(i, j) = dpooled(0, j) * inv_n;
                Matrix<float> dx02 = model.encoder.backward(acts2, dhidden2);
                model.encoder.backward_embed_hard(ex.tokens, dx02);
            }
            adam.step(params);
            done += bsz;
        }
        rep.epoch_mlm_loss.push_back(static_cast<float>(mlm_sum / corpus.examples.size()));
        rep.epoch_style_loss.push_back(
            static_cast<float>(style_sum / corpus.examples.size()));
    }

    // Pooled style accuracy on dev via the trained style head.
    if (!dev.examples.empty()) {
        std::size_t correct = 0;
        for (const auto& ex : dev.examples) {
            auto z = model.encode(ex.tokens);
            Matrix<float> zm(1, z.size());
            for (std::size_t j = 0; j < z.size(); ++j) zm(0, j) = z[j];
            Matrix<float> slog = model.style_head.forward(zm);
            const std::size_t pred = slog(0, kClassBiased) > slog(0, kClassNeutral)
                                         ? kClassBiased
                                         : kClassNeutral;
            if (pred == class_of(ex.label)) ++correct;
        }
        rep.dev_style_acc = static_cast<float>(correct) / dev.examples.size();
    }
    if (report) *report = rep;
    return model;
}

template <typename Real>
std::vector<Real> LatentEncoderT<Real>::encode(std::span<const TokenId> tokens) const {
    EncoderActivations<Real> acts;
    Matrix<Real> hidden = encoder.encode_hard(tokens, acts, false, nullptr);
    return mean_pool(hidden);
}

std::vector<float> encode_latent(const LatentEncoder& lce, const TextExample& x) {
    return lce.encode(x.tokens);
}

void LceHyper::validate() const {
    if (lambda < 0.0f || lambda > 1.0f)
        throw std::invalid_argument("lce: lambda must be within [0,1]");
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("lce: bad sizes");
    if (learning_rate <= 0.0f) throw std::invalid_argument("lce: bad learning rate");
}

template <typename Real>
LceLossParts<Real> lce_loss(std::span<const Real> zhat, std::span<const Real> z,
                            const BiasDetectorT<Real>& detector, Real lam) {
    if (lam < Real(0) || lam > Real(1))
        throw std::invalid_argument("lce_loss: lambda must be within [0,1]");
    LceLossParts<Real> parts;
    const Real c = cosine_similarity(zhat, z);
    parts.l_sim = (c - Real(1)) * (c - Real(1));
    auto probs = detector.predict(zhat);
    parts.l_acc = -std::log(std::max(probs[kClassNeutral], Real(1e-30)));
    parts.total = (Real(1) - lam) * parts.l_sim + lam * parts.l_acc;
    return parts;
}

template <typename Real>
LceLossParts<Real> lce_loss_grad(std::span<const Real> zhat, std::span<const Real> z,
                                 BiasDetectorT<Real>& detector, Real lam,
                                 std::vector<Real>& d_zhat) {
    if (lam < Real(0) || lam > Real(1))
        throw std::invalid_argument("lce_loss: lambda must be within [0,1]");
    LceLossParts<Real> parts;
    const std::size_t d = zhat.size();
    d_zhat.assign(d, Real(0));

    // similarity term: d/da (cos(a,b)-1)^2
    const Real c = cosine_similarity(zhat, z);
    parts.l_sim = (c - Real(1)) * (c - Real(1));
    const Real na = norm(zhat), nb = norm(z);
    const Real coeff = Real(2) * (c - Real(1));
    for (std::size_t j = 0; j < d; ++j) {
        const Real dc = z[j] / (na * nb) - c * zhat[j] / (na * na);
        d_zhat[j] += (Real(1) - lam) * coeff * dc;
    }

    // detector term: -log P(s_a | zhat), gradient through the frozen detector
    auto fw = detector.forward(zhat);
    parts.l_acc = -std::log(std::max(fw.probs[kClassNeutral], Real(1e-30)));
    std::array<Real, 2> dlogits = {fw.probs[0], fw.probs[1]};
    dlogits[kClassNeutral] -= Real(1);
    auto dz = detector.backward(fw, dlogits, /*accumulate_param_grads=*/false);
    for (std::size_t j = 0; j < d; ++j) d_zhat[j] += lam * dz[j];

    parts.total = (Real(1) - lam) * parts.l_sim + lam * parts.l_acc;
    return parts;
}

LatentEncoder train_latent_encoder(const Corpus& biased_corpus, const Corpus& biased_dev,
                                   SourceContentEncoder& sce, BiasDetector& detector,
                                   const LceHyper& hyper, LceTrainReport* report) {
    hyper.validate();
    if (biased_corpus.examples.empty())
        throw std::invalid_argument("train_latent_encoder: empty corpus");
    for (const auto& ex : biased_corpus.examples)
        if (ex.label != StyleLabel::kBiased)
            throw std::invalid_argument(
                "train_latent_encoder: corpus must contain biased text only");

    const std::uint64_t sce_sum_before = sce.checksum();
    const std::uint64_t det_sum_before = detector.checksum();

    // Initialize from the source content encoder's weights.
    LatentEncoder lce;
    lce.encoder = TransformerEncoder<float>(sce.encoder.config(), sce.encoder.vocab_size(),
                                            derive_seed(hyper.seed, "lce_init"));
    {
        auto src = sce.encoder.params();
        Checkpoint snap = make_checkpoint(src, "{}");
        auto dst = lce.encoder.params();
        restore_params(snap, dst);
    }

    Rng rng(derive_seed(hyper.seed, "lce_train"));
    AdamOptimizer<float> adam(hyper.learning_rate);
    auto params = lce.encoder.params();

    LceTrainReport rep;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        auto order = shuffled_indices(biased_corpus.examples.size(), rng);
        double total_sum = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(hyper.batch_size, order.size() - done);
            lce.encoder.zero_grads();
            const float inv_b = 1.0f / static_cast<float>(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                const auto& ex = biased_corpus.examples[order[done + b]];
                EncoderActivations<float> acts;
                Matrix<float> hidden = lce.encoder.forward_from(
                    lce.encoder.embed_hard(ex.tokens), acts, true, &rng);
                auto zhat = mean_pool(hidden);
                auto z = sce.encode(ex.tokens);

                std::vector<float> d_zhat;
                auto parts = lce_loss_grad<float>(zhat, z, detector, hyper.lambda, d_zhat);
                total_sum += parts.total;

                Matrix<float> dhidden(hidden.rows(), hidden.cols());
                const float inv_n = 1.0f / static_cast<float>(hidden.rows());
                for (std::size_t i = 0; i < dhidden.rows(); ++i)
                    for (std::size_t j = 0; j < dhidden.cols(); ++j)
                        dhidden(i, j) = d_zhat[j] * inv_n * inv_b;
                Matrix<float> dx0 = lce.encoder.backward(acts, dhidden);
                lce.encoder.backward_embed_hard(ex.tokens, dx0);
            }
            adam.step(params);
            done += bsz;
        }
        rep.epoch_total.push_back(
            static_cast<float>(total_sum / biased_corpus.examples.size()));
    }

    if (sce.checksum() != sce_sum_before || detector.checksum() != det_sum_before)
        throw std::runtime_error(
            "train_latent_encoder: frozen auxiliary parameters were modified");

    if (!biased_dev.examples.empty()) {
        double cos_sum = 0.0, p_sum = 0.0;
        for (const auto& ex : biased_dev.examples) {
            auto zhat = lce.encode(ex.tokens);
            auto z = sce.encode(ex.tokens);
            cos_sum += cosine_similarity<float>(zhat, z);
            p_sum += detector.predict(zhat)[kClassNeutral];
        }
        rep.dev_mean_cos = static_cast<float>(cos_sum / biased_dev.examples.size());
        rep.dev_mean_p_neutral = static_cast<float>(p_sum / biased_dev.examples.size());
    }
    if (report) *report = rep;
    return lce;
}

template struct SourceContentEncoderT<float>;
template struct SourceContentEncoderT<double>;
template struct LatentEncoderT<float>;
template struct LatentEncoderT<double>;
template LceLossParts<float> lce_loss<float>(std::span<const float>, std::span<const float>,
                                             const BiasDetectorT<float>&, float);
template LceLossParts<double> lce_loss<double>(std::span<const double>,
                                               std::span<const double>,
                                               const BiasDetectorT<double>&, double);
template LceLossParts<float> lce_loss_grad<float>(std::span<const float>,
                                                  std::span<const float>,
                                                  BiasDetectorT<float>&, float,
                                                  std::vector<float>&);
template LceLossParts<double> lce_loss_grad<double>(std::span<const double>,
                                                    std::span<const double>,
                                                    BiasDetectorT<double>&, double,
                                                    std::vector<double>&);

}  // namespace debias
