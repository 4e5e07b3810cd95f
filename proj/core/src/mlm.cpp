#include "debias/mlm.hpp"

#include <algorithm>
#include <stdexcept>

namespace debias {

MlmMasked apply_mlm_mask(const std::vector<TokenId>& tokens, double rate, Rng& rng) {
    if (rate <= 0.0 || rate >= 1.0)
        throw std::invalid_argument("apply_mlm_mask: rate must be in (0,1)");
    if (tokens.empty()) throw std::invalid_argument("apply_mlm_mask: empty sentence");

    std::vector<std::size_t> maskable;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] >= kNumSpecialTokens) maskable.push_back(i);
    // Degenerate all-special sentences still get one masked position.
    if (maskable.empty())
        for (std::size_t i = 0; i < tokens.size(); ++i) maskable.push_back(i);

    std::uniform_real_distribution<double> u(0.0, 1.0);
    MlmMasked out;
    out.targets = tokens;
    while (out.positions.empty()) {
        out.input = tokens;
        for (std::size_t i : maskable)
            if (u(rng) < rate) out.positions.insert(i);
        for (std::size_t i : out.positions) out.input[i] = kMaskId;
    }
    return out;
}

MlmMasked apply_mlm_mask(const std::vector<TokenId>& tokens, double rate,
                         std::uint64_t seed) {
    Rng rng(seed);
    return apply_mlm_mask(tokens, rate, rng);
}

template <typename Real>
MlmModelT<Real>::MlmModelT(const EncoderConfig& cfg, std::size_t vocab_size,
                           std::uint64_t init_seed)
    : encoder(cfg, vocab_size, init_seed) {
    Rng rng(derive_seed(init_seed, "mlm_head"));
    head = LinearLayer<Real>(cfg.d, vocab_size, rng);
}

template <typename Real>
std::vector<ParamRef<Real>> MlmModelT<Real>::params() {
    auto out = encoder.params();
    head.collect("mlm_head", out);
    return out;
}

template <typename Real>
void MlmModelT<Real>::zero_grads() {
    auto ps = params();
    debias::zero_grads(ps);
}

template <typename Real>
std::uint64_t MlmModelT<Real>::checksum() {
    auto ps = params();
    return param_checksum(ps);
}

namespace {

// Gathers the masked rows of the hidden states into a dense block.
template <typename Real>
Matrix<Real> gather_rows(const Matrix<Real>& hidden, const std::set<std::size_t>& rows) {
    Matrix<Real> out(rows.size(), hidden.cols());
    std::size_t r = 0;
    for (std::size_t i : rows) {
        for (std::size_t j = 0; j < hidden.cols(); ++j) out(r, j) = hidden(i, j);
        ++r;
    }
    return out;
}

}  // namespace

MlmModel train_token_embedder(const Corpus& corpus, const EncoderConfig& cfg,
                              std::uint64_t seed, const MlmTrainOptions& opts,
                              MlmTrainReport* report) {
    if (corpus.examples.empty())
        throw std::invalid_argument("train_token_embedder: empty corpus");

    MlmModel model(cfg, corpus.vocab.size(), derive_seed(seed, "mlm_init"));
    Rng rng(derive_seed(seed, "mlm_train"));
    AdamOptimizer<float> adam(opts.learning_rate);
    auto params = model.params();

    MlmTrainReport rep;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        auto order = shuffled_indices(corpus.examples.size(), rng);
        double loss_sum = 0.0;
        std::size_t token_count = 0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(opts.batch_size, order.size() - done);
            model.zero_grads();
            const float inv_b = 1.0f / static_cast<float>(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                const auto& ex = corpus.examples[order[done + b]];
                MlmMasked masked = apply_mlm_mask(ex.tokens, opts.mask_rate, rng);

                EncoderActivations<float> acts;
                Matrix<float> hidden = model.encoder.forward_from(
                    model.encoder.embed_hard(masked.input), acts, true, &rng);
                Matrix<float> rows = gather_rows(hidden, masked.positions);
                Matrix<float> logits = model.head.forward(rows);

                Matrix<float> dlogits(logits.rows(), logits.cols());
                std::size_t r = 0;
                for (std::size_t pos : masked.positions) {
                    auto p = softmax<float>(
                        std::span<const float>(logits.row(r), logits.cols()));
                    const auto target = static_cast<std::size_t>(masked.targets[pos]);
                    loss_sum += -std::log(std::max(p[target], 1e-30f));
                    for (std::size_t vI = 0; vI < p.size(); ++vI)
                        dlogits(r, vI) = p[vI] * inv_b;
                    dlogits(r, target) -= inv_b;
                    ++r;
                }
                token_count += masked.positions.size();

                Matrix<float> drows = model.head.backward(rows, dlogits);
                Matrix<float> dhidden(hidden.rows(), hidden.cols());
                r = 0;
                for (std::size_t pos : masked.positions) {
                    for (std::size_t j = 0; j < dhidden.cols(); ++j)
                        dhidden(pos, j) = drows(r, j);
                    ++r;
                }
                Matrix<float> dx0 = model.encoder.backward(acts, dhidden);
                model.encoder.backward_embed_hard(masked.input, dx0);
            }
            adam.step(params);
            done += bsz;
        }
        rep.epoch_loss_per_sentence.push_back(
            static_cast<float>(loss_sum / corpus.examples.size()));
        rep.epoch_loss_per_token.push_back(
            static_cast<float>(loss_sum / std::max<std::size_t>(token_count, 1)));
    }
    if (report) *report = rep;
    return model;
}

EmbeddingMatrix<float> embed_masked_text(const MlmModel& embedder,
                                         const MaskedText& xprime) {
    EncoderActivations<float> acts;
    EmbeddingMatrix<float> out;
    out.values = embedder.encoder.forward_from(embedder.encoder.embed_hard(xprime.tokens),
                                               acts, false, nullptr);
    return out;
}

double mlm_mean_loss(const MlmModel& model, const Corpus& corpus, double rate,
                     std::uint64_t seed) {
    if (corpus.examples.empty()) throw std::invalid_argument("mlm_mean_loss: empty corpus");
    Rng rng(seed);
    double loss_sum = 0.0;
    std::size_t token_count = 0;
    for (const auto& ex : corpus.examples) {
        MlmMasked masked = apply_mlm_mask(ex.tokens, rate, rng);
        EncoderActivations<float> acts;
        Matrix<float> hidden = model.encoder.forward_from(
            model.encoder.embed_hard(masked.input), acts, false, nullptr);
        Matrix<float> rows = gather_rows(hidden, masked.positions);
        Matrix<float> logits = model.head.forward(rows);
        std::size_t r = 0;
        for (std::size_t pos : masked.positions) {
            loss_sum += cross_entropy_logits<float>(
                std::span<const float>(logits.row(r), logits.cols()),
                static_cast<std::size_t>(masked.targets[pos]));
            ++r;
        }
        token_count += masked.positions.size();
    }
    return loss_sum / static_cast<double>(std::max<std::size_t>(token_count, 1));
}

RecoveryStats mlm_recovery(const MlmModel& model, const Corpus& corpus, double rate,
                           std::uint64_t seed) {
    Rng rng(seed);
    RecoveryStats stats;
    std::size_t hit1 = 0, hit5 = 0;
    for (const auto& ex : corpus.examples) {
        MlmMasked masked = apply_mlm_mask(ex.tokens, rate, rng);
        EncoderActivations<float> acts;
        Matrix<float> hidden = model.encoder.forward_from(
            model.encoder.embed_hard(masked.input), acts, false, nullptr);
        for (std::size_t pos : masked.positions) {
            Matrix<float> row(1, hidden.cols());
            for (std::size_t j = 0; j < hidden.cols(); ++j) row(0, j) = hidden(pos, j);
            Matrix<float> logits = model.head.forward(row);
            const auto target = masked.targets[pos];
            const float target_logit = logits(0, static_cast<std::size_t>(target));
            std::size_t n_better = 0;
            bool top1 = true;
            for (std::size_t vI = 0; vI < logits.cols(); ++vI) {
                if (static_cast<TokenId>(vI) == target) continue;
                if (logits(0, vI) > target_logit) {
                    ++n_better;
                    top1 = false;
                } else if (logits(0, vI) == target_logit && static_cast<TokenId>(vI) < target) {
                    ++n_better;  // ties broken by lowest id
                    top1 = false;
                }
            }
            if (top1) ++hit1;
            if (n_better < 5) ++hit5;
            ++stats.n_positions;
        }
    }
    if (stats.n_positions > 0) {
        stats.top1 = static_cast<double>(hit1) / stats.n_positions;
        stats.top5 = static_cast<double>(hit5) / stats.n_positions;
    }
    return stats;
}

template struct MlmModelT<float>;
template struct MlmModelT<double>;

}  // namespace debias
