#include "debias/decoder.hpp"

#include <cmath>
#include <stdexcept>

#include "debias/checkpoint.hpp"

namespace debias {

template <typename Real>
FusedEmbeddingsT<Real> fuse_embeddings(const EmbeddingMatrix<Real>& w,
                                       std::span<const Real> zhat,
                                       const std::set<std::size_t>& pi, Real alpha) {
    if (alpha < Real(0) || alpha > Real(1))
        throw std::invalid_argument("fuse_embeddings: alpha must be within [0,1]");
    for (std::size_t i : pi)
        if (i >= w.values.rows())
            throw std::invalid_argument("fuse_embeddings: position out of range");

    FusedEmbeddingsT<Real> out;
    out.values = w.values;
    out.fused_positions = pi;
    out.alpha = alpha;
    if (alpha == Real(1)) return out;  // identity fusion, keep W bit for bit

    if (zhat.size() != w.values.cols())
        throw std::invalid_argument("fuse_embeddings: latent length mismatch");
    for (std::size_t i : pi) {
        Real* row = out.values.row(i);
        for (std::size_t j = 0; j < out.values.cols(); ++j)
            row[j] = alpha * row[j] + (Real(1) - alpha) * zhat[j];
    }
    return out;
}

template <typename Real>
Matrix<Real> decode_token_logits(const LinearLayer<Real>& head,
                                 const FusedEmbeddingsT<Real>& fused) {
    if (head.in_dim() != fused.values.cols())
        throw std::invalid_argument("decode_token_logits: head dimension mismatch");
    Matrix<Real> rows(fused.fused_positions.size(), fused.values.cols());
    std::size_t r = 0;
    for (std::size_t i : fused.fused_positions) {
        for (std::size_t j = 0; j < fused.values.cols(); ++j)
            rows(r, j) = fused.values(i, j);
        ++r;
    }
    return head.forward(rows);
}

template <typename Real>
std::vector<Real> soft_sample(std::span<const Real> logits, Real tau) {
    return softmax_with_temperature(logits, tau);
}

void TdHyper::validate() const {
    if (gamma < 0.0f || gamma > 1.0f)
        throw std::invalid_argument("td: gamma must be within [0,1]");
    if (tau <= 0.0f) throw std::invalid_argument("td: tau must be > 0");
    if (alpha < 0.0f || alpha > 1.0f)
        throw std::invalid_argument("td: alpha must be within [0,1]");
    if (mask_rate <= 0.0 || mask_rate >= 1.0)
        throw std::invalid_argument("td: mask rate must be in (0,1)");
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("td: bad sizes");
    if (learning_rate <= 0.0f) throw std::invalid_argument("td: bad learning rate");
}

template <typename Real>
TdLossParts<Real> td_loss(const Matrix<Real>& logits, const std::vector<TokenId>& targets,
                          const SoftTokenSequence<Real>& soft_sentence,
                          const StyleClassifierT<Real>& f, Real gamma, Real tau) {
    if (gamma < Real(0) || gamma > Real(1))
        throw std::invalid_argument("td_loss: gamma must be within [0,1]");
    if (targets.size() != logits.rows())
        throw std::invalid_argument("td_loss: one target per masked position required");
    TdLossParts<Real> parts;
    for (std::size_t r = 0; r < logits.rows(); ++r)
        parts.l_dec += cross_entropy_logits<Real>(
            std::span<const Real>(logits.row(r), logits.cols()),
            static_cast<std::size_t>(targets[r]));
    (void)tau;
    parts.l_acc = -std::log(
        std::max(f.predict(soft_sentence)[kClassNeutral], Real(1e-30)));
    parts.total = (Real(1) - gamma) * parts.l_dec + gamma * parts.l_acc;
    return parts;
}

template <typename Real>
TdLossParts<Real> td_loss_apply(const FusedEmbeddingsT<Real>& fused,
                                const std::vector<TokenId>& context_tokens,
                                const std::vector<TokenId>& targets,
                                LinearLayer<Real>& head, StyleClassifierT<Real>& f,
                                Real gamma, Real tau, Real scale,
                                bool accumulate_head_grads, Matrix<Real>* d_fused_rows) {
    if (gamma < Real(0) || gamma > Real(1))
        throw std::invalid_argument("td_loss: gamma must be within [0,1]");
    if (tau <= Real(0)) throw std::invalid_argument("td_loss: tau must be > 0");
    const std::size_t n_masked = fused.fused_positions.size();
    if (targets.size() != n_masked)
        throw std::invalid_argument("td_loss: one target per masked position required");

    Matrix<Real> rows(n_masked, fused.values.cols());
    {
        std::size_t r = 0;
        for (std::size_t i : fused.fused_positions) {
            for (std::size_t j = 0; j < fused.values.cols(); ++j)
                rows(r, j) = fused.values(i, j);
            ++r;
        }
    }
    Matrix<Real> logits = head.forward(rows);
    const std::size_t vocab = logits.cols();

    TdLossParts<Real> parts;
    Matrix<Real> dlogits(n_masked, vocab, Real(0));

    // Reconstruction term, summed over masked positions.
    for (std::size_t r = 0; r < n_masked; ++r) {
        auto p = softmax<Real>(std::span<const Real>(logits.row(r), vocab));
        const auto target = static_cast<std::size_t>(targets[r]);
        parts.l_dec += -std::log(std::max(p[target], Real(1e-30)));
        const Real wdec = (Real(1) - gamma);
        for (std::size_t vI = 0; vI < vocab; ++vI) dlogits(r, vI) += wdec * p[vI];
        dlogits(r, target) -= wdec;
    }

    // Class constraint through soft sampling; skipped entirely at gamma = 0.
    if (gamma > Real(0)) {
        SoftTokenSequence<Real> soft;
        soft.hard_ids = context_tokens;
        std::vector<std::vector<Real>> soft_probs(n_masked);
        {
            std::size_t r = 0;
            for (std::size_t i : fused.fused_positions) {
                soft_probs[r] =
                    soft_sample<Real>(std::span<const Real>(logits.row(r), vocab), tau);
                soft.soft_rows[i] = soft_probs[r];
                ++r;
            }
        }
        auto fw = f.forward_soft(soft, false, nullptr);
        parts.l_acc = -std::log(std::max(fw.probs[kClassNeutral], Real(1e-30)));
        std::array<Real, 2> dcls = {fw.probs[0], fw.probs[1]};
        dcls[kClassNeutral] -= Real(1);
        std::map<std::size_t, std::vector<Real>> d_soft;
        f.backward(fw, dcls, /*accumulate_param_grads=*/false, &d_soft);

        // Chain through softmax(o/tau) for each soft row.
        std::size_t r = 0;
        for (std::size_t i : fused.fused_positions) {
            const auto& p = soft_probs[r];
            const auto& dp = d_soft.at(i);
            Real inner = Real(0);
            for (std::size_t vI = 0; vI < vocab; ++vI) inner += dp[vI] * p[vI];
            for (std::size_t vI = 0; vI < vocab; ++vI)
                dlogits(r, vI) += gamma * p[vI] * (dp[vI] - inner) / tau;
            ++r;
        }
    }
    parts.total = (Real(1) - gamma) * parts.l_dec + gamma * parts.l_acc;

    if (scale != Real(1))
        for (auto& v : dlogits.data()) v *= scale;
    Matrix<Real> drows = head.backward(rows, dlogits, accumulate_head_grads);
    if (d_fused_rows) *d_fused_rows = std::move(drows);
    return parts;
}

LinearLayer<float> train_token_decoder(const Corpus& neutral_corpus, MlmModel& embedder,
                                       SourceContentEncoder& sce, StyleClassifier& f,
                                       const TdHyper& hyper, TdTrainReport* report) {
    hyper.validate();
    if (neutral_corpus.examples.empty())
        throw std::invalid_argument("train_token_decoder: empty corpus");
    for (const auto& ex : neutral_corpus.examples)
        if (ex.label != StyleLabel::kNeutral)
            throw std::invalid_argument(
                "train_token_decoder: corpus must contain neutral text only");

    const std::uint64_t emb_sum = embedder.checksum();
    const std::uint64_t sce_sum = sce.checksum();
    const std::uint64_t cls_sum = f.checksum();

    // The decoder starts from the embedder's trained classification layer.
    LinearLayer<float> head;
    {
        Rng tmp(0);
        head = LinearLayer<float>(embedder.head.in_dim(), embedder.head.out_dim(), tmp);
        std::vector<ParamRef<float>> src, dst;
        embedder.head.collect("decoder", src);
        head.collect("decoder", dst);
        Checkpoint snap = make_checkpoint(src, "{}");
        restore_params(snap, dst);
    }

    const float alpha = hyper.effective_alpha();
    Rng rng(derive_seed(hyper.seed, "td_train"));
    AdamOptimizer<float> adam(hyper.learning_rate);
    std::vector<ParamRef<float>> params;
    head.collect("decoder", params);

    TdTrainReport rep;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        auto order = shuffled_indices(neutral_corpus.examples.size(), rng);
        double sum_total = 0.0, sum_dec = 0.0, sum_acc = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(hyper.batch_size, order.size() - done);
            for (auto& p : params) p.grad->zero();
            const float inv_b = 1.0f / static_cast<float>(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                const auto& ex = neutral_corpus.examples[order[done + b]];
                MlmMasked masked = apply_mlm_mask(ex.tokens, hyper.mask_rate, rng);

                MaskedText mt;
                mt.tokens = masked.input;
                mt.masked_positions = masked.positions;
                mt.original = ex;
                EmbeddingMatrix<float> w = embed_masked_text(embedder, mt);

                std::vector<float> z;
                if (alpha < 1.0f) z = sce.encode(ex.tokens);
                FusedEmbeddings fused =
                    fuse_embeddings<float>(w, z, masked.positions, alpha);

                std::vector<TokenId> targets;
                for (std::size_t pos : masked.positions)
                    targets.push_back(masked.targets[pos]);

                auto parts = td_loss_apply<float>(fused, ex.tokens, targets, head, f,
                                                  hyper.gamma, hyper.tau, inv_b,
                                                  /*accumulate_head_grads=*/true, nullptr);
                sum_total += parts.total;
                sum_dec += parts.l_dec;
                sum_acc += parts.l_acc;
            }
            adam.step(params);
            done += bsz;
        }
        const auto n = static_cast<double>(neutral_corpus.examples.size());
        rep.epoch_total.push_back(static_cast<float>(sum_total / n));
        rep.epoch_dec.push_back(static_cast<float>(sum_dec / n));
        rep.epoch_acc.push_back(static_cast<float>(sum_acc / n));
    }

    if (embedder.checksum() != emb_sum || sce.checksum() != sce_sum ||
        f.checksum() != cls_sum)
        throw std::runtime_error("train_token_decoder: frozen components were modified");

    if (report) *report = rep;
    return head;
}

TransferResult transfer_text(const TextExample& x, const StyleClassifier& f,
                             const MlmModel& embedder, const LatentEncoder& lce,
                             const LinearLayer<float>& decoder_head,
                             const Vocabulary& vocab, const TransferOptions& opts) {
    TransferResult result;
    result.attribution = explain_tokens(f, x, opts.n_samples, opts.seed);
    MaskedText masked = mask_attributes(result.attribution, x, opts.mu);
    result.masked_positions = masked.masked_positions;

    result.output = x;
    result.output.label = StyleLabel::kNeutral;
    result.output.gold_attribute_positions.reset();
    if (masked.pass_through()) return result;

    EmbeddingMatrix<float> w = embed_masked_text(embedder, masked);
    std::vector<float> zhat;
    const float alpha = opts.use_latent ? opts.alpha : 1.0f;
    if (alpha < 1.0f) zhat = encode_latent(lce, x);
    FusedEmbeddings fused = fuse_embeddings<float>(w, zhat, masked.masked_positions, alpha);
    Matrix<float> logits = decode_token_logits(decoder_head, fused);

    std::size_t r = 0;
    for (std::size_t pos : masked.masked_positions) {
        std::size_t best = 0;
        float best_logit = logits(r, 0);
        for (std::size_t vI = 1; vI < logits.cols(); ++vI)
            if (logits(r, vI) > best_logit) {  // ties keep the lowest id
                best_logit = logits(r, vI);
                best = vI;
            }
        result.output.tokens[pos] = static_cast<TokenId>(best);
        result.output.surfaces[pos] = vocab.surface_of(static_cast<TokenId>(best));
        ++r;
    }
    return result;
}

template struct FusedEmbeddingsT<float>;
template struct FusedEmbeddingsT<double>;
template FusedEmbeddingsT<float> fuse_embeddings<float>(const EmbeddingMatrix<float>&,
                                                        std::span<const float>,
                                                        const std::set<std::size_t>&, float);
template FusedEmbeddingsT<double> fuse_embeddings<double>(const EmbeddingMatrix<double>&,
                                                          std::span<const double>,
                                                          const std::set<std::size_t>&,
                                                          double);
template Matrix<float> decode_token_logits<float>(const LinearLayer<float>&,
                                                  const FusedEmbeddingsT<float>&);
template Matrix<double> decode_token_logits<double>(const LinearLayer<double>&,
                                                    const FusedEmbeddingsT<double>&);
template std::vector<float> soft_sample<float>(std::span<const float>, float);
template std::vector<double> soft_sample<double>(std::span<const double>, double);
template TdLossParts<float> td_loss<float>(const Matrix<float>&, const std::vector<TokenId>&,
                                           const SoftTokenSequence<float>&,
                                           const StyleClassifierT<float>&, float, float);
template TdLossParts<double> td_loss<double>(const Matrix<double>&,
                                             const std::vector<TokenId>&,
                                             const SoftTokenSequence<double>&,
                                             const StyleClassifierT<double>&, double, double);
template TdLossParts<float> td_loss_apply<float>(const FusedEmbeddingsT<float>&,
                                                 const std::vector<TokenId>&,
                                                 const std::vector<TokenId>&,
                                                 LinearLayer<float>&,
                                                 StyleClassifierT<float>&, float, float,
                                                 float, bool, Matrix<float>*);
template TdLossParts<double> td_loss_apply<double>(const FusedEmbeddingsT<double>&,
                                                   const std::vector<TokenId>&,
                                                   const std::vector<TokenId>&,
                                                   LinearLayer<double>&,
                                                   StyleClassifierT<double>&, double, double,
                                                   double, bool, Matrix<double>*);

}  // namespace debias
