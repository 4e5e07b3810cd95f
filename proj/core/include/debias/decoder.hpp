#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "debias/classifier.hpp"
#include "debias/corpus.hpp"
#include "debias/latent.hpp"
#include "debias/masker.hpp"
#include "debias/mlm.hpp"

namespace debias {

// Token embeddings after latent fusion: the weighted average of each masked
// position's embedding with the latent vector; untouched elsewhere.
template <typename Real>
struct FusedEmbeddingsT {
    Matrix<Real> values;                      // n x d
    std::set<std::size_t> fused_positions;    // the mask set
    Real alpha = Real(0.5);
};

using FusedEmbeddings = FusedEmbeddingsT<float>;

// w_hat_i = alpha * w_i + (1 - alpha) * zhat at positions in pi; w_i
// elsewhere. alpha = 1 reproduces W bit for bit.
template <typename Real>
FusedEmbeddingsT<Real> fuse_embeddings(const EmbeddingMatrix<Real>& w,
                                       std::span<const Real> zhat,
                                       const std::set<std::size_t>& pi, Real alpha);

// Vocabulary logits for each fused position, rows ordered by position.
template <typename Real>
Matrix<Real> decode_token_logits(const LinearLayer<Real>& head,
                                 const FusedEmbeddingsT<Real>& fused);

// The differentiable stand-in for a discrete draw: softmax(o_t / tau).
template <typename Real>
std::vector<Real> soft_sample(std::span<const Real> logits, Real tau);

template <typename Real>
struct TdLossParts {
    Real total = Real(0);
    Real l_dec = Real(0);  // summed over masked positions
    Real l_acc = Real(0);  // -log P(s_a | soft sentence)
};

// Forward-only evaluation of the decoder's dual objective for one sentence.
// `logits` has one row per masked position (ordered by position); the soft
// sentence must hold soft_sample rows at exactly those positions.
template <typename Real>
TdLossParts<Real> td_loss(const Matrix<Real>& logits,
                          const std::vector<TokenId>& targets,
                          const SoftTokenSequence<Real>& soft_sentence,
                          const StyleClassifierT<Real>& f, Real gamma, Real tau);

// Differentiable evaluation for one sentence: builds the soft sentence from
// the fused rows internally, accumulates decoder-head gradients (scaled by
// `scale`), and optionally returns the gradient w.r.t. the fused rows
// (including the path through soft sampling and the classifier). When
// gamma == 0 the class-constraint path is never evaluated and l_acc is 0.
template <typename Real>
TdLossParts<Real> td_loss_apply(const FusedEmbeddingsT<Real>& fused,
                                const std::vector<TokenId>& context_tokens,
                                const std::vector<TokenId>& targets,
                                LinearLayer<Real>& head, StyleClassifierT<Real>& f,
                                Real gamma, Real tau, Real scale,
                                bool accumulate_head_grads,
                                Matrix<Real>* d_fused_rows);

struct TdHyper {
    float gamma = 0.3f;
    float tau = 1.0f;
    float alpha = 0.5f;
    double mask_rate = 0.2;
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    float learning_rate = 5e-4f;
    std::uint64_t seed = 0;
    bool use_latent = true;  // false trains the no-latent ablation (alpha = 1)

    void validate() const;
    float effective_alpha() const { return use_latent ? alpha : 1.0f; }
};

struct TdTrainReport {
    std::vector<float> epoch_total;
    std::vector<float> epoch_dec;
    std::vector<float> epoch_acc;
};

// Fine-tunes a copy of the embedder's classification layer on neutral text
// only; during training the source encoding z stands in for zhat. The
// embedder, source content encoder and classifier stay frozen.
LinearLayer<float> train_token_decoder(const Corpus& neutral_corpus, MlmModel& embedder,
                                       SourceContentEncoder& sce, StyleClassifier& f,
                                       const TdHyper& hyper,
                                       TdTrainReport* report = nullptr);

struct TransferOptions {
    double mu = 0.1;
    std::size_t n_samples = 500;
    float alpha = 0.5f;
    bool use_latent = true;
    std::uint64_t seed = 0;
};

struct TransferResult {
    TextExample output;
    std::set<std::size_t> masked_positions;
    Attribution attribution;
};

// The end-to-end operation: mask, embed, encode, fuse, decode; replacement
// tokens chosen by argmax with ties broken toward the lowest id. Unmasked
// tokens are copied verbatim and length is preserved; an empty mask set
// returns the input unchanged.
TransferResult transfer_text(const TextExample& x, const StyleClassifier& f,
                             const MlmModel& embedder, const LatentEncoder& lce,
                             const LinearLayer<float>& decoder_head,
                             const Vocabulary& vocab, const TransferOptions& opts);

}  // namespace debias
