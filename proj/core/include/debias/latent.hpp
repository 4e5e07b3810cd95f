#pragma once

#include <cstdint>
#include <vector>

#include "debias/classifier.hpp"
#include "debias/corpus.hpp"
#include "debias/encoder.hpp"
#include "debias/mlm.hpp"

namespace debias {

// Pretrained to give a pooled encoding that carries both the content and the
// style of its input: a masked-language objective plus a pooled style
// classification objective, trained jointly with equal weights.
template <typename Real>
struct SourceContentEncoderT {
    TransformerEncoder<Real> encoder;
    LinearLayer<Real> mlm_head;    // d -> V
    LinearLayer<Real> style_head;  // d -> 2

    SourceContentEncoderT() = default;
    SourceContentEncoderT(const EncoderConfig& cfg, std::size_t vocab_size,
                          std::uint64_t init_seed);

    // Mean-pooled encoding of an unmasked sentence (evaluation mode).
    std::vector<Real> encode(std::span<const TokenId> tokens) const;

    std::vector<ParamRef<Real>> params();
    void zero_grads();
    std::uint64_t checksum();
};

using SourceContentEncoder = SourceContentEncoderT<float>;

struct SceTrainOptions {
    double mask_rate = 0.2;
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    float learning_rate = 5e-4f;
    // Scale on the pooled style term. At 1.0 the style direction swallows
    // the pooled geometry and twin sentences end up anti-aligned; 0.1 keeps
    // the encoding content-dominant while staying linearly separable.
    float style_weight = 0.1f;
};

struct SceTrainReport {
    std::vector<float> epoch_mlm_loss;    // per-sentence mean
    std::vector<float> epoch_style_loss;  // per-example mean CE
    float dev_style_acc = 0.0f;
};

SourceContentEncoder train_source_content_encoder(const Corpus& corpus,
                                                  const Corpus& dev,
                                                  const EncoderConfig& cfg,
                                                  std::uint64_t seed,
                                                  const SceTrainOptions& opts,
                                                  SceTrainReport* report = nullptr);

std::vector<float> encode_source(const SourceContentEncoder& sce, const TextExample& x);

// The debiased sentence encoder; starts from the source content encoder's
// weights and is trained against the dual objective below.
template <typename Real>
struct LatentEncoderT {
    TransformerEncoder<Real> encoder;

    std::vector<Real> encode(std::span<const TokenId> tokens) const;
    std::vector<ParamRef<Real>> params() { return encoder.params(); }
};

using LatentEncoder = LatentEncoderT<float>;

std::vector<float> encode_latent(const LatentEncoder& lce, const TextExample& x);

template <typename Real>
struct LceLossParts {
    Real total = Real(0);
    Real l_sim = Real(0);  // (cos(zhat, z) - 1)^2
    Real l_acc = Real(0);  // -log P(s_a | zhat)
};

// Per-pair loss values; training averages them over the batch.
template <typename Real>
LceLossParts<Real> lce_loss(std::span<const Real> zhat, std::span<const Real> z,
                            const BiasDetectorT<Real>& detector, Real lam);

// As above, also returning d(total)/d(zhat). The detector stays frozen but
// passes gradients through.
template <typename Real>
LceLossParts<Real> lce_loss_grad(std::span<const Real> zhat, std::span<const Real> z,
                                 BiasDetectorT<Real>& detector, Real lam,
                                 std::vector<Real>& d_zhat);

struct LceHyper {
    float lambda = 0.5f;
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    float learning_rate = 5e-5f;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LceTrainReport {
    std::vector<float> epoch_total;
    float dev_mean_cos = 0.0f;       // cos(zhat, z) on biased dev
    float dev_mean_p_neutral = 0.0f; // P(s_a | zhat) on biased dev
};

// Trains on biased text only; the source content encoder and the bias
// detector are frozen (checksummed before and after; any drift is an error).
// The auxiliaries are taken by mutable reference only so their gradients can
// flow through; their parameters must come back bit-identical.
LatentEncoder train_latent_encoder(const Corpus& biased_corpus, const Corpus& biased_dev,
                                   SourceContentEncoder& sce, BiasDetector& detector,
                                   const LceHyper& hyper,
                                   LceTrainReport* report = nullptr);

}  // namespace debias
