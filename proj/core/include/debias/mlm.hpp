#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "debias/corpus.hpp"
#include "debias/encoder.hpp"
#include "debias/masker.hpp"
#include "debias/nn.hpp"
#include "debias/ops.hpp"

namespace debias {

// One sentence prepared for masked-language-model training.
struct MlmMasked {
    std::vector<TokenId> input;        // with [MASK] substitutions
    std::vector<TokenId> targets;      // original ids, defined at masked positions
    std::set<std::size_t> positions;   // mask-position indicator
};

// Masks each non-special position independently with the given rate; draws
// are repeated until at least one position is masked. Deterministic for a
// given rng state.
MlmMasked apply_mlm_mask(const std::vector<TokenId>& tokens, double rate, Rng& rng);
MlmMasked apply_mlm_mask(const std::vector<TokenId>& tokens, double rate,
                         std::uint64_t seed);

// Encoder plus the vocabulary-sized classification layer trained with it.
// The same layer is what the token decoder later starts from.
template <typename Real>
struct MlmModelT {
    TransformerEncoder<Real> encoder;
    LinearLayer<Real> head;  // d -> V

    MlmModelT() = default;
    MlmModelT(const EncoderConfig& cfg, std::size_t vocab_size, std::uint64_t init_seed);

    std::vector<ParamRef<Real>> params();
    void zero_grads();
    std::uint64_t checksum();
};

using MlmModel = MlmModelT<float>;

struct MlmTrainOptions {
    double mask_rate = 0.2;
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    float learning_rate = 5e-4f;
};

struct MlmTrainReport {
    std::vector<float> epoch_loss_per_sentence;  // mean of per-sentence sums
    std::vector<float> epoch_loss_per_token;     // mean CE per masked token
};

// Minimizes the summed masked-token cross-entropy over the corpus (batch
// mean of per-sentence sums).
MlmModel train_token_embedder(const Corpus& corpus, const EncoderConfig& cfg,
                              std::uint64_t seed, const MlmTrainOptions& opts,
                              MlmTrainReport* report = nullptr);

// Contextual embeddings of a masked text; rows in the mask set carry the
// contextual embedding of [MASK].
EmbeddingMatrix<float> embed_masked_text(const MlmModel& embedder,
                                         const MaskedText& xprime);

// Mean cross-entropy per masked token under fresh masking; the evaluation
// counterpart of the training objective.
double mlm_mean_loss(const MlmModel& model, const Corpus& corpus, double rate,
                     std::uint64_t seed);

struct RecoveryStats {
    double top1 = 0.0;
    double top5 = 0.0;
    std::size_t n_positions = 0;
};

// Masked-token recovery through the trained head on held-out data.
RecoveryStats mlm_recovery(const MlmModel& model, const Corpus& corpus, double rate,
                           std::uint64_t seed);

}  // namespace debias
