#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "debias/corpus.hpp"
#include "debias/encoder.hpp"
#include "debias/nn.hpp"
#include "debias/ops.hpp"

namespace debias {

// Class index convention everywhere: 0 = neutral (s_a), 1 = biased (s_b).
constexpr std::size_t kClassNeutral = 0;
constexpr std::size_t kClassBiased = 1;

inline std::size_t class_of(StyleLabel l) {
    return l == StyleLabel::kNeutral ? kClassNeutral : kClassBiased;
}

// A sentence where some positions carry probability rows over the vocabulary
// instead of hard ids; the differentiable stand-in used by the decoder's
// class constraint.
template <typename Real>
struct SoftTokenSequence {
    std::vector<TokenId> hard_ids;
    std::map<std::size_t, std::vector<Real>> soft_rows;

    void validate(std::size_t vocab_size) const;
};

// Transformer encoder with a mean-pooled two-class head.
template <typename Real>
class StyleClassifierT {
  public:
    StyleClassifierT() = default;
    StyleClassifierT(const EncoderConfig& cfg, std::size_t vocab_size,
                     std::uint64_t init_seed);

    struct Forward {
        EncoderActivations<Real> enc;
        Matrix<Real> hidden;        // n x d
        std::vector<Real> pooled;   // d
        Matrix<Real> logits;        // 1 x 2
        std::array<Real, 2> probs;  // {P(s_a), P(s_b)}
        std::vector<TokenId> tokens;
        std::map<std::size_t, std::vector<Real>> soft_rows;
    };

    Forward forward_hard(std::span<const TokenId> tokens, bool train_mode = false,
                         Rng* rng = nullptr) const;
    Forward forward_soft(const SoftTokenSequence<Real>& input, bool train_mode = false,
                         Rng* rng = nullptr) const;

    // dlogits is the gradient w.r.t. the two class logits. Accumulates
    // parameter gradients unless frozen; optionally emits gradients w.r.t.
    // the soft input rows.
    void backward(const Forward& fw, const std::array<Real, 2>& dlogits,
                  bool accumulate_param_grads = true,
                  std::map<std::size_t, std::vector<Real>>* d_soft_rows = nullptr);

    std::array<Real, 2> predict(std::span<const TokenId> tokens) const;
    std::array<Real, 2> predict(const SoftTokenSequence<Real>& input) const;

    TransformerEncoder<Real>& encoder() { return encoder_; }
    const TransformerEncoder<Real>& encoder() const { return encoder_; }

    std::vector<ParamRef<Real>> params();
    void zero_grads();
    std::uint64_t checksum();

  private:
    TransformerEncoder<Real> encoder_;
    LinearLayer<Real> head_;  // d -> 2
};

using StyleClassifier = StyleClassifierT<float>;

struct ClassifierTrainOptions {
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    float learning_rate = 5e-4f;
};

struct ClassifierTrainReport {
    std::vector<float> epoch_loss;     // mean train CE per example
    std::vector<float> epoch_dev_acc;  // dev accuracy after each epoch
    float best_dev_acc = 0.0f;
};

// Trains from scratch, returns the dev-best checkpointed model.
StyleClassifier train_style_classifier(const Corpus& train, const Corpus& dev,
                                       const EncoderConfig& cfg, std::uint64_t seed,
                                       const ClassifierTrainOptions& opts,
                                       ClassifierTrainReport* report = nullptr);

float classifier_accuracy(const StyleClassifier& model, const Corpus& corpus);

// --- Bias detector ----------------------------------------------------------

// Two-layer feed-forward map d -> h -> 2 over latent vectors only.
template <typename Real>
class BiasDetectorT {
  public:
    BiasDetectorT() = default;
    BiasDetectorT(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t init_seed);

    struct Forward {
        std::vector<Real> input, hidden_pre, hidden;
        Matrix<Real> logits;        // 1 x 2
        std::array<Real, 2> probs;  // {P(s_a), P(s_b)}
    };

    Forward forward(std::span<const Real> z) const;
    // Returns gradient w.r.t. the input latent vector.
    std::vector<Real> backward(const Forward& fw, const std::array<Real, 2>& dlogits,
                               bool accumulate_param_grads = true);

    std::array<Real, 2> predict(std::span<const Real> z) const;

    std::size_t input_dim() const { return l1_.in_dim(); }
    std::vector<ParamRef<Real>> params();
    void zero_grads();
    std::uint64_t checksum();

  private:
    LinearLayer<Real> l1_, l2_;
};

using BiasDetector = BiasDetectorT<float>;

struct LabeledLatent {
    std::vector<float> z;
    StyleLabel label;
};

struct DetectorTrainOptions {
    std::size_t hidden_dim = 64;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    float learning_rate = 1e-3f;
};

BiasDetector train_bias_detector(const std::vector<LabeledLatent>& train,
                                 const std::vector<LabeledLatent>& dev,
                                 std::uint64_t seed, const DetectorTrainOptions& opts,
                                 float* best_dev_acc = nullptr);

}  // namespace debias
