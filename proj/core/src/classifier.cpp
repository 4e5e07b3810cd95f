#include "debias/classifier.hpp"

#include <cmath>
#include <stdexcept>

#include "debias/checkpoint.hpp"

namespace debias {

template <typename Real>
void SoftTokenSequence<Real>::validate(std::size_t vocab_size) const {
    for (const auto& [pos, row] : soft_rows) {
        if (pos >= hard_ids.size())
            throw std::invalid_argument("soft row position out of bounds");
        if (row.size() != vocab_size)
            throw std::invalid_argument("soft row length != vocabulary size");
        double sum = 0.0;  // accumulate in double; float rows carry ~n*eps noise
        for (Real v : row) sum += static_cast<double>(v);
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("soft row does not sum to 1");
    }
}

template <typename Real>
StyleClassifierT<Real>::StyleClassifierT(const EncoderConfig& cfg, std::size_t vocab_size,
                                         std::uint64_t init_seed)
    : encoder_(cfg, vocab_size, init_seed) {
    Rng rng(derive_seed(init_seed, "cls_head"));
    head_ = LinearLayer<Real>(cfg.d, 2, rng);
}

template <typename Real>
typename StyleClassifierT<Real>::Forward StyleClassifierT<Real>::forward_hard(
    std::span<const TokenId> tokens, bool train_mode, Rng* rng) const {
    Forward fw;
    fw.tokens.assign(tokens.begin(), tokens.end());
    fw.hidden = encoder_.forward_from(encoder_.embed_hard(tokens), fw.enc, train_mode, rng);
    fw.pooled = mean_pool(fw.hidden);
    Matrix<Real> pooled_m(1, fw.pooled.size());
    for (std::size_t j = 0; j < fw.pooled.size(); ++j) pooled_m(0, j) = fw.pooled[j];
    fw.logits = head_.forward(pooled_m);
    auto probs = softmax<Real>(std::span<const Real>(fw.logits.data()));
    fw.probs = {probs[0], probs[1]};
    return fw;
}

template <typename Real>
typename StyleClassifierT<Real>::Forward StyleClassifierT<Real>::forward_soft(
    const SoftTokenSequence<Real>& input, bool train_mode, Rng* rng) const {
    input.validate(encoder_.vocab_size());
    Forward fw;
    fw.tokens = input.hard_ids;
    fw.soft_rows = input.soft_rows;
    fw.hidden = encoder_.forward_from(encoder_.embed_mixed(input.hard_ids, input.soft_rows),
                                      fw.enc, train_mode, rng);
    fw.pooled = mean_pool(fw.hidden);
    Matrix<Real> pooled_m(1, fw.pooled.size());
    for (std::size_t j = 0; j < fw.pooled.size(); ++j) pooled_m(0, j) = fw.pooled[j];
    fw.logits = head_.forward(pooled_m);
    auto probs = softmax<Real>(std::span<const Real>(fw.logits.data()));
    fw.probs = {probs[0], probs[1]};
    return fw;
}

template <typename Real>
void StyleClassifierT<Real>::backward(const Forward& fw, const std::array<Real, 2>& dlogits,
                                      bool accumulate_param_grads,
                                      std::map<std::size_t, std::vector<Real>>* d_soft_rows) {
    Matrix<Real> pooled_m(1, fw.pooled.size());
    for (std::size_t j = 0; j < fw.pooled.size(); ++j) pooled_m(0, j) = fw.pooled[j];
    Matrix<Real> dl(1, 2);
    dl(0, 0) = dlogits[0];
    dl(0, 1) = dlogits[1];
    Matrix<Real> dpooled = head_.backward(pooled_m, dl, accumulate_param_grads);

    const std::size_t n = fw.hidden.rows(), d = fw.hidden.cols();
    Matrix<Real> dhidden(n, d);
    const Real inv_n = Real(1) / static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dhidden(i, j) = dpooled(0, j) * inv_n;

    Matrix<Real> dx0 = encoder_.backward(fw.enc, dhidden, accumulate_param_grads);
    if (fw.soft_rows.empty()) {
        if (accumulate_param_grads) encoder_.backward_embed_hard(fw.tokens, dx0);
    } else {
        encoder_.backward_embed_mixed(fw.tokens, fw.soft_rows, dx0, d_soft_rows,
                                      accumulate_param_grads);
    }
}

template <typename Real>
std::array<Real, 2> StyleClassifierT<Real>::predict(std::span<const TokenId> tokens) const {
    return forward_hard(tokens).probs;
}

template <typename Real>
std::array<Real, 2> StyleClassifierT<Real>::predict(
    const SoftTokenSequence<Real>& input) const {
    return forward_soft(input).probs;
}

template <typename Real>
std::vector<ParamRef<Real>> StyleClassifierT<Real>::params() {
    auto out = encoder_.params();
    head_.collect("cls_head", out);
    return out;
}

template <typename Real>
void StyleClassifierT<Real>::zero_grads() {
    auto ps = params();
    debias::zero_grads(ps);
}

template <typename Real>
std::uint64_t StyleClassifierT<Real>::checksum() {
    auto ps = params();
    return param_checksum(ps);
}

float classifier_accuracy(const StyleClassifier& model, const Corpus& corpus) {
    if (corpus.examples.empty()) throw std::invalid_argument("accuracy on empty corpus");
    std::size_t correct = 0;
    for (const auto& e : corpus.examples) {
        auto p = model.predict(e.tokens);
        std::size_t pred = p[kClassBiased] > p[kClassNeutral] ? kClassBiased : kClassNeutral;
        if (pred == class_of(e.label)) ++correct;
    }
    return static_cast<float>(correct) / static_cast<float>(corpus.examples.size());
}

StyleClassifier train_style_classifier(const Corpus& train, const Corpus& dev,
                                       const EncoderConfig& cfg, std::uint64_t seed,
                                       const ClassifierTrainOptions& opts,
                                       ClassifierTrainReport* report) {
    if (train.count_label(StyleLabel::kNeutral) == 0 ||
        train.count_label(StyleLabel::kBiased) == 0)
        throw std::invalid_argument("train_style_classifier: both labels required");

    StyleClassifier model(cfg, train.vocab.size(), derive_seed(seed, "cls_init"));
    Rng rng(derive_seed(seed, "cls_train"));
    AdamOptimizer<float> adam(opts.learning_rate);
    auto params = model.params();

    float best_acc = -1.0f;
    Checkpoint best;
    ClassifierTrainReport rep;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        auto order = shuffled_indices(train.examples.size(), rng);
        double loss_sum = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(opts.batch_size, order.size() - done);
            model.zero_grads();
            for (std::size_t b = 0; b < bsz; ++b) {
                const auto& ex = train.examples[order[done + b]];
                auto fw = model.forward_hard(ex.tokens, true, &rng);
                const std::size_t target = class_of(ex.label);
                loss_sum += cross_entropy_from_probs<float>(
                    std::span<const float>(fw.probs.data(), 2), target);
                std::array<float, 2> dlogits = {fw.probs[0], fw.probs[1]};
                dlogits[target] -= 1.0f;
                const float inv_b = 1.0f / static_cast<float>(bsz);
                dlogits[0] *= inv_b;
                dlogits[1] *= inv_b;
                model.backward(fw, dlogits);
            }
            adam.step(params);
            done += bsz;
        }
        rep.epoch_loss.push_back(static_cast<float>(loss_sum / train.examples.size()));
        const float acc = classifier_accuracy(model, dev);
        rep.epoch_dev_acc.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            best = make_checkpoint(params, "{}");
        }
    }
    restore_params(best, params);
    rep.best_dev_acc = best_acc;
    if (report) *report = rep;
    return model;
}

template <typename Real>
BiasDetectorT<Real>::BiasDetectorT(std::size_t input_dim, std::size_t hidden_dim,
                                   std::uint64_t init_seed) {
    Rng rng(init_seed);
    l1_ = LinearLayer<Real>(input_dim, hidden_dim, rng, Real(0.1));
    l2_ = LinearLayer<Real>(hidden_dim, 2, rng, Real(0.1));
}

template <typename Real>
typename BiasDetectorT<Real>::Forward BiasDetectorT<Real>::forward(
    std::span<const Real> z) const {
    if (z.size() != l1_.in_dim())
        throw std::invalid_argument("bias detector: latent length mismatch");
    Forward fw;
    fw.input.assign(z.begin(), z.end());
    Matrix<Real> x(1, z.size());
    for (std::size_t j = 0; j < z.size(); ++j) x(0, j) = z[j];
    Matrix<Real> h_pre = l1_.forward(x);
    fw.hidden_pre.assign(h_pre.data().begin(), h_pre.data().end());
    Matrix<Real> h(1, h_pre.cols());
    for (std::size_t j = 0; j < h.cols(); ++j) h(0, j) = std::tanh(h_pre(0, j));
    fw.hidden.assign(h.data().begin(), h.data().end());
    fw.logits = l2_.forward(h);
    auto probs = softmax<Real>(std::span<const Real>(fw.logits.data()));
    fw.probs = {probs[0], probs[1]};
    return fw;
}

template <typename Real>
std::vector<Real> BiasDetectorT<Real>::backward(const Forward& fw,
                                                const std::array<Real, 2>& dlogits,
                                                bool accumulate_param_grads) {
    Matrix<Real> h(1, fw.hidden.size());
    for (std::size_t j = 0; j < fw.hidden.size(); ++j) h(0, j) = fw.hidden[j];
    Matrix<Real> dl(1, 2);
    dl(0, 0) = dlogits[0];
    dl(0, 1) = dlogits[1];
    Matrix<Real> dh = l2_.backward(h, dl, accumulate_param_grads);
    for (std::size_t j = 0; j < dh.cols(); ++j) {
        const Real t = std::tanh(fw.hidden_pre[j]);
        dh(0, j) *= (Real(1) - t * t);
    }
    Matrix<Real> x(1, fw.input.size());
    for (std::size_t j = 0; j < fw.input.size(); ++j) x(0, j) = fw.input[j];
    Matrix<Real> dx = l1_.backward(x, dh, accumulate_param_grads);
    return std::vector<Real>(dx.data().begin(), dx.data().end());
}

template <typename Real>
std::array<Real, 2> BiasDetectorT<Real>::predict(std::span<const Real> z) const {
    return forward(z).probs;
}

template <typename Real>
std::vector<ParamRef<Real>> BiasDetectorT<Real>::params() {
    std::vector<ParamRef<Real>> out;
    l1_.collect("detector.1", out);
    l2_.collect("detector.2", out);
    return out;
}

template <typename Real>
void BiasDetectorT<Real>::zero_grads() {
    auto ps = params();
    debias::zero_grads(ps);
}

template <typename Real>
std::uint64_t BiasDetectorT<Real>::checksum() {
    auto ps = params();
    return param_checksum(ps);
}

namespace {

float detector_accuracy(const BiasDetector& d, const std::vector<LabeledLatent>& set) {
    if (set.empty()) throw std::invalid_argument("detector accuracy on empty set");
    std::size_t correct = 0;
    for (const auto& s : set) {
        auto p = d.predict(s.z);
        std::size_t pred = p[kClassBiased] > p[kClassNeutral] ? kClassBiased : kClassNeutral;
        if (pred == class_of(s.label)) ++correct;
    }
    return static_cast<float>(correct) / static_cast<float>(set.size());
}

}  // namespace

BiasDetector train_bias_detector(const std::vector<LabeledLatent>& train,
                                 const std::vector<LabeledLatent>& dev,
                                 std::uint64_t seed, const DetectorTrainOptions& opts,
                                 float* best_dev_acc) {
    if (train.empty()) throw std::invalid_argument("train_bias_detector: empty train set");
    bool has_neutral = false, has_biased = false;
    for (const auto& s : train) {
        has_neutral |= s.label == StyleLabel::kNeutral;
        has_biased |= s.label == StyleLabel::kBiased;
    }
    if (!has_neutral || !has_biased)
        throw std::invalid_argument("train_bias_detector: both labels required");

    BiasDetector det(train[0].z.size(), opts.hidden_dim, derive_seed(seed, "det_init"));
    Rng rng(derive_seed(seed, "det_train"));
    AdamOptimizer<float> adam(opts.learning_rate);
    auto params = det.params();

    float best = -1.0f;
    Checkpoint best_ckpt;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        auto order = shuffled_indices(train.size(), rng);
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(opts.batch_size, order.size() - done);
            det.zero_grads();
            for (std::size_t b = 0; b < bsz; ++b) {
                const auto& s = train[order[done + b]];
                auto fw = det.forward(s.z);
                const std::size_t target = class_of(s.label);
                std::array<float, 2> dl = {fw.probs[0], fw.probs[1]};
                dl[target] -= 1.0f;
                dl[0] /= static_cast<float>(bsz);
                dl[1] /= static_cast<float>(bsz);
                det.backward(fw, dl);
            }
            adam.step(params);
            done += bsz;
        }
        const float acc = detector_accuracy(det, dev.empty() ? train : dev);
        if (acc > best) {
            best = acc;
            best_ckpt = make_checkpoint(params, "{}");
        }
    }
    restore_params(best_ckpt, params);
    if (best_dev_acc) *best_dev_acc = best;
    return det;
}

template struct SoftTokenSequence<float>;
template struct SoftTokenSequence<double>;
template class StyleClassifierT<float>;
template class StyleClassifierT<double>;
template class BiasDetectorT<float>;
template class BiasDetectorT<double>;

}  // namespace debias
