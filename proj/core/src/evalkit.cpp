#include "debias/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "debias/ops.hpp"

namespace debias {

namespace {

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::vector<float> pooled_embedding(const MlmModel& enc, const TextExample& x) {
    EncoderActivations<float> acts;
    Matrix<float> hidden =
        enc.encoder.forward_from(enc.encoder.embed_hard(x.tokens), acts, false, nullptr);
    return mean_pool(hidden);
}

}  // namespace

std::string MetricsReport::to_kv_text() const {
    std::string out;
    auto put = [&out](const std::string& k, const std::string& v) {
        out += k + "=" + v + "\n";
    };
    put("transfer_accuracy", fmt2(transfer_accuracy));
    put("content_preservation", fmt2(content_preservation));
    put("perplexity_transferred", fmt2(perplexity_transferred));
    put("perplexity_original", fmt2(perplexity_original));
    put("original_accuracy", fmt2(original_accuracy));
    put("cp_clamped", cp_clamped ? "1" : "0");
    if (gold_replacement_rate) put("gold_replacement_rate", fmt2(*gold_replacement_rate));
    if (gold_mask_rate) put("gold_mask_rate", fmt2(*gold_mask_rate));
    put("n_sentences", std::to_string(n_sentences));
    put("n_pass_through", std::to_string(n_pass_through));
    put("corpus_fingerprint", corpus_fingerprint);
    for (const auto& [k, v] : component_hashes) put("hash." + k, v);
    return out;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["transfer_accuracy"] = transfer_accuracy;
    j["content_preservation"] = content_preservation;
    j["perplexity_transferred"] = perplexity_transferred;
    j["perplexity_original"] = perplexity_original;
    j["original_accuracy"] = original_accuracy;
    j["cp_clamped"] = cp_clamped;
    if (gold_replacement_rate) j["gold_replacement_rate"] = *gold_replacement_rate;
    if (gold_mask_rate) j["gold_mask_rate"] = *gold_mask_rate;
    j["n_sentences"] = n_sentences;
    j["n_pass_through"] = n_pass_through;
    j["corpus_fingerprint"] = corpus_fingerprint;
    j["component_hashes"] = component_hashes;
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    std::string out;
    out += "                 C.P.%      PPL      AC%\n";
    out += "Original*       100.00  " + fmt2(perplexity_original) + "   " +
           fmt2(original_accuracy) + "\n";
    out += "Model           " + fmt2(content_preservation) + "  " +
           fmt2(perplexity_transferred) + "   " + fmt2(transfer_accuracy) + "\n";
    return out;
}

double content_preservation(const MlmModel& eval_encoder,
                            const std::vector<TextExample>& originals,
                            const std::vector<TextExample>& transferred, bool* clamped) {
    if (originals.size() != transferred.size())
        throw std::invalid_argument("content_preservation: corpora must be aligned");
    if (originals.empty())
        throw std::invalid_argument("content_preservation: empty corpora");
    double sum = 0.0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        auto a = pooled_embedding(eval_encoder, originals[i]);
        auto b = pooled_embedding(eval_encoder, transferred[i]);
        std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end());
        sum += cosine_similarity<double>(ad, bd);
    }
    double mean = sum / static_cast<double>(originals.size());
    bool clip = mean < 0.0;
    if (clip) mean = 0.0;
    if (clamped) *clamped = clip;
    return mean * 100.0;
}

double transfer_accuracy(const StyleClassifier& eval_classifier,
                         const std::vector<TextExample>& transferred, StyleLabel target) {
    if (transferred.empty())
        throw std::invalid_argument("transfer_accuracy: empty corpus");
    const std::size_t target_class = class_of(target);
    std::size_t hits = 0;
    for (const auto& e : transferred) {
        auto p = eval_classifier.predict(e.tokens);
        const std::size_t pred =
            p[kClassBiased] > p[kClassNeutral] ? kClassBiased : kClassNeutral;
        if (pred == target_class) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(transferred.size());
}

EvaluationResult evaluate_corpus(const EvaluationInputs& in, const Corpus& test,
                                 const TransferOptions& opts, const SynthAssets* assets) {
    if (!in.pipeline_classifier || !in.embedder || !in.decoder_head ||
        !in.eval_classifier || !in.eval_encoder || !in.language_model || !in.vocab)
        throw std::invalid_argument("evaluate_corpus: missing component");
    if (opts.use_latent && opts.alpha < 1.0f && !in.latent_encoder)
        throw std::invalid_argument("evaluate_corpus: missing latent encoder");

    EvaluationResult res;
    static const LatentEncoder empty_lce;
    const LatentEncoder& lce = in.latent_encoder ? *in.latent_encoder : empty_lce;

    std::size_t sentence_index = 0;
    for (const auto& ex : test.examples) {
        if (ex.label != StyleLabel::kBiased) continue;
        TransferOptions topts = opts;
        topts.seed = derive_seed(opts.seed, "transfer:" + std::to_string(sentence_index));
        TransferResult tr = transfer_text(ex, *in.pipeline_classifier, *in.embedder, lce,
                                          *in.decoder_head, *in.vocab, topts);
        res.originals.push_back(ex);
        res.transferred.push_back(tr.output);
        res.masked_positions.push_back(tr.masked_positions);
        ++sentence_index;
    }
    if (res.originals.empty())
        throw std::invalid_argument("evaluate_corpus: no biased examples in test corpus");

    MetricsReport rep;
    rep.n_sentences = res.originals.size();
    for (const auto& pi : res.masked_positions)
        if (pi.empty()) ++rep.n_pass_through;

    rep.transfer_accuracy =
        transfer_accuracy(*in.eval_classifier, res.transferred, StyleLabel::kNeutral);
    rep.original_accuracy =
        transfer_accuracy(*in.eval_classifier, res.originals, StyleLabel::kNeutral);
    rep.content_preservation = content_preservation(*in.eval_encoder, res.originals,
                                                    res.transferred, &rep.cp_clamped);

    std::vector<std::vector<TokenId>> orig_tokens, trans_tokens;
    for (const auto& e : res.originals) orig_tokens.push_back(e.tokens);
    for (const auto& e : res.transferred) trans_tokens.push_back(e.tokens);
    rep.perplexity_original = perplexity(*in.language_model, orig_tokens);
    rep.perplexity_transferred = perplexity(*in.language_model, trans_tokens);

    if (assets) {
        std::unordered_set<std::string> neutral_words;
        for (const auto& p : assets->pairs) neutral_words.insert(p.neutral_word);
        std::size_t gold_total = 0, gold_masked = 0, gold_neutral = 0;
        for (std::size_t i = 0; i < res.originals.size(); ++i) {
            const auto& gold = res.originals[i].gold_attribute_positions;
            if (!gold) continue;
            for (std::size_t pos : *gold) {
                ++gold_total;
                if (res.masked_positions[i].count(pos)) {
                    ++gold_masked;
                    if (neutral_words.count(res.transferred[i].surfaces[pos]))
                        ++gold_neutral;
                }
            }
        }
        if (gold_total > 0) {
            rep.gold_mask_rate =
                static_cast<double>(gold_masked) / static_cast<double>(gold_total);
            rep.gold_replacement_rate =
                gold_masked == 0 ? 0.0
                                 : static_cast<double>(gold_neutral) /
                                       static_cast<double>(gold_masked);
        }
    }

    rep.corpus_fingerprint = hex64(test.content_hash());
    res.report = std::move(rep);
    return res;
}

}  // namespace debias
