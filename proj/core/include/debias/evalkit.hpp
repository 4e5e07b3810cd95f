#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "debias/classifier.hpp"
#include "debias/corpus.hpp"
#include "debias/decoder.hpp"
#include "debias/mlm.hpp"
#include "debias/ngram.hpp"

namespace debias {

struct MetricsReport {
    double transfer_accuracy = 0.0;      // percent of outputs in the target style
    double content_preservation = 0.0;   // mean cosine as a percentage
    double perplexity_transferred = 0.0;
    double perplexity_original = 0.0;    // the original-text baseline row
    double original_accuracy = 0.0;      // percent of originals already on target
    bool cp_clamped = false;             // negative mean cosine clamped to 0

    // Synthetic ground-truth checks; absent for user corpora.
    std::optional<double> gold_replacement_rate;  // masked gold slots -> neutral lexicon
    std::optional<double> gold_mask_rate;         // gold positions actually masked

    std::size_t n_sentences = 0;
    std::size_t n_pass_through = 0;
    std::string corpus_fingerprint;
    std::map<std::string, std::string> component_hashes;

    std::string to_kv_text() const;
    std::string to_json() const;
    std::string to_table() const;  // Original* vs model rows
};

// Mean pooled-embedding cosine between aligned original/transferred pairs,
// as a percentage; symmetric in its arguments.
double content_preservation(const MlmModel& eval_encoder,
                            const std::vector<TextExample>& originals,
                            const std::vector<TextExample>& transferred,
                            bool* clamped = nullptr);

// Percentage of examples the held-out classifier assigns to `target`.
double transfer_accuracy(const StyleClassifier& eval_classifier,
                         const std::vector<TextExample>& transferred, StyleLabel target);

struct EvaluationInputs {
    const StyleClassifier* pipeline_classifier = nullptr;
    const MlmModel* embedder = nullptr;
    const LatentEncoder* latent_encoder = nullptr;
    const LinearLayer<float>* decoder_head = nullptr;
    const StyleClassifier* eval_classifier = nullptr;
    const MlmModel* eval_encoder = nullptr;
    const NgramModel* language_model = nullptr;
    const Vocabulary* vocab = nullptr;
};

struct EvaluationResult {
    MetricsReport report;
    std::vector<TextExample> originals;
    std::vector<TextExample> transferred;
    std::vector<std::set<std::size_t>> masked_positions;  // per sentence
};

// Transfers every biased example of the test corpus and computes the three
// metrics plus the original-text baseline. Deterministic under opts.seed.
EvaluationResult evaluate_corpus(const EvaluationInputs& in, const Corpus& test,
                                 const TransferOptions& opts,
                                 const SynthAssets* assets = nullptr);

}  // namespace debias
