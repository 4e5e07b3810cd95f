#pragma once

#include <map>
#include <string>
#include <vector>

#include "debias/config.hpp"
#include "debias/evalkit.hpp"

namespace debias {

struct MissingPrerequisiteError : std::runtime_error {
    explicit MissingPrerequisiteError(const std::string& stage)
        : std::runtime_error("missing prerequisite checkpoint for stage '" + stage + "'"),
          stage_name(stage) {}
    std::string stage_name;
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stage names in dependency order.
inline const std::vector<std::string>& training_stages() {
    static const std::vector<std::string> stages = {
        "style_classifier", "source_content_encoder", "bias_detector",
        "token_embedder",   "latent_encoder",         "token_decoder",
        "eval_classifier",  "eval_encoder"};
    return stages;
}

struct StageStatus {
    std::string stage;
    bool skipped = false;  // checkpoint was current, nothing to do
    std::map<std::string, double> metrics;
};

// Writes the synthetic train/dev/test corpora plus the lexicon and template
// assets used, all under cfg.data_dir.
void run_synth(const RunConfig& cfg);

// Runs every training stage in dependency order; stages whose checkpoint
// matches the current config, data and seed fingerprints are skipped.
std::vector<StageStatus> run_training(const RunConfig& cfg);

enum class PipelineVariant { kFull, kNoLatent, kNoLatentNoClassConstraint };

const char* variant_name(PipelineVariant v);

struct LoadedPipeline {
    Vocabulary vocab;
    StyleClassifier classifier;
    SourceContentEncoder sce;
    BiasDetector detector;
    MlmModel embedder;
    LatentEncoder lce;
    LinearLayer<float> decoder_full;
    LinearLayer<float> decoder_no_latent;
    LinearLayer<float> decoder_no_latent_no_cc;
    StyleClassifier eval_classifier;
    MlmModel eval_encoder;
    bool has_ablation_heads = false;

    const LinearLayer<float>& decoder_for(PipelineVariant v) const;
    TransferOptions transfer_options(const RunConfig& cfg, PipelineVariant v) const;
};

// Loads every trained component; throws MissingPrerequisiteError naming the
// first stage whose checkpoint is absent.
LoadedPipeline load_pipeline(const RunConfig& cfg, bool need_ablations = false);

// Evaluates the test corpus under the given variant; writes report files
// under cfg.report_dir and returns the result.
EvaluationResult run_evaluation(const RunConfig& cfg, const LoadedPipeline& pipe,
                                PipelineVariant variant);

// Model checkpoint helpers shared by the pipeline, the CLI and the tests.
void save_classifier(const StyleClassifier& m, const std::string& path,
                     const std::string& header_json);
StyleClassifier load_classifier(const std::string& path);
void save_mlm(const MlmModel& m, const std::string& path, const std::string& header_json);
MlmModel load_mlm(const std::string& path);
void save_sce(const SourceContentEncoder& m, const std::string& path,
              const std::string& header_json);
SourceContentEncoder load_sce(const std::string& path);
void save_detector(const BiasDetector& m, const std::string& path,
                   const std::string& header_json);
BiasDetector load_detector(const std::string& path);
void save_latent(const LatentEncoder& m, const std::string& path,
                 const std::string& header_json);
LatentEncoder load_latent(const std::string& path);
void save_decoder_head(const LinearLayer<float>& head, const std::string& path,
                       const std::string& header_json);
LinearLayer<float> load_decoder_head(const std::string& path);

}  // namespace debias
