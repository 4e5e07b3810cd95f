#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "debias/decoder.hpp"
#include "debias/encoder.hpp"
#include "debias/latent.hpp"

namespace debias {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MaskerConfig {
    double mu = 0.1;
    std::size_t n_samples = 500;
};

struct SynthConfig {
    std::size_t n_train_per_class = 2000;
    std::size_t n_dev_per_class = 200;
    std::size_t n_test_per_class = 200;
};

struct DataConfig {
    std::string train_file, dev_file, test_file;
    std::string lexicon_file, templates_file;  // optional synthetic assets
    std::size_t max_len = 40;
    std::size_t min_count = 2;
    std::size_t max_types = 2000;
    SynthConfig synth;
};

struct TrainBasics {
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    float learning_rate = 5e-4f;
};

struct RunConfig {
    std::uint64_t seed = 7;
    std::string data_dir = "runs/synth/data";
    std::string checkpoint_dir = "runs/synth/ckpt";
    std::string report_dir = "runs/synth/report";

    DataConfig data;
    EncoderConfig encoder;
    TrainBasics training;       // classifier / embedder / source encoder
    LceHyper lce;
    TdHyper decoder;
    MaskerConfig masker;
    std::size_t detector_hidden = 64;
    std::size_t lm_order = 5;
    bool train_ablation_variants = true;

    // Resolved file locations.
    std::string train_path() const;
    std::string dev_path() const;
    std::string test_path() const;
    std::string lexicon_path() const;
    std::string templates_path() const;
    std::string vocab_path() const;
    std::string checkpoint_path(const std::string& stage) const;
    std::string manifest_path(const std::string& stage) const;

    void validate() const;
    std::string to_json() const;

    // Reads a JSON config file; unknown keys are rejected. The environment
    // variable DEBIAS_CHECKPOINT_ROOT overrides checkpoint_dir.
    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
};

}  // namespace debias
