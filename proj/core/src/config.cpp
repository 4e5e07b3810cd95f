#include "debias/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace debias {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string RunConfig::train_path() const {
    return data.train_file.empty() ? data_dir + "/train.tsv" : data.train_file;
}
std::string RunConfig::dev_path() const {
    return data.dev_file.empty() ? data_dir + "/dev.tsv" : data.dev_file;
}
std::string RunConfig::test_path() const {
    return data.test_file.empty() ? data_dir + "/test.tsv" : data.test_file;
}
std::string RunConfig::lexicon_path() const {
    return data.lexicon_file.empty() ? data_dir + "/lexicon.tsv" : data.lexicon_file;
}
std::string RunConfig::templates_path() const {
    return data.templates_file.empty() ? data_dir + "/templates.txt" : data.templates_file;
}
std::string RunConfig::vocab_path() const { return checkpoint_dir + "/vocab.tsv"; }
std::string RunConfig::checkpoint_path(const std::string& stage) const {
    return checkpoint_dir + "/" + stage + ".ckpt";
}
std::string RunConfig::manifest_path(const std::string& stage) const {
    return checkpoint_dir + "/" + stage + ".manifest.json";
}

void RunConfig::validate() const {
    try {
        encoder.validate();
        lce.validate();
        decoder.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (masker.mu != masker.mu) throw ConfigError("config: masker mu must be a number");
    if (masker.n_samples < 50)
        throw ConfigError("config: masker n_samples must be >= 50");
    if (training.epochs == 0 || training.batch_size == 0)
        throw ConfigError("config: training sizes must be positive");
    if (training.learning_rate <= 0.0f)
        throw ConfigError("config: learning rate must be > 0");
    if (lm_order < 2) throw ConfigError("config: lm_order must be >= 2");
    if (detector_hidden == 0) throw ConfigError("config: detector_hidden must be > 0");
    if (data.max_len == 0 || data.max_len > encoder.max_len)
        throw ConfigError("config: data max_len must be in [1, encoder.max_len]");
    if (data.synth.n_train_per_class < 1 || data.synth.n_dev_per_class < 1 ||
        data.synth.n_test_per_class < 1)
        throw ConfigError("config: synth sizes must be >= 1");
}

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["paths"] = {{"data_dir", data_dir},
                  {"checkpoint_dir", checkpoint_dir},
                  {"report_dir", report_dir}};
    j["data"] = {{"train_file", data.train_file},
                 {"dev_file", data.dev_file},
                 {"test_file", data.test_file},
                 {"lexicon_file", data.lexicon_file},
                 {"templates_file", data.templates_file},
                 {"max_len", data.max_len},
                 {"min_count", data.min_count},
                 {"max_types", data.max_types},
                 {"synth",
                  {{"n_train_per_class", data.synth.n_train_per_class},
                   {"n_dev_per_class", data.synth.n_dev_per_class},
                   {"n_test_per_class", data.synth.n_test_per_class}}}};
    j["encoder"] = {{"d", encoder.d},         {"layers", encoder.layers},
                    {"heads", encoder.heads}, {"ffn_width", encoder.ffn_width},
                    {"max_len", encoder.max_len}, {"dropout", encoder.dropout}};
    j["training"] = {{"epochs", training.epochs},
                     {"batch_size", training.batch_size},
                     {"learning_rate", training.learning_rate}};
    j["lce"] = {{"lambda", lce.lambda},
                {"epochs", lce.epochs},
                {"batch_size", lce.batch_size},
                {"learning_rate", lce.learning_rate}};
    j["decoder"] = {{"gamma", decoder.gamma},     {"tau", decoder.tau},
                    {"alpha", decoder.alpha},     {"mask_rate", decoder.mask_rate},
                    {"epochs", decoder.epochs},   {"batch_size", decoder.batch_size},
                    {"learning_rate", decoder.learning_rate}};
    j["masker"] = {{"mu", masker.mu}, {"n_samples", masker.n_samples}};
    j["detector_hidden"] = detector_hidden;
    j["lm_order"] = lm_order;
    j["train_ablation_variants"] = train_ablation_variants;
    return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    RunConfig cfg;
    try {
        reject_unknown(j, {"seed", "paths", "data", "encoder", "training", "lce",
                           "decoder", "masker", "detector_hidden", "lm_order",
                           "train_ablation_variants"},
                       "top level");
        maybe(j, "seed", cfg.seed);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            reject_unknown(p, {"data_dir", "checkpoint_dir", "report_dir"}, "paths");
            maybe(p, "data_dir", cfg.data_dir);
            maybe(p, "checkpoint_dir", cfg.checkpoint_dir);
            maybe(p, "report_dir", cfg.report_dir);
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            reject_unknown(d,
                           {"train_file", "dev_file", "test_file", "lexicon_file",
                            "templates_file", "max_len", "min_count", "max_types", "synth"},
                           "data");
            maybe(d, "train_file", cfg.data.train_file);
            maybe(d, "dev_file", cfg.data.dev_file);
            maybe(d, "test_file", cfg.data.test_file);
            maybe(d, "lexicon_file", cfg.data.lexicon_file);
            maybe(d, "templates_file", cfg.data.templates_file);
            maybe(d, "max_len", cfg.data.max_len);
            maybe(d, "min_count", cfg.data.min_count);
            maybe(d, "max_types", cfg.data.max_types);
            if (d.contains("synth")) {
                const auto& s = d.at("synth");
                reject_unknown(
                    s, {"n_train_per_class", "n_dev_per_class", "n_test_per_class"},
                    "data.synth");
                maybe(s, "n_train_per_class", cfg.data.synth.n_train_per_class);
                maybe(s, "n_dev_per_class", cfg.data.synth.n_dev_per_class);
                maybe(s, "n_test_per_class", cfg.data.synth.n_test_per_class);
            }
        }
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            reject_unknown(e, {"d", "layers", "heads", "ffn_width", "max_len", "dropout"},
                           "encoder");
            maybe(e, "d", cfg.encoder.d);
            maybe(e, "layers", cfg.encoder.layers);
            maybe(e, "heads", cfg.encoder.heads);
            maybe(e, "ffn_width", cfg.encoder.ffn_width);
            maybe(e, "max_len", cfg.encoder.max_len);
            maybe(e, "dropout", cfg.encoder.dropout);
        }
        if (j.contains("training")) {
            const auto& t = j.at("training");
            reject_unknown(t, {"epochs", "batch_size", "learning_rate"}, "training");
            maybe(t, "epochs", cfg.training.epochs);
            maybe(t, "batch_size", cfg.training.batch_size);
            maybe(t, "learning_rate", cfg.training.learning_rate);
        }
        if (j.contains("lce")) {
            const auto& l = j.at("lce");
            reject_unknown(l, {"lambda", "epochs", "batch_size", "learning_rate"}, "lce");
            maybe(l, "lambda", cfg.lce.lambda);
            maybe(l, "epochs", cfg.lce.epochs);
            maybe(l, "batch_size", cfg.lce.batch_size);
            maybe(l, "learning_rate", cfg.lce.learning_rate);
        }
        if (j.contains("decoder")) {
            const auto& d = j.at("decoder");
            reject_unknown(d,
                           {"gamma", "tau", "alpha", "mask_rate", "epochs", "batch_size",
                            "learning_rate"},
                           "decoder");
            maybe(d, "gamma", cfg.decoder.gamma);
            maybe(d, "tau", cfg.decoder.tau);
            maybe(d, "alpha", cfg.decoder.alpha);
            maybe(d, "mask_rate", cfg.decoder.mask_rate);
            maybe(d, "epochs", cfg.decoder.epochs);
            maybe(d, "batch_size", cfg.decoder.batch_size);
            maybe(d, "learning_rate", cfg.decoder.learning_rate);
        }
        if (j.contains("masker")) {
            const auto& m = j.at("masker");
            reject_unknown(m, {"mu", "n_samples"}, "masker");
            maybe(m, "mu", cfg.masker.mu);
            maybe(m, "n_samples", cfg.masker.n_samples);
        }
        maybe(j, "detector_hidden", cfg.detector_hidden);
        maybe(j, "lm_order", cfg.lm_order);
        maybe(j, "train_ablation_variants", cfg.train_ablation_variants);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    if (const char* root = std::getenv("DEBIAS_CHECKPOINT_ROOT"); root && *root)
        cfg.checkpoint_dir = root;

    cfg.lce.seed = derive_seed(cfg.seed, "lce");
    cfg.decoder.seed = derive_seed(cfg.seed, "decoder");
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

}  // namespace debias
