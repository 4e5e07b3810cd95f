// Command-line front end for the debiasing pipeline: corpus synthesis,
// staged training, transfer, explanation and evaluation.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "debias/masker.hpp"
#include "debias/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitTraining = 2;
constexpr int kExitMissingPrerequisite = 3;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> mu;
    std::optional<std::size_t> n_samples;
    std::optional<float> lambda, gamma, alpha, tau;
};

debias::RunConfig load_config(const std::string& path, const Overrides& ov) {
    debias::RunConfig cfg = debias::RunConfig::from_file(path);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.mu) cfg.masker.mu = *ov.mu;
    if (ov.n_samples) cfg.masker.n_samples = *ov.n_samples;
    if (ov.lambda) cfg.lce.lambda = *ov.lambda;
    if (ov.gamma) cfg.decoder.gamma = *ov.gamma;
    if (ov.alpha) cfg.decoder.alpha = *ov.alpha;
    if (ov.tau) cfg.decoder.tau = *ov.tau;
    cfg.validate();
    return cfg;
}

debias::PipelineVariant variant_from_flags(bool no_latent, bool no_class_constraint) {
    if (no_class_constraint && !no_latent)
        throw debias::ConfigError(
            "--no-class-constraint is only available together with --no-latent");
    if (no_latent && no_class_constraint)
        return debias::PipelineVariant::kNoLatentNoClassConstraint;
    if (no_latent) return debias::PipelineVariant::kNoLatent;
    return debias::PipelineVariant::kFull;
}

int cmd_synth(const debias::RunConfig& cfg) {
    debias::run_synth(cfg);
    std::cout << "synthetic corpora written to " << cfg.data_dir << "\n";
    return kExitOk;
}

int cmd_train(const debias::RunConfig& cfg) {
    auto statuses = debias::run_training(cfg);
    for (const auto& st : statuses) {
        std::cout << (st.skipped ? "[skip] " : "[done] ") << st.stage;
        for (const auto& [k, v] : st.metrics) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), " %s=%.4f", k.c_str(), v);
            std::cout << buf;
        }
        std::cout << "\n";
    }
    return kExitOk;
}

int cmd_transfer(const debias::RunConfig& cfg, const std::string& input_path,
                 const std::string& output_path, bool no_latent, bool no_cc) {
    const auto variant = variant_from_flags(no_latent, no_cc);
    debias::LoadedPipeline pipe =
        debias::load_pipeline(cfg, variant != debias::PipelineVariant::kFull);

    debias::LoadOptions lopts;
    lopts.max_len = cfg.data.max_len;
    debias::Corpus corpus = debias::load_corpus(input_path, &pipe.vocab, lopts);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!output_path.empty()) {
        file.open(output_path);
        if (!file) throw std::runtime_error("cannot write " + output_path);
        out = &file;
    }

    debias::TransferOptions opts = pipe.transfer_options(cfg, variant);
    std::size_t idx = 0;
    for (const auto& ex : corpus.examples) {
        debias::TransferOptions topts = opts;
        topts.seed = debias::derive_seed(opts.seed, "transfer:" + std::to_string(idx));
        auto result = debias::transfer_text(ex, pipe.classifier, pipe.embedder, pipe.lce,
                                            pipe.decoder_for(variant), pipe.vocab, topts);
        *out << ex.text() << '\t' << result.output.text() << '\t'
             << result.masked_positions.size() << '\n';
        ++idx;
    }
    return kExitOk;
}

int cmd_explain(const debias::RunConfig& cfg, const std::string& text,
                const std::string& input_path) {
    debias::LoadedPipeline pipe = debias::load_pipeline(cfg);

    std::vector<std::string> lines;
    if (!text.empty()) lines.push_back(text);
    if (!input_path.empty()) {
        std::ifstream in(input_path);
        if (!in) throw std::runtime_error("cannot read " + input_path);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty())
        throw debias::ConfigError("explain: provide --text or --input");

    bool first = true;
    std::size_t idx = 0;
    for (const auto& line : lines) {
        debias::TextExample ex = debias::tokenize(line, pipe.vocab, cfg.data.max_len);
        if (ex.tokens.empty()) continue;
        if (!first) std::cout << "\n";
        first = false;
        auto attr = debias::explain_tokens(
            pipe.classifier, ex, cfg.masker.n_samples,
            debias::derive_seed(cfg.seed, "explain:" + std::to_string(idx)));
        auto masked = debias::mask_attributes(attr, ex, cfg.masker.mu);
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", attr.weights[i]);
            std::cout << ex.surfaces[i] << '\t' << buf << '\t'
                      << (masked.masked_positions.count(i) ? 1 : 0) << '\n';
        }
        ++idx;
    }
    return kExitOk;
}

int cmd_evaluate(const debias::RunConfig& cfg, bool no_latent, bool no_cc) {
    const auto variant = variant_from_flags(no_latent, no_cc);
    debias::LoadedPipeline pipe =
        debias::load_pipeline(cfg, variant != debias::PipelineVariant::kFull);
    debias::EvaluationResult res = debias::run_evaluation(cfg, pipe, variant);
    std::cout << "variant: " << debias::variant_name(variant) << "\n"
              << res.report.to_table()
              << "pass-through: " << res.report.n_pass_through << "/"
              << res.report.n_sentences << "\n";
    if (res.report.gold_replacement_rate)
        std::cout << "gold replacement rate: " << *res.report.gold_replacement_rate
                  << "\n";
    std::cout << "report written to " << cfg.report_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"text debiasing via attribute masking and latent-content decoding"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    std::uint64_t seed_val = 0;
    double mu_val = 0.0;
    std::size_t n_samples_val = 0;
    float lambda_val = 0.0f, gamma_val = 0.0f, alpha_val = 0.0f, tau_val = 0.0f;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--seed", seed_val, "global seed override")
            ->each([&](const std::string&) { ov.seed = seed_val; });
        sub->add_option("--mu", mu_val, "masker threshold override")
            ->each([&](const std::string&) { ov.mu = mu_val; });
        sub->add_option("--n-samples", n_samples_val, "explainer sample count override")
            ->each([&](const std::string&) { ov.n_samples = n_samples_val; });
        sub->add_option("--lambda", lambda_val, "latent-encoder balance override")
            ->each([&](const std::string&) { ov.lambda = lambda_val; });
        sub->add_option("--gamma", gamma_val, "decoder balance override")
            ->each([&](const std::string&) { ov.gamma = gamma_val; });
        sub->add_option("--alpha", alpha_val, "fusion weight override")
            ->each([&](const std::string&) { ov.alpha = alpha_val; });
        sub->add_option("--tau", tau_val, "soft-sampling temperature override")
            ->each([&](const std::string&) { ov.tau = tau_val; });
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic corpora");
    add_common(synth);

    CLI::App* train = app.add_subcommand("train", "run all training stages in order");
    add_common(train);

    CLI::App* transfer = app.add_subcommand("transfer", "rewrite corpus-format input");
    add_common(transfer);
    std::string transfer_input, transfer_output;
    bool tr_no_latent = false, tr_no_cc = false;
    transfer->add_option("--input", transfer_input, "corpus-format input file")->required();
    transfer->add_option("--output", transfer_output, "output file (default stdout)");
    transfer->add_flag("--no-latent", tr_no_latent, "ablation: no latent fusion");
    transfer->add_flag("--no-class-constraint", tr_no_cc,
                       "ablation: decoder trained without the class constraint");

    CLI::App* explain = app.add_subcommand("explain", "per-token attribution weights");
    add_common(explain);
    std::string explain_text, explain_input;
    explain->add_option("--text", explain_text, "single sentence to explain");
    explain->add_option("--input", explain_input, "file with one sentence per line");

    CLI::App* evaluate =
        app.add_subcommand("evaluate", "three-metric evaluation on the test split");
    add_common(evaluate);
    bool ev_no_latent = false, ev_no_cc = false;
    evaluate->add_flag("--no-latent", ev_no_latent, "ablation: no latent fusion");
    evaluate->add_flag("--no-class-constraint", ev_no_cc,
                       "ablation: decoder trained without the class constraint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return kExitValidation;
    }

    try {
        debias::RunConfig cfg = load_config(config_path, ov);
        if (synth->parsed()) return cmd_synth(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (transfer->parsed())
            return cmd_transfer(cfg, transfer_input, transfer_output, tr_no_latent,
                                tr_no_cc);
        if (explain->parsed()) return cmd_explain(cfg, explain_text, explain_input);
        if (evaluate->parsed()) return cmd_evaluate(cfg, ev_no_latent, ev_no_cc);
        return kExitValidation;
    } catch (const debias::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const debias::MissingPrerequisiteError& e) {
        std::cerr << "error: " << e.what() << "; run 'train' first\n";
        return kExitMissingPrerequisite;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTraining;
    }
}
