#include "debias/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "debias/checkpoint.hpp"

namespace debias {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool file_exists(const std::string& path) { return fs::exists(fs::path(path)); }

void ensure_parent_dir(const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a_bytes(buf, static_cast<std::size_t>(in.gcount()), h);
    return hex64(h);
}

void write_text(const std::string& path, const std::string& text) {
    ensure_parent_dir(path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

json encoder_json(const EncoderConfig& cfg) {
    return {{"d", cfg.d},           {"layers", cfg.layers},
            {"heads", cfg.heads},   {"ffn_width", cfg.ffn_width},
            {"max_len", cfg.max_len}, {"dropout", cfg.dropout}};
}

EncoderConfig encoder_from_json(const json& j) {
    EncoderConfig cfg;
    cfg.d = j.at("d").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ffn_width = j.at("ffn_width").get<std::size_t>();
    cfg.max_len = j.at("max_len").get<std::size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    return cfg;
}

std::string make_header(const std::string& kind, const EncoderConfig& cfg,
                        std::size_t vocab_size, std::uint64_t vocab_hash,
                        std::uint64_t seed, std::size_t step, const json& extra) {
    json j;
    j["format"] = "debias-ckpt";
    j["kind"] = kind;
    j["config"] = encoder_json(cfg);
    j["vocab_size"] = vocab_size;
    j["vocab_hash"] = hex64(vocab_hash);
    j["seed"] = seed;
    j["step"] = step;
    j["extra"] = extra;
    return j.dump();
}

json parse_header(const Checkpoint& ckpt, const std::string& expected_kind,
                  const std::string& path) {
    json j = json::parse(ckpt.header_json);
    if (j.value("format", "") != "debias-ckpt" || j.value("kind", "") != expected_kind)
        throw std::runtime_error(path + ": checkpoint kind mismatch (expected " +
                                 expected_kind + ")");
    return j;
}

Corpus label_subset(const Corpus& corpus, StyleLabel label) {
    Corpus out;
    out.split = corpus.split;
    out.vocab = corpus.vocab;
    for (const auto& e : corpus.examples)
        if (e.label == label) out.examples.push_back(e);
    return out;
}

// Stage bookkeeping: a stage is current when its checkpoint exists and its
// manifest records the same fingerprint.
struct StageGuard {
    const RunConfig& cfg;
    std::string stage;
    std::string fingerprint;

    bool current() const {
        if (!file_exists(cfg.checkpoint_path(stage))) return false;
        const std::string mpath = cfg.manifest_path(stage);
        if (!file_exists(mpath)) return false;
        try {
            std::ifstream in(mpath);
            json j = json::parse(in);
            return j.value("fingerprint", "") == fingerprint;
        } catch (...) {
            return false;
        }
    }

    void write_manifest(const std::map<std::string, double>& metrics) const {
        json j;
        j["stage"] = stage;
        j["fingerprint"] = fingerprint;
        j["seed"] = derive_seed(cfg.seed, stage);
        json m;
        for (const auto& [k, v] : metrics) m[k] = v;
        j["metrics"] = m;
        write_text(cfg.manifest_path(stage), j.dump(2));
    }
};

std::string stage_fingerprint(const RunConfig& cfg, const std::string& stage,
                              const json& hyper,
                              const std::vector<std::string>& input_files) {
    std::uint64_t h = fnv1a(stage);
    h = fnv1a(hyper.dump(), h);
    h = fnv1a(std::to_string(derive_seed(cfg.seed, stage)), h);
    for (const auto& f : input_files) h = fnv1a(file_hash(f), h);
    return hex64(h);
}

}  // namespace

const char* variant_name(PipelineVariant v) {
    switch (v) {
        case PipelineVariant::kFull: return "full";
        case PipelineVariant::kNoLatent: return "no_latent";
        case PipelineVariant::kNoLatentNoClassConstraint: return "no_latent_no_cc";
    }
    return "unknown";
}

// --- model checkpoint helpers ----------------------------------------------

void save_classifier(const StyleClassifier& m, const std::string& path,
                     const std::string& header_json) {
    ensure_parent_dir(path);
    auto params = const_cast<StyleClassifier&>(m).params();
    make_checkpoint(params, header_json).save(path);
}

StyleClassifier load_classifier(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    json j = parse_header(ckpt, "style_classifier", path);
    StyleClassifier m(encoder_from_json(j.at("config")), j.at("vocab_size"), 0);
    auto params = m.params();
    restore_params(ckpt, params);
    return m;
}

void save_mlm(const MlmModel& m, const std::string& path, const std::string& header_json) {
    ensure_parent_dir(path);
    auto params = const_cast<MlmModel&>(m).params();
    make_checkpoint(params, header_json).save(path);
}

MlmModel load_mlm(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    json j = parse_header(ckpt, "mlm", path);
    MlmModel m(encoder_from_json(j.at("config")), j.at("vocab_size"), 0);
    auto params = m.params();
    restore_params(ckpt, params);
    return m;
}

void save_sce(const SourceContentEncoder& m, const std::string& path,
              const std::string& header_json) {
    ensure_parent_dir(path);
    auto params = const_cast<SourceContentEncoder&>(m).params();
    make_checkpoint(params, header_json).save(path);
}

SourceContentEncoder load_sce(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    json j = parse_header(ckpt, "source_content_encoder", path);
    SourceContentEncoder m(encoder_from_json(j.at("config")), j.at("vocab_size"), 0);
    auto params = m.params();
    restore_params(ckpt, params);
    return m;
}

void save_detector(const BiasDetector& m, const std::string& path,
                   const std::string& header_json) {
    ensure_parent_dir(path);
    auto params = const_cast<BiasDetector&>(m).params();
    make_checkpoint(params, header_json).save(path);
}

BiasDetector load_detector(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    json j = parse_header(ckpt, "bias_detector", path);
    const auto* w1 = ckpt.find("detector.1.w");
    if (!w1) throw std::runtime_error(path + ": malformed detector checkpoint");
    BiasDetector m(w1->rows, w1->cols, 0);
    auto params = m.params();
    restore_params(ckpt, params);
    return m;
}

void save_latent(const LatentEncoder& m, const std::string& path,
                 const std::string& header_json) {
    ensure_parent_dir(path);
    auto params = const_cast<LatentEncoder&>(m).params();
    make_checkpoint(params, header_json).save(path);
}

LatentEncoder load_latent(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    json j = parse_header(ckpt, "latent_encoder", path);
    LatentEncoder m;
    m.encoder =
        TransformerEncoder<float>(encoder_from_json(j.at("config")), j.at("vocab_size"), 0);
    auto params = m.params();
    restore_params(ckpt, params);
    return m;
}

void save_decoder_head(const LinearLayer<float>& head, const std::string& path,
                       const std::string& header_json) {
    ensure_parent_dir(path);
    std::vector<ParamRef<float>> params;
    const_cast<LinearLayer<float>&>(head).collect("decoder", params);
    make_checkpoint(params, header_json).save(path);
}

LinearLayer<float> load_decoder_head(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    parse_header(ckpt, "token_decoder", path);
    const auto* w = ckpt.find("decoder.w");
    if (!w) throw std::runtime_error(path + ": malformed decoder checkpoint");
    Rng tmp(0);
    LinearLayer<float> head(w->rows, w->cols, tmp);
    std::vector<ParamRef<float>> params;
    head.collect("decoder", params);
    restore_params(ckpt, params);
    return head;
}

// --- synth ------------------------------------------------------------------

void run_synth(const RunConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.data_dir);

    SynthAssets assets;
    if (!cfg.data.lexicon_file.empty() && !cfg.data.templates_file.empty())
        assets = SynthAssets::load(cfg.data.lexicon_file, cfg.data.templates_file);
    else
        assets = SynthAssets::builtin();
    assets.save(cfg.data_dir + "/lexicon.tsv", cfg.data_dir + "/templates.txt");

    struct SplitSpec {
        const char* tag;
        std::size_t n;
        std::string path;
    };
    const SplitSpec splits[] = {
        {"synth_train", cfg.data.synth.n_train_per_class, cfg.data_dir + "/train.tsv"},
        {"synth_dev", cfg.data.synth.n_dev_per_class, cfg.data_dir + "/dev.tsv"},
        {"synth_test", cfg.data.synth.n_test_per_class, cfg.data_dir + "/test.tsv"},
    };
    for (const auto& s : splits) {
        Corpus corpus = synthesize_corpus(derive_seed(cfg.seed, s.tag), s.n, assets,
                                          cfg.data.max_len);
        save_corpus(corpus, s.path);
    }
    write_text(cfg.data_dir + "/synth_config.json", cfg.to_json());
}

// --- training ---------------------------------------------------------------

std::vector<StageStatus> run_training(const RunConfig& cfg) {
    cfg.validate();
    for (const auto& f : {cfg.train_path(), cfg.dev_path(), cfg.test_path()})
        if (!file_exists(f))
            throw ConfigError("config: corpus file not found: " + f);
    fs::create_directories(cfg.checkpoint_dir);
    write_text(cfg.checkpoint_dir + "/run_config.json", cfg.to_json());

    std::vector<StageStatus> statuses;
    LoadOptions lopts;
    lopts.max_len = cfg.data.max_len;
    lopts.vocab.min_count = cfg.data.min_count;
    lopts.vocab.max_types = cfg.data.max_types;

    // Vocabulary comes from the train split and is shared by every stage.
    Corpus train = load_corpus(cfg.train_path(), nullptr, lopts, Split::kTrain);
    train.vocab.save(cfg.vocab_path());
    Corpus dev = load_corpus(cfg.dev_path(), &train.vocab, lopts, Split::kDev);
    const std::uint64_t vocab_hash = train.vocab.content_hash();

    const json train_hyper = {{"encoder", encoder_json(cfg.encoder)},
                              {"epochs", cfg.training.epochs},
                              {"batch_size", cfg.training.batch_size},
                              {"learning_rate", cfg.training.learning_rate},
                              {"max_len", cfg.data.max_len},
                              {"min_count", cfg.data.min_count},
                              {"max_types", cfg.data.max_types}};
    const std::vector<std::string> data_files = {cfg.train_path(), cfg.dev_path()};
    const auto steps_for = [&](std::size_t n, std::size_t epochs, std::size_t batch) {
        return epochs * ((n + batch - 1) / batch);
    };

    ClassifierTrainOptions copts{cfg.training.epochs, cfg.training.batch_size,
                                 cfg.training.learning_rate};

    // 1. style classifier
    {
        StageGuard g{cfg, "style_classifier",
                     stage_fingerprint(cfg, "style_classifier", train_hyper, data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            ClassifierTrainReport rep;
            StyleClassifier f = train_style_classifier(
                train, dev, cfg.encoder, derive_seed(cfg.seed, g.stage), copts, &rep);
            save_classifier(
                f, cfg.checkpoint_path(g.stage),
                make_header("style_classifier", cfg.encoder, train.vocab.size(), vocab_hash,
                            derive_seed(cfg.seed, g.stage),
                            steps_for(train.examples.size(), copts.epochs, copts.batch_size),
                            {{"role", "pipeline"}, {"best_dev_acc", rep.best_dev_acc}}));
            st.metrics["best_dev_acc"] = rep.best_dev_acc;
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    // 2. source content encoder
    {
        StageGuard g{cfg, "source_content_encoder",
                     stage_fingerprint(cfg, "source_content_encoder", train_hyper,
                                       data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            SceTrainOptions sopts;
            sopts.epochs = cfg.training.epochs;
            sopts.batch_size = cfg.training.batch_size;
            sopts.learning_rate = cfg.training.learning_rate;
            SceTrainReport rep;
            SourceContentEncoder sce = train_source_content_encoder(
                train, dev, cfg.encoder, derive_seed(cfg.seed, g.stage), sopts, &rep);
            save_sce(sce, cfg.checkpoint_path(g.stage),
                     make_header("source_content_encoder", cfg.encoder, train.vocab.size(),
                                 vocab_hash, derive_seed(cfg.seed, g.stage),
                                 steps_for(train.examples.size(), sopts.epochs,
                                           sopts.batch_size),
                                 {{"dev_style_acc", rep.dev_style_acc}}));
            st.metrics["dev_style_acc"] = rep.dev_style_acc;
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    // 3. bias detector (over frozen source encodings)
    {
        json hyper = train_hyper;
        hyper["detector_hidden"] = cfg.detector_hidden;
        hyper["sce"] = file_hash(cfg.checkpoint_path("source_content_encoder"));
        StageGuard g{cfg, "bias_detector",
                     stage_fingerprint(cfg, "bias_detector", hyper, data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            SourceContentEncoder sce =
                load_sce(cfg.checkpoint_path("source_content_encoder"));
            auto make_latents = [&](const Corpus& c) {
                std::vector<LabeledLatent> out;
                out.reserve(c.examples.size());
                for (const auto& e : c.examples)
                    out.push_back({sce.encode(e.tokens), e.label});
                return out;
            };
            DetectorTrainOptions dopts;
            dopts.hidden_dim = cfg.detector_hidden;
            float best_acc = 0.0f;
            BiasDetector det =
                train_bias_detector(make_latents(train), make_latents(dev),
                                    derive_seed(cfg.seed, g.stage), dopts, &best_acc);
            save_detector(det, cfg.checkpoint_path(g.stage),
                          make_header("bias_detector", cfg.encoder, train.vocab.size(),
                                      vocab_hash, derive_seed(cfg.seed, g.stage),
                                      steps_for(train.examples.size(), dopts.epochs,
                                                dopts.batch_size),
                                      {{"dev_acc", best_acc}}));
            st.metrics["dev_acc"] = best_acc;
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    // 4. token embedder
    {
        StageGuard g{cfg, "token_embedder",
                     stage_fingerprint(cfg, "token_embedder", train_hyper, data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            MlmTrainOptions mopts;
            mopts.epochs = cfg.training.epochs;
            mopts.batch_size = cfg.training.batch_size;
            mopts.learning_rate = cfg.training.learning_rate;
            MlmTrainReport rep;
            MlmModel emb = train_token_embedder(train, cfg.encoder,
                                                derive_seed(cfg.seed, g.stage), mopts, &rep);
            save_mlm(emb, cfg.checkpoint_path(g.stage),
                     make_header("mlm", cfg.encoder, train.vocab.size(), vocab_hash,
                                 derive_seed(cfg.seed, g.stage),
                                 steps_for(train.examples.size(), mopts.epochs,
                                           mopts.batch_size),
                                 {{"mask_rate", mopts.mask_rate},
                                  {"final_loss_per_token", rep.epoch_loss_per_token.back()},
                                  {"corpus_fingerprint", hex64(train.content_hash())}}));
            st.metrics["final_loss_per_token"] = rep.epoch_loss_per_token.back();
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    // 5. latent encoder
    {
        json hyper = train_hyper;
        hyper["lambda"] = cfg.lce.lambda;
        hyper["lce_epochs"] = cfg.lce.epochs;
        hyper["lce_lr"] = cfg.lce.learning_rate;
        hyper["sce"] = file_hash(cfg.checkpoint_path("source_content_encoder"));
        hyper["detector"] = file_hash(cfg.checkpoint_path("bias_detector"));
        StageGuard g{cfg, "latent_encoder",
                     stage_fingerprint(cfg, "latent_encoder", hyper, data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            SourceContentEncoder sce =
                load_sce(cfg.checkpoint_path("source_content_encoder"));
            BiasDetector det = load_detector(cfg.checkpoint_path("bias_detector"));
            LceHyper lh = cfg.lce;
            lh.seed = derive_seed(cfg.seed, g.stage);
            Corpus biased_train = label_subset(train, StyleLabel::kBiased);
            Corpus biased_dev = label_subset(dev, StyleLabel::kBiased);
            LceTrainReport rep;
            LatentEncoder lce =
                train_latent_encoder(biased_train, biased_dev, sce, det, lh, &rep);
            save_latent(lce, cfg.checkpoint_path(g.stage),
                        make_header("latent_encoder", cfg.encoder, train.vocab.size(),
                                    vocab_hash, lh.seed,
                                    steps_for(biased_train.examples.size(), lh.epochs,
                                              lh.batch_size),
                                    {{"lambda", lh.lambda},
                                     {"dev_mean_cos", rep.dev_mean_cos},
                                     {"dev_mean_p_neutral", rep.dev_mean_p_neutral}}));
            st.metrics["dev_mean_cos"] = rep.dev_mean_cos;
            st.metrics["dev_mean_p_neutral"] = rep.dev_mean_p_neutral;
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    // 6. token decoder (full model plus the two ablation heads)
    {
        json hyper = train_hyper;
        hyper["gamma"] = cfg.decoder.gamma;
        hyper["tau"] = cfg.decoder.tau;
        hyper["alpha"] = cfg.decoder.alpha;
        hyper["td_epochs"] = cfg.decoder.epochs;
        hyper["td_lr"] = cfg.decoder.learning_rate;
        hyper["variants"] = cfg.train_ablation_variants;
        hyper["embedder"] = file_hash(cfg.checkpoint_path("token_embedder"));
        hyper["sce"] = file_hash(cfg.checkpoint_path("source_content_encoder"));
        hyper["classifier"] = file_hash(cfg.checkpoint_path("style_classifier"));
        StageGuard g{cfg, "token_decoder",
                     stage_fingerprint(cfg, "token_decoder", hyper, data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            MlmModel emb = load_mlm(cfg.checkpoint_path("token_embedder"));
            SourceContentEncoder sce =
                load_sce(cfg.checkpoint_path("source_content_encoder"));
            StyleClassifier f = load_classifier(cfg.checkpoint_path("style_classifier"));
            Corpus neutral_train = label_subset(train, StyleLabel::kNeutral);

            auto train_variant = [&](TdHyper h, const char* tag) {
                h.seed = derive_seed(cfg.seed, std::string("token_decoder:") + tag);
                TdTrainReport rep;
                LinearLayer<float> head =
                    train_token_decoder(neutral_train, emb, sce, f, h, &rep);
                const std::string path =
                    std::string(tag) == "full"
                        ? cfg.checkpoint_path("token_decoder")
                        : cfg.checkpoint_path(std::string("token_decoder_") + tag);
                save_decoder_head(
                    head, path,
                    make_header("token_decoder", cfg.encoder, train.vocab.size(),
                                vocab_hash, h.seed,
                                steps_for(neutral_train.examples.size(), h.epochs,
                                          h.batch_size),
                                {{"variant", tag},
                                 {"gamma", h.gamma},
                                 {"alpha", h.effective_alpha()},
                                 {"final_total", rep.epoch_total.back()},
                                 {"final_dec", rep.epoch_dec.back()}}));
                return rep;
            };

            TdHyper full = cfg.decoder;
            TdTrainReport rep = train_variant(full, "full");
            st.metrics["final_total"] = rep.epoch_total.back();
            if (cfg.train_ablation_variants) {
                TdHyper nl = cfg.decoder;
                nl.use_latent = false;
                train_variant(nl, "no_latent");
                TdHyper nlncc = cfg.decoder;
                nlncc.use_latent = false;
                nlncc.gamma = 0.0f;
                train_variant(nlncc, "no_latent_no_cc");
            }
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    // 7. held-out evaluation classifier (different seed, different shuffle)
    {
        StageGuard g{cfg, "eval_classifier",
                     stage_fingerprint(cfg, "eval_classifier", train_hyper, data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            ClassifierTrainReport rep;
            StyleClassifier evalf = train_style_classifier(
                train, dev, cfg.encoder, derive_seed(cfg.seed, g.stage), copts, &rep);
            StyleClassifier pipef = load_classifier(cfg.checkpoint_path("style_classifier"));
            if (evalf.checksum() == pipef.checksum())
                throw TrainingError(
                    "evaluation classifier checkpoint equals the pipeline classifier");
            save_classifier(
                evalf, cfg.checkpoint_path(g.stage),
                make_header("style_classifier", cfg.encoder, train.vocab.size(), vocab_hash,
                            derive_seed(cfg.seed, g.stage),
                            steps_for(train.examples.size(), copts.epochs, copts.batch_size),
                            {{"role", "evaluation"}, {"best_dev_acc", rep.best_dev_acc}}));
            st.metrics["best_dev_acc"] = rep.best_dev_acc;
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    // 8. evaluation sentence encoder (separate-seed MLM model)
    {
        StageGuard g{cfg, "eval_encoder",
                     stage_fingerprint(cfg, "eval_encoder", train_hyper, data_files)};
        StageStatus st{g.stage, true, {}};
        if (!g.current()) {
            st.skipped = false;
            MlmTrainOptions mopts;
            mopts.epochs = cfg.training.epochs;
            mopts.batch_size = cfg.training.batch_size;
            mopts.learning_rate = cfg.training.learning_rate;
            MlmTrainReport rep;
            MlmModel enc = train_token_embedder(train, cfg.encoder,
                                                derive_seed(cfg.seed, g.stage), mopts, &rep);
            save_mlm(enc, cfg.checkpoint_path(g.stage),
                     make_header("mlm", cfg.encoder, train.vocab.size(), vocab_hash,
                                 derive_seed(cfg.seed, g.stage),
                                 steps_for(train.examples.size(), mopts.epochs,
                                           mopts.batch_size),
                                 {{"role", "evaluation"},
                                  {"final_loss_per_token",
                                   rep.epoch_loss_per_token.back()}}));
            st.metrics["final_loss_per_token"] = rep.epoch_loss_per_token.back();
            g.write_manifest(st.metrics);
        }
        statuses.push_back(st);
    }

    return statuses;
}

// --- loading & evaluation ---------------------------------------------------

const LinearLayer<float>& LoadedPipeline::decoder_for(PipelineVariant v) const {
    switch (v) {
        case PipelineVariant::kFull: return decoder_full;
        case PipelineVariant::kNoLatent: return decoder_no_latent;
        case PipelineVariant::kNoLatentNoClassConstraint: return decoder_no_latent_no_cc;
    }
    return decoder_full;
}

TransferOptions LoadedPipeline::transfer_options(const RunConfig& cfg,
                                                 PipelineVariant v) const {
    TransferOptions opts;
    opts.mu = cfg.masker.mu;
    opts.n_samples = cfg.masker.n_samples;
    opts.alpha = cfg.decoder.alpha;
    opts.use_latent = v == PipelineVariant::kFull;
    opts.seed = derive_seed(cfg.seed, std::string("transfer:") + variant_name(v));
    return opts;
}

LoadedPipeline load_pipeline(const RunConfig& cfg, bool need_ablations) {
    if (!file_exists(cfg.vocab_path())) throw MissingPrerequisiteError("vocab");
    for (const auto& stage : training_stages())
        if (!file_exists(cfg.checkpoint_path(stage)))
            throw MissingPrerequisiteError(stage);

    LoadedPipeline pipe;
    pipe.vocab = Vocabulary::load(cfg.vocab_path());
    pipe.classifier = load_classifier(cfg.checkpoint_path("style_classifier"));
    pipe.sce = load_sce(cfg.checkpoint_path("source_content_encoder"));
    pipe.detector = load_detector(cfg.checkpoint_path("bias_detector"));
    pipe.embedder = load_mlm(cfg.checkpoint_path("token_embedder"));
    pipe.lce = load_latent(cfg.checkpoint_path("latent_encoder"));
    pipe.decoder_full = load_decoder_head(cfg.checkpoint_path("token_decoder"));
    pipe.eval_classifier = load_classifier(cfg.checkpoint_path("eval_classifier"));
    pipe.eval_encoder = load_mlm(cfg.checkpoint_path("eval_encoder"));

    const std::string nl = cfg.checkpoint_path("token_decoder_no_latent");
    const std::string nlncc = cfg.checkpoint_path("token_decoder_no_latent_no_cc");
    pipe.has_ablation_heads = file_exists(nl) && file_exists(nlncc);
    if (pipe.has_ablation_heads) {
        pipe.decoder_no_latent = load_decoder_head(nl);
        pipe.decoder_no_latent_no_cc = load_decoder_head(nlncc);
    } else if (need_ablations) {
        throw MissingPrerequisiteError("token_decoder");
    }
    return pipe;
}

EvaluationResult run_evaluation(const RunConfig& cfg, const LoadedPipeline& pipe,
                                PipelineVariant variant) {
    LoadOptions lopts;
    lopts.max_len = cfg.data.max_len;
    Corpus train = load_corpus(cfg.train_path(), &pipe.vocab, lopts, Split::kTrain);
    Corpus test = load_corpus(cfg.test_path(), &pipe.vocab, lopts, Split::kTest);

    SynthAssets assets;
    bool have_assets = false;
    if (file_exists(cfg.lexicon_path()) && file_exists(cfg.templates_path())) {
        assets = SynthAssets::load(cfg.lexicon_path(), cfg.templates_path());
        annotate_gold_positions(test, assets);
        have_assets = true;
    }

    NgramModel lm = train_kn_lm(train, cfg.lm_order);

    EvaluationInputs in;
    in.pipeline_classifier = &pipe.classifier;
    in.embedder = &pipe.embedder;
    in.latent_encoder = &pipe.lce;
    in.decoder_head = &pipe.decoder_for(variant);
    in.eval_classifier = &pipe.eval_classifier;
    in.eval_encoder = &pipe.eval_encoder;
    in.language_model = &lm;
    in.vocab = &pipe.vocab;

    TransferOptions opts = pipe.transfer_options(cfg, variant);
    EvaluationResult res =
        evaluate_corpus(in, test, opts, have_assets ? &assets : nullptr);

    for (const auto& stage : training_stages())
        res.report.component_hashes[stage] = file_hash(cfg.checkpoint_path(stage));

    fs::create_directories(cfg.report_dir);
    const std::string base = cfg.report_dir + "/report_" + variant_name(variant);
    write_text(base + ".txt", res.report.to_kv_text());
    write_text(base + ".json", res.report.to_json());
    return res;
}

}  // namespace debias
