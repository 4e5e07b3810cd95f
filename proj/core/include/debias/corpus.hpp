#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "debias/common.hpp"

namespace debias {

using TokenId = std::int32_t;

// Fixed special-token ids. Ids 0..4 are reserved in every vocabulary.
enum SpecialToken : TokenId {
    kPadId = 0,
    kUnkId = 1,
    kMaskId = 2,
    kBosId = 3,
    kEosId = 4,
};
constexpr TokenId kNumSpecialTokens = 5;

enum class StyleLabel { kNeutral, kBiased };  // s_a / s_b

StyleLabel parse_style_label(const std::string& s);
const char* style_label_name(StyleLabel l);

class Vocabulary {
  public:
    Vocabulary();

    // Frozen after construction: insertion only via builder functions below.
    TokenId id_of(const std::string& surface) const;  // kUnkId when absent
    const std::string& surface_of(TokenId id) const;
    bool contains(const std::string& surface) const;
    std::size_t size() const { return id_to_surface_.size(); }

    std::uint64_t content_hash() const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    // Builder use only.
    TokenId add(const std::string& surface);

  private:
    std::unordered_map<std::string, TokenId> surface_to_id_;
    std::vector<std::string> id_to_surface_;
};

struct TextExample {
    std::vector<TokenId> tokens;
    std::vector<std::string> surfaces;  // aligned with tokens
    StyleLabel label = StyleLabel::kNeutral;
    std::optional<std::set<std::size_t>> gold_attribute_positions;

    std::string text() const;  // surfaces joined by single spaces
};

enum class Split { kTrain, kDev, kTest };

struct Corpus {
    std::vector<TextExample> examples;
    Split split = Split::kTrain;
    Vocabulary vocab;

    std::size_t count_label(StyleLabel l) const;
    std::uint64_t content_hash() const;
};

// Lower-cases, splits on whitespace and punctuation, maps OOV to [UNK],
// truncates to max_len. Returns empty token list when nothing survives.
std::vector<std::string> split_words(const std::string& text);
TextExample tokenize(const std::string& text, const Vocabulary& vocab,
                     std::size_t max_len, StyleLabel label = StyleLabel::kNeutral);

// Splits a raw line into single sentences on sentence-final punctuation.
std::vector<std::string> split_sentences(const std::string& text);

struct VocabOptions {
    std::size_t min_count = 2;
    std::size_t max_types = 2000;  // non-special types kept; excess maps to [UNK]
};

// Ids assigned by (frequency desc, surface asc) after the 5 special tokens.
Vocabulary build_vocab(const std::vector<std::string>& documents,
                       const VocabOptions& opts = {});

struct LoadOptions {
    std::size_t max_len = 40;
    VocabOptions vocab;
};

// File format: one `label<TAB>text` record per line; labels are
// neutral|biased (or male|female, mapped to neutral|biased respectively).
// Multi-sentence texts are split into one example per sentence. When vocab
// is null a fresh vocabulary is built from this file.
Corpus load_corpus(const std::string& path, const Vocabulary* vocab,
                   const LoadOptions& opts = {}, Split split = Split::kTrain);

void save_corpus(const Corpus& corpus, const std::string& path);

// --- Synthetic biased-corpus generation -----------------------------------

struct AttributePair {
    std::string biased_word;
    std::string neutral_word;
};

struct SynthAssets {
    std::vector<AttributePair> pairs;     // >= 20
    std::vector<std::string> templates;   // >= 30, each with one {ATTR} slot

    void validate() const;
    static SynthAssets builtin();
    static SynthAssets load(const std::string& lexicon_path,
                            const std::string& templates_path);
    void save(const std::string& lexicon_path,
              const std::string& templates_path) const;
};

// Generates n_per_class biased examples plus their neutral twins (same
// template, paired word). Twins are adjacent: biased at even indices,
// its neutral twin right after it. Gold attribute positions are set on
// the biased examples only. Deterministic under seed.
Corpus synthesize_corpus(std::uint64_t seed, std::size_t n_per_class,
                         const SynthAssets& assets, std::size_t max_len = 40);

// Re-derives gold attribute positions by lexicon membership: positions of
// biased-lexicon words on biased examples. Used after file round-trips,
// which carry no position annotations.
void annotate_gold_positions(Corpus& corpus, const SynthAssets& assets);

}  // namespace debias
