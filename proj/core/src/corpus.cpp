#include "debias/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace debias {

namespace {

const char* kSpecialSurfaces[kNumSpecialTokens] = {"[PAD]", "[UNK]", "[MASK]",
                                                   "[BOS]", "[EOS]"};

bool is_word_char(unsigned char c) {
    return std::isalnum(c) || c == '\'';
}

}  // namespace

StyleLabel parse_style_label(const std::string& s) {
    if (s == "neutral" || s == "male") return StyleLabel::kNeutral;
    if (s == "biased" || s == "female") return StyleLabel::kBiased;
    throw std::invalid_argument("unknown style label: '" + s + "'");
}

const char* style_label_name(StyleLabel l) {
    return l == StyleLabel::kNeutral ? "neutral" : "biased";
}

Vocabulary::Vocabulary() {
    for (TokenId i = 0; i < kNumSpecialTokens; ++i) {
        id_to_surface_.emplace_back(kSpecialSurfaces[i]);
        surface_to_id_.emplace(kSpecialSurfaces[i], i);
    }
}

TokenId Vocabulary::add(const std::string& surface) {
    auto it = surface_to_id_.find(surface);
    if (it != surface_to_id_.end()) return it->second;
    TokenId id = static_cast<TokenId>(id_to_surface_.size());
    id_to_surface_.push_back(surface);
    surface_to_id_.emplace(surface, id);
    return id;
}

TokenId Vocabulary::id_of(const std::string& surface) const {
    auto it = surface_to_id_.find(surface);
    return it == surface_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::surface_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_surface_.size())
        throw std::out_of_range("token id out of range");
    return id_to_surface_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& surface) const {
    return surface_to_id_.count(surface) != 0;
}

std::uint64_t Vocabulary::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : id_to_surface_) {
        h = fnv1a(s, h);
        h = fnv1a("\n", h);
    }
    return h;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
    for (std::size_t i = 0; i < id_to_surface_.size(); ++i)
        out << i << '\t' << id_to_surface_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("vocabulary line " + std::to_string(lineno) +
                                     ": expected id<TAB>surface");
        std::size_t id = std::stoul(line.substr(0, tab));
        std::string surface = line.substr(tab + 1);
        if (id < static_cast<std::size_t>(kNumSpecialTokens)) {
            if (surface != kSpecialSurfaces[id])
                throw std::runtime_error("vocabulary line " + std::to_string(lineno) +
                                         ": special token mismatch");
            continue;
        }
        if (id != v.id_to_surface_.size())
            throw std::runtime_error("vocabulary line " + std::to_string(lineno) +
                                     ": ids must be dense and ordered");
        v.add(surface);
    }
    return v;
}

std::string TextExample::text() const {
    std::string out;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        if (i) out += ' ';
        out += surfaces[i];
    }
    return out;
}

std::size_t Corpus::count_label(StyleLabel l) const {
    std::size_t n = 0;
    for (const auto& e : examples)
        if (e.label == l) ++n;
    return n;
}

std::uint64_t Corpus::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : examples) {
        h = fnv1a(style_label_name(e.label), h);
        h = fnv1a_bytes(e.tokens.data(), e.tokens.size() * sizeof(TokenId), h);
    }
    return h;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (is_word_char(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
            if (!std::isspace(c)) words.push_back(std::string(1, static_cast<char>(c)));
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

TextExample tokenize(const std::string& text, const Vocabulary& vocab,
                     std::size_t max_len, StyleLabel label) {
    TextExample ex;
    ex.label = label;
    for (auto& w : split_words(text)) {
        if (ex.tokens.size() >= max_len) break;
        TokenId id = vocab.id_of(w);
        ex.tokens.push_back(id);
        ex.surfaces.push_back(id == kUnkId ? vocab.surface_of(kUnkId) : w);
    }
    return ex;
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        cur += c;
        if (c == '.' || c == '!' || c == '?') {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (cur.find_first_not_of(" \t\r\n") != std::string::npos) out.push_back(cur);
    return out;
}

Vocabulary build_vocab(const std::vector<std::string>& documents,
                       const VocabOptions& opts) {
    if (documents.empty())
        throw std::invalid_argument("build_vocab: at least one document required");
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : documents)
        for (auto& w : split_words(doc)) ++counts[w];

    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [surface, n] : counts)
        if (n >= opts.min_count) kept.emplace_back(surface, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (kept.size() > opts.max_types) kept.resize(opts.max_types);

    Vocabulary v;
    for (auto& [surface, n] : kept) v.add(surface);
    return v;
}

Corpus load_corpus(const std::string& path, const Vocabulary* vocab,
                   const LoadOptions& opts, Split split) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read corpus: " + path);

    struct RawRecord {
        StyleLabel label;
        std::string sentence;
    };
    std::vector<RawRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                                     ": expected label<TAB>text");
        StyleLabel label;
        try {
            label = parse_style_label(line.substr(0, tab));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path + ": line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        for (auto& sent : split_sentences(line.substr(tab + 1)))
            records.push_back({label, sent});
    }

    Corpus corpus;
    corpus.split = split;
    if (vocab) {
        corpus.vocab = *vocab;
    } else {
        std::vector<std::string> docs;
        docs.reserve(records.size());
        for (auto& r : records) docs.push_back(r.sentence);
        if (docs.empty()) throw std::runtime_error(path + ": no usable records");
        corpus.vocab = build_vocab(docs, opts.vocab);
    }
    for (auto& r : records) {
        TextExample ex = tokenize(r.sentence, corpus.vocab, opts.max_len, r.label);
        if (ex.tokens.empty()) continue;  // rejected example
        corpus.examples.push_back(std::move(ex));
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus: " + path);
    for (const auto& e : corpus.examples)
        out << style_label_name(e.label) << '\t' << e.text() << '\n';
}

void SynthAssets::validate() const {
    if (pairs.size() < 20)
        throw std::invalid_argument("synthetic lexicon needs at least 20 pairs");
    if (templates.size() < 30)
        throw std::invalid_argument("synthetic generator needs at least 30 templates");
    for (const auto& p : pairs) {
        if (split_words(p.biased_word).size() != 1 ||
            split_words(p.neutral_word).size() != 1)
            throw std::invalid_argument("lexicon words must be single tokens");
    }
    for (const auto& t : templates) {
        auto first = t.find("{ATTR}");
        if (first == std::string::npos || t.find("{ATTR}", first + 1) != std::string::npos)
            throw std::invalid_argument("each template needs exactly one {ATTR} slot: " + t);
    }
}

SynthAssets SynthAssets::builtin() {
    SynthAssets a;
    a.pairs = {
        {"mothers", "parents"},        {"fathers", "guardians"},
        {"housewives", "homemakers"},  {"chairman", "chairperson"},
        {"policemen", "officers"},     {"firemen", "firefighters"},
        {"stewardess", "attendant"},   {"salesmen", "sellers"},
        {"waitress", "server"},        {"mailmen", "couriers"},
        {"actress", "performer"},      {"businessmen", "executives"},
        {"spokesman", "representative"}, {"congressman", "legislator"},
        {"workmen", "crews"},          {"foreman", "supervisor"},
        {"landlady", "proprietor"},    {"barmaid", "bartender"},
        {"headmistress", "principal"}, {"seamstress", "tailor"},
        {"maids", "cleaners"},         {"nannies", "caregivers"},
        {"heroine", "protagonist"},    {"hostess", "greeter"},
    };
    a.templates = {
        "the event welcomed all the {ATTR} here",
        "many {ATTR} attended the meeting yesterday .",
        "the {ATTR} gathered near the main hall",
        "our team thanked the {ATTR} for the support .",
        "several {ATTR} joined the morning session",
        "the committee invited the {ATTR} to speak",
        "those {ATTR} organized the charity event .",
        "the {ATTR} prepared the annual report",
        "a group of {ATTR} visited the museum .",
        "the manager praised the {ATTR} on friday",
        "the {ATTR} asked about the new schedule",
        "two {ATTR} helped at the registration desk .",
        "the school employed more {ATTR} this year",
        "the {ATTR} discussed the budget in detail .",
        "local {ATTR} supported the community program",
        "the {ATTR} reviewed the safety guidelines .",
        "some {ATTR} stayed late after the session",
        "the {ATTR} presented the results on stage .",
        "the union backed the {ATTR} during talks",
        "the {ATTR} signed the petition last week .",
        "most {ATTR} agreed with the proposal",
        "the {ATTR} planned the summer festival .",
        "the city honored the {ATTR} at the ceremony",
        "the {ATTR} answered questions from the audience .",
        "the {ATTR} completed the survey online",
        "the office assigned the {ATTR} new duties .",
        "the {ATTR} shared ideas during the workshop",
        "the {ATTR} arrived early for the briefing .",
        "the {ATTR} voted on the new policy",
        "the panel interviewed the {ATTR} on monday .",
        "the {ATTR} toured the facility with the guide",
        "the report credited the {ATTR} for the gains .",
        "the student council welcomed the {ATTR} warmly",
        "the {ATTR} described the project goals clearly .",
        "volunteers and {ATTR} cleaned the park together",
        "the {ATTR} received an award for fine service .",
    };
    a.validate();
    return a;
}

SynthAssets SynthAssets::load(const std::string& lexicon_path,
                              const std::string& templates_path) {
    SynthAssets a;
    std::ifstream lex(lexicon_path);
    if (!lex) throw std::runtime_error("cannot read lexicon: " + lexicon_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lex, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(lexicon_path + ": line " + std::to_string(lineno) +
                                     ": expected biased_word<TAB>neutral_word");
        a.pairs.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    std::ifstream tpl(templates_path);
    if (!tpl) throw std::runtime_error("cannot read templates: " + templates_path);
    while (std::getline(tpl, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        a.templates.push_back(line);
    }
    a.validate();
    return a;
}

void SynthAssets::save(const std::string& lexicon_path,
                       const std::string& templates_path) const {
    std::ofstream lex(lexicon_path);
    if (!lex) throw std::runtime_error("cannot write lexicon: " + lexicon_path);
    for (const auto& p : pairs) lex << p.biased_word << '\t' << p.neutral_word << '\n';
    std::ofstream tpl(templates_path);
    if (!tpl) throw std::runtime_error("cannot write templates: " + templates_path);
    for (const auto& t : templates) tpl << t << '\n';
}

namespace {

// Each attribute pair draws from a fixed subset of templates so that context
// words correlate with attribute words, the way real corpora behave.
constexpr std::size_t kTemplatesPerPair = 8;

std::vector<std::size_t> compatible_templates(std::size_t pair_idx,
                                              std::size_t n_templates) {
    std::vector<std::size_t> out;
    std::size_t count = std::min(kTemplatesPerPair, n_templates);
    for (std::size_t j = 0; j < count; ++j)
        out.push_back((pair_idx * 5 + j) % n_templates);
    return out;
}

struct FilledSentence {
    std::string text;
    std::size_t attr_position;
};

FilledSentence fill_template(const std::string& tpl, const std::string& word) {
    auto slot = tpl.find("{ATTR}");
    std::string before = tpl.substr(0, slot);
    std::string after = tpl.substr(slot + 6);
    FilledSentence f;
    f.attr_position = split_words(before).size();
    f.text = before + word + after;
    return f;
}

}  // namespace

Corpus synthesize_corpus(std::uint64_t seed, std::size_t n_per_class,
                         const SynthAssets& assets, std::size_t max_len) {
    if (n_per_class < 1)
        throw std::invalid_argument("synthesize_corpus: n_per_class must be >= 1");
    assets.validate();

    Rng rng(seed);
    struct Draw {
        FilledSentence biased, neutral;
    };
    std::vector<Draw> draws;
    std::vector<std::string> docs;
    std::uniform_int_distribution<std::size_t> pick_pair(0, assets.pairs.size() - 1);
    for (std::size_t i = 0; i < n_per_class; ++i) {
        std::size_t pi = pick_pair(rng);
        auto tpls = compatible_templates(pi, assets.templates.size());
        std::uniform_int_distribution<std::size_t> pick_tpl(0, tpls.size() - 1);
        const std::string& tpl = assets.templates[tpls[pick_tpl(rng)]];
        Draw d{fill_template(tpl, assets.pairs[pi].biased_word),
               fill_template(tpl, assets.pairs[pi].neutral_word)};
        docs.push_back(d.biased.text);
        docs.push_back(d.neutral.text);
        draws.push_back(std::move(d));
    }

    Corpus corpus;
    VocabOptions vopts;
    vopts.min_count = 1;
    vopts.max_types = 100000;
    corpus.vocab = build_vocab(docs, vopts);
    for (const auto& d : draws) {
        TextExample b = tokenize(d.biased.text, corpus.vocab, max_len, StyleLabel::kBiased);
        b.gold_attribute_positions = std::set<std::size_t>{d.biased.attr_position};
        corpus.examples.push_back(std::move(b));
        corpus.examples.push_back(
            tokenize(d.neutral.text, corpus.vocab, max_len, StyleLabel::kNeutral));
    }
    return corpus;
}

void annotate_gold_positions(Corpus& corpus, const SynthAssets& assets) {
    std::unordered_map<std::string, int> biased_words;
    for (const auto& p : assets.pairs) biased_words[p.biased_word] = 1;
    for (auto& e : corpus.examples) {
        if (e.label != StyleLabel::kBiased) continue;
        std::set<std::size_t> gold;
        for (std::size_t i = 0; i < e.surfaces.size(); ++i)
            if (biased_words.count(e.surfaces[i])) gold.insert(i);
        if (!gold.empty()) e.gold_attribute_positions = std::move(gold);
    }
}

}  // namespace debias
