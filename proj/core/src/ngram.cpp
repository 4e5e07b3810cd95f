#include "debias/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace debias {

NgramModel NgramModel::train(const std::vector<std::vector<TokenId>>& sentences,
                             std::size_t order, std::size_t vocab_size) {
    if (order < 2) throw std::invalid_argument("ngram: order must be >= 2");
    if (sentences.empty()) throw std::invalid_argument("ngram: empty corpus");
    if (vocab_size == 0) throw std::invalid_argument("ngram: empty vocabulary");

    NgramModel m;
    m.order_ = order;
    m.vocab_size_ = vocab_size;

    // Raw window counts at every order over BOS-padded, EOS-terminated text.
    std::vector<GramMap<double>> raw(order);
    for (const auto& sent : sentences) {
        std::vector<TokenId> padded(order - 1, kBosId);
        for (TokenId t : sent)
            padded.push_back((t >= 0 && static_cast<std::size_t>(t) < vocab_size) ? t
                                                                                  : kUnkId);
        padded.push_back(kEosId);
        for (std::size_t k = 1; k <= order; ++k) {
            if (padded.size() < k) continue;
            for (std::size_t i = 0; i + k <= padded.size(); ++i)
                raw[k - 1][std::vector<TokenId>(padded.begin() + i,
                                                padded.begin() + i + k)] += 1.0;
        }
    }

    // Counts in use: raw at the top order, continuation counts below
    // (number of distinct left extensions seen one order up).
    m.counts_.resize(order);
    m.counts_[order - 1] = raw[order - 1];
    for (std::size_t k = order - 1; k >= 1; --k) {
        for (const auto& [gram, c] : raw[k]) {  // raw (k+1)-grams
            std::vector<TokenId> suffix(gram.begin() + 1, gram.end());
            m.counts_[k - 1][suffix] += 1.0;
        }
        if (k == 1) break;
    }

    // Context totals and distinct-continuation counts per order.
    m.ctx_.resize(order);
    for (std::size_t k = 1; k <= order; ++k) {
        for (const auto& [gram, c] : m.counts_[k - 1]) {
            std::vector<TokenId> ctx(gram.begin(), gram.end() - 1);
            auto& stats = m.ctx_[k - 1][ctx];
            stats.total += c;
            stats.n1plus += 1;
        }
    }

    // Per-order discounts from count-of-counts.
    m.discounts_.resize(order);
    for (std::size_t k = 1; k <= order; ++k) {
        std::size_t n1 = 0, n2 = 0;
        for (const auto& [gram, c] : m.counts_[k - 1]) {
            if (c == 1.0) ++n1;
            if (c == 2.0) ++n2;
        }
        double d = 0.75;
        if (n1 + 2 * n2 == 0) {
            m.warnings_.push_back("order " + std::to_string(k) +
                                  ": no count-of-counts mass, falling back to D=0.75");
        } else {
            d = static_cast<double>(n1) / static_cast<double>(n1 + 2 * n2);
            if (d <= 0.0 || d >= 1.0) {
                m.warnings_.push_back("order " + std::to_string(k) + ": estimated D=" +
                                      std::to_string(d) +
                                      " outside (0,1), falling back to D=0.75");
                d = 0.75;
            }
        }
        m.discounts_[k - 1] = d;
    }
    return m;
}

NgramModel NgramModel::uniform(std::size_t vocab_size) {
    if (vocab_size == 0) throw std::invalid_argument("ngram: empty vocabulary");
    NgramModel m;
    m.order_ = 1;
    m.vocab_size_ = vocab_size;
    m.uniform_only_ = true;
    return m;
}

double NgramModel::prob_order(std::size_t k, std::span<const TokenId> context,
                              TokenId word) const {
    if (uniform_only_) return 1.0 / static_cast<double>(vocab_size_);
    if (k < 1 || k > order_) throw std::invalid_argument("ngram: bad order");
    if (context.size() != k - 1)
        throw std::invalid_argument("ngram: context length must be order-1");
    if (word < 0 || static_cast<std::size_t>(word) >= vocab_size_)
        throw std::invalid_argument("ngram: word id out of range");

    const double uniform_floor = 1.0 / static_cast<double>(vocab_size_);
    if (k == 1) {
        auto it = ctx_[0].find(std::vector<TokenId>{});
        if (it == ctx_[0].end() || it->second.total <= 0.0) return uniform_floor;
        const auto& stats = it->second;
        const double d = discounts_[0];
        auto cit = counts_[0].find(std::vector<TokenId>{word});
        const double c = cit == counts_[0].end() ? 0.0 : cit->second;
        const double backoff_mass = d * static_cast<double>(stats.n1plus) / stats.total;
        return std::max(c - d, 0.0) / stats.total + backoff_mass * uniform_floor;
    }

    std::vector<TokenId> ctx(context.begin(), context.end());
    auto it = ctx_[k - 1].find(ctx);
    std::span<const TokenId> shorter = context.subspan(1);
    if (it == ctx_[k - 1].end() || it->second.total <= 0.0)
        return prob_order(k - 1, shorter, word);

    const auto& stats = it->second;
    const double d = discounts_[k - 1];
    std::vector<TokenId> gram = ctx;
    gram.push_back(word);
    auto cit = counts_[k - 1].find(gram);
    const double c = cit == counts_[k - 1].end() ? 0.0 : cit->second;
    const double backoff_mass = d * static_cast<double>(stats.n1plus) / stats.total;
    return std::max(c - d, 0.0) / stats.total +
           backoff_mass * prob_order(k - 1, shorter, word);
}

double NgramModel::prob(std::span<const TokenId> context, TokenId word) const {
    if (uniform_only_) return 1.0 / static_cast<double>(vocab_size_);
    std::vector<TokenId> ctx;
    if (context.size() >= order_ - 1) {
        ctx.assign(context.end() - (order_ - 1), context.end());
    } else {
        // short context: left-pad with [BOS]
        ctx.assign(order_ - 1 - context.size(), kBosId);
        ctx.insert(ctx.end(), context.begin(), context.end());
    }
    return prob_order(order_, ctx, word);
}

double NgramModel::sentence_logprob(std::span<const TokenId> tokens) const {
    const std::size_t hist = uniform_only_ ? 0 : order_ - 1;
    std::vector<TokenId> context(hist, kBosId);
    double lp = 0.0;
    auto score = [&](TokenId w) {
        TokenId mapped =
            (w >= 0 && static_cast<std::size_t>(w) < vocab_size_) ? w : kUnkId;
        lp += std::log(prob(context, mapped));
        if (hist > 0) {
            context.erase(context.begin());
            context.push_back(mapped);
        }
    };
    for (TokenId t : tokens) score(t);
    score(kEosId);
    return lp;
}

std::vector<std::vector<TokenId>> NgramModel::observed_contexts(std::size_t k) const {
    if (uniform_only_) return {};
    if (k < 1 || k > order_) throw std::invalid_argument("ngram: bad order");
    std::vector<std::vector<TokenId>> out;
    out.reserve(ctx_[k - 1].size());
    for (const auto& [ctx, stats] : ctx_[k - 1])
        if (stats.total > 0.0) out.push_back(ctx);
    return out;
}

double perplexity(const NgramModel& lm, const std::vector<std::vector<TokenId>>& sentences) {
    if (sentences.empty()) throw std::invalid_argument("perplexity: empty corpus");
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& sent : sentences) {
        nll -= lm.sentence_logprob(sent);
        count += sent.size() + 1;  // [EOS] is scored, [BOS] padding is not
    }
    return std::exp(nll / static_cast<double>(count));
}

NgramModel train_kn_lm(const Corpus& corpus, std::size_t order) {
    std::vector<std::vector<TokenId>> sentences;
    sentences.reserve(corpus.examples.size());
    for (const auto& e : corpus.examples) sentences.push_back(e.tokens);
    return NgramModel::train(sentences, order, corpus.vocab.size());
}

double perplexity(const NgramModel& lm, const Corpus& corpus) {
    std::vector<std::vector<TokenId>> sentences;
    sentences.reserve(corpus.examples.size());
    for (const auto& e : corpus.examples) sentences.push_back(e.tokens);
    return perplexity(lm, sentences);
}

}  // namespace debias
