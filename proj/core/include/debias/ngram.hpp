#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "debias/corpus.hpp"

namespace debias {

// Interpolated Kneser-Ney n-gram model with one absolute discount per order.
// The top order uses raw counts; lower orders use continuation counts.
// Discounts come from count-of-counts (D = n1 / (n1 + 2*n2)); estimates
// falling outside (0,1) trigger the 0.75 fallback with a recorded warning.
// Unseen events interpolate down to a uniform 1/V floor.
class NgramModel {
  public:
    static NgramModel train(const std::vector<std::vector<TokenId>>& sentences,
                            std::size_t order, std::size_t vocab_size);
    // P(w | anything) = 1/V; the degenerate baseline model.
    static NgramModel uniform(std::size_t vocab_size);

    std::size_t order() const { return order_; }
    std::size_t vocab_size() const { return vocab_size_; }
    double discount(std::size_t k) const { return discounts_.at(k - 1); }
    const std::vector<std::string>& warnings() const { return warnings_; }

    // Conditional probability at the top order; context shorter than
    // order-1 is used as-is, longer contexts use their suffix.
    double prob(std::span<const TokenId> context, TokenId word) const;

    // Entry into the interpolation recursion at order k (context length k-1).
    double prob_order(std::size_t k, std::span<const TokenId> context, TokenId word) const;

    // log probability of a sentence: (order-1) [BOS] context padding, every
    // token scored, then [EOS]; natural log.
    double sentence_logprob(std::span<const TokenId> tokens) const;

    // Observed contexts at order k, for exhaustive normalization checks.
    std::vector<std::vector<TokenId>> observed_contexts(std::size_t k) const;

  private:
    NgramModel() = default;

    struct VecHash {
        std::size_t operator()(const std::vector<TokenId>& v) const {
            return static_cast<std::size_t>(
                fnv1a_bytes(v.data(), v.size() * sizeof(TokenId)));
        }
    };
    template <typename T>
    using GramMap = std::unordered_map<std::vector<TokenId>, T, VecHash>;

    struct ContextStats {
        double total = 0.0;       // sum of counts over continuations
        std::size_t n1plus = 0;   // distinct continuations
    };

    std::size_t order_ = 0;
    std::size_t vocab_size_ = 0;
    bool uniform_only_ = false;
    std::vector<GramMap<double>> counts_;        // per order, the counts in use
    std::vector<GramMap<ContextStats>> ctx_;     // per order, context stats
    std::vector<double> discounts_;
    std::vector<std::string> warnings_;
};

// exp of the mean negative log probability per scored token ([EOS] included,
// [BOS] padding excluded). Out-of-vocabulary ids are mapped to [UNK].
double perplexity(const NgramModel& lm,
                  const std::vector<std::vector<TokenId>>& sentences);

NgramModel train_kn_lm(const Corpus& corpus, std::size_t order = 5);
double perplexity(const NgramModel& lm, const Corpus& corpus);

}  // namespace debias
