#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "debias/classifier.hpp"
#include "debias/corpus.hpp"

namespace debias {

// Per-token attribution weights toward the biased class, from a local
// linear surrogate of the classifier.
struct Attribution {
    std::vector<double> weights;
    std::size_t sample_count = 0;
    double surrogate_fit = 0.0;  // weighted R^2 of the local model
};

// Callable returning P(s_b | token sequence); the explainer is agnostic to
// what produces the probability.
using TextProbe = std::function<double(const std::vector<TokenId>&)>;

struct ExplainOptions {
    double ridge_alpha = 1.0;
    double drop_probability = 0.5;
};

// Draws n_samples perturbations by independently dropping tokens (dropped
// tokens are removed from the sequence; all-dropped draws are resampled),
// weights them by exp(-D^2/sigma^2) with D the cosine distance between
// presence vectors and sigma = 0.25*sqrt(n), then fits a ridge-regularized
// weighted linear model on standardized presence features.
Attribution explain_tokens(const TextProbe& f, const std::vector<TokenId>& tokens,
                           std::size_t n_samples, std::uint64_t seed,
                           const ExplainOptions& opts = {});

Attribution explain_tokens(const StyleClassifier& f, const TextExample& x,
                           std::size_t n_samples, std::uint64_t seed,
                           const ExplainOptions& opts = {});

// A sentence with attribute positions replaced by [MASK].
struct MaskedText {
    std::vector<TokenId> tokens;
    std::set<std::size_t> masked_positions;  // the index set
    TextExample original;

    bool pass_through() const { return masked_positions.empty(); }
};

// Masks exactly the positions whose weight exceeds mu. Special tokens are
// never masked and sequence length never changes.
MaskedText mask_attributes(const Attribution& attr, const TextExample& x, double mu);

// Weighted ridge regression used by the surrogate fit; exposed for reuse.
// Returns coefficients on the raw (unstandardized) feature scale.
std::vector<double> weighted_ridge_fit(const std::vector<std::vector<double>>& features,
                                       const std::vector<double>& targets,
                                       const std::vector<double>& sample_weights,
                                       double alpha, double* r_squared = nullptr);

}  // namespace debias
