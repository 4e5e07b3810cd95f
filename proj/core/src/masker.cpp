#include "debias/masker.hpp"

#include <cmath>
#include <stdexcept>

namespace debias {

namespace {

// Solves (A)x = b for symmetric positive-definite A via Cholesky.
std::vector<double> cholesky_solve(std::vector<std::vector<double>> a,
                                   std::vector<double> b) {
    const std::size_t n = a.size();
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < j; ++k) a[j][j] -= a[j][k] * a[j][k];
        if (a[j][j] <= 0.0) throw std::runtime_error("ridge system not positive definite");
        a[j][j] = std::sqrt(a[j][j]);
        for (std::size_t i = j + 1; i < n; ++i) {
            for (std::size_t k = 0; k < j; ++k) a[i][j] -= a[i][k] * a[j][k];
            a[i][j] /= a[j][j];
        }
    }
    // forward then backward substitution
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) b[i] -= a[i][k] * b[k];
        b[i] /= a[i][i];
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) b[i] -= a[k][i] * b[k];
        b[i] /= a[i][i];
    }
    return b;
}

}  // namespace

std::vector<double> weighted_ridge_fit(const std::vector<std::vector<double>>& features,
                                       const std::vector<double>& targets,
                                       const std::vector<double>& sample_weights,
                                       double alpha, double* r_squared) {
    const std::size_t m = features.size();
    if (m == 0 || targets.size() != m || sample_weights.size() != m)
        throw std::invalid_argument("weighted_ridge_fit: inconsistent inputs");
    const std::size_t n = features[0].size();

    double wsum = 0.0;
    for (double w : sample_weights) wsum += w;
    if (wsum <= 0.0) throw std::invalid_argument("weighted_ridge_fit: zero total weight");

    // Weighted standardization; near-constant columns are dropped (coef 0).
    std::vector<double> mean(n, 0.0), stddev(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += sample_weights[i] * features[i][j];
        mean[j] = s / wsum;
        double v = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double c = features[i][j] - mean[j];
            v += sample_weights[i] * c * c;
        }
        stddev[j] = std::sqrt(v / wsum);
    }
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < n; ++j)
        if (stddev[j] > 1e-12) active.push_back(j);

    double ymean = 0.0;
    for (std::size_t i = 0; i < m; ++i) ymean += sample_weights[i] * targets[i];
    ymean /= wsum;

    const std::size_t k = active.size();
    std::vector<double> beta_std(k, 0.0);
    if (k > 0) {
        std::vector<std::vector<double>> xtx(k, std::vector<double>(k, 0.0));
        std::vector<double> xty(k, 0.0);
        std::vector<double> xs(k);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t a = 0; a < k; ++a) {
                const std::size_t j = active[a];
                xs[a] = (features[i][j] - mean[j]) / stddev[j];
            }
            const double w = sample_weights[i];
            const double yc = targets[i] - ymean;
            for (std::size_t a = 0; a < k; ++a) {
                xty[a] += w * xs[a] * yc;
                for (std::size_t b = a; b < k; ++b) xtx[a][b] += w * xs[a] * xs[b];
            }
        }
        for (std::size_t a = 0; a < k; ++a) {
            xtx[a][a] += alpha;
            for (std::size_t b = 0; b < a; ++b) xtx[a][b] = xtx[b][a];
        }
        beta_std = cholesky_solve(std::move(xtx), std::move(xty));
    }

    std::vector<double> coef(n, 0.0);
    for (std::size_t a = 0; a < k; ++a) coef[active[a]] = beta_std[a] / stddev[active[a]];

    if (r_squared) {
        double ss_res = 0.0, ss_tot = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double pred = ymean;
            for (std::size_t a = 0; a < k; ++a) {
                const std::size_t j = active[a];
                pred += beta_std[a] * (features[i][j] - mean[j]) / stddev[j];
            }
            const double r = targets[i] - pred;
            const double c = targets[i] - ymean;
            ss_res += sample_weights[i] * r * r;
            ss_tot += sample_weights[i] * c * c;
        }
        *r_squared = ss_tot < 1e-18 ? 1.0 : 1.0 - ss_res / ss_tot;
    }
    return coef;
}

Attribution explain_tokens(const TextProbe& f, const std::vector<TokenId>& tokens,
                           std::size_t n_samples, std::uint64_t seed,
                           const ExplainOptions& opts) {
    if (tokens.empty()) throw std::invalid_argument("explain_tokens: empty input");
    if (n_samples < 50) throw std::invalid_argument("explain_tokens: n_samples must be >= 50");

    const std::size_t n = tokens.size();
    const double sigma = 0.25 * std::sqrt(static_cast<double>(n));
    const double sigma_sq = sigma * sigma;

    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::vector<std::vector<double>> features;
    std::vector<double> targets, weights;
    features.reserve(n_samples);
    targets.reserve(n_samples);
    weights.reserve(n_samples);

    std::vector<double> presence(n);
    std::vector<TokenId> kept;
    for (std::size_t s = 0; s < n_samples; ++s) {
        std::size_t n_kept = 0;
        do {
            n_kept = 0;
            kept.clear();
            for (std::size_t i = 0; i < n; ++i) {
                const bool keep = u(rng) >= opts.drop_probability;
                presence[i] = keep ? 1.0 : 0.0;
                if (keep) {
                    kept.push_back(tokens[i]);
                    ++n_kept;
                }
            }
        } while (n_kept == 0);

        // cosine distance between the all-ones vector and the presence vector
        const double cosd =
            1.0 - std::sqrt(static_cast<double>(n_kept) / static_cast<double>(n));
        weights.push_back(std::exp(-(cosd * cosd) / sigma_sq));
        targets.push_back(f(kept));
        features.push_back(presence);
    }

    Attribution attr;
    attr.sample_count = n_samples;
    attr.weights = weighted_ridge_fit(features, targets, weights, opts.ridge_alpha,
                                      &attr.surrogate_fit);
    return attr;
}

Attribution explain_tokens(const StyleClassifier& f, const TextExample& x,
                           std::size_t n_samples, std::uint64_t seed,
                           const ExplainOptions& opts) {
    TextProbe probe = [&f](const std::vector<TokenId>& toks) {
        return static_cast<double>(f.predict(toks)[kClassBiased]);
    };
    return explain_tokens(probe, x.tokens, n_samples, seed, opts);
}

MaskedText mask_attributes(const Attribution& attr, const TextExample& x, double mu) {
    if (attr.weights.size() != x.tokens.size())
        throw std::invalid_argument("mask_attributes: attribution/text misalignment");
    MaskedText out;
    out.original = x;
    out.tokens = x.tokens;
    for (std::size_t i = 0; i < x.tokens.size(); ++i) {
        if (x.tokens[i] < kNumSpecialTokens) continue;
        if (attr.weights[i] > mu) {
            out.tokens[i] = kMaskId;
            out.masked_positions.insert(i);
        }
    }
    return out;
}

}  // namespace debias
