#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "debias/matrix.hpp"

namespace debias {

// Per-token embeddings with per-position validity flags. Positions flagged
// invalid (padding) are ignored by pooling.
template <typename Real>
struct EmbeddingMatrix {
    Matrix<Real> values;
    std::vector<std::uint8_t> valid;  // empty means all positions valid

    bool position_valid(std::size_t i) const {
        return valid.empty() ? true : valid[i] != 0;
    }
};

template <typename Real>
std::vector<Real> softmax_with_temperature(std::span<const Real> logits, Real tau) {
    if (tau <= Real(0)) throw std::invalid_argument("softmax temperature must be > 0");
    if (logits.empty()) throw std::invalid_argument("softmax on empty logits");
    Real mx = logits[0];
    for (Real v : logits) {
        if (!std::isfinite(static_cast<double>(v)))
            throw std::invalid_argument("softmax on non-finite logits");
        if (v > mx) mx = v;
    }
    std::vector<Real> out(logits.size());
    double sum = 0.0;  // double accumulation keeps float rows summing to 1
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - mx) / tau);
        sum += static_cast<double>(out[i]);
    }
    for (auto& v : out) v = static_cast<Real>(static_cast<double>(v) / sum);
    return out;
}

template <typename Real>
std::vector<Real> softmax(std::span<const Real> logits) {
    return softmax_with_temperature(logits, Real(1));
}

// -log p[target]; clamped away from log(0).
template <typename Real>
Real cross_entropy_from_probs(std::span<const Real> probs, std::size_t target) {
    if (target >= probs.size()) throw std::invalid_argument("cross entropy: bad target");
    const Real p = std::max(probs[target], Real(1e-30));
    return -std::log(p);
}

// Numerically stable -log softmax(logits)[target].
template <typename Real>
Real cross_entropy_logits(std::span<const Real> logits, std::size_t target) {
    if (target >= logits.size()) throw std::invalid_argument("cross entropy: bad target");
    Real mx = logits[0];
    for (Real v : logits) mx = std::max(mx, v);
    Real lse = Real(0);
    for (Real v : logits) lse += std::exp(v - mx);
    return std::log(lse) + mx - logits[target];
}

template <typename Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
    Real s = Real(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename Real>
Real norm(std::span<const Real> a) {
    return std::sqrt(dot(a, a));
}

template <typename Real>
Real cosine_similarity(std::span<const Real> a, std::span<const Real> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
    const Real na = norm(a), nb = norm(b);
    if (na == Real(0) || nb == Real(0))
        throw std::invalid_argument("cosine: zero-norm input");
    return dot(a, b) / (na * nb);
}

// Arithmetic mean over valid positions. Throws when every position is masked.
template <typename Real>
std::vector<Real> mean_pool(const EmbeddingMatrix<Real>& emb) {
    const auto& m = emb.values;
    std::vector<Real> out(m.cols(), Real(0));
    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (!emb.position_valid(i)) continue;
        ++n_valid;
        const Real* r = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += r[j];
    }
    if (n_valid == 0) throw std::invalid_argument("mean_pool: no valid positions");
    for (auto& v : out) v /= static_cast<Real>(n_valid);
    return out;
}

template <typename Real>
std::vector<Real> mean_pool(const Matrix<Real>& m) {
    EmbeddingMatrix<Real> e{m, {}};
    return mean_pool(e);
}

}  // namespace debias
