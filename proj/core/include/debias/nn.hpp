#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "debias/common.hpp"
#include "debias/matrix.hpp"

namespace debias {

// A named trainable array together with its gradient accumulator. Models
// expose their parameters as a stable, ordered list of these references;
// the optimizer, checkpoints and gradient checks all walk that list.
template <typename Real>
struct ParamRef {
    std::string name;
    Matrix<Real>* value = nullptr;
    Matrix<Real>* grad = nullptr;
};

template <typename Real>
void zero_grads(const std::vector<ParamRef<Real>>& params) {
    for (auto& p : params) p.grad->zero();
}

// Checksum over parameter values; used to assert that frozen models stay
// frozen across a training run.
template <typename Real>
std::uint64_t param_checksum(const std::vector<ParamRef<Real>>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params) {
        h = fnv1a(p.name, h);
        h = fnv1a_bytes(p.value->data().data(), p.value->size() * sizeof(Real), h);
    }
    return h;
}

template <typename Real>
struct LinearLayer {
    Matrix<Real> w, gw;  // in x out
    Matrix<Real> b, gb;  // 1 x out

    LinearLayer() = default;
    LinearLayer(std::size_t in, std::size_t out, Rng& rng, Real init_std = Real(0.02));

    std::size_t in_dim() const { return w.rows(); }
    std::size_t out_dim() const { return w.cols(); }

    // y = x w + b, row-wise
    Matrix<Real> forward(const Matrix<Real>& x) const;
    // Accumulates dw/db and returns dx. `x` must be the forward input.
    Matrix<Real> backward(const Matrix<Real>& x, const Matrix<Real>& dy,
                          bool accumulate_param_grads = true);

    void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out);
};

// Adaptive-moment optimizer with bias correction. Moment buffers are keyed
// by position in the parameter list, which is stable per model.
template <typename Real>
class AdamOptimizer {
  public:
    AdamOptimizer(Real lr, Real beta1 = Real(0.9), Real beta2 = Real(0.999),
                  Real eps = Real(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<ParamRef<Real>>& params);

    std::int64_t step_count() const { return t_; }
    Real learning_rate() const { return lr_; }
    void set_learning_rate(Real lr) { lr_ = lr; }

  private:
    Real lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<Real>> m_, v_;
};

// Gaussian init helper used across models.
template <typename Real>
void init_normal(Matrix<Real>& m, Rng& rng, Real stddev) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& x : m.data()) x = static_cast<Real>(dist(rng));
}

}  // namespace debias
