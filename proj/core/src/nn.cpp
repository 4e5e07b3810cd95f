#include "debias/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace debias {

template <typename Real>
LinearLayer<Real>::LinearLayer(std::size_t in, std::size_t out, Rng& rng, Real init_std)
    : w(in, out), gw(in, out), b(1, out), gb(1, out) {
    init_normal(w, rng, init_std);
}

template <typename Real>
Matrix<Real> LinearLayer<Real>::forward(const Matrix<Real>& x) const {
    if (x.cols() != w.rows()) throw std::invalid_argument("LinearLayer: dim mismatch");
    Matrix<Real> y(x.rows(), w.cols());
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) = b(0, j);
    matmul_acc(x, w, y);
    return y;
}

template <typename Real>
Matrix<Real> LinearLayer<Real>::backward(const Matrix<Real>& x, const Matrix<Real>& dy,
                                         bool accumulate_param_grads) {
    if (accumulate_param_grads) {
        matmul_at_acc(x, dy, gw);
        for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < dy.cols(); ++j) gb(0, j) += dy(i, j);
    }
    Matrix<Real> dx(x.rows(), x.cols());
    matmul_bt_acc(dy, w, dx);
    return dx;
}

template <typename Real>
void LinearLayer<Real>::collect(const std::string& prefix,
                                std::vector<ParamRef<Real>>& out) {
    out.push_back({prefix + ".w", &w, &gw});
    out.push_back({prefix + ".b", &b, &gb});
}

template <typename Real>
void AdamOptimizer<Real>::step(const std::vector<ParamRef<Real>>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].value->size(), Real(0));
            v_[i].assign(params[i].value->size(), Real(0));
        }
    }
    if (m_.size() != params.size())
        throw std::invalid_argument("AdamOptimizer: parameter list changed size");
    ++t_;
    const Real bc1 = Real(1) - static_cast<Real>(std::pow(beta1_, Real(t_)));
    const Real bc2 = Real(1) - static_cast<Real>(std::pow(beta2_, Real(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i].value->data();
        auto& grad = params[i].grad->data();
        if (value.size() != grad.size() || value.size() != m_[i].size())
            throw std::invalid_argument("AdamOptimizer: shape mismatch");
        for (std::size_t j = 0; j < value.size(); ++j) {
            const Real g = grad[j];
            m_[i][j] = beta1_ * m_[i][j] + (Real(1) - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (Real(1) - beta2_) * g * g;
            const Real mhat = m_[i][j] / bc1;
            const Real vhat = v_[i][j] / bc2;
            value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

template struct LinearLayer<float>;
template struct LinearLayer<double>;
template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

}  // namespace debias
