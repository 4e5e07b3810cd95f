#include "debias/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace debias {

namespace {

constexpr double kLnEps = 1e-5;

template <typename Real>
Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x / Real(M_SQRT2)));
}

template <typename Real>
Real gelu_grad(Real x) {
    const Real phi = Real(0.5) * (Real(1) + std::erf(x / Real(M_SQRT2)));
    const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
    return phi + x * pdf;
}

// Row-wise softmax over an n x n score block; result overwrites s.
template <typename Real>
void softmax_rows_inplace(Matrix<Real>& s) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
        Real* r = s.row(i);
        Real mx = r[0];
        for (std::size_t j = 1; j < s.cols(); ++j) mx = std::max(mx, r[j]);
        Real sum = Real(0);
        for (std::size_t j = 0; j < s.cols(); ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        for (std::size_t j = 0; j < s.cols(); ++j) r[j] /= sum;
    }
}

template <typename Real>
void copy_head(const Matrix<Real>& src, Matrix<Real>& dst, std::size_t col0) {
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < dst.cols(); ++j) dst(i, j) = src(i, col0 + j);
}

template <typename Real>
void add_head(const Matrix<Real>& src, Matrix<Real>& dst, std::size_t col0) {
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < src.cols(); ++j) dst(i, col0 + j) += src(i, j);
}

}  // namespace

void EncoderConfig::validate() const {
    if (d == 0 || layers == 0 || heads == 0 || ffn_width == 0 || max_len == 0)
        throw std::invalid_argument("encoder config: all sizes must be positive");
    if (d % heads != 0)
        throw std::invalid_argument("encoder config: d must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("encoder config: dropout must be in [0,1)");
}

template <typename Real>
void layer_norm_forward(const Matrix<Real>& x, const LayerNormParams<Real>& p,
                        LnCache<Real>& cache, Matrix<Real>& y) {
    const std::size_t n = x.rows(), d = x.cols();
    cache.xhat = Matrix<Real>(n, d);
    cache.inv_std.assign(n, Real(0));
    y = Matrix<Real>(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = x.row(i);
        Real mu = Real(0);
        for (std::size_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<Real>(d);
        Real var = Real(0);
        for (std::size_t j = 0; j < d; ++j) {
            const Real c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<Real>(d);
        const Real inv = Real(1) / std::sqrt(var + Real(kLnEps));
        cache.inv_std[i] = inv;
        Real* xh = cache.xhat.row(i);
        Real* yi = y.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mu) * inv;
            yi[j] = p.g(0, j) * xh[j] + p.b(0, j);
        }
    }
}

template <typename Real>
Matrix<Real> layer_norm_backward(const Matrix<Real>& dy, const LnCache<Real>& cache,
                                 LayerNormParams<Real>& p, bool accumulate_param_grads) {
    const std::size_t n = dy.rows(), d = dy.cols();
    Matrix<Real> dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const Real* dyi = dy.row(i);
        const Real* xh = cache.xhat.row(i);
        Real m1 = Real(0), m2 = Real(0);
        for (std::size_t j = 0; j < d; ++j) {
            const Real dxh = dyi[j] * p.g(0, j);
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= static_cast<Real>(d);
        m2 /= static_cast<Real>(d);
        Real* dxi = dx.row(i);
        const Real inv = cache.inv_std[i];
        for (std::size_t j = 0; j < d; ++j) {
            const Real dxh = dyi[j] * p.g(0, j);
            dxi[j] = inv * (dxh - m1 - xh[j] * m2);
        }
        if (accumulate_param_grads) {
            for (std::size_t j = 0; j < d; ++j) {
                p.gg(0, j) += dyi[j] * xh[j];
                p.gb(0, j) += dyi[j];
            }
        }
    }
    return dx;
}

template <typename Real>
TransformerEncoder<Real>::TransformerEncoder(const EncoderConfig& cfg,
                                             std::size_t vocab_size,
                                             std::uint64_t init_seed)
    : cfg_(cfg), vocab_size_(vocab_size) {
    cfg_.validate();
    if (vocab_size_ <= static_cast<std::size_t>(kNumSpecialTokens))
        throw std::invalid_argument("encoder: vocabulary too small");
    Rng rng(init_seed);
    const Real std02 = Real(0.02);
    tok_emb_ = Matrix<Real>(vocab_size_, cfg_.d);
    g_tok_emb_ = Matrix<Real>(vocab_size_, cfg_.d);
    pos_emb_ = Matrix<Real>(cfg_.max_len, cfg_.d);
    g_pos_emb_ = Matrix<Real>(cfg_.max_len, cfg_.d);
    init_normal(tok_emb_, rng, std02);
    init_normal(pos_emb_, rng, std02);

    auto make_ln = [&](LayerNormParams<Real>& ln) {
        ln.g = Matrix<Real>(1, cfg_.d, Real(1));
        ln.gg = Matrix<Real>(1, cfg_.d);
        ln.b = Matrix<Real>(1, cfg_.d);
        ln.gb = Matrix<Real>(1, cfg_.d);
    };
    layers_.resize(cfg_.layers);
    for (auto& l : layers_) {
        make_ln(l.ln1);
        make_ln(l.ln2);
        l.wq = LinearLayer<Real>(cfg_.d, cfg_.d, rng, std02);
        l.wk = LinearLayer<Real>(cfg_.d, cfg_.d, rng, std02);
        l.wv = LinearLayer<Real>(cfg_.d, cfg_.d, rng, std02);
        l.wo = LinearLayer<Real>(cfg_.d, cfg_.d, rng, std02);
        l.ffn1 = LinearLayer<Real>(cfg_.d, cfg_.ffn_width, rng, std02);
        l.ffn2 = LinearLayer<Real>(cfg_.ffn_width, cfg_.d, rng, std02);
    }
    make_ln(final_ln_);
}

template <typename Real>
void TransformerEncoder<Real>::check_tokens(std::span<const TokenId> tokens) const {
    if (tokens.empty()) throw std::invalid_argument("encoder: empty token sequence");
    if (tokens.size() > cfg_.max_len)
        throw std::invalid_argument("encoder: sequence longer than max_len");
    for (TokenId t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_)
            throw std::invalid_argument("encoder: token id out of range");
}

template <typename Real>
Matrix<Real> TransformerEncoder<Real>::embed_hard(std::span<const TokenId> tokens) const {
    check_tokens(tokens);
    Matrix<Real> x(tokens.size(), cfg_.d);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Real* e = tok_emb_.row(static_cast<std::size_t>(tokens[i]));
        const Real* p = pos_emb_.row(i);
        Real* xi = x.row(i);
        for (std::size_t j = 0; j < cfg_.d; ++j) xi[j] = e[j] + p[j];
    }
    return x;
}

template <typename Real>
Matrix<Real> TransformerEncoder<Real>::embed_mixed(
    std::span<const TokenId> tokens,
    const std::map<std::size_t, std::vector<Real>>& soft_rows) const {
    check_tokens(tokens);
    Matrix<Real> x(tokens.size(), cfg_.d);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        Real* xi = x.row(i);
        auto it = soft_rows.find(i);
        if (it == soft_rows.end()) {
            const Real* e = tok_emb_.row(static_cast<std::size_t>(tokens[i]));
            for (std::size_t j = 0; j < cfg_.d; ++j) xi[j] = e[j];
        } else {
            const auto& p = it->second;
            if (p.size() != vocab_size_)
                throw std::invalid_argument("soft row length != vocabulary size");
            for (std::size_t j = 0; j < cfg_.d; ++j) xi[j] = Real(0);
            for (std::size_t v = 0; v < vocab_size_; ++v) {
                const Real pv = p[v];
                if (pv == Real(0)) continue;
                const Real* e = tok_emb_.row(v);
                for (std::size_t j = 0; j < cfg_.d; ++j) xi[j] += pv * e[j];
            }
        }
        const Real* pe = pos_emb_.row(i);
        for (std::size_t j = 0; j < cfg_.d; ++j) xi[j] += pe[j];
    }
    return x;
}

template <typename Real>
Matrix<Real> TransformerEncoder<Real>::make_dropout_mask(std::size_t rows,
                                                         std::size_t cols,
                                                         Rng& rng) const {
    Matrix<Real> m(rows, cols);
    const Real keep = Real(1) - static_cast<Real>(cfg_.dropout);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : m.data()) v = (u(rng) < static_cast<double>(keep)) ? Real(1) / keep : Real(0);
    return m;
}

template <typename Real>
Matrix<Real> TransformerEncoder<Real>::forward_from(const Matrix<Real>& x0,
                                                    EncoderActivations<Real>& acts,
                                                    bool train_mode, Rng* rng) const {
    if (x0.cols() != cfg_.d) throw std::invalid_argument("encoder: input width != d");
    const std::size_t n = x0.rows();
    const std::size_t H = cfg_.heads, dh = cfg_.d / H;
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    const bool use_dropout = train_mode && cfg_.dropout > 0.0;
    if (use_dropout && rng == nullptr)
        throw std::invalid_argument("encoder: training forward needs an rng");

    acts.train_mode = use_dropout;
    acts.x0 = x0;
    if (use_dropout) {
        acts.drop_emb = make_dropout_mask(n, cfg_.d, *rng);
        for (std::size_t i = 0; i < acts.x0.size(); ++i)
            acts.x0.data()[i] *= acts.drop_emb.data()[i];
    }

    Matrix<Real> x = acts.x0;
    acts.layers.assign(cfg_.layers, {});
    for (std::size_t li = 0; li < cfg_.layers; ++li) {
        const Layer& L = layers_[li];
        auto& A = acts.layers[li];
        A.x_in = x;

        layer_norm_forward(x, L.ln1, A.ln1, A.u);
        A.q = L.wq.forward(A.u);
        A.k = L.wk.forward(A.u);
        A.v = L.wv.forward(A.u);

        A.attn = Matrix<Real>(H * n, n);
        A.ocat = Matrix<Real>(n, cfg_.d);
        Matrix<Real> qh(n, dh), kh(n, dh), vh(n, dh);
        for (std::size_t h = 0; h < H; ++h) {
            copy_head(A.q, qh, h * dh);
            copy_head(A.k, kh, h * dh);
            copy_head(A.v, vh, h * dh);
            Matrix<Real> s(n, n);
            matmul_bt_acc(qh, kh, s);
            for (auto& val : s.data()) val *= scale;
            softmax_rows_inplace(s);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) A.attn(h * n + i, j) = s(i, j);
            Matrix<Real> oh(n, dh);
            matmul_acc(s, vh, oh);
            add_head(oh, A.ocat, h * dh);
        }
        Matrix<Real> y = L.wo.forward(A.ocat);
        if (use_dropout) {
            A.drop_attn = make_dropout_mask(n, cfg_.d, *rng);
            for (std::size_t i = 0; i < y.size(); ++i)
                y.data()[i] *= A.drop_attn.data()[i];
        }
        A.z1 = Matrix<Real>(n, cfg_.d);
        for (std::size_t i = 0; i < A.z1.size(); ++i)
            A.z1.data()[i] = x.data()[i] + y.data()[i];

        layer_norm_forward(A.z1, L.ln2, A.ln2, A.u2);
        A.t = L.ffn1.forward(A.u2);
        A.g = Matrix<Real>(n, cfg_.ffn_width);
        for (std::size_t i = 0; i < A.t.size(); ++i) A.g.data()[i] = gelu(A.t.data()[i]);
        Matrix<Real> f = L.ffn2.forward(A.g);
        if (use_dropout) {
            A.drop_ffn = make_dropout_mask(n, cfg_.d, *rng);
            for (std::size_t i = 0; i < f.size(); ++i)
                f.data()[i] *= A.drop_ffn.data()[i];
        }
        Matrix<Real> z2(n, cfg_.d);
        for (std::size_t i = 0; i < z2.size(); ++i)
            z2.data()[i] = A.z1.data()[i] + f.data()[i];
        x = std::move(z2);
    }
    acts.final_in = x;
    Matrix<Real> out;
    layer_norm_forward(x, final_ln_, acts.final_ln, out);
    return out;
}

template <typename Real>
Matrix<Real> TransformerEncoder<Real>::encode_hard(std::span<const TokenId> tokens,
                                                   EncoderActivations<Real>& acts,
                                                   bool train_mode, Rng* rng) const {
    return forward_from(embed_hard(tokens), acts, train_mode, rng);
}

template <typename Real>
Matrix<Real> TransformerEncoder<Real>::backward(const EncoderActivations<Real>& acts,
                                                const Matrix<Real>& d_out,
                                                bool accumulate_param_grads) {
    const std::size_t n = d_out.rows();
    const std::size_t H = cfg_.heads, dh = cfg_.d / H;
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

    Matrix<Real> dx =
        layer_norm_backward(d_out, acts.final_ln, final_ln_, accumulate_param_grads);

    for (std::size_t li = cfg_.layers; li-- > 0;) {
        Layer& L = layers_[li];
        const auto& A = acts.layers[li];

        // x_out = z1 + dropout(ffn2(gelu(ffn1(ln2(z1)))))
        Matrix<Real> df = dx;
        if (acts.train_mode)
            for (std::size_t i = 0; i < df.size(); ++i)
                df.data()[i] *= A.drop_ffn.data()[i];
        Matrix<Real> dg = L.ffn2.backward(A.g, df, accumulate_param_grads);
        Matrix<Real> dt(n, cfg_.ffn_width);
        for (std::size_t i = 0; i < dt.size(); ++i)
            dt.data()[i] = dg.data()[i] * gelu_grad(A.t.data()[i]);
        Matrix<Real> du2 = L.ffn1.backward(A.u2, dt, accumulate_param_grads);
        Matrix<Real> dz1 =
            layer_norm_backward(du2, A.ln2, L.ln2, accumulate_param_grads);
        for (std::size_t i = 0; i < dz1.size(); ++i) dz1.data()[i] += dx.data()[i];

        // z1 = x_in + dropout(wo(attention(ln1(x_in))))
        Matrix<Real> dy = dz1;
        if (acts.train_mode)
            for (std::size_t i = 0; i < dy.size(); ++i)
                dy.data()[i] *= A.drop_attn.data()[i];
        Matrix<Real> docat = L.wo.backward(A.ocat, dy, accumulate_param_grads);

        Matrix<Real> dq(n, cfg_.d), dk(n, cfg_.d), dv(n, cfg_.d);
        Matrix<Real> qh(n, dh), kh(n, dh), vh(n, dh), doh(n, dh);
        for (std::size_t h = 0; h < H; ++h) {
            copy_head(acts.layers[li].q, qh, h * dh);
            copy_head(acts.layers[li].k, kh, h * dh);
            copy_head(acts.layers[li].v, vh, h * dh);
            copy_head(docat, doh, h * dh);
            Matrix<Real> a(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) a(i, j) = A.attn(h * n + i, j);

            Matrix<Real> da(n, n);
            matmul_bt_acc(doh, vh, da);
            Matrix<Real> dvh(n, dh);
            matmul_at_acc(a, doh, dvh);

            // softmax backward, row-wise
            Matrix<Real> ds(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                Real srow = Real(0);
                for (std::size_t j = 0; j < n; ++j) srow += da(i, j) * a(i, j);
                for (std::size_t j = 0; j < n; ++j)
                    ds(i, j) = a(i, j) * (da(i, j) - srow) * scale;
            }
            Matrix<Real> dqh(n, dh), dkh(n, dh);
            matmul_acc(ds, kh, dqh);
            matmul_at_acc(ds, qh, dkh);
            add_head(dqh, dq, h * dh);
            add_head(dkh, dk, h * dh);
            add_head(dvh, dv, h * dh);
        }
        Matrix<Real> du = L.wq.backward(A.u, dq, accumulate_param_grads);
        Matrix<Real> duk = L.wk.backward(A.u, dk, accumulate_param_grads);
        Matrix<Real> duv = L.wv.backward(A.u, dv, accumulate_param_grads);
        for (std::size_t i = 0; i < du.size(); ++i)
            du.data()[i] += duk.data()[i] + duv.data()[i];
        Matrix<Real> dx_in =
            layer_norm_backward(du, A.ln1, L.ln1, accumulate_param_grads);
        for (std::size_t i = 0; i < dx_in.size(); ++i) dx_in.data()[i] += dz1.data()[i];
        dx = std::move(dx_in);
    }
    if (acts.train_mode)
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx.data()[i] *= acts.drop_emb.data()[i];
    return dx;
}

template <typename Real>
void TransformerEncoder<Real>::backward_embed_hard(std::span<const TokenId> tokens,
                                                   const Matrix<Real>& d_x0) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        Real* ge = g_tok_emb_.row(static_cast<std::size_t>(tokens[i]));
        Real* gp = g_pos_emb_.row(i);
        const Real* dxi = d_x0.row(i);
        for (std::size_t j = 0; j < cfg_.d; ++j) {
            ge[j] += dxi[j];
            gp[j] += dxi[j];
        }
    }
}

template <typename Real>
void TransformerEncoder<Real>::backward_embed_mixed(
    std::span<const TokenId> tokens,
    const std::map<std::size_t, std::vector<Real>>& soft_rows, const Matrix<Real>& d_x0,
    std::map<std::size_t, std::vector<Real>>* d_soft_rows,
    bool accumulate_param_grads) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Real* dxi = d_x0.row(i);
        Real* gp = g_pos_emb_.row(i);
        if (accumulate_param_grads)
            for (std::size_t j = 0; j < cfg_.d; ++j) gp[j] += dxi[j];
        auto it = soft_rows.find(i);
        if (it == soft_rows.end()) {
            if (accumulate_param_grads) {
                Real* ge = g_tok_emb_.row(static_cast<std::size_t>(tokens[i]));
                for (std::size_t j = 0; j < cfg_.d; ++j) ge[j] += dxi[j];
            }
            continue;
        }
        const auto& p = it->second;
        if (accumulate_param_grads) {
            for (std::size_t v = 0; v < vocab_size_; ++v) {
                const Real pv = p[v];
                if (pv == Real(0)) continue;
                Real* ge = g_tok_emb_.row(v);
                for (std::size_t j = 0; j < cfg_.d; ++j) ge[j] += pv * dxi[j];
            }
        }
        if (d_soft_rows) {
            auto& dp = (*d_soft_rows)[i];
            dp.assign(vocab_size_, Real(0));
            for (std::size_t v = 0; v < vocab_size_; ++v) {
                const Real* e = tok_emb_.row(v);
                Real s = Real(0);
                for (std::size_t j = 0; j < cfg_.d; ++j) s += e[j] * dxi[j];
                dp[v] = s;
            }
        }
    }
}

template <typename Real>
std::vector<ParamRef<Real>> TransformerEncoder<Real>::params() {
    std::vector<ParamRef<Real>> out;
    out.push_back({"tok_emb", &tok_emb_, &g_tok_emb_});
    out.push_back({"pos_emb", &pos_emb_, &g_pos_emb_});
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        auto& L = layers_[li];
        const std::string p = "layer" + std::to_string(li);
        out.push_back({p + ".ln1.g", &L.ln1.g, &L.ln1.gg});
        out.push_back({p + ".ln1.b", &L.ln1.b, &L.ln1.gb});
        L.wq.collect(p + ".attn.q", out);
        L.wk.collect(p + ".attn.k", out);
        L.wv.collect(p + ".attn.v", out);
        L.wo.collect(p + ".attn.o", out);
        out.push_back({p + ".ln2.g", &L.ln2.g, &L.ln2.gg});
        out.push_back({p + ".ln2.b", &L.ln2.b, &L.ln2.gb});
        L.ffn1.collect(p + ".ffn.1", out);
        L.ffn2.collect(p + ".ffn.2", out);
    }
    out.push_back({"final_ln.g", &final_ln_.g, &final_ln_.gg});
    out.push_back({"final_ln.b", &final_ln_.b, &final_ln_.gb});
    return out;
}

template <typename Real>
void TransformerEncoder<Real>::zero_grads() {
    auto ps = params();
    debias::zero_grads(ps);
}

template <typename Real>
std::uint64_t TransformerEncoder<Real>::checksum() {
    auto ps = params();
    return param_checksum(ps);
}

template void layer_norm_forward<float>(const Matrix<float>&, const LayerNormParams<float>&,
                                        LnCache<float>&, Matrix<float>&);
template void layer_norm_forward<double>(const Matrix<double>&,
                                         const LayerNormParams<double>&, LnCache<double>&,
                                         Matrix<double>&);
template Matrix<float> layer_norm_backward<float>(const Matrix<float>&,
                                                  const LnCache<float>&,
                                                  LayerNormParams<float>&, bool);
template Matrix<double> layer_norm_backward<double>(const Matrix<double>&,
                                                    const LnCache<double>&,
                                                    LayerNormParams<double>&, bool);
template class TransformerEncoder<float>;
template class TransformerEncoder<double>;

}  // namespace debias
