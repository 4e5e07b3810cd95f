#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "debias/common.hpp"
#include "debias/corpus.hpp"
#include "debias/matrix.hpp"
#include "debias/nn.hpp"

namespace debias {

struct EncoderConfig {
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_width = 256;  // 4*d by convention
    std::size_t max_len = 40;
    double dropout = 0.1;

    void validate() const;
};

template <typename Real>
struct LayerNormParams {
    Matrix<Real> g, gg;  // 1 x d
    Matrix<Real> b, gb;  // 1 x d
};

template <typename Real>
struct LnCache {
    Matrix<Real> xhat;
    std::vector<Real> inv_std;
};

template <typename Real>
struct LayerActivations {
    Matrix<Real> x_in, u, q, k, v, attn, ocat, z1, u2, t, g;
    Matrix<Real> drop_attn, drop_ffn;
    LnCache<Real> ln1, ln2;
};

template <typename Real>
struct EncoderActivations {
    Matrix<Real> x0;        // layer-0 input (embeddings after dropout)
    Matrix<Real> drop_emb;
    std::vector<LayerActivations<Real>> layers;
    Matrix<Real> final_in;  // residual stream entering the final layer norm
    LnCache<Real> final_ln;
    bool train_mode = false;
};

// Pre-norm transformer encoder with learned positional embeddings and a
// GELU feed-forward block. Forward caches everything backward needs;
// backward accumulates parameter gradients and returns the gradient with
// respect to the layer-0 input embeddings.
template <typename Real>
class TransformerEncoder {
  public:
    TransformerEncoder() = default;
    TransformerEncoder(const EncoderConfig& cfg, std::size_t vocab_size,
                       std::uint64_t init_seed);

    const EncoderConfig& config() const { return cfg_; }
    std::size_t vocab_size() const { return vocab_size_; }

    // Token and positional lookup: x0[i] = tok_emb[id_i] + pos_emb[i].
    Matrix<Real> embed_hard(std::span<const TokenId> tokens) const;

    // Expected embeddings for a mixed hard/soft input: positions present in
    // soft_rows read sum_v p_v * tok_emb[v] instead of a single row.
    Matrix<Real> embed_mixed(std::span<const TokenId> tokens,
                             const std::map<std::size_t, std::vector<Real>>& soft_rows) const;

    // Runs the layer stack on prepared input embeddings. When train_mode is
    // set, dropout is applied using rng and the masks are cached in acts.
    Matrix<Real> forward_from(const Matrix<Real>& x0, EncoderActivations<Real>& acts,
                              bool train_mode = false, Rng* rng = nullptr) const;

    Matrix<Real> encode_hard(std::span<const TokenId> tokens,
                             EncoderActivations<Real>& acts, bool train_mode = false,
                             Rng* rng = nullptr) const;

    // d_out is the gradient w.r.t. the final hidden states. Returns the
    // gradient w.r.t. the layer-0 input embeddings. Parameter gradients are
    // accumulated unless the model is being used frozen.
    Matrix<Real> backward(const EncoderActivations<Real>& acts, const Matrix<Real>& d_out,
                          bool accumulate_param_grads = true);

    // Embedding-table gradients for a hard forward.
    void backward_embed_hard(std::span<const TokenId> tokens, const Matrix<Real>& d_x0);

    // Embedding-table gradients for a mixed forward; when d_soft_rows is
    // non-null it receives the gradient w.r.t. each soft row.
    void backward_embed_mixed(std::span<const TokenId> tokens,
                              const std::map<std::size_t, std::vector<Real>>& soft_rows,
                              const Matrix<Real>& d_x0,
                              std::map<std::size_t, std::vector<Real>>* d_soft_rows,
                              bool accumulate_param_grads = true);

    std::vector<ParamRef<Real>> params();
    void zero_grads();
    std::uint64_t checksum();

    Matrix<Real>& token_embedding() { return tok_emb_; }
    const Matrix<Real>& token_embedding() const { return tok_emb_; }

  private:
    struct Layer {
        LayerNormParams<Real> ln1, ln2;
        LinearLayer<Real> wq, wk, wv, wo;
        LinearLayer<Real> ffn1, ffn2;
    };

    void check_tokens(std::span<const TokenId> tokens) const;
    Matrix<Real> make_dropout_mask(std::size_t rows, std::size_t cols, Rng& rng) const;

    EncoderConfig cfg_;
    std::size_t vocab_size_ = 0;
    Matrix<Real> tok_emb_, g_tok_emb_;
    Matrix<Real> pos_emb_, g_pos_emb_;
    std::vector<Layer> layers_;
    LayerNormParams<Real> final_ln_;
};

// Row-wise layer norm helpers shared with the tests.
template <typename Real>
void layer_norm_forward(const Matrix<Real>& x, const LayerNormParams<Real>& p,
                        LnCache<Real>& cache, Matrix<Real>& y);
template <typename Real>
Matrix<Real> layer_norm_backward(const Matrix<Real>& dy, const LnCache<Real>& cache,
                                 LayerNormParams<Real>& p, bool accumulate_param_grads);

}  // namespace debias
