#pragma once

// Shared model plumbing: the named-parameter registry, seeded
// initializers, and the transformer building blocks (linear layers,
// multi-head attention, pre-norm residual blocks) that the encoder,
// future-feature compressor and trajectory decoder are assembled from.

#include <map>
#include <string>
#include <vector>

#include "wa/rng.hpp"
#include "wa/tensor.hpp"

namespace wa {

using ParamMap = std::map<std::string, Tensor>;

struct ModelConfig {
    int grid_h = 64, grid_w = 64;  // BEV cells
    int patch = 8;                 // patch side p
    int n_rays = 16;               // range-scan resolution
    int c = 64;                    // model width C
    int c_wm = 32;                 // future feature channels C_wm
    int m = 6;                     // trajectory modes M
    int t_f = 8;                   // planning horizon steps T_f
    int t_wm = 8;                  // imagined future frames T_wm
    int n_wm = 4;                  // compression queries per frame N_wm
    int heads = 4;
    int enc_blocks = 2;

    int patches_h() const { return grid_h / patch; }
    int patches_w() const { return grid_w / patch; }
    int n_patches() const { return patches_h() * patches_w(); }
    int n_tokens() const { return n_patches() + 2; }  // + range + ego token
};

// -- registry helpers ------------------------------------------------------

const Tensor& param(const ParamMap& params, const std::string& name);

// Fresh leaf copies of every entry registered on `tape`; the originals keep
// their storage (updates through the copies are visible in both).
ParamMap bind_params(Tape& tape, const ParamMap& params);

// Gradients for every entry after a backward pass.
std::map<std::string, std::vector<double>> collect_grads(const Tape& tape, const ParamMap& bound);

double total_abs_difference(const ParamMap& a, const ParamMap& b);
ParamMap clone_params(const ParamMap& params);

// -- initializers ----------------------------------------------------------

Tensor init_normal(Rng& rng, const std::vector<int>& shape, double scale);
Tensor init_zeros(const std::vector<int>& shape);

void init_linear(ParamMap& params, Rng& rng, const std::string& prefix, int in_dim, int out_dim,
                 bool zero_out = false);
// layer norm + q/k/v/out projections; the output projection may start at
// zero so a freshly attached block is an exact no-op.
void init_attention(ParamMap& params, Rng& rng, const std::string& prefix, int dim,
                    bool zero_out = false);
// layer norm + two-layer MLP (ratio 4)
void init_mlp_block(ParamMap& params, Rng& rng, const std::string& prefix, int dim,
                    bool zero_out = false);

// -- forward pieces --------------------------------------------------------

Tensor linear(const Tensor& x, const ParamMap& params, const std::string& prefix);

// Multi-head attention of q_in rows over kv_in rows (post out-projection,
// no residual). Widths of q_in and kv_in must both equal the model width.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const ParamMap& params,
                            const std::string& prefix, int heads);

// x + Attn(LN(x) [+ q_extra], kv [+ kv_extra]); extras are optional
// additive embeddings with matching shapes.
Tensor attention_block(const Tensor& x, const Tensor& kv, const ParamMap& params,
                       const std::string& prefix, int heads, const Tensor* q_extra = nullptr,
                       const Tensor* kv_extra = nullptr);
Tensor self_attention_block(const Tensor& x, const ParamMap& params, const std::string& prefix,
                            int heads);

// x + W2 gelu(W1 LN(x))
Tensor mlp_block(const Tensor& x, const ParamMap& params, const std::string& prefix);

// rows 1..n stacked sinusoidal time embeddings, dim wide (frame index
// convention: first future frame is t=1)
Tensor time_embedding_rows(int n, int dim);

}  // namespace wa
