#include "wa/model.hpp"

#include <cmath>
#include <stdexcept>

namespace wa {

const Tensor& param(const ParamMap& params, const std::string& name) {
    const auto it = params.find(name);
    if (it == params.end()) throw std::runtime_error("missing parameter: " + name);
    return it->second;
}

ParamMap bind_params(Tape& tape, const ParamMap& params) {
    ParamMap bound;
    for (const auto& [name, tensor] : params) bound.emplace(name, tape.leaf(tensor));
    return bound;
}

std::map<std::string, std::vector<double>> collect_grads(const Tape& tape, const ParamMap& bound) {
    std::map<std::string, std::vector<double>> grads;
    for (const auto& [name, tensor] : bound) grads.emplace(name, tape.grad_of(tensor));
    return grads;
}

double total_abs_difference(const ParamMap& a, const ParamMap& b) {
    if (a.size() != b.size()) throw std::invalid_argument("total_abs_difference: different registries");
    double total = 0.0;
    auto ita = a.begin();
    auto itb = b.begin();
    for (; ita != a.end(); ++ita, ++itb) {
        if (ita->first != itb->first) throw std::invalid_argument("total_abs_difference: name mismatch");
        const auto& va = ita->second.values();
        const auto& vb = itb->second.values();
        if (va.size() != vb.size()) throw std::invalid_argument("total_abs_difference: size mismatch");
        for (std::size_t i = 0; i < va.size(); ++i) total += std::fabs(va[i] - vb[i]);
    }
    return total;
}

ParamMap clone_params(const ParamMap& params) {
    ParamMap out;
    for (const auto& [name, tensor] : params) {
        out.emplace(name, Tensor(tensor.shape(), tensor.values()));
    }
    return out;
}

Tensor init_normal(Rng& rng, const std::vector<int>& shape, double scale) {
    int size = 1;
    for (int d : shape) size *= d;
    std::vector<double> values(static_cast<std::size_t>(size));
    for (auto& v : values) v = rng.normal() * scale;
    return Tensor(shape, std::move(values));
}

Tensor init_zeros(const std::vector<int>& shape) {
    int size = 1;
    for (int d : shape) size *= d;
    return Tensor(shape, std::vector<double>(static_cast<std::size_t>(size), 0.0));
}

void init_linear(ParamMap& params, Rng& rng, const std::string& prefix, int in_dim, int out_dim,
                 bool zero_out) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    params.emplace(prefix + "/w",
                   zero_out ? init_zeros({in_dim, out_dim}) : init_normal(rng, {in_dim, out_dim}, scale));
    params.emplace(prefix + "/b", init_zeros({1, out_dim}));
}

void init_attention(ParamMap& params, Rng& rng, const std::string& prefix, int dim, bool zero_out) {
    params.emplace(prefix + "/ln_g", Tensor({1, dim}, std::vector<double>(static_cast<std::size_t>(dim), 1.0)));
    params.emplace(prefix + "/ln_b", init_zeros({1, dim}));
    init_linear(params, rng, prefix + "/q", dim, dim);
    init_linear(params, rng, prefix + "/k", dim, dim);
    init_linear(params, rng, prefix + "/v", dim, dim);
    init_linear(params, rng, prefix + "/o", dim, dim, zero_out);
}

void init_mlp_block(ParamMap& params, Rng& rng, const std::string& prefix, int dim, bool zero_out) {
    params.emplace(prefix + "/ln_g", Tensor({1, dim}, std::vector<double>(static_cast<std::size_t>(dim), 1.0)));
    params.emplace(prefix + "/ln_b", init_zeros({1, dim}));
    init_linear(params, rng, prefix + "/fc1", dim, 4 * dim);
    init_linear(params, rng, prefix + "/fc2", 4 * dim, dim, zero_out);
}

Tensor linear(const Tensor& x, const ParamMap& params, const std::string& prefix) {
    return add_rowvec(matmul(x, param(params, prefix + "/w")), param(params, prefix + "/b"));
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const ParamMap& params,
                            const std::string& prefix, int heads) {
    const Tensor q = linear(q_in, params, prefix + "/q");
    const Tensor k = linear(kv_in, params, prefix + "/k");
    const Tensor v = linear(kv_in, params, prefix + "/v");
    const int dim = q.shape()[1];
    if (dim % heads != 0) throw std::invalid_argument("attention width not divisible by head count");
    const int hd = dim / heads;
    std::vector<Tensor> headed;
    headed.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        headed.push_back(scaled_dot_attention(slice_cols(q, h * hd, (h + 1) * hd),
                                              slice_cols(k, h * hd, (h + 1) * hd),
                                              slice_cols(v, h * hd, (h + 1) * hd)));
    }
    return linear(concat_cols(headed), params, prefix + "/o");
}

Tensor attention_block(const Tensor& x, const Tensor& kv, const ParamMap& params,
                       const std::string& prefix, int heads, const Tensor* q_extra,
                       const Tensor* kv_extra) {
    Tensor q_in = layer_norm(x, param(params, prefix + "/ln_g"), param(params, prefix + "/ln_b"));
    if (q_extra != nullptr) q_in = add(q_in, *q_extra);
    Tensor kv_in = kv;
    if (kv_extra != nullptr) kv_in = add(kv_in, *kv_extra);
    return add(x, multi_head_attention(q_in, kv_in, params, prefix, heads));
}

Tensor self_attention_block(const Tensor& x, const ParamMap& params, const std::string& prefix,
                            int heads) {
    const Tensor normed = layer_norm(x, param(params, prefix + "/ln_g"), param(params, prefix + "/ln_b"));
    return add(x, multi_head_attention(normed, normed, params, prefix, heads));
}

Tensor mlp_block(const Tensor& x, const ParamMap& params, const std::string& prefix) {
    const Tensor normed = layer_norm(x, param(params, prefix + "/ln_g"), param(params, prefix + "/ln_b"));
    const Tensor hidden = gelu(linear(normed, params, prefix + "/fc1"));
    return add(x, linear(hidden, params, prefix + "/fc2"));
}

Tensor time_embedding_rows(int n, int dim) {
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (int t = 1; t <= n; ++t) rows.push_back(sinusoidal_embedding(t, dim).reshaped({1, dim}));
    return concat_rows(rows);
}

}  // namespace wa
