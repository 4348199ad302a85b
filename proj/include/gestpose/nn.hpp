#pragma once

#include <string>
#include <vector>

#include "gestpose/optim.hpp"
#include "gestpose/tensor.hpp"

namespace gestpose {

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
    Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
    int in_dim() const { return weight.shape()[0]; }
    int out_dim() const { return weight.shape()[1]; }
};

Linear make_linear(ParamStore& store, const std::string& prefix, int in, int out,
                   std::mt19937& rng);

struct LayerNormModule {
    Tensor gain, bias;
    Tensor operator()(const Tensor& x) const { return layernorm(x, gain, bias); }
};

LayerNormModule make_layernorm(ParamStore& store, const std::string& prefix, int dim);

// Two-layer MLP with gelu between.
struct Mlp2 {
    Linear fc1, fc2;
    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

Mlp2 make_mlp2(ParamStore& store, const std::string& prefix, int in, int hidden, int out,
               std::mt19937& rng);

// Pre-norm Transformer encoder over a [T, d_model] token matrix. Positional
// encoding is the caller's responsibility.
struct TransformerEncoder {
    int d_model = 0;
    int n_heads = 0;
    struct Layer {
        LayerNormModule ln1, ln2;
        Linear wq, wk, wv, wo;
        Linear ff1, ff2;
    };
    std::vector<Layer> layers;

    Tensor forward(const Tensor& tokens) const;
};

TransformerEncoder make_transformer(ParamStore& store, const std::string& prefix, int d_model,
                                    int n_layers, int n_heads, int d_ff, std::mt19937& rng);

}  // namespace gestpose
