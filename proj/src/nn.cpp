#include "gestpose/nn.hpp"

#include <cmath>

#include "gestpose/errors.hpp"

namespace gestpose {

Linear make_linear(ParamStore& store, const std::string& prefix, int in, int out,
                   std::mt19937& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(in + out));
    Linear l;
    l.weight = store.create_uniform(prefix + ".W", {in, out}, rng, -bound, bound);
    l.bias = store.create_const(prefix + ".b", {out}, 0.0f);
    return l;
}

LayerNormModule make_layernorm(ParamStore& store, const std::string& prefix, int dim) {
    LayerNormModule ln;
    ln.gain = store.create_const(prefix + ".gain", {dim}, 1.0f);
    ln.bias = store.create_const(prefix + ".bias", {dim}, 0.0f);
    return ln;
}

Mlp2 make_mlp2(ParamStore& store, const std::string& prefix, int in, int hidden, int out,
               std::mt19937& rng) {
    Mlp2 m;
    m.fc1 = make_linear(store, prefix + ".fc1", in, hidden, rng);
    m.fc2 = make_linear(store, prefix + ".fc2", hidden, out, rng);
    return m;
}

TransformerEncoder make_transformer(ParamStore& store, const std::string& prefix, int d_model,
                                    int n_layers, int n_heads, int d_ff, std::mt19937& rng) {
    if (d_model % n_heads != 0)
        throw ConfigError("transformer: d_model " + std::to_string(d_model) +
                          " not divisible by " + std::to_string(n_heads) + " heads");
    TransformerEncoder t;
    t.d_model = d_model;
    t.n_heads = n_heads;
    for (int l = 0; l < n_layers; ++l) {
        std::string p = prefix + ".layer" + std::to_string(l);
        TransformerEncoder::Layer layer;
        layer.ln1 = make_layernorm(store, p + ".ln1", d_model);
        layer.ln2 = make_layernorm(store, p + ".ln2", d_model);
        layer.wq = make_linear(store, p + ".wq", d_model, d_model, rng);
        layer.wk = make_linear(store, p + ".wk", d_model, d_model, rng);
        layer.wv = make_linear(store, p + ".wv", d_model, d_model, rng);
        layer.wo = make_linear(store, p + ".wo", d_model, d_model, rng);
        layer.ff1 = make_linear(store, p + ".ff1", d_model, d_ff, rng);
        layer.ff2 = make_linear(store, p + ".ff2", d_ff, d_model, rng);
        t.layers.push_back(std::move(layer));
    }
    return t;
}

Tensor TransformerEncoder::forward(const Tensor& tokens) const {
    Tensor x = tokens;
    int dh = d_model / n_heads;
    float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
    for (const auto& layer : layers) {
        Tensor h = layer.ln1(x);
        Tensor q = layer.wq(h), k = layer.wk(h), v = layer.wv(h);
        std::vector<Tensor> heads;
        heads.reserve(n_heads);
        for (int hd = 0; hd < n_heads; ++hd) {
            Tensor qh = slice(q, 1, hd * dh, dh);
            Tensor kh = slice(k, 1, hd * dh, dh);
            Tensor vh = slice(v, 1, hd * dh, dh);
            Tensor scores = scale(matmul(qh, transpose2d(kh)), att_scale);
            Tensor attn = softmax(scores, 1);
            heads.push_back(matmul(attn, vh));
        }
        Tensor ctx = concat(heads, 1);
        x = add(x, layer.wo(ctx));
        Tensor h2 = layer.ln2(x);
        x = add(x, layer.ff2(gelu(layer.ff1(h2))));
    }
    return x;
}

}  // namespace gestpose
