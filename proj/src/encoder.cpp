#include "gestpose/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gestpose/errors.hpp"

namespace gestpose {

namespace {

Encoder::MixerBlock make_block(ParamStore& store, const std::string& prefix, int tokens,
                               int channels, std::mt19937& rng) {
    Encoder::MixerBlock b;
    b.ln_tokens = make_layernorm(store, prefix + ".ln_t", channels);
    b.ln_channels = make_layernorm(store, prefix + ".ln_c", channels);
    float bound = std::sqrt(6.0f / static_cast<float>(2 * tokens));
    b.token_mix = store.create_uniform(prefix + ".mix", {tokens, tokens}, rng, -bound, bound);
    b.channel_mlp = make_mlp2(store, prefix + ".mlp", channels, 2 * channels, channels, rng);
    return b;
}

Tensor run_block(const Encoder::MixerBlock& b, const Tensor& tokens) {
    Tensor x = add(tokens, matmul(b.token_mix, b.ln_tokens(tokens)));
    return add(x, b.channel_mlp(b.ln_channels(x)));
}

// [T, C] tokens (row-major over y, x) -> [C, S, S]
Tensor tokens_to_chw(const Tensor& tokens, int side) {
    int c = tokens.shape()[1];
    return reshape(transpose2d(tokens), {c, side, side});
}

Tensor chw_to_tokens(const Tensor& chw) {
    int c = chw.shape()[0], h = chw.shape()[1], w = chw.shape()[2];
    return transpose2d(reshape(chw, {c, h * w}));
}

}  // namespace

Encoder make_encoder(ParamStore& store, const EncoderConfig& cfg, std::mt19937& rng) {
    if (cfg.image_size % cfg.patch != 0 || (cfg.image_size / cfg.patch) % 2 != 0)
        throw ConfigError("encoder: image_size must be divisible by 2*patch");
    Encoder enc;
    enc.cfg = cfg;
    int s = cfg.image_size / cfg.patch;
    int patch_dim = cfg.patch * cfg.patch * 3;
    enc.patch_embed = make_linear(store, "enc.patch", patch_dim, cfg.c4, rng);
    for (int i = 0; i < cfg.blocks_per_scale; ++i)
        enc.blocks4.push_back(
            make_block(store, "enc.s4.block" + std::to_string(i), s * s, cfg.c4, rng));
    enc.proj45 = make_linear(store, "enc.proj45", cfg.c4, cfg.c5, rng);
    int s2 = s / 2;
    for (int i = 0; i < cfg.blocks_per_scale; ++i)
        enc.blocks5.push_back(
            make_block(store, "enc.s5.block" + std::to_string(i), s2 * s2, cfg.c5, rng));

    // gather map: image [G,G,3] row-major -> [S*S, patch*patch*3]
    auto index = std::make_shared<std::vector<int64_t>>();
    int g = cfg.image_size, p = cfg.patch;
    index->reserve(static_cast<size_t>(s) * s * patch_dim);
    for (int ty = 0; ty < s; ++ty)
        for (int tx = 0; tx < s; ++tx)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int ch = 0; ch < 3; ++ch)
                        index->push_back(
                            (static_cast<int64_t>(ty * p + dy) * g + (tx * p + dx)) * 3 + ch);
    enc.patch_index = index;
    return enc;
}

EncoderOutput Encoder::forward(const Tensor& image_hwc) const {
    int g = cfg.image_size;
    if (image_hwc.shape() != std::vector<int>{g, g, 3})
        throw DimensionError("encoder: expected image [" + std::to_string(g) + "," +
                             std::to_string(g) + ",3]");
    int s = g / cfg.patch;
    int patch_dim = cfg.patch * cfg.patch * 3;
    Tensor patches = gather(image_hwc, patch_index, {s * s, patch_dim});
    Tensor x = patch_embed(patches);  // [S*S, C4]
    for (const auto& b : blocks4) x = run_block(b, x);

    EncoderOutput out;
    out.f4 = tokens_to_chw(x, s);
    Tensor pooled = avg_pool2d(out.f4, 2);  // [C4, S/2, S/2]
    Tensor x5 = proj45(chw_to_tokens(pooled));
    for (const auto& b : blocks5) x5 = run_block(b, x5);
    out.f5 = tokens_to_chw(x5, s / 2);
    out.g = global_avg_pool(out.f5);
    return out;
}

ClassifierHeads make_heads(ParamStore& store, int c5, int n_coarse, int n_fine,
                           std::mt19937& rng) {
    ClassifierHeads h;
    h.coarse = make_linear(store, "heads.coarse", c5, n_coarse, rng);
    h.fine = make_linear(store, "heads.fine", c5, n_fine, rng);
    return h;
}

Stage1Model make_stage1(ParamStore& store, const EncoderConfig& cfg, int n_coarse, int n_fine,
                        unsigned init_seed) {
    std::mt19937 rng(init_seed);
    Stage1Model m;
    m.cfg = cfg;
    m.encoder = make_encoder(store, cfg, rng);
    m.heads = make_heads(store, cfg.c5, n_coarse, n_fine, rng);
    return m;
}

float alpha_schedule(int epoch) {
    if (epoch < 0) throw ContractError("alpha_schedule: negative epoch");
    double a = 0.1 + 0.12 * (epoch / 10);
    return static_cast<float>(std::min(a, 0.5));
}

Tensor pretrain_loss(const Tensor& gamma_coarse, const Tensor& gamma_fine,
                     const std::vector<int>& coarse_labels, const std::vector<int>& fine_labels,
                     float alpha) {
    Tensor lc = cross_entropy_logits(gamma_coarse, coarse_labels);
    Tensor lf = cross_entropy_logits(gamma_fine, fine_labels);
    return add(lc, scale(lf, alpha));
}

namespace {

int argmax_row(const Tensor& logits, int row) {
    int c = logits.shape()[1];
    const auto& d = logits.data();
    int best = 0;
    for (int j = 1; j < c; ++j)
        if (d[row * c + j] > d[row * c + best]) best = j;
    return best;
}

}  // namespace

EpochMetrics pretrain_epoch(Stage1Model& model, ParamStore& store,
                            const std::vector<Sample>& train, float alpha,
                            const AdamConfig& opt, int batch_size, std::mt19937& shuffle_rng) {
    if (train.empty()) throw ContractError("pretrain_epoch: empty dataset");
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochMetrics metrics;
    int n_batches = 0, n_correct_c = 0, n_correct_f = 0, n_seen = 0;
    int g = model.cfg.image_size;
    for (size_t start = 0; start < order.size(); start += batch_size) {
        size_t end = std::min(order.size(), start + batch_size);
        std::vector<Tensor> gc_rows, gf_rows;
        std::vector<int> coarse_labels, fine_labels;
        for (size_t k = start; k < end; ++k) {
            const Sample& s = train[order[k]];
            Tensor img = Tensor::from_data({g, g, 3}, s.image);
            EncoderOutput eo = model.encoder.forward(img);
            Tensor grow = reshape(eo.g, {1, model.cfg.c5});
            gc_rows.push_back(model.heads.coarse(grow));
            gf_rows.push_back(model.heads.fine(grow));
            coarse_labels.push_back(s.coarse);
            fine_labels.push_back(s.fine);
        }
        Tensor gc = gc_rows.size() == 1 ? gc_rows[0] : concat(gc_rows, 0);
        Tensor gf = gf_rows.size() == 1 ? gf_rows[0] : concat(gf_rows, 0);
        Tensor loss = pretrain_loss(gc, gf, coarse_labels, fine_labels, alpha);
        backward(loss);
        metrics.mean_loss += loss.item();
        ++n_batches;
        for (size_t k = 0; k < coarse_labels.size(); ++k) {
            n_correct_c += argmax_row(gc, static_cast<int>(k)) == coarse_labels[k];
            n_correct_f += argmax_row(gf, static_cast<int>(k)) == fine_labels[k];
            ++n_seen;
        }
        detach_graph(loss);
        adam_step(store, opt);
    }
    metrics.mean_loss /= n_batches;
    metrics.coarse_acc = static_cast<float>(n_correct_c) / n_seen;
    metrics.fine_acc = static_cast<float>(n_correct_f) / n_seen;
    return metrics;
}

std::pair<float, float> evaluate_classifier(const Stage1Model& model,
                                            const std::vector<Sample>& samples) {
    NoGradGuard ng;
    int g = model.cfg.image_size;
    int cc = 0, cf = 0;
    for (const auto& s : samples) {
        Tensor img = Tensor::from_data({g, g, 3}, s.image);
        EncoderOutput eo = model.encoder.forward(img);
        Tensor grow = reshape(eo.g, {1, model.cfg.c5});
        Tensor gc = model.heads.coarse(grow);
        Tensor gf = model.heads.fine(grow);
        cc += argmax_row(gc, 0) == s.coarse;
        cf += argmax_row(gf, 0) == s.fine;
    }
    float n = static_cast<float>(samples.size());
    return {cc / n, cf / n};
}

std::vector<std::vector<float>> collect_embeddings(const Stage1Model& model,
                                                   const std::vector<Sample>& samples) {
    NoGradGuard ng;
    int g = model.cfg.image_size;
    std::vector<std::vector<float>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        Tensor img = Tensor::from_data({g, g, 3}, s.image);
        out.push_back(model.encoder.forward(img).g.data());
    }
    return out;
}

}  // namespace gestpose
