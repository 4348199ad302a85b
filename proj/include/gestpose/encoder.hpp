#pragma once

#include <memory>
#include <vector>

#include "gestpose/gesture_data.hpp"
#include "gestpose/nn.hpp"

namespace gestpose {

struct EncoderConfig {
    int image_size = 16;  // G
    int patch = 2;
    int c4 = 32;          // channels at resolution S = G/patch
    int c5 = 64;          // channels at resolution S/2
    int blocks_per_scale = 2;
};

// F4/F5 feature maps plus the pooled global descriptor g.
struct EncoderOutput {
    Tensor f4;  // [C4, S, S]
    Tensor f5;  // [C5, S/2, S/2]
    Tensor g;   // [C5]
};

// Patchify + residual MLP mixer blocks at two scales; a stand-in producing
// the same {F4, F5, g} surface an HRNet-style backbone would.
struct Encoder {
    EncoderConfig cfg;
    Linear patch_embed;
    struct MixerBlock {
        LayerNormModule ln_tokens, ln_channels;
        Tensor token_mix;  // [T, T]
        Mlp2 channel_mlp;
    };
    std::vector<MixerBlock> blocks4, blocks5;
    Linear proj45;  // c4 -> c5 after pooling
    std::shared_ptr<const std::vector<int64_t>> patch_index;

    EncoderOutput forward(const Tensor& image_hwc) const;  // [G, G, 3] in [0,1]
};

Encoder make_encoder(ParamStore& store, const EncoderConfig& cfg, std::mt19937& rng);

struct ClassifierHeads {
    Linear coarse;  // g -> n_coarse logits
    Linear fine;    // g -> n_fine logits
};

ClassifierHeads make_heads(ParamStore& store, int c5, int n_coarse, int n_fine,
                           std::mt19937& rng);

struct Stage1Model {
    EncoderConfig cfg;
    Encoder encoder;
    ClassifierHeads heads;
};

// Registers parameters under "enc.*" and "heads.*".
Stage1Model make_stage1(ParamStore& store, const EncoderConfig& cfg, int n_coarse, int n_fine,
                        unsigned init_seed);

// alpha = min(0.1 + 0.12 * floor(epoch / 10), 0.5)
float alpha_schedule(int epoch);

// L_cls = L_coarse + alpha * L_fine over batched logits
Tensor pretrain_loss(const Tensor& gamma_coarse, const Tensor& gamma_fine,
                     const std::vector<int>& coarse_labels, const std::vector<int>& fine_labels,
                     float alpha);

struct EpochMetrics {
    float mean_loss = 0;
    float coarse_acc = 0;
    float fine_acc = 0;
};

// One pass of shuffled mini-batch training; returns train metrics.
EpochMetrics pretrain_epoch(Stage1Model& model, ParamStore& store,
                            const std::vector<Sample>& train, float alpha,
                            const AdamConfig& opt, int batch_size, std::mt19937& shuffle_rng);

// Accuracy of the classifier heads over a split (no gradients).
std::pair<float, float> evaluate_classifier(const Stage1Model& model,
                                            const std::vector<Sample>& samples);

// Pooled g embeddings for a split (no gradients), one row per sample.
std::vector<std::vector<float>> collect_embeddings(const Stage1Model& model,
                                                   const std::vector<Sample>& samples);

}  // namespace gestpose
