#pragma once

#include <memory>

#include "gestpose/encoder.hpp"
#include "gestpose/hand_model.hpp"
#include "gestpose/nn.hpp"

namespace gestpose {

struct PipelineConfig {
    int d_model = 128;         // paper-scale preset: 1024
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int volume_depth = 8;      // D; volume xy resolution is pinned to the
                               // fused feature map extent (16^3 at paper scale)
    float softargmax_scale = 1.0f;
    float gate_init = -4.0f;   // sigma(gate) < 0.02 at init
    int head_hidden = 256;     // mano regression heads
};

// Softmax-normalized expectation of voxel indices; volume [D,H,W] -> [3]
// ordered (x, y, z), differentiable, outputs inside the index box.
Tensor soft_argmax_3d(const Tensor& volume_dhw, float scale);

// Batched form over per-joint rows [N, D*H*W] -> [N, 3].
Tensor soft_argmax_rows(const Tensor& volumes, int depth, int height, int width, float scale);

struct ForwardOut {
    Tensor g;             // [C5]
    Tensor gamma_coarse;  // [1, n_coarse]
    Tensor gamma_fine;    // [1, n_fine]
    Tensor xyz_native;    // [J,3] volume-native coords (x,y in [0,S'-1], z in [0,D-1])
    Tensor xyz_25d;       // [J,3] grid coords, same convention as Sample::gt_25d
    Tensor joints_cam;    // [J,3] wrist-relative mm
    Tensor theta;         // [16,6]
    Tensor beta;          // [10]
    Tensor mano_joints;   // [21,3] mm
    Tensor vertices;      // [V,3] mm, only when requested
    Tensor u_tokens;      // [J,d_model] sampled per-joint tokens (U^T)
    Tensor u_refined;     // [J,d_model]
};

struct Stage2Model {
    PipelineConfig cfg;
    EncoderConfig enc_cfg;
    int n_coarse = 0, n_fine = 0;
    int fuse_side = 0;  // S'

    Stage1Model stage1;

    Linear proj4, proj5;      // multi-scale fusion projections
    Tensor pos_global;        // [S'^2, d_model]
    TransformerEncoder global_tf;

    Linear volume_head;       // d_model -> J * D per spatial cell
    std::shared_ptr<const std::vector<int64_t>> volume_index;  // cell-major -> joint-major
    Tensor coord_grid;        // [D*S'*S', 3] voxel coordinates (x,y,z)

    Mlp2 phi_coarse, phi_fine;
    Tensor type_coarse, type_fine;  // [1, d_model]
    Tensor gate_coarse, gate_fine;  // [1]

    Linear token_proj;        // W in Q = U^T W + E_pos
    Tensor pos_joint;         // [J, d_model]
    TransformerEncoder fuse_tf;
    Linear post;              // per-token linear (the 1x1 convolution)

    Mlp2 pose_head;           // J*d_model -> hidden -> 96
    Mlp2 shape_head;          // J*d_model -> hidden -> 10

    bool guidance_pinned_off = false;  // pins both gates at -20
};

// Registers stage-1 parameters under "enc.*"/"heads.*" and pipeline
// parameters under "s2.*" so a stage-1 checkpoint loads by name.
Stage2Model make_stage2(ParamStore& store, const EncoderConfig& enc_cfg,
                        const PipelineConfig& cfg, int n_coarse, int n_fine,
                        unsigned init_seed);

// Gate value at or below this is treated as exactly off: the guidance token
// becomes a hard zero with no dependence on (and no gradient into) the
// gesture logits, making the ablation switch exact.
constexpr float kGateHardOff = -20.0f;

// c = sigma(s) * (e + t); exact zero when s <= kGateHardOff.
Tensor apply_guidance_gate(const Tensor& gate, const Tensor& embedding_plus_type);

struct GuidanceTokens {
    Tensor coarse, fine;  // [1, d_model] each
};

GuidanceTokens build_guidance_tokens(const Stage2Model& m, const Tensor& gamma_coarse,
                                     const Tensor& gamma_fine);

// Multi-scale fusion: project both maps to d_model/2 channels at the F5
// resolution (F4 average-pooled down) and concatenate along channels.
Tensor fuse_multiscale(const Stage2Model& m, const Tensor& f4, const Tensor& f5);

// Flatten to tokens, run the position-encoded encoder, reshape back.
Tensor global_token_transform(const Stage2Model& m, const Tensor& fused);

// Per-joint tokens from F' at continuous (x,y); returns rows [J, d_model].
Tensor sample_joint_tokens(const Stage2Model& m, const Tensor& f_prime,
                           const Tensor& coords_xy);

// Q = proj(U) + E_pos; S = [Q; c_coarse; c_fine]; keep first J outputs;
// U + Post(O) residual.
Tensor fuse_transformer(const Stage2Model& m, const Tensor& u_rows,
                        const GuidanceTokens& guidance);

struct ManoParams {
    Tensor theta;  // [16,6]
    Tensor beta;   // [10]
};

ManoParams regress_mano(const Stage2Model& m, const Tensor& u_refined);

ForwardOut full_forward(const Stage2Model& m, const Tensor& image_hwc,
                        const KinematicTree& tree, const CameraConvention& conv,
                        bool want_vertices = false);

}  // namespace gestpose
