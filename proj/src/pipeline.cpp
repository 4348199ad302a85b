#include "gestpose/pipeline.hpp"

#include <cmath>

#include "gestpose/errors.hpp"

namespace gestpose {

Tensor soft_argmax_rows(const Tensor& volumes, int depth, int height, int width, float scale) {
    int64_t vox = static_cast<int64_t>(depth) * height * width;
    if (volumes.rank() != 2 || volumes.shape()[1] != vox)
        throw DimensionError("soft_argmax_rows: rows must hold D*H*W voxels");
    for (float v : volumes.data())
        if (!std::isfinite(v)) throw NumericError("soft_argmax: non-finite volume");
    std::vector<float> grid(static_cast<size_t>(vox) * 3);
    int64_t i = 0;
    for (int z = 0; z < depth; ++z)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                grid[i * 3 + 0] = static_cast<float>(x);
                grid[i * 3 + 1] = static_cast<float>(y);
                grid[i * 3 + 2] = static_cast<float>(z);
                ++i;
            }
    Tensor logits = scale == 1.0f ? volumes : gestpose::scale(volumes, scale);
    Tensor probs = softmax(logits, 1);
    return matmul(probs, Tensor::from_data({static_cast<int>(vox), 3}, std::move(grid)));
}

Tensor soft_argmax_3d(const Tensor& volume_dhw, float scale) {
    if (volume_dhw.rank() != 3) throw DimensionError("soft_argmax_3d: expected [D,H,W]");
    int d = volume_dhw.shape()[0], h = volume_dhw.shape()[1], w = volume_dhw.shape()[2];
    Tensor rows = reshape(volume_dhw, {1, d * h * w});
    return reshape(soft_argmax_rows(rows, d, h, w, scale), {3});
}

Stage2Model make_stage2(ParamStore& store, const EncoderConfig& enc_cfg,
                        const PipelineConfig& cfg, int n_coarse, int n_fine,
                        unsigned init_seed) {
    if (cfg.d_model % 2 != 0) throw ConfigError("pipeline: d_model must be even");
    Stage2Model m;
    m.cfg = cfg;
    m.enc_cfg = enc_cfg;
    m.n_coarse = n_coarse;
    m.n_fine = n_fine;
    m.stage1 = make_stage1(store, enc_cfg, n_coarse, n_fine, init_seed);

    std::mt19937 rng(init_seed ^ 0x5a17u);
    int sp = enc_cfg.image_size / enc_cfg.patch / 2;  // F5 resolution = S'
    m.fuse_side = sp;
    int d = cfg.d_model;
    m.proj4 = make_linear(store, "s2.fuse.proj4", enc_cfg.c4, d / 2, rng);
    m.proj5 = make_linear(store, "s2.fuse.proj5", enc_cfg.c5, d / 2, rng);
    m.pos_global = store.create("s2.global.pos", {sp * sp, d}, rng, 0.02f);
    m.global_tf = make_transformer(store, "s2.global.tf", d, cfg.n_layers, cfg.n_heads,
                                   cfg.d_ff, rng);

    int jd = kNumJoints * cfg.volume_depth;
    m.volume_head = make_linear(store, "s2.volume.head", d, jd, rng);
    // cell-major head output [S'^2, J*D] -> joint-major volume rows [J, D*S'*S']
    auto index = std::make_shared<std::vector<int64_t>>();
    index->reserve(static_cast<size_t>(kNumJoints) * cfg.volume_depth * sp * sp);
    for (int j = 0; j < kNumJoints; ++j)
        for (int z = 0; z < cfg.volume_depth; ++z)
            for (int y = 0; y < sp; ++y)
                for (int x = 0; x < sp; ++x)
                    index->push_back(static_cast<int64_t>(y * sp + x) * jd + j * cfg.volume_depth +
                                     z);
    m.volume_index = index;

    m.phi_coarse = make_mlp2(store, "s2.guide.phi_coarse", n_coarse, d, d, rng);
    m.phi_fine = make_mlp2(store, "s2.guide.phi_fine", n_fine, d, d, rng);
    m.type_coarse = store.create("s2.guide.type_coarse", {1, d}, rng, 0.02f);
    m.type_fine = store.create("s2.guide.type_fine", {1, d}, rng, 0.02f);
    m.gate_coarse = store.create_const("s2.guide.gate_coarse", {1}, cfg.gate_init);
    m.gate_fine = store.create_const("s2.guide.gate_fine", {1}, cfg.gate_init);

    m.token_proj = make_linear(store, "s2.fusetf.proj", d, d, rng);
    m.pos_joint = store.create("s2.fusetf.pos", {kNumJoints, d}, rng, 0.02f);
    m.fuse_tf = make_transformer(store, "s2.fusetf.tf", d, cfg.n_layers, cfg.n_heads, cfg.d_ff,
                                 rng);
    m.post = make_linear(store, "s2.fusetf.post", d, d, rng);

    int flat = kNumJoints * d;
    m.pose_head = make_mlp2(store, "s2.head.pose", flat, cfg.head_hidden, kNumRotated * 6, rng);
    m.shape_head = make_mlp2(store, "s2.head.shape", flat, cfg.head_hidden, kShapeDim, rng);
    // start the pose head at the rest pose: small final weights, identity-6D bias
    {
        auto& w = m.pose_head.fc2.weight.data();
        for (auto& v : w) v *= 0.02f;
        auto& b = m.pose_head.fc2.bias.data();
        for (int j = 0; j < kNumRotated; ++j) {
            b[j * 6 + 0] = 1.0f;
            b[j * 6 + 4] = 1.0f;
        }
        auto& ws = m.shape_head.fc2.weight.data();
        for (auto& v : ws) v *= 0.02f;
    }
    return m;
}

Tensor apply_guidance_gate(const Tensor& gate, const Tensor& embedding_plus_type) {
    if (gate.data()[0] <= kGateHardOff)
        return Tensor::zeros(embedding_plus_type.shape());
    return scale_by(embedding_plus_type, sigmoid(gate));
}

GuidanceTokens build_guidance_tokens(const Stage2Model& m, const Tensor& gamma_coarse,
                                     const Tensor& gamma_fine) {
    GuidanceTokens g;
    if (m.guidance_pinned_off) {
        g.coarse = Tensor::zeros({1, m.cfg.d_model});
        g.fine = Tensor::zeros({1, m.cfg.d_model});
        return g;
    }
    Tensor ec = m.phi_coarse(gamma_coarse);
    Tensor ef = m.phi_fine(gamma_fine);
    g.coarse = apply_guidance_gate(m.gate_coarse, add(ec, m.type_coarse));
    g.fine = apply_guidance_gate(m.gate_fine, add(ef, m.type_fine));
    return g;
}

Tensor fuse_multiscale(const Stage2Model& m, const Tensor& f4, const Tensor& f5) {
    int s = m.enc_cfg.image_size / m.enc_cfg.patch;
    if (f4.shape() != std::vector<int>{m.enc_cfg.c4, s, s})
        throw DimensionError("fuse_multiscale: bad F4 shape");
    if (f5.shape() != std::vector<int>{m.enc_cfg.c5, s / 2, s / 2})
        throw DimensionError("fuse_multiscale: bad F5 shape");
    int sp = m.fuse_side;
    Tensor f4_down = avg_pool2d(f4, 2);  // to F5 resolution
    Tensor t4 = transpose2d(reshape(f4_down, {m.enc_cfg.c4, sp * sp}));
    Tensor t5 = transpose2d(reshape(f5, {m.enc_cfg.c5, sp * sp}));
    Tensor fused_tokens = concat({m.proj4(t4), m.proj5(t5)}, 1);  // [S'^2, d]
    return reshape(transpose2d(fused_tokens), {m.cfg.d_model, sp, sp});
}

Tensor global_token_transform(const Stage2Model& m, const Tensor& fused) {
    if (m.global_tf.layers.empty()) return fused;
    int sp = m.fuse_side, d = m.cfg.d_model;
    Tensor tokens = add(transpose2d(reshape(fused, {d, sp * sp})), m.pos_global);
    Tensor out = m.global_tf.forward(tokens);
    return reshape(transpose2d(out), {d, sp, sp});
}

Tensor sample_joint_tokens(const Stage2Model& m, const Tensor& f_prime,
                           const Tensor& coords_xy) {
    (void)m;
    return bilinear_sample(f_prime, coords_xy);  // [J, d_model]
}

Tensor fuse_transformer(const Stage2Model& m, const Tensor& u_rows,
                        const GuidanceTokens& guidance) {
    Tensor q = add(m.token_proj(u_rows), m.pos_joint);
    Tensor s = concat({q, guidance.coarse, guidance.fine}, 0);  // [J+2, d]
    Tensor o = slice(m.fuse_tf.forward(s), 0, 0, kNumJoints);
    return add(u_rows, m.post(o));
}

ManoParams regress_mano(const Stage2Model& m, const Tensor& u_refined) {
    Tensor flat = reshape(u_refined, {1, kNumJoints * m.cfg.d_model});
    ManoParams p;
    p.theta = reshape(m.pose_head(flat), {kNumRotated, 6});
    p.beta = reshape(m.shape_head(flat), {kShapeDim});
    return p;
}

ForwardOut full_forward(const Stage2Model& m, const Tensor& image_hwc,
                        const KinematicTree& tree, const CameraConvention& conv,
                        bool want_vertices) {
    ForwardOut out;
    EncoderOutput eo = m.stage1.encoder.forward(image_hwc);
    out.g = eo.g;
    Tensor grow = reshape(eo.g, {1, m.enc_cfg.c5});
    out.gamma_coarse = m.stage1.heads.coarse(grow);
    out.gamma_fine = m.stage1.heads.fine(grow);

    Tensor fused = fuse_multiscale(m, eo.f4, eo.f5);
    Tensor f_prime = global_token_transform(m, fused);

    int sp = m.fuse_side, depth = m.cfg.volume_depth;
    Tensor cells = transpose2d(reshape(f_prime, {m.cfg.d_model, sp * sp}));  // [S'^2, d]
    Tensor head_out = m.volume_head(cells);  // [S'^2, J*D]
    Tensor volumes = gather(head_out, m.volume_index,
                            {kNumJoints, depth * sp * sp});  // [J, D*S'*S']
    out.xyz_native = soft_argmax_rows(volumes, depth, sp, sp, m.cfg.softargmax_scale);

    // volume-native -> grid coords shared with the 2.5D ground truth
    int g = conv.grid_size, d_bins = conv.depth_bins;
    if (d_bins != depth)
        throw DimensionError("full_forward: volume depth must equal camera depth bins");
    float sxy = static_cast<float>(g - 1) / static_cast<float>(sp - 1);
    std::vector<float> to_grid(kNumJoints * 3);
    for (int j = 0; j < kNumJoints; ++j) {
        to_grid[j * 3 + 0] = sxy;
        to_grid[j * 3 + 1] = sxy;
        to_grid[j * 3 + 2] = 1.0f;
    }
    out.xyz_25d = mul(out.xyz_native, Tensor::from_data({kNumJoints, 3}, to_grid));

    // grid -> wrist-relative mm (inverse of the camera convention)
    std::vector<float> mm_scale(kNumJoints * 3), mm_shift(kNumJoints * 3);
    for (int j = 0; j < kNumJoints; ++j) {
        mm_scale[j * 3 + 0] = conv.xy_extent_mm / static_cast<float>(g - 1);
        mm_scale[j * 3 + 1] = conv.xy_extent_mm / static_cast<float>(g - 1);
        mm_scale[j * 3 + 2] = conv.z_extent_mm / static_cast<float>(d_bins - 1);
        mm_shift[j * 3 + 0] = -conv.xy_extent_mm / 2.0f;
        mm_shift[j * 3 + 1] = -conv.xy_extent_mm / 2.0f;
        mm_shift[j * 3 + 2] = -conv.z_extent_mm / 2.0f;
    }
    out.joints_cam = add(mul(out.xyz_25d, Tensor::from_data({kNumJoints, 3}, mm_scale)),
                         Tensor::from_data({kNumJoints, 3}, mm_shift));

    Tensor xy = slice(out.xyz_native, 1, 0, 2);
    out.u_tokens = sample_joint_tokens(m, f_prime, xy);

    GuidanceTokens guidance = build_guidance_tokens(m, out.gamma_coarse, out.gamma_fine);
    out.u_refined = fuse_transformer(m, out.u_tokens, guidance);

    ManoParams mano = regress_mano(m, out.u_refined);
    out.theta = mano.theta;
    out.beta = mano.beta;
    auto fk = forward_kinematics_graph(tree, out.theta, out.beta);
    out.mano_joints = fk.joints;
    if (want_vertices)
        out.vertices = skin_mesh_graph(tree, fk.global_rot_stack, fk.joints);
    return out;
}

}  // namespace gestpose
