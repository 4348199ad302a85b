#include "gestpose/hand_model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "gestpose/errors.hpp"

namespace gestpose {

float Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 Mat3::operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            float acc = 0;
            for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
            r.m[i * 3 + j] = acc;
        }
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
    return r;
}

Mat3 axis_angle_to_matrix(Vec3 axis, float angle_rad) {
    float n = axis.norm();
    if (n < 1e-12f) return Mat3::identity();
    float ux = axis.x / n, uy = axis.y / n, uz = axis.z / n;
    float c = std::cos(angle_rad), s = std::sin(angle_rad), t = 1.0f - c;
    Mat3 r;
    r.m = {c + ux * ux * t,      ux * uy * t - uz * s, ux * uz * t + uy * s,
           uy * ux * t + uz * s, c + uy * uy * t,      uy * uz * t - ux * s,
           uz * ux * t - uy * s, uz * uy * t + ux * s, c + uz * uz * t};
    return r;
}

HandState HandState::rest() {
    HandState s;
    for (int j = 0; j < kNumRotated; ++j) {
        float* r = s.pose6d.data() + j * 6;
        r[0] = 1;  // first column (1,0,0)
        r[4] = 1;  // second column (0,1,0)
    }
    return s;
}

std::array<Vec3, kNumJoints> KinematicTree::template_joints() const {
    std::array<Vec3, kNumJoints> joints;
    joints[0] = {0, 0, 0};
    for (int j = 1; j < kNumJoints; ++j) joints[j] = joints[parent[j]] + template_offsets[j];
    return joints;
}

KinematicTree build_hand_tree(unsigned seed) {
    KinematicTree t;
    const char* finger_names[kNumFingers] = {"thumb", "index", "middle", "ring", "pinky"};
    const char* seg_names[4] = {"mcp", "pip", "dip", "tip"};

    // offsets in mm: fingers fan out along +y, thumb toward -x
    const Vec3 offsets[kNumFingers][4] = {
        {{-35, 12, 0}, {-17, 14, 0}, {-14, 11, 0}, {-11, 8, 0}},
        {{-20, 62, 0}, {0, 31, 0}, {0, 20, 0}, {0, 14, 0}},
        {{0, 67, 0}, {0, 35, 0}, {0, 22, 0}, {0, 15, 0}},
        {{17, 62, 0}, {0, 33, 0}, {0, 20, 0}, {0, 14, 0}},
        {{33, 54, 0}, {0, 25, 0}, {0, 16, 0}, {0, 11, 0}},
    };

    t.parent[0] = -1;
    t.template_offsets[0] = {0, 0, 0};
    t.names[0] = "wrist";
    t.pose_row.fill(-1);
    t.pose_row[0] = 0;
    t.rotated_joints[0] = 0;
    int rot_idx = 1;
    for (int f = 0; f < kNumFingers; ++f) {
        for (int s = 0; s < 4; ++s) {
            int j = 1 + f * 4 + s;
            t.parent[j] = s == 0 ? 0 : j - 1;
            t.template_offsets[j] = offsets[f][s];
            t.chains[f][s] = j;
            t.names[j] = std::string(finger_names[f]) + "_" + seg_names[s];
            if (s < 3) {
                t.pose_row[j] = rot_idx;
                t.rotated_joints[rot_idx] = j;
                ++rot_idx;
            }
        }
    }

    // bone-length blendshapes, small and seeded
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> bdist(-0.008f, 0.008f);
    t.blend.resize(kNumJoints * 3 * kShapeDim);
    for (auto& v : t.blend) v = bdist(rng);
    for (int c = 0; c < kShapeDim; ++c) t.blend[0 * kShapeDim + c] = 0;  // wrist row x
    for (int c = 0; c < kShapeDim; ++c) t.blend[1 * kShapeDim + c] = 0;  // wrist row y
    for (int c = 0; c < kShapeDim; ++c) t.blend[2 * kShapeDim + c] = 0;  // wrist row z

    // tube mesh: 10 vertices spiralling along each non-root bone
    auto tj = t.template_joints();
    const float golden = 2.39996323f;
    for (int j = 1; j < kNumJoints; ++j) {
        int p = t.parent[j];
        Vec3 d = t.template_offsets[j];
        float len = d.norm();
        Vec3 dir = len > 1e-6f ? d * (1.0f / len) : Vec3{0, 1, 0};
        // orthonormal frame around the bone axis
        Vec3 ref = std::fabs(dir.y) < 0.9f ? Vec3{0, 1, 0} : Vec3{1, 0, 0};
        Vec3 u{dir.y * ref.z - dir.z * ref.y, dir.z * ref.x - dir.x * ref.z,
               dir.x * ref.y - dir.y * ref.x};
        u = u * (1.0f / u.norm());
        Vec3 w{dir.y * u.z - dir.z * u.y, dir.z * u.x - dir.x * u.z, dir.x * u.y - dir.y * u.x};
        bool is_palm_bone = p == 0;
        int seg = (j - 1) % 4;  // 0 mcp-bone .. 3 tip-bone
        float radius = is_palm_bone ? 13.0f : (seg == 1 ? 7.0f : (seg == 2 ? 6.0f : 5.0f));
        for (int k = 0; k < 10; ++k) {
            float frac = (k + 0.5f) / 10.0f;
            float phi = golden * k;
            Vec3 v = tj[p] + d * frac + (u * std::cos(phi) + w * std::sin(phi)) * radius;
            t.template_vertices.push_back(v);
            t.skin_joints.push_back({p, j});
            t.skin_weights.push_back({1.0f - frac, frac});
        }
    }
    return t;
}

void dump_tree(const KinematicTree& tree, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "# joint parent offset_x_mm offset_y_mm offset_z_mm\n";
    for (int j = 0; j < kNumJoints; ++j) {
        out << tree.names[j] << " " << tree.parent[j] << " " << tree.template_offsets[j].x << " "
            << tree.template_offsets[j].y << " " << tree.template_offsets[j].z << "\n";
    }
    out << "# blend matrix rows (joint axis): 10 coefficients each\n";
    for (int r = 0; r < kNumJoints * 3; ++r) {
        for (int c = 0; c < kShapeDim; ++c)
            out << tree.blend[r * kShapeDim + c] << (c + 1 == kShapeDim ? '\n' : ' ');
    }
}

// ---- camera convention ------------------------------------------------------

std::array<float, 2> CameraConvention::project_xy(const Vec3& p_mm, bool* clamped) const {
    double half = xy_extent_mm / 2.0;
    bool clip = p_mm.x < -half || p_mm.x > half || p_mm.y < -half || p_mm.y > half;
    double gx = (std::clamp(static_cast<double>(p_mm.x), -half, half) / xy_extent_mm + 0.5) *
                (grid_size - 1);
    double gy = (std::clamp(static_cast<double>(p_mm.y), -half, half) / xy_extent_mm + 0.5) *
                (grid_size - 1);
    if (clamped) *clamped = clip;
    return {static_cast<float>(gx), static_cast<float>(gy)};
}

Vec3 CameraConvention::volume_to_camera(float xg, float yg, float zg) const {
    double x = (static_cast<double>(xg) / (grid_size - 1) - 0.5) * xy_extent_mm;
    double y = (static_cast<double>(yg) / (grid_size - 1) - 0.5) * xy_extent_mm;
    double z = (static_cast<double>(zg) / (depth_bins - 1) - 0.5) * z_extent_mm;
    return {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
}

std::array<float, 3> CameraConvention::camera_to_volume(const Vec3& p_mm, bool* clamped) const {
    auto xy = project_xy(p_mm, clamped);
    double halfz = z_extent_mm / 2.0;
    bool clip = p_mm.z < -halfz || p_mm.z > halfz;
    double zg = (std::clamp(static_cast<double>(p_mm.z), -halfz, halfz) / z_extent_mm + 0.5) *
                (depth_bins - 1);
    if (clamped && clip) *clamped = true;
    return {xy[0], xy[1], static_cast<float>(zg)};
}

// ---- eager rotations and kinematics -----------------------------------------

Mat3 rot6d_to_matrix(const float r[6]) {
    // Gram-Schmidt in double so the orthonormality residual stays below the
    // f32 rounding of the stored result.
    double a1[3] = {r[0], r[1], r[2]}, a2[3] = {r[3], r[4], r[5]};
    double n1 = std::sqrt(a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2]);
    if (n1 < 1e-7) throw DegenerateInputError("rot6d: first vector near zero");
    double b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
    double d = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
    double u2[3] = {a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]};
    double n2 = std::sqrt(u2[0] * u2[0] + u2[1] * u2[1] + u2[2] * u2[2]);
    if (n2 < 1e-7) throw DegenerateInputError("rot6d: input vectors near collinear");
    double b2[3] = {u2[0] / n2, u2[1] / n2, u2[2] / n2};
    double b3[3] = {b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2],
                    b1[0] * b2[1] - b1[1] * b2[0]};
    Mat3 rot;
    rot.m = {static_cast<float>(b1[0]), static_cast<float>(b2[0]), static_cast<float>(b3[0]),
             static_cast<float>(b1[1]), static_cast<float>(b2[1]), static_cast<float>(b3[1]),
             static_cast<float>(b1[2]), static_cast<float>(b2[2]), static_cast<float>(b3[2])};
    return rot;
}

std::array<float, 6> matrix_to_rot6d(const Mat3& r) {
    return {r.m[0], r.m[3], r.m[6], r.m[1], r.m[4], r.m[7]};
}

std::array<Vec3, kNumJoints> apply_shape(const KinematicTree& tree,
                                         const std::array<float, kShapeDim>& shape) {
    std::array<Vec3, kNumJoints> out;
    for (int j = 0; j < kNumJoints; ++j) {
        float f[3];
        for (int a = 0; a < 3; ++a) {
            const float* row = tree.blend.data() + (j * 3 + a) * kShapeDim;
            float acc = 0;
            for (int c = 0; c < kShapeDim; ++c) acc += row[c] * shape[c];
            f[a] = 1.0f + acc;
        }
        const Vec3& o = tree.template_offsets[j];
        out[j] = {o.x * f[0], o.y * f[1], o.z * f[2]};
    }
    return out;
}

FkResult forward_kinematics(const KinematicTree& tree, const HandState& state) {
    FkResult res;
    auto offsets = apply_shape(tree, state.shape);
    for (int r = 0; r < kNumRotated; ++r)
        res.local_rot[r] = rot6d_to_matrix(state.pose6d.data() + r * 6);
    res.joints[0] = {0, 0, 0};
    res.global_rot[0] = res.local_rot[0];
    for (int j = 1; j < kNumJoints; ++j) {
        int p = tree.parent[j];
        res.joints[j] = res.joints[p] + res.global_rot[p] * offsets[j];
        res.global_rot[j] = tree.pose_row[j] >= 0
                                ? res.global_rot[p] * res.local_rot[tree.pose_row[j]]
                                : res.global_rot[p];
    }
    return res;
}

std::vector<Vec3> skin_mesh(const KinematicTree& tree,
                            const std::array<Vec3, kNumJoints>& joints,
                            const std::array<Mat3, kNumJoints>& global_rot) {
    auto tj = tree.template_joints();
    std::vector<Vec3> out(tree.template_vertices.size());
    for (size_t v = 0; v < out.size(); ++v) {
        Vec3 acc{0, 0, 0};
        for (int k = 0; k < 2; ++k) {
            int j = tree.skin_joints[v][k];
            float w = tree.skin_weights[v][k];
            Vec3 local = tree.template_vertices[v] - tj[j];
            acc = acc + (global_rot[j] * local + joints[j]) * w;
        }
        out[v] = acc;
    }
    return out;
}

// ---- graph path --------------------------------------------------------------

Tensor rot6d_to_matrix_graph(const Tensor& r6) {
    Tensor row = r6.rank() == 1 ? reshape(r6, {1, 6}) : r6;
    Tensor a1 = slice(row, 1, 0, 3);
    Tensor a2 = slice(row, 1, 3, 3);
    Tensor s1 = sum(square(a1));
    if (s1.data()[0] < 1e-14f) throw DegenerateInputError("rot6d: first vector near zero");
    Tensor b1 = scale_by(a1, rsqrt(s1));
    Tensor d = sum(mul(b1, a2));
    Tensor u2 = sub(a2, scale_by(b1, d));
    Tensor s2 = sum(square(u2));
    if (s2.data()[0] < 1e-14f) throw DegenerateInputError("rot6d: input vectors near collinear");
    Tensor b2 = scale_by(u2, rsqrt(s2));
    Tensor b3 = reshape(cross3(reshape(b1, {3}), reshape(b2, {3})), {1, 3});
    // b1,b2,b3 are the columns of R
    return transpose2d(concat({b1, b2, b3}, 0));
}

FkGraphResult forward_kinematics_graph(const KinematicTree& tree, const Tensor& theta,
                                       const Tensor& beta) {
    if (theta.shape() != std::vector<int>{kNumRotated, 6})
        throw DimensionError("fk_graph: theta must be [16,6]");
    if (beta.numel() != kShapeDim) throw DimensionError("fk_graph: beta must have 10 values");

    // offsets' = template (*) (1 + B beta)
    std::vector<float> tmpl(kNumJoints * 3);
    for (int j = 0; j < kNumJoints; ++j) {
        tmpl[j * 3 + 0] = tree.template_offsets[j].x;
        tmpl[j * 3 + 1] = tree.template_offsets[j].y;
        tmpl[j * 3 + 2] = tree.template_offsets[j].z;
    }
    Tensor blend = Tensor::from_data({kNumJoints * 3, kShapeDim}, tree.blend);
    Tensor factors = add_scalar(matmul(blend, reshape(beta, {kShapeDim, 1})), 1.0f);
    Tensor offsets = mul(Tensor::from_data({kNumJoints, 3}, tmpl),
                         reshape(factors, {kNumJoints, 3}));

    FkGraphResult res;
    res.local_rot.reserve(kNumRotated);
    for (int r = 0; r < kNumRotated; ++r)
        res.local_rot.push_back(rot6d_to_matrix_graph(slice(theta, 0, r, 1)));

    std::vector<Tensor> pos(kNumJoints), glob(kNumJoints);
    pos[0] = Tensor::zeros({1, 3});
    glob[0] = res.local_rot[0];
    for (int j = 1; j < kNumJoints; ++j) {
        int p = tree.parent[j];
        Tensor off = slice(offsets, 0, j, 1);
        pos[j] = add(pos[p], matmul(off, transpose2d(glob[p])));
        glob[j] = tree.pose_row[j] >= 0 ? matmul(glob[p], res.local_rot[tree.pose_row[j]])
                                        : glob[p];
    }
    std::vector<Tensor> rows(pos.begin(), pos.end());
    res.joints = concat(rows, 0);
    std::vector<Tensor> rot_rows(glob.begin(), glob.end());
    res.global_rot_stack = concat(rot_rows, 0);
    return res;
}

Tensor skin_mesh_graph(const KinematicTree& tree, const Tensor& global_rot_stack,
                       const Tensor& joints) {
    if (global_rot_stack.shape() != std::vector<int>{kNumJoints * 3, 3})
        throw DimensionError("skin_mesh_graph: rotation stack must be [63,3]");
    if (joints.shape() != std::vector<int>{kNumJoints, 3})
        throw DimensionError("skin_mesh_graph: joints must be [21,3]");
    auto tj = tree.template_joints();
    int V = static_cast<int>(tree.template_vertices.size());
    const auto& rd = global_rot_stack.data();
    const auto& jd = joints.data();
    std::vector<float> out(static_cast<size_t>(V) * 3, 0.0f);
    for (int v = 0; v < V; ++v) {
        for (int k = 0; k < 2; ++k) {
            int j = tree.skin_joints[v][k];
            float w = tree.skin_weights[v][k];
            Vec3 local = tree.template_vertices[v] - tj[j];
            for (int a = 0; a < 3; ++a) {
                const float* rrow = rd.data() + (j * 3 + a) * 3;
                float rv = rrow[0] * local.x + rrow[1] * local.y + rrow[2] * local.z;
                out[v * 3 + a] += w * (rv + jd[j * 3 + a]);
            }
        }
    }
    auto rn = global_rot_stack.node();
    auto jn = joints.node();
    struct SkinCtx {
        std::vector<std::array<int, 2>> joints;
        std::vector<std::array<float, 2>> weights;
        std::vector<Vec3> locals;  // template vertex minus template joint, per influence pair
    };
    auto ctx = std::make_shared<SkinCtx>();
    ctx->joints = tree.skin_joints;
    ctx->weights = tree.skin_weights;
    ctx->locals.resize(static_cast<size_t>(V) * 2);
    for (int v = 0; v < V; ++v)
        for (int k = 0; k < 2; ++k)
            ctx->locals[v * 2 + k] = tree.template_vertices[v] - tj[tree.skin_joints[v][k]];
    // LBS is linear in rotations and joint positions given fixed weights
    return make_custom_op(
        {V, 3}, std::move(out), {rn, jn}, [rn, jn, ctx, V](detail::TensorNode& self) {
            if (rn->requires_grad) rn->ensure_grad();
            if (jn->requires_grad) jn->ensure_grad();
            for (int v = 0; v < V; ++v) {
                for (int k = 0; k < 2; ++k) {
                    int j = ctx->joints[v][k];
                    float w = ctx->weights[v][k];
                    const Vec3& local = ctx->locals[v * 2 + k];
                    float lv[3] = {local.x, local.y, local.z};
                    for (int a = 0; a < 3; ++a) {
                        float g = self.grad[v * 3 + a] * w;
                        if (jn->requires_grad) jn->grad[j * 3 + a] += g;
                        if (rn->requires_grad)
                            for (int b = 0; b < 3; ++b) rn->grad[(j * 3 + a) * 3 + b] += g * lv[b];
                    }
                }
            }
        });
}

}  // namespace gestpose
