#pragma once

#include <array>
#include <string>
#include <vector>

#include "gestpose/tensor.hpp"

namespace gestpose {

struct Vec3 {
    float x = 0, y = 0, z = 0;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
    float dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    float norm() const;
};

struct Mat3 {
    // row-major
    std::array<float, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
    static Mat3 identity() { return {}; }
    Vec3 operator*(const Vec3& v) const;
    Mat3 operator*(const Mat3& o) const;
    Mat3 transposed() const;
};

Mat3 axis_angle_to_matrix(Vec3 axis, float angle_rad);

constexpr int kNumJoints = 21;
constexpr int kNumRotated = 16;  // wrist + 3 articulated joints per finger
constexpr int kNumFingers = 5;
constexpr int kShapeDim = 10;
constexpr int kMeshVertices = 200;  // 10 per bone, 20 bones

// Per-joint 6D rotations (raw, orthonormalized downstream) plus 10 shape
// coefficients. Row 0 is the wrist/global rotation.
struct HandState {
    std::array<float, kNumRotated * 6> pose6d{};
    std::array<float, kShapeDim> shape{};

    static HandState rest();  // identity rotations, zero shape
};

// 21-joint parent-indexed skeleton with template offsets in mm, finger chains,
// shape blend matrix, and tube-mesh skinning data.
struct KinematicTree {
    std::array<int, kNumJoints> parent{};
    std::array<Vec3, kNumJoints> template_offsets{};
    std::array<std::array<int, 4>, kNumFingers> chains{};  // MCP..TIP per finger
    std::array<int, kNumRotated> rotated_joints{};
    std::array<int, kNumJoints> pose_row{};  // joint -> pose6d row, -1 for tips
    std::array<std::string, kNumJoints> names{};
    std::vector<float> blend;  // [21*3 x 10] row-major, bone-length blendshapes

    // tube mesh: each vertex is influenced by its bone's two end joints
    std::vector<Vec3> template_vertices;       // V
    std::vector<std::array<int, 2>> skin_joints;    // V x {parent, child}
    std::vector<std::array<float, 2>> skin_weights; // rows sum to 1

    std::array<Vec3, kNumJoints> template_joints() const;
};

// Deterministic template tree; `seed` drives the blend matrix.
KinematicTree build_hand_tree(unsigned seed = 2024);

void dump_tree(const KinematicTree& tree, const std::string& path);

// Affine, invertible mapping between wrist-relative camera-space mm and the
// G x G x D coordinate grid shared by the rendered image and 2.5D targets.
struct CameraConvention {
    int grid_size = 16;       // G: image and 2.5D xy resolution
    int depth_bins = 8;       // D
    float xy_extent_mm = 360; // span mapped onto [0, G-1]
    float z_extent_mm = 360;  // wrist-relative span mapped onto [0, D-1]

    // (X, Y) mm -> grid coords; Z ignored. Sets *clamped when out of extent.
    std::array<float, 2> project_xy(const Vec3& p_mm, bool* clamped = nullptr) const;
    Vec3 volume_to_camera(float xg, float yg, float zg) const;
    std::array<float, 3> camera_to_volume(const Vec3& p_mm, bool* clamped = nullptr) const;
};

// ---- eager path (data generation, evaluation) -------------------------------

// Gram-Schmidt 6D -> SO(3); columns of R are the orthonormalized frame.
Mat3 rot6d_to_matrix(const float r[6]);
std::array<float, 6> matrix_to_rot6d(const Mat3& r);

// offsets' = offsets * (1 + blend . shape), elementwise per joint axis
std::array<Vec3, kNumJoints> apply_shape(const KinematicTree& tree,
                                         const std::array<float, kShapeDim>& shape);

struct FkResult {
    std::array<Vec3, kNumJoints> joints;
    std::array<Mat3, kNumJoints> global_rot;
    std::array<Mat3, kNumRotated> local_rot;
};

FkResult forward_kinematics(const KinematicTree& tree, const HandState& state);

std::vector<Vec3> skin_mesh(const KinematicTree& tree,
                            const std::array<Vec3, kNumJoints>& joints,
                            const std::array<Mat3, kNumJoints>& global_rot);

// ---- graph path (differentiable, sits inside the training loss) -------------

Tensor rot6d_to_matrix_graph(const Tensor& r6);  // [1,6] -> [3,3]

struct FkGraphResult {
    Tensor joints;                    // [21,3]
    Tensor global_rot_stack;          // [63,3], rows 3j..3j+2 = R_j
    std::vector<Tensor> local_rot;    // 16 x [3,3], parent-relative
};

FkGraphResult forward_kinematics_graph(const KinematicTree& tree, const Tensor& theta,
                                       const Tensor& beta);

// Fused linear-blend skinning with analytic backward.
Tensor skin_mesh_graph(const KinematicTree& tree, const Tensor& global_rot_stack,
                       const Tensor& joints);

}  // namespace gestpose
