#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gestpose/errors.hpp"
#include "gestpose/hand_model.hpp"
#include "gestpose/optim.hpp"

using namespace gestpose;

namespace {

float det3(const Mat3& r) {
    const auto& m = r.m;
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

float orthonormality_error(const Mat3& r) {
    Mat3 g = r.transposed() * r;
    float e = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            e = std::max(e, std::fabs(g.m[i * 3 + j] - (i == j ? 1.0f : 0.0f)));
    return e;
}

HandState random_state(unsigned seed, float max_angle_rad = 1.2f) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    HandState s;
    for (int j = 0; j < kNumRotated; ++j) {
        Vec3 axis{u(rng), u(rng), u(rng)};
        if (axis.norm() < 1e-3f) axis = {1, 0, 0};
        Mat3 r = axis_angle_to_matrix(axis, u(rng) * max_angle_rad);
        auto r6 = matrix_to_rot6d(r);
        std::copy(r6.begin(), r6.end(), s.pose6d.begin() + j * 6);
    }
    for (auto& b : s.shape) b = std::clamp(u(rng) * 2.0f, -3.0f, 3.0f);
    return s;
}

}  // namespace

TEST_CASE("rot6d basic cases") {
    float id6[6] = {1, 0, 0, 0, 1, 0};
    Mat3 r = rot6d_to_matrix(id6);
    for (int i = 0; i < 9; ++i) CHECK(r.m[i] == doctest::Approx(Mat3::identity().m[i]));

    float scaled[6] = {2, 0, 0, 0, 3, 0};
    Mat3 r2 = rot6d_to_matrix(scaled);
    for (int i = 0; i < 9; ++i) CHECK(r2.m[i] == doctest::Approx(Mat3::identity().m[i]));

    float zero[6] = {0, 0, 0, 0, 1, 0};
    CHECK_THROWS_AS(rot6d_to_matrix(zero), DegenerateInputError);
    float collinear[6] = {1, 0, 0, 2, 0, 0};
    CHECK_THROWS_AS(rot6d_to_matrix(collinear), DegenerateInputError);
}

TEST_CASE("rot6d orthonormality and determinant on random inputs") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<float> u(-2.0f, 2.0f);
    for (int trial = 0; trial < 100; ++trial) {
        float r6[6];
        for (float& v : r6) v = u(rng);
        Mat3 r;
        try {
            r = rot6d_to_matrix(r6);
        } catch (const DegenerateInputError&) {
            continue;
        }
        CHECK(orthonormality_error(r) < 1e-6f);
        CHECK(std::fabs(det3(r) - 1.0f) < 1e-6f);
    }
}

TEST_CASE("rot6d round trip through encoding") {
    std::mt19937 rng(6);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (int trial = 0; trial < 20; ++trial) {
        Mat3 r = axis_angle_to_matrix({u(rng), u(rng), u(rng) + 1.5f}, u(rng) * 3.0f);
        auto enc = matrix_to_rot6d(r);
        Mat3 back = rot6d_to_matrix(enc.data());
        for (int i = 0; i < 9; ++i) CHECK(back.m[i] == doctest::Approx(r.m[i]).epsilon(1e-4));
    }
}

TEST_CASE("apply_shape template and expansion") {
    auto tree = build_hand_tree();
    std::array<float, kShapeDim> zero{};
    auto off = apply_shape(tree, zero);
    for (int j = 0; j < kNumJoints; ++j) {
        CHECK(off[j].x == tree.template_offsets[j].x);
        CHECK(off[j].y == tree.template_offsets[j].y);
        CHECK(off[j].z == tree.template_offsets[j].z);
    }

    std::array<float, kShapeDim> b0{};
    b0[0] = 3.0f;
    auto off2 = apply_shape(tree, b0);
    for (int j = 1; j < kNumJoints; ++j) {
        float fx = 1.0f + 3.0f * tree.blend[(j * 3 + 0) * kShapeDim + 0];
        CHECK(off2[j].x == doctest::Approx(tree.template_offsets[j].x * fx));
    }

    // monotone bone length in beta_0 when its blend entries are positive
    for (int j = 1; j < kNumJoints; ++j) {
        bool positive = true;
        for (int a = 0; a < 3; ++a) positive &= tree.blend[(j * 3 + a) * kShapeDim + 0] > 0;
        if (!positive) continue;
        std::array<float, kShapeDim> lo{}, hi{};
        lo[0] = 0.5f;
        hi[0] = 2.5f;
        CHECK(apply_shape(tree, hi)[j].norm() > apply_shape(tree, lo)[j].norm());
    }
}

TEST_CASE("fk identity pose reproduces the template") {
    auto tree = build_hand_tree();
    auto fk = forward_kinematics(tree, HandState::rest());
    auto tj = tree.template_joints();
    for (int j = 0; j < kNumJoints; ++j) {
        CHECK(fk.joints[j].x == doctest::Approx(tj[j].x).epsilon(1e-6));
        CHECK(fk.joints[j].y == doctest::Approx(tj[j].y).epsilon(1e-6));
        CHECK(fk.joints[j].z == doctest::Approx(tj[j].z).epsilon(1e-6));
    }
}

TEST_CASE("fk root-rotation equivariance") {
    auto tree = build_hand_tree();
    HandState posed = random_state(17);
    // baseline with identity wrist
    HandState base = posed;
    float id6[6] = {1, 0, 0, 0, 1, 0};
    std::copy(id6, id6 + 6, base.pose6d.begin());
    auto fk_base = forward_kinematics(tree, base);

    Mat3 root = axis_angle_to_matrix({0.3f, 1.0f, -0.5f}, 0.9f);
    HandState rotated = base;
    auto enc = matrix_to_rot6d(root);
    std::copy(enc.begin(), enc.end(), rotated.pose6d.begin());
    auto fk_rot = forward_kinematics(tree, rotated);
    for (int j = 0; j < kNumJoints; ++j) {
        Vec3 expect = root * fk_base.joints[j];
        CHECK(std::fabs(fk_rot.joints[j].x - expect.x) < 1e-4f);
        CHECK(std::fabs(fk_rot.joints[j].y - expect.y) < 1e-4f);
        CHECK(std::fabs(fk_rot.joints[j].z - expect.z) < 1e-4f);
    }
}

TEST_CASE("fk preserves bone lengths") {
    auto tree = build_hand_tree();
    for (unsigned seed : {1u, 2u, 3u}) {
        HandState s = random_state(seed);
        auto offsets = apply_shape(tree, s.shape);
        auto fk = forward_kinematics(tree, s);
        for (int j = 1; j < kNumJoints; ++j) {
            float posed = (fk.joints[j] - fk.joints[tree.parent[j]]).norm();
            CHECK(std::fabs(posed - offsets[j].norm()) < 1e-4f);
        }
    }
}

TEST_CASE("skinning identity, rigid rotation, and locality bound") {
    auto tree = build_hand_tree();
    auto fk = forward_kinematics(tree, HandState::rest());
    auto verts = skin_mesh(tree, fk.joints, fk.global_rot);
    REQUIRE(static_cast<int>(verts.size()) == kMeshVertices);
    for (size_t v = 0; v < verts.size(); ++v) {
        CHECK(std::fabs(verts[v].x - tree.template_vertices[v].x) < 1e-4f);
        CHECK(std::fabs(verts[v].y - tree.template_vertices[v].y) < 1e-4f);
        CHECK(std::fabs(verts[v].z - tree.template_vertices[v].z) < 1e-4f);
    }

    // global rotation rotates every vertex rigidly
    Mat3 root = axis_angle_to_matrix({1, 2, 3}, 1.1f);
    HandState rotated = HandState::rest();
    auto enc = matrix_to_rot6d(root);
    std::copy(enc.begin(), enc.end(), rotated.pose6d.begin());
    auto fk2 = forward_kinematics(tree, rotated);
    auto verts2 = skin_mesh(tree, fk2.joints, fk2.global_rot);
    for (size_t v = 0; v < verts.size(); ++v) {
        Vec3 expect = root * tree.template_vertices[v];
        CHECK(std::fabs(verts2[v].x - expect.x) < 1e-3f);
        CHECK(std::fabs(verts2[v].y - expect.y) < 1e-3f);
        CHECK(std::fabs(verts2[v].z - expect.z) < 1e-3f);
    }

    // articulated pose: vertex stays within max influencing-joint template distance
    auto tj = tree.template_joints();
    HandState posed = random_state(23);
    posed.shape.fill(0.0f);
    auto fk3 = forward_kinematics(tree, posed);
    auto verts3 = skin_mesh(tree, fk3.joints, fk3.global_rot);
    for (size_t v = 0; v < verts3.size(); ++v) {
        float bound = 0;
        for (int k = 0; k < 2; ++k) {
            int j = tree.skin_joints[v][k];
            bound = std::max(bound, (tree.template_vertices[v] - tj[j]).norm());
        }
        float nearest = 1e30f;
        for (int k = 0; k < 2; ++k) {
            int j = tree.skin_joints[v][k];
            nearest = std::min(nearest, (verts3[v] - fk3.joints[j]).norm());
        }
        CHECK(nearest <= bound + 1e-3f);
    }
}

TEST_CASE("camera convention endpoints and round trip") {
    CameraConvention conv;
    bool clamped = false;
    auto center = conv.project_xy({0, 0, 0}, &clamped);
    CHECK_FALSE(clamped);
    CHECK(center[0] == doctest::Approx((conv.grid_size - 1) / 2.0f));
    CHECK(center[1] == doctest::Approx((conv.grid_size - 1) / 2.0f));

    auto corner = conv.project_xy({conv.xy_extent_mm / 2, conv.xy_extent_mm / 2, 0});
    CHECK(corner[0] == doctest::Approx(conv.grid_size - 1.0f));
    CHECK(corner[1] == doctest::Approx(conv.grid_size - 1.0f));

    auto out_of_range = conv.project_xy({conv.xy_extent_mm, 0, 0}, &clamped);
    CHECK(clamped);
    CHECK(out_of_range[0] == doctest::Approx(conv.grid_size - 1.0f));

    Vec3 vc = conv.volume_to_camera((conv.grid_size - 1) / 2.0f, (conv.grid_size - 1) / 2.0f,
                                    (conv.depth_bins - 1) / 2.0f);
    CHECK(std::fabs(vc.x) < 1e-4f);
    CHECK(std::fabs(vc.y) < 1e-4f);
    CHECK(std::fabs(vc.z) < 1e-4f);
    CHECK(conv.volume_to_camera(0, 0, 0).z == doctest::Approx(-conv.z_extent_mm / 2));

    std::mt19937 rng(9);
    std::uniform_real_distribution<float> u(-170.0f, 170.0f);
    for (int trial = 0; trial < 50; ++trial) {
        Vec3 p{u(rng), u(rng), u(rng)};
        auto vol = conv.camera_to_volume(p);
        Vec3 back = conv.volume_to_camera(vol[0], vol[1], vol[2]);
        CHECK(std::fabs(back.x - p.x) < 1e-4f);
        CHECK(std::fabs(back.y - p.y) < 1e-4f);
        CHECK(std::fabs(back.z - p.z) < 1e-4f);
    }
}

TEST_CASE("graph fk matches eager fk") {
    auto tree = build_hand_tree();
    for (unsigned seed : {4u, 5u}) {
        HandState s = random_state(seed);
        auto fk = forward_kinematics(tree, s);
        Tensor theta = Tensor::from_data({kNumRotated, 6},
                                         std::vector<float>(s.pose6d.begin(), s.pose6d.end()));
        Tensor beta =
            Tensor::from_data({kShapeDim}, std::vector<float>(s.shape.begin(), s.shape.end()));
        auto g = forward_kinematics_graph(tree, theta, beta);
        for (int j = 0; j < kNumJoints; ++j) {
            CHECK(g.joints.at({j, 0}) == doctest::Approx(fk.joints[j].x).epsilon(1e-4));
            CHECK(g.joints.at({j, 1}) == doctest::Approx(fk.joints[j].y).epsilon(1e-4));
            CHECK(g.joints.at({j, 2}) == doctest::Approx(fk.joints[j].z).epsilon(1e-4));
        }
        auto verts = skin_mesh(tree, fk.joints, fk.global_rot);
        Tensor gv = skin_mesh_graph(tree, g.global_rot_stack, g.joints);
        for (int v = 0; v < kMeshVertices; ++v) {
            CHECK(gv.at({v, 0}) == doctest::Approx(verts[v].x).epsilon(1e-3));
            CHECK(gv.at({v, 1}) == doctest::Approx(verts[v].y).epsilon(1e-3));
            CHECK(gv.at({v, 2}) == doctest::Approx(verts[v].z).epsilon(1e-3));
        }
    }
}

TEST_CASE("hand model graph ops pass grad checks") {
    auto tree = build_hand_tree();
    std::mt19937 rng(31);

    Tensor w9 = Tensor::randn({3, 3}, rng);
    auto rep = grad_check(
        [&](const std::vector<Tensor>& in) {
            return sum(mul(rot6d_to_matrix_graph(in[0]), w9));
        },
        {Tensor::from_data({1, 6}, {0.9f, 0.2f, -0.1f, 0.1f, 1.1f, 0.3f})}, 1e-3f);
    CHECK(rep.pass);

    // Shape sensitivities scale with the blend entries; the default ones sit
    // near the f32 finite-difference noise floor, so check the beta path on a
    // blend-amplified copy of the tree.
    auto amp = tree;
    for (auto& v : amp.blend) v *= 40.0f;

    HandState s = random_state(41, 0.8f);
    Tensor theta = Tensor::from_data({kNumRotated, 6},
                                     std::vector<float>(s.pose6d.begin(), s.pose6d.end()));
    Tensor beta =
        Tensor::from_data({kShapeDim}, std::vector<float>(s.shape.begin(), s.shape.end()));
    Tensor wj = Tensor::randn({kNumJoints, 3}, rng, 0.1f);
    auto rep2 = grad_check(
        [&](const std::vector<Tensor>& in) {
            auto fk = forward_kinematics_graph(amp, in[0], in[1]);
            return mean(mul(fk.joints, wj));
        },
        {theta, beta}, 1e-3f, 1e-3f, 24, 7);
    CHECK_MESSAGE(rep2.pass, "fk grad err ", rep2.max_rel_err);

    // fk -> lbs is a deep composition; 1e-2 there
    Tensor wv = Tensor::randn({kMeshVertices, 3}, rng, 0.05f);
    auto rep3 = grad_check(
        [&](const std::vector<Tensor>& in) {
            auto fk = forward_kinematics_graph(amp, in[0], in[1]);
            return mean(mul(skin_mesh_graph(amp, fk.global_rot_stack, fk.joints), wv));
        },
        {theta, beta}, 1e-2f, 1e-3f, 16, 8);
    CHECK_MESSAGE(rep3.pass, "skin grad err ", rep3.max_rel_err);
}

TEST_CASE("tree structure invariants") {
    auto tree = build_hand_tree();
    CHECK(tree.parent[0] == -1);
    for (int j = 1; j < kNumJoints; ++j) {
        CHECK(tree.parent[j] >= 0);
        CHECK(tree.parent[j] < j);  // single tree rooted at 0
    }
    for (const auto& chain : tree.chains) {
        for (int s = 1; s < 4; ++s) CHECK(tree.parent[chain[s]] == chain[s - 1]);
        CHECK(tree.pose_row[chain[3]] == -1);  // tips carry no rotation
    }
    for (size_t v = 0; v < tree.skin_weights.size(); ++v) {
        float s = tree.skin_weights[v][0] + tree.skin_weights[v][1];
        CHECK(std::fabs(s - 1.0f) < 1e-6f);
    }
    // deterministic template
    auto tree2 = build_hand_tree();
    CHECK(tree.blend == tree2.blend);
}
