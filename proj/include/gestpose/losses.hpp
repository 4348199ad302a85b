#pragma once

#include <array>
#include <vector>

#include "gestpose/gesture_data.hpp"
#include "gestpose/pipeline.hpp"

namespace gestpose {

struct LossWeights {
    float pose = 2.0f;
    float shape = 0.5f;
    float joints_3d = 20.0f;
    float mano_3d = 20.0f;
    float joints_25d = 0.05f;
    float joints_2d = 0.5f;
    float mano_2d = 0.5f;
    float continuity = 10.0f;

    std::array<float, 8> as_array() const {
        return {pose, shape, joints_3d, mano_3d, joints_25d, joints_2d, mano_2d, continuity};
    }
};

// Term order matches LossWeights::as_array.
constexpr const char* kLossNames[8] = {"pose",  "shape", "3d",      "mano3d",
                                       "2.5d",  "2d",    "mano2d",  "cont"};

struct LossReport {
    std::array<float, 8> raw{};
    std::array<float, 8> weighted{};
    float total_value = 0;
    Tensor total;  // differentiable
};

// Mean Frobenius distance between consecutive articulated joints' rotations
// along each finger chain.
Tensor bone_continuity_loss(const Tensor& theta, const KinematicTree& tree);

// All eight terms as l1 means; the 2D terms compare grid-plane projections.
LossReport compute_losses(const ForwardOut& pred, const Sample& gt, const LossWeights& w,
                          const KinematicTree& tree, const CameraConvention& conv);

// Root(wrist)-aligned mean per-joint error in mm over flat [J*3] arrays.
float mpjpe(const std::vector<float>& pred_mm, const std::vector<float>& gt_mm);
// Wrist-aligned mean vertex error; wrists passed separately.
float mpvpe(const std::vector<float>& pred_mm, const std::vector<float>& gt_mm,
            const std::array<float, 3>& pred_wrist, const std::array<float, 3>& gt_wrist);

// Mean silhouette coefficient with Euclidean distances.
double silhouette_score(const std::vector<std::vector<float>>& embeddings,
                        const std::vector<int>& labels);

// Mean-centered projection onto the top-k covariance eigenvectors
// (power iteration with deflation, tol 1e-8, max 1000 iterations).
std::vector<std::vector<float>> pca_project(const std::vector<std::vector<float>>& embeddings,
                                            int k = 2);

}  // namespace gestpose
