#include "gestpose/losses.hpp"

#include <cmath>

#include "gestpose/errors.hpp"

namespace gestpose {

Tensor bone_continuity_loss(const Tensor& theta, const KinematicTree& tree) {
    if (theta.shape() != std::vector<int>{kNumRotated, 6})
        throw DimensionError("bone_continuity_loss: theta must be [16,6]");
    std::vector<Tensor> rot(kNumRotated);
    for (int r = 0; r < kNumRotated; ++r)
        rot[r] = rot6d_to_matrix_graph(slice(theta, 0, r, 1));

    Tensor acc;
    int terms = 0;
    for (const auto& chain : tree.chains) {
        // consecutive articulated pairs within a chain (tips carry no rotation)
        for (int s = 0; s + 1 < 3; ++s) {
            int ra = tree.pose_row[chain[s]];
            int rb = tree.pose_row[chain[s + 1]];
            Tensor term = sum(square(sub(rot[ra], rot[rb])));
            acc = acc.defined() ? add(acc, term) : term;
            ++terms;
        }
    }
    return scale(acc, 1.0f / static_cast<float>(terms));
}

namespace {

Tensor const_from(const float* data, std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return Tensor::from_data(std::move(shape), std::vector<float>(data, data + n));
}

// grid-plane projection of mm joints: affine map on the x,y columns
Tensor project_to_grid_xy(const Tensor& joints_mm, const CameraConvention& conv) {
    int n = joints_mm.shape()[0];
    Tensor xy = slice(joints_mm, 1, 0, 2);
    float s = static_cast<float>(conv.grid_size - 1) / conv.xy_extent_mm;
    std::vector<float> scl(static_cast<size_t>(n) * 2, s);
    std::vector<float> shf(static_cast<size_t>(n) * 2,
                           0.5f * static_cast<float>(conv.grid_size - 1));
    return add(mul(xy, Tensor::from_data({n, 2}, scl)), Tensor::from_data({n, 2}, shf));
}

}  // namespace

LossReport compute_losses(const ForwardOut& pred, const Sample& gt, const LossWeights& w,
                          const KinematicTree& tree, const CameraConvention& conv) {
    Tensor gt_theta = const_from(gt.gt_pose6d.data(), {kNumRotated, 6});
    Tensor gt_beta = const_from(gt.gt_shape.data(), {kShapeDim});
    Tensor gt_joints = const_from(gt.gt_joints_mm.data(), {kNumJoints, 3});
    Tensor gt_25d = const_from(gt.gt_25d.data(), {kNumJoints, 3});
    Tensor gt_xy = slice(gt_25d, 1, 0, 2);

    std::array<Tensor, 8> terms;
    terms[0] = l1_loss(pred.theta, gt_theta);
    terms[1] = l1_loss(pred.beta, gt_beta);
    terms[2] = l1_loss(pred.joints_cam, gt_joints);
    terms[3] = l1_loss(pred.mano_joints, gt_joints);
    terms[4] = l1_loss(pred.xyz_25d, gt_25d);
    terms[5] = l1_loss(slice(pred.xyz_25d, 1, 0, 2), gt_xy);
    terms[6] = l1_loss(project_to_grid_xy(pred.mano_joints, conv), gt_xy);
    terms[7] = bone_continuity_loss(pred.theta, tree);

    LossReport report;
    auto weights = w.as_array();
    Tensor total;
    for (int i = 0; i < 8; ++i) {
        report.raw[i] = terms[i].item();
        report.weighted[i] = weights[i] * report.raw[i];
        Tensor weighted = scale(terms[i], weights[i]);
        total = total.defined() ? add(total, weighted) : weighted;
    }
    report.total = total;
    report.total_value = total.item();
    return report;
}

float mpjpe(const std::vector<float>& pred_mm, const std::vector<float>& gt_mm) {
    if (pred_mm.size() != gt_mm.size() || pred_mm.size() % 3 != 0)
        throw DimensionError("mpjpe: mismatched joint arrays");
    size_t n = pred_mm.size() / 3;
    double acc = 0;
    for (size_t j = 0; j < n; ++j) {
        double d2 = 0;
        for (int a = 0; a < 3; ++a) {
            double d = (pred_mm[j * 3 + a] - pred_mm[a]) - (gt_mm[j * 3 + a] - gt_mm[a]);
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    return static_cast<float>(acc / n);
}

float mpvpe(const std::vector<float>& pred_mm, const std::vector<float>& gt_mm,
            const std::array<float, 3>& pred_wrist, const std::array<float, 3>& gt_wrist) {
    if (pred_mm.size() != gt_mm.size())
        throw TopologyError("mpvpe: vertex count mismatch, " +
                            std::to_string(pred_mm.size() / 3) + " vs " +
                            std::to_string(gt_mm.size() / 3));
    if (pred_mm.size() % 3 != 0) throw DimensionError("mpvpe: not a [V,3] array");
    size_t n = pred_mm.size() / 3;
    double acc = 0;
    for (size_t v = 0; v < n; ++v) {
        double d2 = 0;
        for (int a = 0; a < 3; ++a) {
            double d = (pred_mm[v * 3 + a] - pred_wrist[a]) - (gt_mm[v * 3 + a] - gt_wrist[a]);
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    return static_cast<float>(acc / n);
}

double silhouette_score(const std::vector<std::vector<float>>& embeddings,
                        const std::vector<int>& labels) {
    size_t n = embeddings.size();
    if (n != labels.size() || n < 4) throw MetricError("silhouette: bad inputs");
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    std::vector<int> counts(max_label + 1, 0);
    for (int l : labels) counts[l]++;
    int populated = 0;
    for (int c : counts)
        if (c > 0) ++populated;
    if (populated < 2) throw MetricError("silhouette: need at least 2 labels");
    for (size_t i = 0; i < n; ++i)
        if (counts[labels[i]] < 2)
            throw MetricError("silhouette: every used label needs >= 2 members");

    std::vector<double> dist(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double d2 = 0;
            for (size_t k = 0; k < embeddings[i].size(); ++k) {
                double d = embeddings[i][k] - embeddings[j][k];
                d2 += d * d;
            }
            dist[i * n + j] = dist[j * n + i] = std::sqrt(d2);
        }

    double acc = 0;
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> label_sum(max_label + 1, 0.0);
        for (size_t j = 0; j < n; ++j)
            if (j != i) label_sum[labels[j]] += dist[i * n + j];
        double a = label_sum[labels[i]] / (counts[labels[i]] - 1);
        double b = 1e300;
        for (int l = 0; l <= max_label; ++l) {
            if (l == labels[i] || counts[l] == 0) continue;
            b = std::min(b, label_sum[l] / counts[l]);
        }
        double s = (b - a) / std::max(a, b);
        acc += s;
    }
    return acc / static_cast<double>(n);
}

std::vector<std::vector<float>> pca_project(const std::vector<std::vector<float>>& embeddings,
                                            int k) {
    size_t n = embeddings.size();
    if (n == 0) return {};
    size_t d = embeddings[0].size();
    if (static_cast<int>(n) <= k) throw MetricError("pca: need more points than components");

    std::vector<double> mean(d, 0.0);
    for (const auto& e : embeddings)
        for (size_t j = 0; j < d; ++j) mean[j] += e[j];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> centered(n * d);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) centered[i * d + j] = embeddings[i][j] - mean[j];

    // power iteration with deflation on X^T X (applied as X^T (X v))
    std::vector<std::vector<double>> components;
    std::mt19937 rng(12345);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int comp = 0; comp < k; ++comp) {
        std::vector<double> v(d);
        for (auto& x : v) x = gauss(rng);
        double norm = 0;
        for (double x : v) norm += x * x;
        for (auto& x : v) x /= std::sqrt(norm);

        for (int it = 0; it < 1000; ++it) {
            // u = X v; w = X^T u
            std::vector<double> w(d, 0.0);
            for (size_t i = 0; i < n; ++i) {
                double u = 0;
                for (size_t j = 0; j < d; ++j) u += centered[i * d + j] * v[j];
                for (size_t j = 0; j < d; ++j) w[j] += centered[i * d + j] * u;
            }
            for (const auto& c : components) {
                double dot = 0;
                for (size_t j = 0; j < d; ++j) dot += w[j] * c[j];
                for (size_t j = 0; j < d; ++j) w[j] -= dot * c[j];
            }
            double wn = 0;
            for (double x : w) wn += x * x;
            wn = std::sqrt(wn);
            if (wn < 1e-30) break;  // no variance left in this direction
            double delta = 0;
            for (size_t j = 0; j < d; ++j) {
                double nx = w[j] / wn;
                delta = std::max(delta, std::fabs(nx - v[j]));
                v[j] = nx;
            }
            if (delta < 1e-8) break;
        }
        components.push_back(v);
    }

    std::vector<std::vector<float>> out(n, std::vector<float>(k, 0.0f));
    for (size_t i = 0; i < n; ++i)
        for (int comp = 0; comp < k; ++comp) {
            double dot = 0;
            for (size_t j = 0; j < d; ++j) dot += centered[i * d + j] * components[comp][j];
            out[i][comp] = static_cast<float>(dot);
        }
    return out;
}

}  // namespace gestpose
