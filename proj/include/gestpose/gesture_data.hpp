#pragma once

#include <array>
#include <string>
#include <vector>

#include "gestpose/hand_model.hpp"

namespace gestpose {

// Two-level gesture hierarchy: fine labels are subtle variants grouped under
// a shared coarse category, each with one canonical pose.
struct GestureTaxonomy {
    unsigned seed = 0;
    int n_coarse = 0;
    int n_fine = 0;
    std::vector<int> fine_to_coarse;          // surjective
    std::vector<HandState> canonical_pose;    // per fine label
};

GestureTaxonomy build_taxonomy(unsigned seed, int n_coarse, int n_fine);

// One training record. Image layout is [y][x][channel] row-major,
// channels: splat intensity, encoded depth, joint-index hash.
struct Sample {
    std::vector<float> image;  // G*G*3
    int coarse = 0;
    int fine = 0;
    std::array<float, kNumJoints * 3> gt_25d{};        // grid coords (x, y, z-bin)
    std::array<float, kNumJoints * 3> gt_joints_mm{};  // wrist-relative
    std::array<float, kNumRotated * 6> gt_pose6d{};
    std::array<float, kShapeDim> gt_shape{};
};

HandState sample_pose(const GestureTaxonomy& tax, int fine_label, float noise_deg,
                      unsigned seed);

// Gaussian splat pseudo-image (sigma 1.5 cells), values clamped to [0,1].
// occlude_drop > 0 removes that many random joints' splats from all channels.
std::vector<float> render_image_grid(const std::vector<Vec3>& joints_mm,
                                     const CameraConvention& conv, int occlude_drop = 0,
                                     unsigned occlude_seed = 0);

struct DatasetConfig {
    unsigned seed = 42;
    int n_coarse = 6;
    int n_fine = 10;
    int n_per_fine = 50;
    std::array<float, 3> split_ratios = {0.7f, 0.15f, 0.15f};  // train/val/test
    float noise_deg = 5.0f;
    int occlusion_max_drop = 0;  // 0 = augmentation off
};

struct Dataset {
    std::vector<Sample> train, val, test;
};

Dataset generate_dataset(const GestureTaxonomy& tax, const KinematicTree& tree,
                         const CameraConvention& conv, const DatasetConfig& cfg);

// JSON-lines, one record per line; read(write(x)) == x at f32 precision.
void write_dataset(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> read_dataset(const std::string& path);

// Sidecar manifest so evaluation is self-describing.
void write_dataset_manifest(const std::string& path, const GestureTaxonomy& tax,
                            const CameraConvention& conv, const DatasetConfig& cfg,
                            const std::array<int, 3>& split_counts);

struct DatasetManifest {
    GestureTaxonomy taxonomy;
    CameraConvention conv;
    DatasetConfig config;
    std::array<int, 3> split_counts{};
};

DatasetManifest read_dataset_manifest(const std::string& path);

}  // namespace gestpose
