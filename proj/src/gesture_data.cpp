#include "gestpose/gesture_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "gestpose/errors.hpp"

namespace gestpose {

using nlohmann::json;

namespace {

constexpr float kDegToRad = 0.01745329252f;
constexpr float kSplatSigma = 1.5f;

uint64_t splitmix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

unsigned derive_seed(unsigned base, int a, int b) {
    return static_cast<unsigned>(
        splitmix((static_cast<uint64_t>(base) << 32) ^ (static_cast<uint64_t>(a) << 16) ^
                 static_cast<uint64_t>(b + 1)));
}

Vec3 random_unit(std::mt19937& rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (;;) {
        Vec3 v{u(rng), u(rng), u(rng)};
        float n = v.norm();
        if (n > 0.2f && n < 1.0f) return v * (1.0f / n);
    }
}

void set_rotation(HandState& s, int pose_row, const Mat3& r) {
    auto enc = matrix_to_rot6d(r);
    std::copy(enc.begin(), enc.end(), s.pose6d.begin() + pose_row * 6);
}

Mat3 get_rotation(const HandState& s, int pose_row) {
    return rot6d_to_matrix(s.pose6d.data() + pose_row * 6);
}

float joint_hash(int j) {
    float v = std::sin((j + 1) * 12.9898f) * 43758.5453f;
    float frac = v - std::floor(v);
    return 0.25f + 0.75f * frac;
}

}  // namespace

GestureTaxonomy build_taxonomy(unsigned seed, int n_coarse, int n_fine) {
    if (n_coarse < 2) throw ConfigError("taxonomy: need at least 2 coarse labels");
    if (n_fine < n_coarse)
        throw ConfigError("taxonomy: n_fine (" + std::to_string(n_fine) +
                          ") must be >= n_coarse (" + std::to_string(n_coarse) + ")");

    GestureTaxonomy tax;
    tax.seed = seed;
    tax.n_coarse = n_coarse;
    tax.n_fine = n_fine;

    // coarse class sizes: base count, earlier classes take the remainder
    std::vector<int> sizes(n_coarse, n_fine / n_coarse);
    for (int c = 0; c < n_fine % n_coarse; ++c) sizes[c] += 1;

    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);

    // one curl level per finger defines a coarse prototype; levels are drawn
    // until the 5-finger code is distinct from every earlier class
    const float level_deg[3] = {6.0f, 45.0f, 85.0f};
    std::set<std::array<int, 5>> used_codes;
    std::vector<HandState> prototypes;
    for (int c = 0; c < n_coarse; ++c) {
        std::array<int, 5> code{};
        int attempts = 0;
        do {
            for (int f = 0; f < 5; ++f)
                code[f] = std::min(2, static_cast<int>(u01(rng) * 3.0f));
            if (++attempts > 1000)
                throw ConfigError("taxonomy: cannot find distinct gesture codes");
        } while (used_codes.count(code));
        used_codes.insert(code);

        HandState proto = HandState::rest();
        // per-class global orientation
        set_rotation(proto, 0, axis_angle_to_matrix(random_unit(rng), (u01(rng) - 0.5f) *
                                                                          30.0f * kDegToRad));
        for (int f = 0; f < 5; ++f) {
            float curl = level_deg[code[f]];
            float per_joint[3] = {curl, curl, 0.6f * curl};
            for (int s = 0; s < 3; ++s) {
                Vec3 axis{1.0f, (u01(rng) - 0.5f) * 0.4f, (u01(rng) - 0.5f) * 0.4f};
                Mat3 r = axis_angle_to_matrix(axis, per_joint[s] * kDegToRad);
                set_rotation(proto, 1 + f * 3 + s, r);
            }
        }
        prototypes.push_back(proto);
    }

    // fine labels: first variant is the prototype; later variants perturb a
    // class-fixed set of at most 4 joints so any two variants of one coarse
    // class differ in those joints only
    for (int c = 0; c < n_coarse; ++c) {
        std::vector<int> variant_rows;
        {
            std::vector<int> all_rows(kNumRotated - 1);
            for (int i = 0; i < kNumRotated - 1; ++i) all_rows[i] = i + 1;
            std::shuffle(all_rows.begin(), all_rows.end(), rng);
            variant_rows.assign(all_rows.begin(), all_rows.begin() + 4);
        }
        for (int v = 0; v < sizes[c]; ++v) {
            HandState pose = prototypes[c];
            if (v > 0) {
                for (int row : variant_rows) {
                    float delta = (17.0f + 8.0f * u01(rng)) * (u01(rng) < 0.5f ? -1.0f : 1.0f);
                    Mat3 r = get_rotation(pose, row) *
                             axis_angle_to_matrix(random_unit(rng), delta * kDegToRad);
                    set_rotation(pose, row, r);
                }
            }
            tax.fine_to_coarse.push_back(c);
            tax.canonical_pose.push_back(pose);
        }
    }
    return tax;
}

HandState sample_pose(const GestureTaxonomy& tax, int fine_label, float noise_deg,
                      unsigned seed) {
    if (fine_label < 0 || fine_label >= tax.n_fine)
        throw LabelError("sample_pose: fine label " + std::to_string(fine_label) +
                         " outside [0," + std::to_string(tax.n_fine) + ")");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    HandState s = tax.canonical_pose[fine_label];
    if (noise_deg > 0.0f) {
        for (int row = 0; row < kNumRotated; ++row) {
            // the wrist moves every joint, so it gets half the angular noise
            float amp = (row == 0 ? 0.5f : 1.0f) * noise_deg;
            float angle = u(rng) * amp * kDegToRad;
            Mat3 r = get_rotation(s, row) * axis_angle_to_matrix(random_unit(rng), angle);
            set_rotation(s, row, r);
        }
    }
    for (auto& b : s.shape) b = std::clamp(gauss(rng), -3.0f, 3.0f);
    return s;
}

std::vector<float> render_image_grid(const std::vector<Vec3>& joints_mm,
                                     const CameraConvention& conv, int occlude_drop,
                                     unsigned occlude_seed) {
    int G = conv.grid_size;
    std::vector<float> img(static_cast<size_t>(G) * G * 3, 0.0f);

    std::vector<bool> dropped(joints_mm.size(), false);
    if (occlude_drop > 0) {
        std::mt19937 rng(occlude_seed);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(joints_mm.size()) - 1);
        std::uniform_int_distribution<int> howmany(0, occlude_drop);
        int k = howmany(rng);
        for (int i = 0; i < k; ++i) dropped[pick(rng)] = true;
    }

    const float inv2s2 = 1.0f / (2.0f * kSplatSigma * kSplatSigma);
    for (size_t j = 0; j < joints_mm.size(); ++j) {
        if (dropped[j]) continue;
        auto vol = conv.camera_to_volume(joints_mm[j]);
        float depth_w = 1.0f - vol[2] / static_cast<float>(conv.depth_bins - 1);
        float hash_w = joint_hash(static_cast<int>(j));
        for (int y = 0; y < G; ++y) {
            for (int x = 0; x < G; ++x) {
                float dx = static_cast<float>(x) - vol[0];
                float dy = static_cast<float>(y) - vol[1];
                float splat = std::exp(-(dx * dx + dy * dy) * inv2s2);
                size_t base = (static_cast<size_t>(y) * G + x) * 3;
                img[base + 0] += splat;
                img[base + 1] += depth_w * splat;
                img[base + 2] += hash_w * splat;
            }
        }
    }
    for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

namespace {

// Per-label split counts via floors plus cumulative-deficit assignment of the
// remainder: keeps every label's histogram uniform within 1 per split and the
// grand totals exactly on the split ratios.
std::vector<std::array<int, 3>> plan_splits(int n_per_label, int n_labels,
                                            const std::array<float, 3>& ratios) {
    std::vector<std::array<int, 3>> plan(n_labels);
    std::array<int64_t, 3> assigned{0, 0, 0};
    for (int label = 0; label < n_labels; ++label) {
        auto& c = plan[label];
        int used = 0;
        for (int s = 0; s < 3; ++s) {
            double t = static_cast<double>(ratios[s]) * n_per_label;
            c[s] = static_cast<int>(std::floor(t + 1e-6));
            used += c[s];
        }
        for (int k = used; k < n_per_label; ++k) {
            int best = -1;
            double best_deficit = -1e30;
            for (int s = 0; s < 3; ++s) {
                double target = static_cast<double>(ratios[s]) * n_per_label * (label + 1);
                double deficit = target - static_cast<double>(assigned[s] + c[s]);
                if (deficit > best_deficit + 1e-12) {
                    best_deficit = deficit;
                    best = s;
                }
            }
            c[best] += 1;
        }
        for (int s = 0; s < 3; ++s) assigned[s] += c[s];
    }
    return plan;
}

}  // namespace

Dataset generate_dataset(const GestureTaxonomy& tax, const KinematicTree& tree,
                         const CameraConvention& conv, const DatasetConfig& cfg) {
    float ratio_sum = cfg.split_ratios[0] + cfg.split_ratios[1] + cfg.split_ratios[2];
    if (std::fabs(ratio_sum - 1.0f) > 1e-5f)
        throw ConfigError("split ratios must sum to 1, got " + std::to_string(ratio_sum));
    for (float r : cfg.split_ratios)
        if (r < 0) throw ConfigError("split ratios must be nonnegative");

    Dataset ds;
    auto plan = plan_splits(cfg.n_per_fine, tax.n_fine, cfg.split_ratios);
    for (int fine = 0; fine < tax.n_fine; ++fine) {
        const auto& counts = plan[fine];
        for (int i = 0; i < cfg.n_per_fine; ++i) {
            unsigned seed = derive_seed(cfg.seed, fine, i);
            HandState state = sample_pose(tax, fine, cfg.noise_deg, seed);
            auto fk = forward_kinematics(tree, state);

            Sample s;
            s.fine = fine;
            s.coarse = tax.fine_to_coarse[fine];
            s.gt_pose6d = state.pose6d;
            s.gt_shape = state.shape;
            bool clamped = false;
            for (int j = 0; j < kNumJoints; ++j) {
                s.gt_joints_mm[j * 3 + 0] = fk.joints[j].x;
                s.gt_joints_mm[j * 3 + 1] = fk.joints[j].y;
                s.gt_joints_mm[j * 3 + 2] = fk.joints[j].z;
                bool c = false;
                auto vol = conv.camera_to_volume(fk.joints[j], &c);
                clamped = clamped || c;
                s.gt_25d[j * 3 + 0] = vol[0];
                s.gt_25d[j * 3 + 1] = vol[1];
                s.gt_25d[j * 3 + 2] = vol[2];
            }
            if (clamped)
                throw NumericError("generated pose leaves the camera extent; "
                                   "xy/z_extent_mm too small for the template");
            std::vector<Vec3> joints(fk.joints.begin(), fk.joints.end());
            s.image = render_image_grid(joints, conv, cfg.occlusion_max_drop,
                                        derive_seed(cfg.seed ^ 0xACu, fine, i));

            if (i < counts[0])
                ds.train.push_back(std::move(s));
            else if (i < counts[0] + counts[1])
                ds.val.push_back(std::move(s));
            else
                ds.test.push_back(std::move(s));
        }
    }
    return ds;
}

// ---- file formats ------------------------------------------------------------

namespace {

json sample_to_json(const Sample& s) {
    json j;
    j["coarse"] = s.coarse;
    j["fine"] = s.fine;
    j["image"] = s.image;
    j["gt_25d"] = std::vector<float>(s.gt_25d.begin(), s.gt_25d.end());
    j["gt_joints_mm"] = std::vector<float>(s.gt_joints_mm.begin(), s.gt_joints_mm.end());
    j["gt_pose6d"] = std::vector<float>(s.gt_pose6d.begin(), s.gt_pose6d.end());
    j["gt_shape"] = std::vector<float>(s.gt_shape.begin(), s.gt_shape.end());
    return j;
}

template <size_t N>
void read_array(const json& j, const char* key, std::array<float, N>& out, int line) {
    auto v = j.at(key).get<std::vector<float>>();
    if (v.size() != N)
        throw ParseError(std::string("field '") + key + "' has " + std::to_string(v.size()) +
                             " values, expected " + std::to_string(N),
                         line);
    std::copy(v.begin(), v.end(), out.begin());
}

Sample sample_from_json(const json& j, int line) {
    Sample s;
    try {
        s.coarse = j.at("coarse").get<int>();
        s.fine = j.at("fine").get<int>();
        s.image = j.at("image").get<std::vector<float>>();
        read_array(j, "gt_25d", s.gt_25d, line);
        read_array(j, "gt_joints_mm", s.gt_joints_mm, line);
        read_array(j, "gt_pose6d", s.gt_pose6d, line);
        read_array(j, "gt_shape", s.gt_shape, line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad record: ") + e.what(), line);
    }
    return s;
}

}  // namespace

void write_dataset(const std::vector<Sample>& samples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& s : samples) out << sample_to_json(s).dump() << "\n";
}

std::vector<Sample> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<Sample> samples;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
        }
        samples.push_back(sample_from_json(j, lineno));
    }
    return samples;
}

void write_dataset_manifest(const std::string& path, const GestureTaxonomy& tax,
                            const CameraConvention& conv, const DatasetConfig& cfg,
                            const std::array<int, 3>& split_counts) {
    json j;
    j["seed"] = cfg.seed;
    j["n_coarse"] = cfg.n_coarse;
    j["n_fine"] = cfg.n_fine;
    j["n_per_fine"] = cfg.n_per_fine;
    j["noise_deg"] = cfg.noise_deg;
    j["occlusion_max_drop"] = cfg.occlusion_max_drop;
    j["split_ratios"] = std::vector<float>(cfg.split_ratios.begin(), cfg.split_ratios.end());
    j["split_counts"] = std::vector<int>(split_counts.begin(), split_counts.end());
    j["camera"] = {{"grid_size", conv.grid_size},
                   {"depth_bins", conv.depth_bins},
                   {"xy_extent_mm", conv.xy_extent_mm},
                   {"z_extent_mm", conv.z_extent_mm}};
    json tx;
    tx["seed"] = tax.seed;
    tx["fine_to_coarse"] = tax.fine_to_coarse;
    json poses = json::array();
    for (const auto& p : tax.canonical_pose) {
        poses.push_back({{"pose6d", std::vector<float>(p.pose6d.begin(), p.pose6d.end())},
                         {"shape", std::vector<float>(p.shape.begin(), p.shape.end())}});
    }
    tx["canonical_poses"] = poses;
    j["taxonomy"] = tx;

    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest read_dataset_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed manifest: ") + e.what(), 0);
    }
    DatasetManifest m;
    try {
        m.config.seed = j.at("seed").get<unsigned>();
        m.config.n_coarse = j.at("n_coarse").get<int>();
        m.config.n_fine = j.at("n_fine").get<int>();
        m.config.n_per_fine = j.at("n_per_fine").get<int>();
        m.config.noise_deg = j.at("noise_deg").get<float>();
        m.config.occlusion_max_drop = j.at("occlusion_max_drop").get<int>();
        auto ratios = j.at("split_ratios").get<std::vector<float>>();
        std::copy(ratios.begin(), ratios.end(), m.config.split_ratios.begin());
        auto counts = j.at("split_counts").get<std::vector<int>>();
        std::copy(counts.begin(), counts.end(), m.split_counts.begin());
        const auto& cam = j.at("camera");
        m.conv.grid_size = cam.at("grid_size").get<int>();
        m.conv.depth_bins = cam.at("depth_bins").get<int>();
        m.conv.xy_extent_mm = cam.at("xy_extent_mm").get<float>();
        m.conv.z_extent_mm = cam.at("z_extent_mm").get<float>();
        const auto& tx = j.at("taxonomy");
        m.taxonomy.seed = tx.at("seed").get<unsigned>();
        m.taxonomy.fine_to_coarse = tx.at("fine_to_coarse").get<std::vector<int>>();
        m.taxonomy.n_fine = static_cast<int>(m.taxonomy.fine_to_coarse.size());
        m.taxonomy.n_coarse = m.config.n_coarse;
        for (const auto& p : tx.at("canonical_poses")) {
            HandState h;
            auto pose = p.at("pose6d").get<std::vector<float>>();
            auto shape = p.at("shape").get<std::vector<float>>();
            std::copy(pose.begin(), pose.end(), h.pose6d.begin());
            std::copy(shape.begin(), shape.end(), h.shape.begin());
            m.taxonomy.canonical_pose.push_back(h);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad manifest: ") + e.what(), 0);
    }
    return m;
}

}  // namespace gestpose
