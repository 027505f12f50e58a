// Domain types shared by every module. All values are immutable after
// construction and safe to share across threads.
#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deper/json_util.hpp"

namespace deper {

using Mat = Eigen::MatrixXd;

// Axis-aligned box, all coordinates fractions of the image in [0,1].
struct BBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    std::array<double, 2> center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
    bool contains(double x, double y) const {
        return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
    }
    bool well_formed() const {
        return 0.0 <= x_min && x_min <= x_max && x_max <= 1.0 && 0.0 <= y_min && y_min <= y_max &&
               y_max <= 1.0;
    }
    double iou(const BBox& o) const;
    bool operator==(const BBox& o) const = default;
};

// Ordered sequence of attended boxes with dwell durations. Entries with
// validity 0 are padding and carry the zero box and zero duration.
struct AttentionTrajectory {
    std::vector<BBox> boxes;
    std::vector<double> durations;
    std::vector<int> validity;

    int length() const { return static_cast<int>(boxes.size()); }
    int valid_count() const;
    double total_valid_duration() const;
    bool operator==(const AttentionTrajectory& o) const = default;

    static AttentionTrajectory from_valid(std::vector<BBox> boxes, std::vector<double> durations);
};

// Length stays fixed at m_max: truncates the tail, pads with validity-0
// entries. Idempotent at fixed m_max.
AttentionTrajectory pad_or_truncate(const AttentionTrajectory& traj, int m_max);

// (mean of valid box centers, sum of valid durations). Throws Error on an
// all-invalid trajectory.
std::pair<std::array<double, 2>, double> box_center_duration_stats(const AttentionTrajectory& traj);

struct TokenizedDescription {
    std::vector<int> tokens;  // begin sentinel at 0, end sentinel at back
    std::string raw_text;

    int length() const { return static_cast<int>(tokens.size()); }
};

// Precomputed patch features; raw pixels never enter the pipeline.
struct ImageFeatures {
    Mat patches;                                     // P x d_img
    std::vector<std::array<double, 2>> patch_centers;  // P centers in [0,1]^2

    int patch_count() const { return static_cast<int>(patches.rows()); }
};

struct Triplet {
    std::string subject_id;
    std::string image_ref;
    ImageFeatures image;
    TokenizedDescription description;
    AttentionTrajectory trajectory;
};

// Raw record as stored on disk (description not yet tokenized, image by ref).
struct TripletRecord {
    std::string subject_id;
    std::string image_ref;
    std::string description;
    AttentionTrajectory trajectory;  // valid entries only, no padding
};

struct ModelConfig {
    int hidden_dim = 384;
    int encoder_layers = 2;
    int extractor_layers = 1;
    int decoder_layers = 4;
    int lm_layers = 2;
    int heads = 4;
    int ffn_mult = 4;
    int img_dim = 16;
    int lm_dim = 128;
    int m_max = 32;
    int vocab_size = 0;  // set once a vocabulary exists
    double lambda_con = 0.1;
    double supcon_temperature = 0.1;

    // Ablation switches (Tables 5-6 axes)
    bool use_traj_input = true;
    bool use_traj_dynamics = true;
    bool use_traj_recon = true;
    bool use_film = true;
    bool use_contrastive = true;
    bool use_dual_context = true;
    bool use_traj_latent = true;

    std::vector<std::string> validate() const;
    Json to_json() const;
    static ModelConfig from_json(const Json& j);
};

// Violations as data; empty means the triplet satisfies every invariant and
// its trajectory fits within cfg.m_max.
std::vector<std::string> validate_triplet(const Triplet& t, const ModelConfig& cfg);
std::vector<std::string> validate_trajectory(const AttentionTrajectory& traj);

}  // namespace deper
