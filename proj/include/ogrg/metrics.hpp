#pragma once

#include <string>

#include "ogrg/grasp_geometry.hpp"

namespace ogrg {

struct GraspExtractConfig {
    double smooth_sigma = 2.0;     // px
    double max_width = 150.0;      // px, denormalizes the width map
    double quality_threshold = 0.3;
    int max_candidates = 20;
};

// Separable Gaussian blur with replicated borders; kernel radius 3*sigma.
std::vector<float> gaussian_smooth(const std::vector<float>& map, int h, int w, double sigma);

// Ranked grasp poses from the dense RGS maps. Candidates are the
// 8-neighborhood local maxima (non-strict) of the smoothed quality map with
// value >= threshold, capped, ranked by smoothed quality then (y, x).
// Each pose reads its angle from the (sin 2t, cos 2t) channels, its width
// from the width map times max_width and its z from the depth map.
std::vector<GraspPose> extract_rgs_pose(const std::vector<float>& quality, const std::vector<float>& angle_sin,
                                        const std::vector<float>& angle_cos, const std::vector<float>& width,
                                        const std::vector<float>& depth_m, int h, int w, int top_n,
                                        const GraspExtractConfig& cfg = {});

// Top-n Jaccard success: some prediction among the first n matches some
// ground-truth rectangle with IoU > 0.25 and angle difference < 30 degrees
// (both thresholds strict).
bool jaccard_at_n(const std::vector<GraspPose>& ranked_preds, const std::vector<GraspRectangle>& gt, int n,
                  double iou_threshold = 0.25, double angle_threshold_deg = 30.0);

// Per-sample-averaged and dataset-pooled IoU of binary masks. An
// empty-vs-empty pair counts as IoU 1.
double mask_iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);
double mask_miou(const std::vector<std::vector<std::uint8_t>>& preds,
                 const std::vector<std::vector<std::uint8_t>>& gts);
double mask_oiou(const std::vector<std::vector<std::uint8_t>>& preds,
                 const std::vector<std::vector<std::uint8_t>>& gts);

struct GraspOutcome {
    bool grasped_any = false;
    bool grasped_correct_target = false;
};

// Percentage of attempts that grasped the correct target.
double grasp_success_rate(const std::vector<GraspOutcome>& outcomes);

// Offline evaluation record: predicted mask PNG plus ranked poses.
struct PredictionRecord {
    std::string id;
    std::string mask_path;
    std::vector<GraspPose> poses;  // ranked; serialized as [x, y, theta_deg, l]
};

void write_prediction_dump(const std::string& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_prediction_dump(const std::string& path);

}  // namespace ogrg
