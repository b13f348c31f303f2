#pragma once

#include "ogrg/encoders.hpp"
#include "ogrg/losses.hpp"
#include "ogrg/synth.hpp"

namespace ogrg {

// Training-ready view of one manifest record at network resolution.
struct LoadedSample {
    std::string id;
    Tensor<float> image;        // [3,R,R], standardized
    Tensor<float> depth_norm;   // [1,R,R], median/spread normalized
    std::vector<float> depth_m; // R*R metric depth
    std::vector<std::uint8_t> target_mask;  // R*R {0,1}
    TokenizedText tokens;
    std::vector<GraspAnnotation> grasps;  // rescaled to R
    WeakGraspLabel weak;                  // rescaled to R
    RgsTargets<float> targets;
};

// Bilinear resize of a single-channel float map.
std::vector<float> resize_bilinear(const std::vector<float>& src, int sh, int sw, int dh, int dw);
std::vector<std::uint8_t> resize_mask_nearest(const std::vector<std::uint8_t>& src, int sh, int sw, int dh,
                                              int dw);

// Dense RGS targets from grasp rectangles: quality 1 inside the center third
// of each rectangle, angle/width supervised there only.
RgsTargets<float> render_rgs_targets(const std::vector<GraspAnnotation>& grasps, int resolution,
                                     double max_width_px);

// Raw images to standardized model inputs.
Tensor<float> image_to_tensor(const std::vector<std::uint8_t>& rgb, int h, int w);
Tensor<float> depth_to_raw_tensor(const std::vector<std::uint16_t>& depth_mm, int h, int w);

LoadedSample load_sample(const ManifestRecord& rec, const Vocab& vocab, int resolution, int max_tokens,
                         double max_width_px);

// In-memory variant used by the closed-loop simulator.
LoadedSample scene_to_sample(const SceneSample& scene, const Vocab& vocab, int resolution, int max_tokens,
                             double max_width_px);

std::vector<std::string> corpus_from_manifest(const std::vector<ManifestRecord>& records);

}  // namespace ogrg
