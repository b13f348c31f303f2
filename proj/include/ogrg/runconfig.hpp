#pragma once

#include <string>

#include "ogrg/encoders.hpp"
#include "ogrg/losses.hpp"
#include "ogrg/metrics.hpp"
#include "ogrg/synth.hpp"

namespace ogrg {

// One experiment configuration. All pixel-valued grasp settings are given at
// the native 416 workspace scale and rescaled to the model resolution.
struct RunConfig {
    std::string mode = "rgs";  // rgs | rga | mgn
    std::uint64_t seed = 1;
    bool strict = false;
    int resolution = 96;
    std::string out_dir = "runs/default";
    std::string train_data;
    std::string val_data;

    BackboneConfig model;
    int mgn_channels = 16;

    // optimization
    int epochs = 50;
    int batch_size = 4;
    double lr = 5e-5;
    double weight_decay = 0.01;
    double beta1 = 0.9, beta2 = 0.999;
    double poly_power = 0.9;
    double clip_norm = 5.0;
    int save_interval_epochs = 10;
    int eval_interval_epochs = 5;

    RgsLossWeights loss_weights;
    double focal_gamma = 2.0, focal_alpha = 0.25, dice_smooth = 1.0;

    // grasp geometry at native scale
    double max_width_416 = 150.0;
    double jaw_open_416 = 80.0;
    double quality_threshold = 0.3;
    int max_candidates = 20;

    double scale_to_res(double native_px) const { return native_px * resolution / 416.0; }

    GraspExtractConfig extract_config() const {
        GraspExtractConfig c;
        c.max_width = scale_to_res(max_width_416);
        c.quality_threshold = quality_threshold;
        c.max_candidates = max_candidates;
        return c;
    }

    void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& cfg);  // canonical form, feeds the hash
std::string run_config_schema();
std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace ogrg
