#pragma once

#include "ogrg/checkpoint.hpp"
#include "ogrg/dataset.hpp"
#include "ogrg/metrics.hpp"
#include "ogrg/mgn.hpp"
#include "ogrg/model.hpp"
#include "ogrg/runconfig.hpp"

namespace ogrg {

struct TrainResult {
    std::string checkpoint_path;
    long steps = 0;
    double first_loss = 0.0;
    double final_loss = 0.0;
    bool aborted_on_nan = false;
};

// Dispatches on cfg.mode (rgs trains the full model with dense supervision,
// rga the grounding model with dice+focal, mgn the affordance network with
// single-pixel weak labels). Writes config.json, vocab.txt, metrics.csv and
// checkpoints into cfg.out_dir.
TrainResult train_run(const RunConfig& cfg);

struct EvalMetrics {
    double miou = 0.0;
    double oiou = 0.0;
    double j1 = 0.0;    // fraction in [0,1]
    double jany = 0.0;  // fraction in [0,1]
    int count = 0;
};

// Loaded model bundle for inference commands.
struct RgsPipeline {
    RunConfig cfg;
    Vocab vocab;
    std::unique_ptr<OgrgModel<float>> model;
    std::uint64_t checkpoint_hash = 0;
};

RgsPipeline load_pipeline(const std::string& checkpoint_path, const std::string& config_path);

struct MgnPipeline {
    RunConfig cfg;
    std::unique_ptr<MgnModel<float>> model;
    std::uint64_t checkpoint_hash = 0;
};

MgnPipeline load_mgn_pipeline(const std::string& checkpoint_path, const std::string& config_path);

EvalMetrics evaluate_model(RgsPipeline& pipe, const std::vector<ManifestRecord>& records);

// Metrics straight from a prediction dump (masks read from PNG paths).
EvalMetrics evaluate_dump(const std::vector<PredictionRecord>& dump,
                          const std::vector<ManifestRecord>& records, int resolution,
                          const GraspExtractConfig& extract);

struct PredictStats {
    double fps = 0.0;
    int count = 0;
    std::string dump_path;
};

PredictStats predict_to_dir(RgsPipeline& pipe, const std::vector<ManifestRecord>& records,
                            const std::string& out_dir, int limit);

struct SimulateOptions {
    int episodes = 100;
    int n_objects = 4;
    std::vector<std::string> templates{"abs"};
    std::uint64_t seed = 7777;
    bool unseen_background = false;
    bool allow_duplicates = true;
};

struct SimulateResult {
    int episodes = 0;
    int grasped_any = 0;
    int grasped_correct = 0;
    double success_rate = 0.0;  // percent, correct-target
};

// Closed loop: synthesize scene, run the model(s), extract one grasp,
// adjudicate with the analytic oracle. mgn may be null for RGS pipelines.
SimulateResult simulate(RgsPipeline& pipe, MgnPipeline* mgn, const SimulateOptions& opt);

// Finite-difference verification across the op set plus one full aligner
// stage; returns the max relative error seen (threshold 1e-4).
double gradcheck_suite(int seeds, bool verbose);

}  // namespace ogrg
