// Command line front end: dataset generation, training, evaluation,
// prediction dumps, gradient verification and closed-loop grasp simulation.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ogrg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_gen_data(const std::string& out, int count, int objects_lo, int objects_hi,
                 const std::vector<std::string>& templates, std::uint64_t seed, const std::string& split,
                 bool allow_duplicates, bool force) {
    if (fs::exists(out) && !fs::is_empty(out) && !force) {
        std::cerr << "gen-data: " << out << " exists and is not empty (use --force)\n";
        return 1;
    }
    ogrg::SynthConfig cfg;
    cfg.test_textures = split == "test";
    std::vector<ogrg::SceneSample> samples;
    samples.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        samples.push_back(ogrg::gen_sample(ogrg::Rng::mix(seed, static_cast<std::uint64_t>(i)), objects_lo,
                                           objects_hi, allow_duplicates, templates, cfg));
    ogrg::export_dataset(samples, out);
    json j{{"out", out}, {"count", count}, {"split", split}};
    std::cout << j.dump() << "\n";
    return 0;
}

void apply_strict(bool strict) {
    if (strict) ogrg::set_worker_threads(1);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"object grounding and grasping at desk scale"};
    app.require_subcommand(1);

    // ---- gen-data
    auto* gen = app.add_subcommand("gen-data", "synthesize a scene/language/grasp dataset");
    std::string gen_out, gen_objects = "1-7", gen_split = "train", gen_templates = "abs,rel,attr_base,attr_cls";
    int gen_count = 100;
    std::uint64_t gen_seed = 1;
    bool gen_force = false, gen_no_dup = false;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--objects", gen_objects, "object count or range, e.g. 4 or 2-5");
    gen->add_option("--templates", gen_templates, "comma list: abs,rel,attr_base,attr_cls");
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--split", gen_split, "train|test (test uses the held-out texture bank)")
        ->check(CLI::IsMember({"train", "test"}));
    gen->add_flag("--force", gen_force, "write into a non-empty directory");
    gen->add_flag("--no-duplicates", gen_no_dup, "forbid repeated object instances");

    // ---- train
    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    std::string train_config;
    train->add_option("--config", train_config, "run configuration JSON")->required();

    // ---- eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a prediction dump");
    std::string eval_ckpt, eval_dump, eval_data, eval_config, eval_metrics = "miou,oiou,j1,jany";
    bool eval_strict = false;
    eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");
    eval->add_option("--dump", eval_dump, "prediction dump JSONL (alternative to --checkpoint)");
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--config", eval_config, "config JSON (default: sibling of checkpoint)");
    eval->add_option("--metrics", eval_metrics, "comma list from miou,oiou,j1,jany");
    eval->add_flag("--strict", eval_strict, "single-threaded deterministic numerics");

    // ---- predict
    auto* predict = app.add_subcommand("predict", "write masks, heatmaps and a prediction dump");
    std::string pred_ckpt, pred_data, pred_out, pred_config;
    int pred_limit = 0;
    bool pred_strict = false;
    predict->add_option("--checkpoint", pred_ckpt, "model checkpoint")->required();
    predict->add_option("--data", pred_data, "dataset directory")->required();
    predict->add_option("--out", pred_out, "output directory")->required();
    predict->add_option("--config", pred_config, "config JSON (default: sibling of checkpoint)");
    predict->add_option("--limit", pred_limit, "cap the number of samples (0 = all)");
    predict->add_flag("--strict", pred_strict, "single-threaded deterministic numerics");

    // ---- gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification (f64)");
    int gc_seeds = 20;
    bool gc_quiet = false;
    gradcheck->add_option("--seeds", gc_seeds, "random seeds per op");
    gradcheck->add_flag("--quiet", gc_quiet, "suppress per-op output");

    // ---- simulate
    auto* sim = app.add_subcommand("simulate", "closed-loop grasp episodes against the analytic oracle");
    std::string sim_ckpt, sim_mgn, sim_config, sim_mgn_config, sim_templates = "abs";
    int sim_episodes = 100, sim_objects = 4;
    std::uint64_t sim_seed = 7777;
    bool sim_unseen = false, sim_strict = false, sim_no_dup = false;
    sim->add_option("--checkpoint", sim_ckpt, "grounding/RGS checkpoint")->required();
    sim->add_option("--mgn", sim_mgn, "MGN checkpoint (required for RGA pipelines)");
    sim->add_option("--config", sim_config, "config JSON for the main checkpoint");
    sim->add_option("--mgn-config", sim_mgn_config, "config JSON for the MGN checkpoint");
    sim->add_option("--episodes", sim_episodes, "episode count");
    sim->add_option("--objects", sim_objects, "objects per scene");
    sim->add_option("--templates", sim_templates, "comma list of expression templates");
    sim->add_option("--seed", sim_seed, "episode seed");
    sim->add_flag("--unseen-bg", sim_unseen, "held-out background texture bank");
    sim->add_flag("--no-duplicates", sim_no_dup, "forbid repeated object instances");
    sim->add_flag("--strict", sim_strict, "single-threaded deterministic numerics");

    // ---- config
    auto* config = app.add_subcommand("config", "configuration utilities");
    bool cfg_schema = false;
    config->add_flag("--print-schema", cfg_schema, "print the config schema with defaults");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    auto split_list = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                if (!cur.empty()) out.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) out.push_back(cur);
        return out;
    };

    try {
        if (gen->parsed()) {
            int lo = 0, hi = 0;
            const auto dash = gen_objects.find('-');
            if (dash == std::string::npos) {
                lo = hi = std::stoi(gen_objects);
            } else {
                lo = std::stoi(gen_objects.substr(0, dash));
                hi = std::stoi(gen_objects.substr(dash + 1));
            }
            return run_gen_data(gen_out, gen_count, lo, hi, split_list(gen_templates), gen_seed, gen_split,
                                !gen_no_dup, gen_force);
        }
        if (train->parsed()) {
            ogrg::RunConfig cfg = ogrg::load_run_config(train_config);
            apply_strict(cfg.strict);
            const ogrg::TrainResult r = ogrg::train_run(cfg);
            json j{{"checkpoint", r.checkpoint_path},
                   {"steps", r.steps},
                   {"first_loss", r.first_loss},
                   {"final_loss", r.final_loss},
                   {"aborted_on_nan", r.aborted_on_nan}};
            std::cout << j.dump() << "\n";
            return r.aborted_on_nan ? 3 : 0;
        }
        if (eval->parsed()) {
            apply_strict(eval_strict);
            const auto records = ogrg::import_dataset(eval_data);
            ogrg::EvalMetrics m;
            if (!eval_dump.empty()) {
                // dump evaluation needs a resolution to rescale ground truth;
                // infer it from the first prediction mask
                const auto dump = ogrg::read_prediction_dump(eval_dump);
                if (dump.empty()) throw ogrg::InputError("eval: dump is empty");
                const auto first = ogrg::read_png(dump[0].mask_path);
                ogrg::GraspExtractConfig extract;
                m = ogrg::evaluate_dump(dump, records, first.w, extract);
            } else if (!eval_ckpt.empty()) {
                ogrg::RgsPipeline pipe = ogrg::load_pipeline(eval_ckpt, eval_config);
                m = ogrg::evaluate_model(pipe, records);
            } else {
                std::cerr << "eval: need --checkpoint or --dump\n";
                return 1;
            }
            json j;
            for (const auto& metric : split_list(eval_metrics)) {
                if (metric == "miou") j["miou"] = m.miou;
                else if (metric == "oiou") j["oiou"] = m.oiou;
                else if (metric == "j1") j["j1"] = 100.0 * m.j1;
                else if (metric == "jany") j["jany"] = 100.0 * m.jany;
                else throw ogrg::ParameterError("eval: unknown metric " + metric);
            }
            j["count"] = m.count;
            std::cout << j.dump() << "\n";
            return 0;
        }
        if (predict->parsed()) {
            apply_strict(pred_strict);
            ogrg::RgsPipeline pipe = ogrg::load_pipeline(pred_ckpt, pred_config);
            const auto records = ogrg::import_dataset(pred_data);
            const ogrg::PredictStats stats = ogrg::predict_to_dir(pipe, records, pred_out, pred_limit);
            json j{{"fps", stats.fps}, {"count", stats.count}, {"dump", stats.dump_path}};
            std::cout << j.dump() << "\n";
            return 0;
        }
        if (gradcheck->parsed()) {
            const double worst = ogrg::gradcheck_suite(gc_seeds, !gc_quiet);
            json j{{"max_rel_err", worst}, {"threshold", 1e-4}, {"seeds", gc_seeds}};
            std::cout << j.dump() << "\n";
            return worst < 1e-4 ? 0 : 3;
        }
        if (sim->parsed()) {
            apply_strict(sim_strict);
            ogrg::RgsPipeline pipe = ogrg::load_pipeline(sim_ckpt, sim_config);
            std::unique_ptr<ogrg::MgnPipeline> mgn;
            if (!sim_mgn.empty())
                mgn = std::make_unique<ogrg::MgnPipeline>(ogrg::load_mgn_pipeline(sim_mgn, sim_mgn_config));
            ogrg::SimulateOptions opt;
            opt.episodes = sim_episodes;
            opt.n_objects = sim_objects;
            opt.templates = split_list(sim_templates);
            opt.seed = sim_seed;
            opt.unseen_background = sim_unseen;
            opt.allow_duplicates = !sim_no_dup;
            const ogrg::SimulateResult r = ogrg::simulate(pipe, mgn.get(), opt);
            json j{{"episodes", r.episodes},
                   {"grasped_any", r.grasped_any},
                   {"grasped_correct", r.grasped_correct},
                   {"success_rate", r.success_rate}};
            std::cout << j.dump() << "\n";
            return 0;
        }
        if (config->parsed()) {
            if (cfg_schema) {
                std::cout << ogrg::run_config_schema() << "\n";
                return 0;
            }
            std::cerr << "config: nothing to do (try --print-schema)\n";
            return 1;
        }
    } catch (const ogrg::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const ogrg::ParameterError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
