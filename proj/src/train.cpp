#include "ogrg/train.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "ogrg/gradcheck.hpp"
#include "ogrg/image_io.hpp"

namespace fs = std::filesystem;

namespace ogrg {

namespace {

struct CsvLogger {
    std::ofstream out;
    explicit CsvLogger(const std::string& path) : out(path) {
        if (!out) throw InputError("metrics log: cannot write " + path);
        out << "step,split,loss,miou,j1\n";
    }
    void row(long step, const std::string& split, double loss, double miou, double j1) {
        out << step << "," << split << "," << loss << "," << miou << "," << j1 << "\n";
        out.flush();
    }
};

std::vector<GraspRectangle> gt_rects(const std::vector<GraspAnnotation>& grasps) {
    std::vector<GraspRectangle> out;
    for (const auto& g : grasps) out.push_back({g.x, g.y, g.theta, g.width, g.height});
    return out;
}

std::vector<float> tensor_plane(const Tensor<float>& t, int channel) {
    const int h = t.dim(t.ndim() - 2), w = t.dim(t.ndim() - 1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<float> out(plane);
    std::memcpy(out.data(), t.values().data() + static_cast<std::size_t>(channel) * plane,
                plane * sizeof(float));
    return out;
}

// Lazily loading sample source; small sets are held in memory.
class SampleSource {
  public:
    SampleSource(std::vector<ManifestRecord> records, const Vocab& vocab, const RunConfig& cfg)
        : records_(std::move(records)), vocab_(vocab), cfg_(cfg) {
        if (records_.size() <= 512) {
            cache_.reserve(records_.size());
            for (const auto& r : records_) cache_.push_back(load(r));
        }
    }

    std::size_t size() const { return records_.size(); }

    LoadedSample get(std::size_t i) const {
        if (!cache_.empty()) return cache_[i];
        return load(records_[i]);
    }

    std::vector<LoadedSample> head(std::size_t n) const {
        std::vector<LoadedSample> out;
        for (std::size_t i = 0; i < std::min(n, size()); ++i) out.push_back(get(i));
        return out;
    }

  private:
    LoadedSample load(const ManifestRecord& r) const {
        return load_sample(r, vocab_, cfg_.resolution, cfg_.model.max_tokens,
                           cfg_.scale_to_res(cfg_.max_width_416));
    }

    std::vector<ManifestRecord> records_;
    const Vocab& vocab_;
    const RunConfig& cfg_;
    std::vector<LoadedSample> cache_;
};

EvalMetrics eval_samples(const OgrgModel<float>& model, const std::vector<LoadedSample>& samples,
                         const GraspExtractConfig& extract) {
    std::vector<std::vector<std::uint8_t>> preds, gts;
    int j1_hits = 0, jany_hits = 0, grasp_count = 0;
    for (const auto& s : samples) {
        NoGrad<float> ng;
        if (model.mode == TaskMode::Rgs) {
            RgsMaps<float> maps = model.forward_rgs(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, false);
            preds.push_back(mask_from_logits(maps.m_logits));
            if (!s.grasps.empty()) {
                const int r = maps.quality.dim(0);
                auto poses = extract_rgs_pose(maps.quality.values(), tensor_plane(maps.angle, 0),
                                              tensor_plane(maps.angle, 1), maps.width.values(), s.depth_m, r,
                                              r, extract.max_candidates, extract);
                const auto rects = gt_rects(s.grasps);
                ++grasp_count;
                if (!poses.empty() && jaccard_at_n(poses, rects, 1)) ++j1_hits;
                if (!poses.empty() && jaccard_at_n(poses, rects, static_cast<int>(poses.size()))) ++jany_hits;
            }
        } else {
            Tensor<float> logits = model.forward_rga(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, false);
            preds.push_back(mask_from_logits(logits));
        }
        gts.push_back(s.target_mask);
    }
    EvalMetrics m;
    m.count = static_cast<int>(samples.size());
    if (!preds.empty()) {
        m.miou = mask_miou(preds, gts);
        m.oiou = mask_oiou(preds, gts);
    }
    if (grasp_count > 0) {
        m.j1 = static_cast<double>(j1_hits) / grasp_count;
        m.jany = static_cast<double>(jany_hits) / grasp_count;
    }
    return m;
}

void write_run_files(const RunConfig& cfg, const Vocab& vocab) {
    fs::create_directories(cfg.out_dir);
    std::ofstream cfg_out(fs::path(cfg.out_dir) / "config.json");
    cfg_out << dump_run_config(cfg) << "\n";
    vocab.save((fs::path(cfg.out_dir) / "vocab.txt").string());
}

struct TrainerHooks {
    std::function<Tensor<float>(const std::vector<std::size_t>&)> batch_loss;  // tape already active
    std::function<EvalMetrics(const SampleSource&)> eval;                      // may be empty
    std::function<void(const std::string&, AdamW<float>*, long)> save;
    std::vector<Tensor<float>> trainable;
};

TrainResult run_training(const RunConfig& cfg, SampleSource& source, SampleSource* val, TrainerHooks hooks) {
    CsvLogger log((fs::path(cfg.out_dir) / "metrics.csv").string());
    AdamW<float> opt(hooks.trainable);
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.weight_decay = cfg.weight_decay;

    const long steps_per_epoch =
        static_cast<long>((source.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                          static_cast<std::size_t>(cfg.batch_size));
    const long total_steps = steps_per_epoch * cfg.epochs;
    const std::string final_path = (fs::path(cfg.out_dir) / "model.bin").string();

    TrainResult result;
    result.checkpoint_path = final_path;
    std::vector<std::size_t> order(source.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng(Rng::mix(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
        erng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_batches = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b_end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                           order.begin() + static_cast<std::ptrdiff_t>(b_end));
            Tape<float> tape;
            Tensor<float> loss = hooks.batch_loss(batch);
            const double loss_v = loss[0];
            if (!std::isfinite(loss_v)) {
                result.aborted_on_nan = true;
                return result;  // last good checkpoint stays on disk
            }
            if (step == 0) result.first_loss = loss_v;
            tape.backward(loss);
            opt.clip_grad_norm(cfg.clip_norm);
            try {
                opt.step(poly_lr(step, total_steps, cfg.lr, cfg.poly_power));
            } catch (const NumericError&) {
                result.aborted_on_nan = true;
                return result;
            }
            opt.zero_grad();
            tape.clear();
            epoch_loss += loss_v;
            ++epoch_batches;
            ++step;
            result.final_loss = loss_v;
        }
        result.steps = step;
        const double mean_loss = epoch_loss / static_cast<double>(std::max(1L, epoch_batches));
        const bool last = epoch + 1 == cfg.epochs;
        if (hooks.eval && ((epoch + 1) % cfg.eval_interval_epochs == 0 || last)) {
            const EvalMetrics m = hooks.eval(source);
            log.row(step, "train", mean_loss, m.miou, m.j1);
            if (val) {
                const EvalMetrics vm = hooks.eval(*val);
                log.row(step, "val", mean_loss, vm.miou, vm.j1);
            }
        } else {
            log.row(step, "train", mean_loss, -1.0, -1.0);
        }
        if ((epoch + 1) % cfg.save_interval_epochs == 0 || last) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "ckpt_epoch%04d.bin", epoch + 1);
            hooks.save((fs::path(cfg.out_dir) / buf).string(), &opt, step);
            hooks.save(final_path, &opt, step);
        }
    }
    return result;
}

}  // namespace

TrainResult train_run(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    if (cfg.strict) set_worker_threads(1);
    if (cfg.train_data.empty()) throw InputError("train: data.train is required");

    auto records = import_dataset(cfg.train_data);
    if (records.empty()) throw InputError("train: dataset is empty");

    Vocab vocab = Vocab::build(corpus_from_manifest(records), cfg.model.vocab_size);
    RunConfig rt = cfg;  // runtime config with the actual vocabulary size
    rt.model.vocab_size = vocab.size();
    write_run_files(cfg, vocab);
    const std::uint64_t hash = config_hash(cfg);

    SampleSource source(records, vocab, rt);
    std::unique_ptr<SampleSource> val;
    if (!cfg.val_data.empty()) val = std::make_unique<SampleSource>(import_dataset(cfg.val_data), vocab, rt);

    const std::size_t eval_cap = 32;  // metric log probes a bounded subset

    if (cfg.mode == "mgn") {
        auto model = std::make_shared<MgnModel<float>>(cfg.seed, cfg.mgn_channels);
        TrainerHooks hooks;
        hooks.trainable = model->params.trainable();
        hooks.batch_loss = [model, &source](const std::vector<std::size_t>& batch) {
            Tensor<float> total = Tensor<float>::scalar(0.0f);
            for (std::size_t i : batch) {
                LoadedSample s = source.get(i);
                const int r = s.image.dim(1);
                Tensor<float> mask_t(Shape{1, r, r});
                for (std::size_t p = 0; p < s.target_mask.size(); ++p)
                    mask_t.values()[p] = s.target_mask[p] ? 1.0f : 0.0f;
                total = add(total, mgn_training_loss(*model, s.image, s.depth_norm, mask_t, s.weak.x,
                                                     s.weak.y, s.weak.k, s.weak.label, true));
            }
            return scale(total, 1.0f / static_cast<float>(batch.size()));
        };
        hooks.eval = nullptr;
        hooks.save = [model, hash](const std::string& path, AdamW<float>* opt, long step) {
            save_checkpoint(path, model->params, opt, step, hash);
        };
        return run_training(cfg, source, val.get(), std::move(hooks));
    }

    const TaskMode mode = task_mode_from_string(cfg.mode);
    auto model = std::make_shared<OgrgModel<float>>(rt.model, mode, cfg.resolution, cfg.seed);
    TrainerHooks hooks;
    hooks.trainable = model->params.trainable();
    if (mode == TaskMode::Rgs) {
        hooks.batch_loss = [model, &source, &cfg](const std::vector<std::size_t>& batch) {
            Tensor<float> total = Tensor<float>::scalar(0.0f);
            for (std::size_t i : batch) {
                LoadedSample s = source.get(i);
                RgsMaps<float> maps =
                    model->forward_rgs(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, true);
                total = add(total, rgs_loss(maps.m_logits, maps.quality, maps.angle, maps.width, s.targets,
                                            cfg.loss_weights));
            }
            return scale(total, 1.0f / static_cast<float>(batch.size()));
        };
    } else {
        hooks.batch_loss = [model, &source, &cfg](const std::vector<std::size_t>& batch) {
            Tensor<float> total = Tensor<float>::scalar(0.0f);
            for (std::size_t i : batch) {
                LoadedSample s = source.get(i);
                Tensor<float> logits =
                    model->forward_rga(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, true);
                total = add(total, rga_grounding_loss(logits, s.target_mask,
                                                      static_cast<float>(cfg.focal_gamma),
                                                      static_cast<float>(cfg.focal_alpha),
                                                      static_cast<float>(cfg.dice_smooth)));
            }
            return scale(total, 1.0f / static_cast<float>(batch.size()));
        };
    }
    hooks.eval = [model, &cfg, eval_cap](const SampleSource& src) {
        return eval_samples(*model, src.head(eval_cap), cfg.extract_config());
    };
    hooks.save = [model, hash](const std::string& path, AdamW<float>* opt, long step) {
        save_checkpoint(path, model->params, opt, step, hash);
    };
    return run_training(cfg, source, val.get(), std::move(hooks));
}

// ---------------------------------------------------------------------------
// inference pipelines

namespace {

std::string sibling(const std::string& checkpoint_path, const char* name) {
    return (fs::path(checkpoint_path).parent_path() / name).string();
}

}  // namespace

RgsPipeline load_pipeline(const std::string& checkpoint_path, const std::string& config_path) {
    RgsPipeline p;
    const std::string cfg_path = config_path.empty() ? sibling(checkpoint_path, "config.json") : config_path;
    p.cfg = load_run_config(cfg_path);
    p.vocab = Vocab::load(sibling(checkpoint_path, "vocab.txt"));
    RunConfig rt = p.cfg;
    rt.model.vocab_size = p.vocab.size();
    p.model = std::make_unique<OgrgModel<float>>(rt.model, task_mode_from_string(p.cfg.mode),
                                                 p.cfg.resolution, p.cfg.seed);
    const LoadedCheckpoint lc = load_checkpoint(checkpoint_path, p.model->params);
    p.checkpoint_hash = lc.config_hash;
    const std::uint64_t want = config_hash(p.cfg);
    if (lc.config_hash != want) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "checkpoint/config hash mismatch: file %016llx vs config %016llx",
                      static_cast<unsigned long long>(lc.config_hash),
                      static_cast<unsigned long long>(want));
        throw InputError(buf);
    }
    return p;
}

MgnPipeline load_mgn_pipeline(const std::string& checkpoint_path, const std::string& config_path) {
    MgnPipeline p;
    const std::string cfg_path = config_path.empty() ? sibling(checkpoint_path, "config.json") : config_path;
    p.cfg = load_run_config(cfg_path);
    p.model = std::make_unique<MgnModel<float>>(p.cfg.seed, p.cfg.mgn_channels);
    const LoadedCheckpoint lc = load_checkpoint(checkpoint_path, p.model->params);
    p.checkpoint_hash = lc.config_hash;
    const std::uint64_t want = config_hash(p.cfg);
    if (lc.config_hash != want) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "checkpoint/config hash mismatch: file %016llx vs config %016llx",
                      static_cast<unsigned long long>(lc.config_hash),
                      static_cast<unsigned long long>(want));
        throw InputError(buf);
    }
    return p;
}

EvalMetrics evaluate_model(RgsPipeline& pipe, const std::vector<ManifestRecord>& records) {
    RunConfig rt = pipe.cfg;
    rt.model.vocab_size = pipe.vocab.size();
    SampleSource source(records, pipe.vocab, rt);
    std::vector<LoadedSample> all = source.head(source.size());
    return eval_samples(*pipe.model, all, pipe.cfg.extract_config());
}

EvalMetrics evaluate_dump(const std::vector<PredictionRecord>& dump,
                          const std::vector<ManifestRecord>& records, int resolution,
                          const GraspExtractConfig& extract) {
    (void)extract;
    std::unordered_map<std::string, const ManifestRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;

    std::vector<std::vector<std::uint8_t>> preds, gts;
    int j1_hits = 0, jany_hits = 0, grasp_count = 0;
    for (const auto& d : dump) {
        auto it = by_id.find(d.id);
        if (it == by_id.end()) throw InputError("evaluate_dump: dataset has no record with id " + d.id);
        const ManifestRecord& rec = *it->second;

        const PngImage pm = read_png(d.mask_path);
        std::vector<std::uint8_t> pred(pm.data8.size());
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = pm.data8[i] >= 128 ? 1 : 0;

        const PngImage gm = read_png(rec.target_mask);
        std::vector<std::uint8_t> gt01(gm.data8.size());
        for (std::size_t i = 0; i < gt01.size(); ++i) gt01[i] = gm.data8[i] >= 128 ? 1 : 0;
        if (gm.w != pm.w || gm.h != pm.h) gt01 = resize_mask_nearest(gt01, gm.h, gm.w, pm.h, pm.w);
        preds.push_back(std::move(pred));
        gts.push_back(std::move(gt01));

        if (!rec.grasps.empty()) {
            const double k = static_cast<double>(resolution) / 416.0;
            std::vector<GraspRectangle> rects;
            for (const auto& g : rec.grasps)
                rects.push_back({g.x * k, g.y * k, g.theta, g.width * k, g.height * k});
            ++grasp_count;
            if (!d.poses.empty() && jaccard_at_n(d.poses, rects, 1)) ++j1_hits;
            if (!d.poses.empty() && jaccard_at_n(d.poses, rects, static_cast<int>(d.poses.size())))
                ++jany_hits;
        }
    }
    EvalMetrics m;
    m.count = static_cast<int>(dump.size());
    if (!preds.empty()) {
        m.miou = mask_miou(preds, gts);
        m.oiou = mask_oiou(preds, gts);
    }
    if (grasp_count > 0) {
        m.j1 = static_cast<double>(j1_hits) / grasp_count;
        m.jany = static_cast<double>(jany_hits) / grasp_count;
    }
    return m;
}

namespace {

// Fixed three-stop colormap for the visualization PNGs.
std::array<std::uint8_t, 3> heat_color(float v) {
    v = std::min(1.0f, std::max(0.0f, v));
    const float r = v < 0.5f ? v * 2.0f * 0.2f : 0.2f + (v - 0.5f) * 2.0f * 0.8f;
    const float g = v < 0.5f ? v * 2.0f * 0.7f : 0.7f + (v - 0.5f) * 2.0f * 0.3f;
    const float b = v < 0.5f ? 0.5f + v * 2.0f * 0.3f : 0.8f - (v - 0.5f) * 2.0f * 0.7f;
    return {static_cast<std::uint8_t>(r * 255), static_cast<std::uint8_t>(g * 255),
            static_cast<std::uint8_t>(b * 255)};
}

void write_heatmap(const std::string& path, const std::vector<float>& map, int h, int w) {
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto c = heat_color(map[i]);
        rgb[i * 3] = c[0];
        rgb[i * 3 + 1] = c[1];
        rgb[i * 3 + 2] = c[2];
    }
    write_png_rgb8(path, w, h, rgb);
}

}  // namespace

PredictStats predict_to_dir(RgsPipeline& pipe, const std::vector<ManifestRecord>& records,
                            const std::string& out_dir, int limit) {
    fs::create_directories(fs::path(out_dir) / "masks");
    fs::create_directories(fs::path(out_dir) / "heatmaps");
    RunConfig rt = pipe.cfg;
    rt.model.vocab_size = pipe.vocab.size();

    const int n = limit > 0 ? std::min<int>(limit, static_cast<int>(records.size()))
                            : static_cast<int>(records.size());
    std::vector<PredictionRecord> dump;
    double forward_seconds = 0.0;
    for (int i = 0; i < n; ++i) {
        LoadedSample s = load_sample(records[static_cast<std::size_t>(i)], pipe.vocab, pipe.cfg.resolution,
                                     pipe.cfg.model.max_tokens, pipe.cfg.scale_to_res(pipe.cfg.max_width_416));
        const int r = pipe.cfg.resolution;
        PredictionRecord rec;
        rec.id = s.id.empty() ? std::to_string(i) : records[static_cast<std::size_t>(i)].id;

        NoGrad<float> ng;
        std::vector<std::uint8_t> mask;
        std::vector<float> heat;
        std::vector<GraspPose> poses;
        const auto t0 = std::chrono::steady_clock::now();
        if (pipe.cfg.mode == "rgs") {
            RgsMaps<float> maps = pipe.model->forward_rgs(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, false);
            forward_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            mask = mask_from_logits(maps.m_logits);
            heat = maps.quality.values();
            poses = extract_rgs_pose(maps.quality.values(), tensor_plane(maps.angle, 0),
                                     tensor_plane(maps.angle, 1), maps.width.values(), s.depth_m, r, r,
                                     pipe.cfg.max_candidates, pipe.cfg.extract_config());
        } else {
            Tensor<float> logits = pipe.model->forward_rga(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, false);
            forward_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            mask = mask_from_logits(logits);
            Tensor<float> prob = foreground_prob(logits);
            heat = prob.values();
        }

        std::vector<std::uint8_t> mask255(mask.size());
        for (std::size_t p = 0; p < mask.size(); ++p) mask255[p] = mask[p] ? 255 : 0;
        const std::string mask_path = (fs::path(out_dir) / "masks" / (rec.id + ".png")).string();
        write_png_gray8(mask_path, r, r, mask255);
        write_heatmap((fs::path(out_dir) / "heatmaps" / (rec.id + ".png")).string(), heat, r, r);
        rec.mask_path = mask_path;
        rec.poses = std::move(poses);
        dump.push_back(std::move(rec));
    }
    PredictStats stats;
    stats.count = n;
    stats.fps = forward_seconds > 0.0 ? n / forward_seconds : 0.0;
    stats.dump_path = (fs::path(out_dir) / "predictions.jsonl").string();
    write_prediction_dump(stats.dump_path, dump);
    return stats;
}

SimulateResult simulate(RgsPipeline& pipe, MgnPipeline* mgn, const SimulateOptions& opt) {
    if (pipe.cfg.mode == "rga" && !mgn)
        throw InputError("simulate: an RGA pipeline needs an MGN checkpoint");
    SynthConfig scfg;
    scfg.test_textures = opt.unseen_background;
    scfg.jaw_open = pipe.cfg.jaw_open_416;
    scfg.max_width = pipe.cfg.max_width_416;

    const int r = pipe.cfg.resolution;
    const double to_native = 416.0 / r;
    SimulateResult result;
    result.episodes = opt.episodes;
    for (int e = 0; e < opt.episodes; ++e) {
        SceneSample scene = gen_sample(Rng::mix(opt.seed, static_cast<std::uint64_t>(e)), opt.n_objects,
                                       opt.n_objects, opt.allow_duplicates, opt.templates, scfg);
        LoadedSample s = scene_to_sample(scene, pipe.vocab, r, pipe.cfg.model.max_tokens,
                                         pipe.cfg.scale_to_res(pipe.cfg.max_width_416));
        NoGrad<float> ng;
        GraspPose pose;
        bool have_pose = false;
        if (pipe.cfg.mode == "rgs") {
            RgsMaps<float> maps = pipe.model->forward_rgs(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, false);
            auto poses = extract_rgs_pose(maps.quality.values(), tensor_plane(maps.angle, 0),
                                          tensor_plane(maps.angle, 1), maps.width.values(), s.depth_m, r, r,
                                          1, pipe.cfg.extract_config());
            if (!poses.empty()) {
                pose = poses[0];
                have_pose = true;
            }
        } else {
            Tensor<float> logits = pipe.model->forward_rga(s.image, s.depth_norm, s.tokens.ids, s.tokens.mask, false);
            auto mask = mask_from_logits(logits);
            Tensor<float> mask_t(Shape{1, r, r});
            for (std::size_t p = 0; p < mask.size(); ++p) mask_t.values()[p] = mask[p] ? 1.0f : 0.0f;
            Tensor<float> aff = mgn_forward(*mgn->model, s.image, s.depth_norm, mask_t);
            pose = extract_rga_pose(aff, s.depth_m, pipe.cfg.scale_to_res(pipe.cfg.jaw_open_416));
            have_pose = true;
        }
        if (!have_pose) continue;
        GraspPose native = pose;
        native.x *= to_native;
        native.y *= to_native;
        native.l *= to_native;
        const OracleOutcome oc = grasp_success_oracle(scene, native);
        result.grasped_any += oc.grasped_any ? 1 : 0;
        result.grasped_correct += oc.grasped_correct_target ? 1 : 0;
    }
    result.success_rate = 100.0 * result.grasped_correct / std::max(1, result.episodes);
    return result;
}

// ---------------------------------------------------------------------------
// gradcheck suite

namespace {

Tensor<double> randn(Rng& rng, Shape shape, double scale_v = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal() * scale_v;
    return t;
}

double check_and_report(const char* name, double err, bool verbose, double& worst) {
    if (verbose) std::printf("  %-28s max rel err %.3e\n", name, err);
    worst = std::max(worst, err);
    return err;
}

}  // namespace

double gradcheck_suite(int seeds, bool verbose) {
    double worst = 0.0;
    for (int seed = 1; seed <= seeds; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed) * 7919);
        const bool v = verbose && seed == 1;

        {
            Tensor<double> b = randn(rng, {4, 3});
            Tensor<double> x = randn(rng, {3, 4});
            check_and_report("matmul", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(matmul(t, b), matmul(t, b)));
            }, x), v, worst);
        }
        {
            Tensor<double> x = randn(rng, {3, 5});
            Tensor<double> w = randn(rng, {3, 5});
            check_and_report("softmax_lastdim", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(softmax_lastdim(t), w));
            }, x), v, worst);
        }
        {
            Tensor<double> x = randn(rng, {2, 6, 6});
            Tensor<double> w = randn(rng, {3, 2, 3, 3}, 0.5);
            Tensor<double> bias = randn(rng, {3});
            w.set_requires_grad(true);
            bias.set_requires_grad(true);
            check_and_report("conv2d_input", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(conv2d(t, w, bias, 1, 1), conv2d(t, w, bias, 1, 1)));
            }, x), v, worst);
            Tensor<double> x2 = randn(rng, {2, 7, 7});
            check_and_report("conv2d_weight", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(conv2d(x2, t, bias, 2, 1), conv2d(x2, t, bias, 2, 1)));
            }, w), v, worst);
        }
        {
            Tensor<double> x = randn(rng, {2, 3, 3});
            check_and_report("bilinear_upsample", finite_diff_check([&](Tensor<double>& t) {
                Tensor<double> u = bilinear_upsample(t, 2);
                return sum_all(mul(u, u));
            }, x), v, worst);
        }
        {
            Tensor<double> x = randn(rng, {11});
            check_and_report("relu", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(relu(t), relu(t)));
            }, x), v, worst);
            check_and_report("sigmoid", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(sigmoid(t), sigmoid(t)));
            }, x), v, worst);
            check_and_report("tanh", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(tanh_op(t), tanh_op(t)));
            }, x), v, worst);
        }
        {
            Tensor<double> x = randn(rng, {4, 5});
            Tensor<double> b = randn(rng, {5});
            b.set_requires_grad(true);
            check_and_report("add_broadcast", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(add(t, b), add(t, b)));
            }, x), v, worst);
            check_and_report("mul_broadcast", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(mul(t, b), mul(t, b)));
            }, x), v, worst);
            Tensor<double> rows = randn(rng, {4});
            rows.set_requires_grad(true);
            check_and_report("mul_rows", finite_diff_check([&](Tensor<double>& t) {
                return sum_all(mul(mul_rows(t, rows), mul_rows(t, rows)));
            }, x), v, worst);
        }
        {
            Tensor<double> x = randn(rng, {3, 4, 4});
            Tensor<double> g = randn(rng, {3});
            Tensor<double> be = randn(rng, {3});
            g.set_requires_grad(true);
            be.set_requires_grad(true);
            check_and_report("batchnorm_train", finite_diff_check([&](Tensor<double>& t) {
                std::vector<double> rm(3, 0.0), rv(3, 1.0);
                Tensor<double> y = batchnorm2d(t, g, be, rm, rv, true);
                return sum_all(mul(y, y));
            }, x), v, worst);
            check_and_report("batchnorm_eval", finite_diff_check([&](Tensor<double>& t) {
                std::vector<double> rm(3, 0.1), rv(3, 0.9);
                Tensor<double> y = batchnorm2d(t, g, be, rm, rv, false);
                return sum_all(mul(y, y));
            }, x), v, worst);
            Tensor<double> xl = randn(rng, {5, 6});
            Tensor<double> gl = randn(rng, {6});
            Tensor<double> bl = randn(rng, {6});
            gl.set_requires_grad(true);
            bl.set_requires_grad(true);
            check_and_report("layernorm", finite_diff_check([&](Tensor<double>& t) {
                Tensor<double> y = layernorm_lastdim(t, gl, bl);
                return sum_all(mul(y, y));
            }, xl), v, worst);
        }
        {
            Tensor<double> x = randn(rng, {2, 4, 4});
            check_and_report("space_to_depth", finite_diff_check([&](Tensor<double>& t) {
                Tensor<double> y = space_to_depth(t, 2);
                return sum_all(mul(y, y));
            }, x), v, worst);
            check_and_report("window_partition", finite_diff_check([&](Tensor<double>& t) {
                Tensor<double> y = window_partition(t, 2);
                return sum_all(mul(y, y));
            }, x), v, worst);
            check_and_report("rotate_bilinear", finite_diff_check([&](Tensor<double>& t) {
                Tensor<double> y = rotate_bilinear(t, 0.6, std::vector<double>{0.1, -0.2});
                return sum_all(mul(y, y));
            }, x), v, worst);
        }
        {
            Tensor<double> table = randn(rng, {6, 3});
            std::vector<int> ids{1, 4, 2, 4};
            check_and_report("embedding", finite_diff_check([&](Tensor<double>& t) {
                Tensor<double> y = embedding(ids, t);
                return sum_all(mul(y, y));
            }, table), v, worst);
        }
        {
            // losses
            Tensor<double> pred = randn(rng, {2, 3, 3});
            Tensor<double> target = randn(rng, {2, 3, 3});
            Tensor<double> mask(Shape{3, 3});
            std::vector<std::uint8_t> bmask(9);
            for (int i = 0; i < 9; ++i) {
                mask.values()[static_cast<std::size_t>(i)] = rng.below(2) ? 1.0 : 0.0;
                bmask[static_cast<std::size_t>(i)] = rng.below(2) ? 1 : 0;
            }
            check_and_report("smooth_l1_masked", finite_diff_check([&](Tensor<double>& t) {
                return smooth_l1_masked(t, target, mask);
            }, pred), v, worst);
            check_and_report("softmax_ce2", finite_diff_check([&](Tensor<double>& t) {
                return softmax_ce2(t, bmask);
            }, pred), v, worst);
            check_and_report("focal_ce2", finite_diff_check([&](Tensor<double>& t) {
                return focal_ce2(t, bmask, 2.0, 0.25);
            }, pred), v, worst);
            Tensor<double> probs(Shape{3, 3});
            for (auto& p : probs.values()) p = 0.1 + 0.8 * rng.uniform();
            check_and_report("dice_loss", finite_diff_check([&](Tensor<double>& t) {
                return dice_loss(t, bmask, 1.0);
            }, probs), v, worst);
            Tensor<double> aff(Shape{6, 3, 3});
            for (auto& p : aff.values()) p = 0.2 + 0.6 * rng.uniform();
            check_and_report("motion_loss", finite_diff_check([&](Tensor<double>& t) {
                return motion_loss(t, 1, 2, 3, 1);
            }, aff), v, worst);
            Tensor<double> plane = randn(rng, {4, 4});
            check_and_report("bilinear_sample_at", finite_diff_check([&](Tensor<double>& t) {
                Tensor<double> y = bilinear_sample_at(t, 1.3, 2.6, 0.0);
                return mul(y, y);
            }, plane), v, worst);
        }
        {
            // one full bi-aligner stage, gates opened
            ParamStore<double> ps;
            Rng prng(rng.next_u64());
            BiAlignerStage<double> stage(ps, "al", 8, 6, 1, prng);
            for (auto& g : stage.gate_v.values()) g = 0.4;
            for (auto& g : stage.gate_l.values()) g = -0.3;
            Tensor<double> fv = randn(rng, {8, 3, 2});
            Tensor<double> fl = randn(rng, {5, 6});
            Tensor<double> fd = randn(rng, {8, 3, 2});
            Tensor<double> kb(Shape{5}), qm(Shape{5});
            for (int i = 0; i < 5; ++i) {
                const bool real = i < 4;
                kb[static_cast<std::size_t>(i)] = real ? 0.0 : -1e9;
                qm[static_cast<std::size_t>(i)] = real ? 1.0 : 0.0;
            }
            check_and_report("bi_align_stage", finite_diff_check([&](Tensor<double>& t) {
                FusedStage<double> out = stage.forward(1, t, fl, &fd, kb, qm);
                return add(sum_all(mul(out.f_v, out.f_v)), sum_all(mul(out.f_l, out.f_l)));
            }, fv), v, worst);
        }
    }
    return worst;
}

}  // namespace ogrg
