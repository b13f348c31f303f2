#include "ogrg/runconfig.hpp"

#include <fstream>

#include <json.hpp>

namespace ogrg {

using nlohmann::json;

void RunConfig::validate() const {
    if (mode != "rgs" && mode != "rga" && mode != "mgn")
        throw ParameterError("config: mode must be rgs, rga or mgn");
    if (resolution % 32 != 0) throw ParameterError("config: resolution must be divisible by 32");
    if (epochs < 1 || batch_size < 1) throw ParameterError("config: epochs and batch_size must be positive");
    model.validate();
}

namespace {

template <typename T>
void read_into(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename T, std::size_t N>
void read_array(const json& j, const char* key, std::array<T, N>& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != N)
        throw ParameterError(std::string("config: ") + key + " must be an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) out[i] = a[i].get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw InputError(std::string("config: invalid JSON: ") + e.what());
    }
    RunConfig c;
    read_into(j, "mode", c.mode);
    read_into(j, "seed", c.seed);
    read_into(j, "strict", c.strict);
    read_into(j, "resolution", c.resolution);
    read_into(j, "out_dir", c.out_dir);
    if (j.contains("data")) {
        read_into(j.at("data"), "train", c.train_data);
        read_into(j.at("data"), "val", c.val_data);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        read_array(m, "channels", c.model.channels);
        read_array(m, "depths", c.model.depths);
        read_array(m, "heads", c.model.heads);
        read_into(m, "window", c.model.window);
        read_into(m, "shifted_windows", c.model.shifted_windows);
        read_into(m, "mlp_ratio", c.model.mlp_ratio);
        read_into(m, "token_dim", c.model.token_dim);
        read_into(m, "max_tokens", c.model.max_tokens);
        read_into(m, "vocab_size", c.model.vocab_size);
        read_into(m, "lang_blocks_per_stage", c.model.lang_blocks_per_stage);
        read_into(m, "feed_language_back", c.model.feed_language_back);
        read_into(m, "aligner_heads", c.model.aligner_heads);
    }
    if (j.contains("mgn")) read_into(j.at("mgn"), "channels", c.mgn_channels);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        read_into(t, "epochs", c.epochs);
        read_into(t, "batch_size", c.batch_size);
        read_into(t, "lr", c.lr);
        read_into(t, "weight_decay", c.weight_decay);
        read_into(t, "beta1", c.beta1);
        read_into(t, "beta2", c.beta2);
        read_into(t, "poly_power", c.poly_power);
        read_into(t, "clip_norm", c.clip_norm);
        read_into(t, "save_interval_epochs", c.save_interval_epochs);
        read_into(t, "eval_interval_epochs", c.eval_interval_epochs);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        read_into(l, "w_mask", c.loss_weights.w_mask);
        read_into(l, "w_quality", c.loss_weights.w_quality);
        read_into(l, "w_angle", c.loss_weights.w_angle);
        read_into(l, "w_width", c.loss_weights.w_width);
        read_into(l, "focal_gamma", c.focal_gamma);
        read_into(l, "focal_alpha", c.focal_alpha);
        read_into(l, "dice_smooth", c.dice_smooth);
    }
    if (j.contains("grasp")) {
        const auto& g = j.at("grasp");
        read_into(g, "max_width", c.max_width_416);
        read_into(g, "jaw_open", c.jaw_open_416);
        read_into(g, "quality_threshold", c.quality_threshold);
        read_into(g, "max_candidates", c.max_candidates);
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

std::string dump_run_config(const RunConfig& c) {
    json j;
    j["mode"] = c.mode;
    j["seed"] = c.seed;
    j["strict"] = c.strict;
    j["resolution"] = c.resolution;
    j["out_dir"] = c.out_dir;
    j["data"] = {{"train", c.train_data}, {"val", c.val_data}};
    j["model"] = {{"channels", c.model.channels},
                  {"depths", c.model.depths},
                  {"heads", c.model.heads},
                  {"window", c.model.window},
                  {"shifted_windows", c.model.shifted_windows},
                  {"mlp_ratio", c.model.mlp_ratio},
                  {"token_dim", c.model.token_dim},
                  {"max_tokens", c.model.max_tokens},
                  {"vocab_size", c.model.vocab_size},
                  {"lang_blocks_per_stage", c.model.lang_blocks_per_stage},
                  {"feed_language_back", c.model.feed_language_back},
                  {"aligner_heads", c.model.aligner_heads}};
    j["mgn"] = {{"channels", c.mgn_channels}};
    j["train"] = {{"epochs", c.epochs},
                  {"batch_size", c.batch_size},
                  {"lr", c.lr},
                  {"weight_decay", c.weight_decay},
                  {"beta1", c.beta1},
                  {"beta2", c.beta2},
                  {"poly_power", c.poly_power},
                  {"clip_norm", c.clip_norm},
                  {"save_interval_epochs", c.save_interval_epochs},
                  {"eval_interval_epochs", c.eval_interval_epochs}};
    j["loss"] = {{"w_mask", c.loss_weights.w_mask},
                 {"w_quality", c.loss_weights.w_quality},
                 {"w_angle", c.loss_weights.w_angle},
                 {"w_width", c.loss_weights.w_width},
                 {"focal_gamma", c.focal_gamma},
                 {"focal_alpha", c.focal_alpha},
                 {"dice_smooth", c.dice_smooth}};
    j["grasp"] = {{"max_width", c.max_width_416},
                  {"jaw_open", c.jaw_open_416},
                  {"quality_threshold", c.quality_threshold},
                  {"max_candidates", c.max_candidates}};
    return j.dump(2);
}

std::string run_config_schema() {
    RunConfig defaults;
    json schema;
    schema["description"] = "ogrg run configuration; every field is optional and defaults as shown";
    schema["defaults"] = json::parse(dump_run_config(defaults));
    schema["fields"] = {
        {"mode", "rgs | rga | mgn"},
        {"seed", "u64 master seed"},
        {"strict", "bool; single-threaded bit-deterministic numerics"},
        {"resolution", "network input size, divisible by 32"},
        {"out_dir", "checkpoints, vocab, logs"},
        {"data.train", "dataset directory with manifest.jsonl"},
        {"data.val", "optional held-out dataset directory"},
        {"model.*", "backbone sizing (channels double per stage)"},
        {"mgn.channels", "MGN encoder base width"},
        {"train.*", "optimizer and schedule"},
        {"loss.*", "task loss weights and focal/dice settings"},
        {"grasp.*", "pixel geometry at native 416 scale"},
    };
    return schema.dump(2);
}

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string canon = dump_run_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace ogrg
