#include "ogrg/metrics.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ogrg/decoder.hpp"

namespace ogrg {

std::vector<float> gaussian_smooth(const std::vector<float>& map, int h, int w, double sigma) {
    if (static_cast<std::size_t>(h) * w != map.size()) throw DimensionError("gaussian_smooth: size mismatch");
    if (sigma <= 0.0) return map;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
        kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(v);
        sum += v;
    }
    for (auto& k : kernel) k = static_cast<float>(k / sum);

    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    std::vector<float> tmp(map.size()), out(map.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       map[static_cast<std::size_t>(y) * w + clampi(x + i, 0, w - 1)];
            tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       tmp[static_cast<std::size_t>(clampi(y + i, 0, h - 1)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
        }
    return out;
}

std::vector<GraspPose> extract_rgs_pose(const std::vector<float>& quality, const std::vector<float>& angle_sin,
                                        const std::vector<float>& angle_cos, const std::vector<float>& width,
                                        const std::vector<float>& depth_m, int h, int w, int top_n,
                                        const GraspExtractConfig& cfg) {
    if (top_n < 1) throw ParameterError("extract_rgs_pose: top_n must be >= 1");
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (quality.size() != n || angle_sin.size() != n || angle_cos.size() != n || width.size() != n ||
        depth_m.size() != n)
        throw DimensionError("extract_rgs_pose: maps must share HxW");

    const std::vector<float> smooth = gaussian_smooth(quality, h, w, cfg.smooth_sigma);

    struct Candidate {
        float q;
        int y, x;
    };
    std::vector<Candidate> cands;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = smooth[static_cast<std::size_t>(y) * w + x];
            if (v < static_cast<float>(cfg.quality_threshold)) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy)
                for (int dx = -1; dx <= 1 && is_max; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    if (smooth[static_cast<std::size_t>(yy) * w + xx] > v) is_max = false;
                }
            if (is_max) cands.push_back({v, y, x});
        }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.q != b.q) return a.q > b.q;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    if (static_cast<int>(cands.size()) > cfg.max_candidates) cands.resize(static_cast<std::size_t>(cfg.max_candidates));

    std::vector<GraspPose> out;
    const int take = std::min<int>(top_n, static_cast<int>(cands.size()));
    out.reserve(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i) {
        const std::size_t idx = static_cast<std::size_t>(cands[static_cast<std::size_t>(i)].y) * w +
                                cands[static_cast<std::size_t>(i)].x;
        GraspPose p;
        p.x = cands[static_cast<std::size_t>(i)].x;
        p.y = cands[static_cast<std::size_t>(i)].y;
        p.theta = decode_angle(angle_sin[idx], angle_cos[idx]);
        p.l = width[idx] * cfg.max_width;
        p.z = depth_m[idx];
        p.score = cands[static_cast<std::size_t>(i)].q;
        out.push_back(p);
    }
    return out;
}

bool jaccard_at_n(const std::vector<GraspPose>& ranked_preds, const std::vector<GraspRectangle>& gt, int n,
                  double iou_threshold, double angle_threshold_deg) {
    if (n < 1) throw ParameterError("jaccard_at_n: n must be >= 1");
    if (gt.empty()) throw InputError("jaccard_at_n: empty ground-truth set");
    const int take = std::min<int>(n, static_cast<int>(ranked_preds.size()));
    for (int i = 0; i < take; ++i) {
        const GraspRectangle pred = rect_from_pose(ranked_preds[static_cast<std::size_t>(i)]);
        if (pred.area() <= 0.0) continue;
        for (const auto& g : gt) {
            if (rect_iou(pred, g) > iou_threshold &&
                angle_diff_deg(pred.theta, g.theta) < angle_threshold_deg)
                return true;
        }
    }
    return false;
}

double mask_iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size()) throw DimensionError("mask_iou: shape mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0;  // empty vs empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mask_miou(const std::vector<std::vector<std::uint8_t>>& preds,
                 const std::vector<std::vector<std::uint8_t>>& gts) {
    if (preds.size() != gts.size() || preds.empty()) throw DimensionError("mask_miou: set size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) acc += mask_iou(preds[i], gts[i]);
    return acc / static_cast<double>(preds.size());
}

double mask_oiou(const std::vector<std::vector<std::uint8_t>>& preds,
                 const std::vector<std::vector<std::uint8_t>>& gts) {
    if (preds.size() != gts.size() || preds.empty()) throw DimensionError("mask_oiou: set size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t s = 0; s < preds.size(); ++s) {
        if (preds[s].size() != gts[s].size()) throw DimensionError("mask_oiou: shape mismatch in pair");
        for (std::size_t i = 0; i < preds[s].size(); ++i) {
            const bool p = preds[s][i] != 0, g = gts[s][i] != 0;
            inter += (p && g) ? 1 : 0;
            uni += (p || g) ? 1 : 0;
        }
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double grasp_success_rate(const std::vector<GraspOutcome>& outcomes) {
    if (outcomes.empty()) throw InputError("grasp_success_rate: no attempts");
    std::size_t correct = 0;
    for (const auto& o : outcomes) correct += o.grasped_correct_target ? 1 : 0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(outcomes.size());
}

void write_prediction_dump(const std::string& path, const std::vector<PredictionRecord>& records) {
    std::ofstream out(path);
    if (!out) throw InputError("prediction dump: cannot write " + path);
    for (const auto& r : records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["mask"] = r.mask_path;
        nlohmann::json poses = nlohmann::json::array();
        for (const auto& p : r.poses)
            poses.push_back({p.x, p.y, p.theta * 180.0 / 3.141592653589793, p.l});
        j["poses"] = poses;
        out << j.dump() << "\n";
    }
}

std::vector<PredictionRecord> read_prediction_dump(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("prediction dump: cannot open " + path);
    std::vector<PredictionRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            PredictionRecord r;
            r.id = j.at("id").get<std::string>();
            r.mask_path = j.at("mask").get<std::string>();
            for (const auto& p : j.at("poses")) {
                GraspPose g;
                g.x = p.at(0).get<double>();
                g.y = p.at(1).get<double>();
                g.theta = p.at(2).get<double>() * 3.141592653589793 / 180.0;
                g.l = p.at(3).get<double>();
                r.poses.push_back(g);
            }
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("prediction dump: parse error at line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace ogrg
