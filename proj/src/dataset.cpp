#include "ogrg/dataset.hpp"

#include <cmath>

#include "ogrg/image_io.hpp"

namespace ogrg {

std::vector<float> resize_bilinear(const std::vector<float>& src, int sh, int sw, int dh, int dw) {
    if (src.size() != static_cast<std::size_t>(sh) * sw) throw DimensionError("resize: source size mismatch");
    std::vector<float> out(static_cast<std::size_t>(dh) * dw);
    const double sy = static_cast<double>(sh) / dh, sx = static_cast<double>(sw) / dw;
    for (int y = 0; y < dh; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::max(0, std::min(sh - 1, static_cast<int>(std::floor(fy))));
        const int y1 = std::min(sh - 1, y0 + 1);
        const double ty = std::max(0.0, std::min(1.0, fy - y0));
        for (int x = 0; x < dw; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::max(0, std::min(sw - 1, static_cast<int>(std::floor(fx))));
            const int x1 = std::min(sw - 1, x0 + 1);
            const double tx = std::max(0.0, std::min(1.0, fx - x0));
            const double top = src[static_cast<std::size_t>(y0) * sw + x0] * (1 - tx) +
                               src[static_cast<std::size_t>(y0) * sw + x1] * tx;
            const double bot = src[static_cast<std::size_t>(y1) * sw + x0] * (1 - tx) +
                               src[static_cast<std::size_t>(y1) * sw + x1] * tx;
            out[static_cast<std::size_t>(y) * dw + x] = static_cast<float>(top * (1 - ty) + bot * ty);
        }
    }
    return out;
}

std::vector<std::uint8_t> resize_mask_nearest(const std::vector<std::uint8_t>& src, int sh, int sw, int dh,
                                              int dw) {
    if (src.size() != static_cast<std::size_t>(sh) * sw) throw DimensionError("resize: source size mismatch");
    std::vector<std::uint8_t> out(static_cast<std::size_t>(dh) * dw);
    for (int y = 0; y < dh; ++y) {
        const int syi = std::min(sh - 1, static_cast<int>((y + 0.5) * sh / dh));
        for (int x = 0; x < dw; ++x) {
            const int sxi = std::min(sw - 1, static_cast<int>((x + 0.5) * sw / dw));
            out[static_cast<std::size_t>(y) * dw + x] = src[static_cast<std::size_t>(syi) * sw + sxi];
        }
    }
    return out;
}

RgsTargets<float> render_rgs_targets(const std::vector<GraspAnnotation>& grasps, int resolution,
                                     double max_width_px) {
    const int r = resolution;
    RgsTargets<float> t;
    t.mask.assign(static_cast<std::size_t>(r) * r, 0);  // filled by the caller
    t.quality = Tensor<float>(Shape{r, r});
    t.angle = Tensor<float>(Shape{2, r, r});
    t.width = Tensor<float>(Shape{r, r});
    t.grasp_region = Tensor<float>(Shape{r, r});
    const std::size_t plane = static_cast<std::size_t>(r) * r;
    for (const auto& g : grasps) {
        // center third of the rectangle along the closing axis
        const GraspRectangle core{g.x, g.y, g.theta, g.width / 3.0, g.height};
        const auto corners = core.corners();
        double x0 = 1e18, x1 = -1e18, y0 = 1e18, y1 = -1e18;
        for (const auto& c : corners) {
            x0 = std::min(x0, c[0]);
            x1 = std::max(x1, c[0]);
            y0 = std::min(y0, c[1]);
            y1 = std::max(y1, c[1]);
        }
        const double cth = std::cos(g.theta), sth = std::sin(g.theta);
        const float s2 = static_cast<float>(std::sin(2.0 * g.theta));
        const float c2 = static_cast<float>(std::cos(2.0 * g.theta));
        const float wn = static_cast<float>(std::min(1.0, g.width / max_width_px));
        for (int y = std::max(0, static_cast<int>(std::floor(y0))); y <= std::min(r - 1, static_cast<int>(std::ceil(y1))); ++y)
            for (int x = std::max(0, static_cast<int>(std::floor(x0))); x <= std::min(r - 1, static_cast<int>(std::ceil(x1))); ++x) {
                const double dx = x - g.x, dy = y - g.y;
                const double along = dx * cth + dy * sth;
                const double across = -dx * sth + dy * cth;
                if (std::abs(along) > g.width / 6.0 || std::abs(across) > g.height / 2.0) continue;
                const std::size_t p = static_cast<std::size_t>(y) * r + x;
                t.quality.values()[p] = 1.0f;
                t.grasp_region.values()[p] = 1.0f;
                t.angle.values()[p] = s2;
                t.angle.values()[plane + p] = c2;
                t.width.values()[p] = wn;
            }
    }
    return t;
}

Tensor<float> image_to_tensor(const std::vector<std::uint8_t>& rgb, int h, int w) {
    if (rgb.size() != static_cast<std::size_t>(h) * w * 3) throw DimensionError("image_to_tensor: size mismatch");
    Tensor<float> out(Shape{3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) {
            const float v01 = rgb[p * 3 + static_cast<std::size_t>(c)] / 255.0f;
            out.values()[static_cast<std::size_t>(c) * plane + p] = (v01 - 0.5f) / 0.25f;
        }
    return out;
}

Tensor<float> depth_to_raw_tensor(const std::vector<std::uint16_t>& depth_mm, int h, int w) {
    if (depth_mm.size() != static_cast<std::size_t>(h) * w)
        throw DimensionError("depth_to_raw_tensor: size mismatch");
    Tensor<float> out(Shape{1, h, w});
    for (std::size_t i = 0; i < depth_mm.size(); ++i) out.values()[i] = depth_mm[i] / 1000.0f;
    return out;
}

namespace {

LoadedSample assemble(const std::string& id, const std::vector<std::uint8_t>& rgb,
                      const std::vector<std::uint16_t>& depth_mm,
                      const std::vector<std::uint8_t>& mask01, int native, const std::string& expr,
                      const std::vector<GraspAnnotation>& grasps, const WeakGraspLabel& weak,
                      const Vocab& vocab, int resolution, int max_tokens, double max_width_px) {
    LoadedSample s;
    s.id = id;
    const int r = resolution;
    const double k = static_cast<double>(r) / native;

    // resize channels
    std::vector<float> ch(static_cast<std::size_t>(native) * native);
    Tensor<float> img(Shape{3, r, r});
    const std::size_t plane_n = static_cast<std::size_t>(native) * native;
    const std::size_t plane_r = static_cast<std::size_t>(r) * r;
    for (int c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < plane_n; ++p) ch[p] = rgb[p * 3 + static_cast<std::size_t>(c)] / 255.0f;
        const auto rs = resize_bilinear(ch, native, native, r, r);
        for (std::size_t p = 0; p < plane_r; ++p)
            img.values()[static_cast<std::size_t>(c) * plane_r + p] = (rs[p] - 0.5f) / 0.25f;
    }
    s.image = img;

    std::vector<float> dm(plane_n);
    for (std::size_t p = 0; p < plane_n; ++p) dm[p] = depth_mm[p] / 1000.0f;
    s.depth_m = resize_bilinear(dm, native, native, r, r);
    Tensor<float> draw(Shape{1, r, r}, std::vector<float>(s.depth_m.begin(), s.depth_m.end()));
    s.depth_norm = normalize_depth(draw);

    s.target_mask = resize_mask_nearest(mask01, native, native, r, r);

    s.tokens = tokenize(expr, vocab, max_tokens);

    for (const auto& g : grasps)
        s.grasps.push_back({g.x * k, g.y * k, g.theta, g.width * k, g.height * k});
    s.weak = {static_cast<int>(std::lround(weak.x * k)), static_cast<int>(std::lround(weak.y * k)), weak.k,
              weak.label};
    s.weak.x = std::min(r - 1, std::max(0, s.weak.x));
    s.weak.y = std::min(r - 1, std::max(0, s.weak.y));

    s.targets = render_rgs_targets(s.grasps, r, max_width_px);
    s.targets.mask = s.target_mask;
    return s;
}

}  // namespace

LoadedSample load_sample(const ManifestRecord& rec, const Vocab& vocab, int resolution, int max_tokens,
                         double max_width_px) {
    const PngImage rgb = read_png(rec.rgb);
    if (rgb.channels != 3 || rgb.bit_depth != 8) throw InputError("load_sample: " + rec.rgb + " is not 8-bit RGB");
    const PngImage dep = read_png(rec.depth);
    if (dep.bit_depth != 16) throw InputError("load_sample: " + rec.depth + " is not 16-bit gray");
    const PngImage msk = read_png(rec.target_mask);
    if (msk.channels != 1 || msk.bit_depth != 8)
        throw InputError("load_sample: " + rec.target_mask + " is not 8-bit gray");
    if (rgb.w != rgb.h || dep.w != rgb.w || msk.w != rgb.w)
        throw InputError("load_sample: image sizes disagree for id " + rec.id);

    std::vector<std::uint8_t> mask01(msk.data8.size());
    for (std::size_t i = 0; i < mask01.size(); ++i) mask01[i] = msk.data8[i] >= 128 ? 1 : 0;

    return assemble(rec.id, rgb.data8, dep.data16, mask01, rgb.w, rec.expr, rec.grasps, rec.weak, vocab,
                    resolution, max_tokens, max_width_px);
}

LoadedSample scene_to_sample(const SceneSample& scene, const Vocab& vocab, int resolution, int max_tokens,
                             double max_width_px) {
    if (scene.target < 0) throw ContractError("scene_to_sample: scene has no target");
    return assemble("live", scene.rgb, scene.depth_mm, scene.masks[static_cast<std::size_t>(scene.target)],
                    scene.size, scene.expression, scene.target_grasps, scene.weak, vocab, resolution,
                    max_tokens, max_width_px);
}

std::vector<std::string> corpus_from_manifest(const std::vector<ManifestRecord>& records) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.expr);
    return out;
}

}  // namespace ogrg
