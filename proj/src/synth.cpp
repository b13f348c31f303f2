#include "ogrg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "ogrg/image_io.hpp"

namespace fs = std::filesystem;

namespace ogrg {

namespace {
constexpr double kPi = 3.141592653589793;
}

std::string shape_word(ShapeKind k) {
    switch (k) {
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Square: return "square";
        case ShapeKind::Rectangle: return "rectangle";
        case ShapeKind::Triangle: return "triangle";
        case ShapeKind::Ell: return "ell";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// object pool: 8 categories x 4 colors

namespace {

struct CategoryDef {
    const char* name;
    ShapeKind shape;
    double size_a, size_b;
    double height_m;
};

const std::array<CategoryDef, 8> kCategories{{
    {"dice", ShapeKind::Square, 32, 32, 0.032},
    {"tile", ShapeKind::Square, 46, 46, 0.016},
    {"cup", ShapeKind::Circle, 40, 40, 0.070},
    {"plate", ShapeKind::Circle, 58, 58, 0.020},
    {"box", ShapeKind::Rectangle, 52, 26, 0.050},
    {"bar", ShapeKind::Rectangle, 60, 18, 0.028},
    {"wedge", ShapeKind::Triangle, 44, 44, 0.036},
    {"banana", ShapeKind::Ell, 52, 16, 0.024},
}};

struct ColorDef {
    const char* name;
    std::array<std::uint8_t, 3> rgb;
};

const std::array<ColorDef, 4> kColors{{
    {"red", {205, 45, 45}},
    {"green", {45, 170, 70}},
    {"blue", {50, 90, 210}},
    {"yellow", {230, 205, 50}},
}};

}  // namespace

const std::vector<ObjectSpec>& object_pool() {
    static const std::vector<ObjectSpec> pool = [] {
        std::vector<ObjectSpec> out;
        int id = 0;
        for (const auto& cat : kCategories)
            for (const auto& col : kColors) {
                ObjectSpec o;
                o.pool_id = id++;
                o.shape = cat.shape;
                o.category = cat.name;
                o.color = col.name;
                o.rgb = col.rgb;
                o.size_a = cat.size_a;
                o.size_b = cat.size_b;
                o.height_m = cat.height_m;
                out.push_back(o);
            }
        return out;
    }();
    return pool;
}

// ---------------------------------------------------------------------------
// footprints

Footprint footprint_of(const ObjectSpec& obj) {
    Footprint f;
    f.cx = obj.x;
    f.cy = obj.y;
    const double c = std::cos(obj.orient), s = std::sin(obj.orient);
    auto place = [&](double lx, double ly) -> Point {
        return {obj.x + c * lx - s * ly, obj.y + s * lx + c * ly};
    };
    switch (obj.shape) {
        case ShapeKind::Circle:
            f.is_circle = true;
            f.r = obj.size_a * 0.5;
            break;
        case ShapeKind::Square: {
            const double h = obj.size_a * 0.5;
            f.poly = {place(-h, -h), place(h, -h), place(h, h), place(-h, h)};
            break;
        }
        case ShapeKind::Rectangle: {
            const double ha = obj.size_a * 0.5, hb = obj.size_b * 0.5;
            f.poly = {place(-ha, -hb), place(ha, -hb), place(ha, hb), place(-ha, hb)};
            break;
        }
        case ShapeKind::Triangle: {
            const double r = obj.size_a / std::sqrt(3.0);
            for (int k = 0; k < 3; ++k) {
                const double a = kPi / 2 + k * 2.0 * kPi / 3.0;
                f.poly.push_back(place(r * std::cos(a), r * std::sin(a)));
            }
            break;
        }
        case ShapeKind::Ell: {
            const double h = obj.size_a * 0.5, b = obj.size_b;
            f.poly = {place(-h, -h), place(h, -h),          place(h, -h + b),
                      place(-h + b, -h + b), place(-h + b, h), place(-h, h)};
            break;
        }
    }
    return f;
}

bool footprint_contains(const Footprint& f, double x, double y) {
    if (f.is_circle) {
        const double dx = x - f.cx, dy = y - f.cy;
        return dx * dx + dy * dy <= f.r * f.r;
    }
    // crossing-number test
    bool inside = false;
    const std::size_t n = f.poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = f.poly[i];
        const Point& b = f.poly[j];
        if ((a[1] > y) != (b[1] > y)) {
            const double t = (y - a[1]) / (b[1] - a[1]);
            if (x < a[0] + t * (b[0] - a[0])) inside = !inside;
        }
    }
    return inside;
}

double footprint_bound_radius(const ObjectSpec& obj) {
    switch (obj.shape) {
        case ShapeKind::Circle: return obj.size_a * 0.5;
        case ShapeKind::Square: return obj.size_a * 0.5 * std::sqrt(2.0);
        case ShapeKind::Rectangle:
            return 0.5 * std::hypot(obj.size_a, obj.size_b);
        case ShapeKind::Triangle: return obj.size_a / std::sqrt(3.0);
        case ShapeKind::Ell: return obj.size_a * 0.5 * std::sqrt(2.0);
    }
    return obj.size_a;
}

namespace {

Point footprint_centroid(const Footprint& f) {
    if (f.is_circle) return {f.cx, f.cy};
    double a = 0, cx = 0, cy = 0;
    const std::size_t n = f.poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = f.poly[i];
        const Point& q = f.poly[(i + 1) % n];
        const double cross = p[0] * q[1] - q[0] * p[1];
        a += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    a *= 0.5;
    return {cx / (6.0 * a), cy / (6.0 * a)};
}

}  // namespace

// ---------------------------------------------------------------------------
// background textures

namespace {

using Rgb = std::array<std::uint8_t, 3>;

Rgb muted(Rng& rng) {
    const int base = rng.irange(110, 185);
    const int dr = rng.irange(-18, 18), dg = rng.irange(-18, 18), db = rng.irange(-18, 18);
    auto clamp8 = [](int v) { return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v)); };
    return {clamp8(base + dr), clamp8(base + dg), clamp8(base + db)};
}

void paint_background(std::vector<std::uint8_t>& rgb, int size, bool test_bank, Rng& rng) {
    const int n_train = 8, n_test = 6;
    const int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(test_bank ? n_test : n_train)));
    const Rgb a = muted(rng), b = muted(rng);
    auto put = [&](int x, int y, const Rgb& c) {
        const std::size_t o = (static_cast<std::size_t>(y) * size + x) * 3;
        rgb[o] = c[0];
        rgb[o + 1] = c[1];
        rgb[o + 2] = c[2];
    };
    const double ph = rng.uniform(0.0, 2.0 * kPi);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            bool pick_b = false;
            double t = -1.0;  // when >= 0, blend a..b
            if (!test_bank) {
                switch (idx) {
                    case 0: break;  // solid
                    case 1: pick_b = ((x / 24) + (y / 24)) % 2 == 1; break;
                    case 2: pick_b = (y / 16) % 2 == 1; break;
                    case 3: pick_b = (x / 16) % 2 == 1; break;
                    case 4: pick_b = (((x + y) / 20) % 2) == 1; break;
                    case 5: t = 0.5 + 0.5 * std::sin(x * 0.045 + ph) * std::sin(y * 0.038 + ph); break;
                    case 6: t = static_cast<double>(x) / size; break;
                    case 7: pick_b = ((x % 28) < 6) && ((y % 28) < 6); break;
                }
            } else {
                const double cxd = x - size / 2.0, cyd = y - size / 2.0;
                switch (idx) {
                    case 0: pick_b = (static_cast<int>(std::sqrt(cxd * cxd + cyd * cyd)) / 18) % 2 == 1; break;
                    case 1: pick_b = ((x / 12) % 2) ^ ((y / 12) % 2); break;
                    case 2: pick_b = ((x + 2 * y) / 22) % 2 == 1; break;
                    case 3: t = 0.5 + 0.5 * std::sin(x * 0.11 + ph) * std::cos(y * 0.07 - ph); break;
                    case 4: t = static_cast<double>(x + y) / (2.0 * size); break;
                    case 5: pick_b = ((x % 14) < 7) ^ ((y % 14) < 7); break;
                }
            }
            Rgb c;
            if (t >= 0.0) {
                for (int ch = 0; ch < 3; ++ch)
                    c[static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>(
                        a[static_cast<std::size_t>(ch)] +
                        t * (b[static_cast<std::size_t>(ch)] - a[static_cast<std::size_t>(ch)]));
            } else {
                c = pick_b ? b : a;
            }
            put(x, y, c);
        }
}

}  // namespace

// ---------------------------------------------------------------------------
// scene generation

SceneSample gen_scene(std::uint64_t seed, int n_objects, bool allow_duplicates, const SynthConfig& cfg) {
    if (n_objects < 1 || n_objects > 7)
        throw ParameterError("gen_scene: object count must lie in [1,7]");
    Rng rng(Rng::mix(seed, 0xa11ce));
    const auto& pool = object_pool();

    SceneSample scene;
    scene.size = cfg.size;

    // pool selection
    std::vector<int> picks;
    if (allow_duplicates) {
        for (int i = 0; i < n_objects; ++i) picks.push_back(static_cast<int>(rng.below(pool.size())));
    } else {
        std::vector<int> ids(pool.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
        rng.shuffle(ids);
        picks.assign(ids.begin(), ids.begin() + n_objects);
    }

    // duplicated instances share their orientation so they stay identical
    std::unordered_map<int, double> orients;
    for (int id : picks)
        if (!orients.count(id)) orients[id] = rng.uniform(0.0, kPi);

    // rejection-sample non-overlapping integer positions
    for (int i = 0; i < n_objects; ++i) {
        ObjectSpec obj = pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)])];
        obj.orient = orients[obj.pool_id];
        const double bound = footprint_bound_radius(obj);
        const int lo = std::max(cfg.margin, static_cast<int>(std::ceil(bound)) + 6);
        const int hi = cfg.size - lo;
        if (hi <= lo) throw GenerationError("gen_scene: workspace too small for object");
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            obj.x = rng.irange(lo, hi);
            obj.y = rng.irange(lo, hi);
            placed = true;
            for (const auto& other : scene.objects) {
                const double need = bound + footprint_bound_radius(other) + cfg.min_gap;
                const double dx = obj.x - other.x, dy = obj.y - other.y;
                if (dx * dx + dy * dy < need * need) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) throw GenerationError("gen_scene: placement failed after 1000 tries");
        scene.objects.push_back(obj);
    }

    // raster
    const int size = cfg.size;
    scene.rgb.assign(static_cast<std::size_t>(size) * size * 3, 0);
    scene.depth_mm.assign(static_cast<std::size_t>(size) * size,
                          static_cast<std::uint16_t>(std::lround(cfg.table_depth_m * 1000.0)));
    paint_background(scene.rgb, size, cfg.test_textures, rng);

    for (const auto& obj : scene.objects) {
        const Footprint f = footprint_of(obj);
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
        const double bound = footprint_bound_radius(obj);
        const int x0 = std::max(0, static_cast<int>(std::floor(obj.x - bound - 1)));
        const int x1 = std::min(size - 1, static_cast<int>(std::ceil(obj.x + bound + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(obj.y - bound - 1)));
        const int y1 = std::min(size - 1, static_cast<int>(std::ceil(obj.y + bound + 1)));
        const std::uint16_t d = static_cast<std::uint16_t>(
            std::lround((cfg.table_depth_m - obj.height_m) * 1000.0));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (!footprint_contains(f, x, y)) continue;
                const std::size_t p = static_cast<std::size_t>(y) * size + x;
                mask[p] = 1;
                scene.depth_mm[p] = d;
                scene.rgb[p * 3] = obj.rgb[0];
                scene.rgb[p * 3 + 1] = obj.rgb[1];
                scene.rgb[p * 3 + 2] = obj.rgb[2];
            }
        scene.masks.push_back(std::move(mask));
    }
    return scene;
}

// ---------------------------------------------------------------------------
// expression grammar

namespace {

const std::vector<std::string> kVerbs{"grasp", "grasp me", "pass me", "pick up", "give me"};
const std::array<const char*, 3> kRows{"top", "middle", "bottom"};
const std::array<const char*, 3> kCols{"left", "center", "right"};

// compass sectors in image coordinates (y grows downward), 45 degrees apart
const std::array<const char*, 8> kSectors{
    "to the right of",       "to the lower right of", "below",
    "to the lower left of",  "to the left of",        "to the upper left of",
    "above",                 "to the upper right of",
};

bool is_color(const std::string& w) {
    for (const auto& c : kColors)
        if (w == c.name) return true;
    return false;
}
bool is_category(const std::string& w) {
    for (const auto& c : kCategories)
        if (w == c.name) return true;
    return false;
}
bool is_shape_word(const std::string& w) {
    return w == "circle" || w == "square" || w == "rectangle" || w == "triangle" || w == "ell";
}
bool is_row(const std::string& w) { return w == "top" || w == "middle" || w == "bottom"; }
bool is_col(const std::string& w) { return w == "left" || w == "center" || w == "right"; }

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

}  // namespace

int region_row_of(double y, int size) { return std::min(2, static_cast<int>(y / (size / 3.0))); }
int region_col_of(double x, int size) { return std::min(2, static_cast<int>(x / (size / 3.0))); }

std::optional<std::string> sector_of(double from_x, double from_y, double to_x, double to_y,
                                     double margin_deg) {
    const double dx = to_x - from_x, dy = to_y - from_y;
    if (dx == 0.0 && dy == 0.0) return std::nullopt;
    double ang = std::atan2(dy, dx) * 180.0 / kPi;
    if (ang < 0) ang += 360.0;
    const int sector = static_cast<int>(std::lround(ang / 45.0)) % 8;
    const double center = sector * 45.0;
    double dist = std::abs(ang - center);
    if (dist > 180.0) dist = 360.0 - dist;
    if (dist > 22.5 - margin_deg) return std::nullopt;
    return std::string(kSectors[static_cast<std::size_t>(sector)]);
}

ParsedExpression parse_expression(const std::string& text) {
    std::vector<std::string> w = split_words(text);
    // strip the longest matching verb phrase
    std::size_t pos = 0;
    {
        std::size_t best = 0;
        for (const auto& verb : kVerbs) {
            const auto vw = split_words(verb);
            if (vw.size() > w.size()) continue;
            if (std::equal(vw.begin(), vw.end(), w.begin()) && vw.size() > best) best = vw.size();
        }
        if (best == 0) throw ParseError("expression: no leading verb in: " + text);
        pos = best;
    }
    if (pos >= w.size() || w[pos] != "the") throw ParseError("expression: expected 'the' after verb");
    ++pos;
    std::vector<std::string> rest(w.begin() + static_cast<std::ptrdiff_t>(pos), w.end());
    if (rest.empty()) throw ParseError("expression: nothing after 'the'");

    ParsedExpression out;
    auto ends_here = [&](std::size_t used) { return rest.size() == used; };

    // abs form 1: "<row> <col> <category>"
    if (rest.size() == 3 && is_row(rest[0]) && is_col(rest[1]) && is_category(rest[2])) {
        out.template_class = "abs";
        out.region_row = rest[0];
        out.region_col = rest[1];
        out.category = rest[2];
        return out;
    }
    // attr templates: "<color> <shape> [<category>]"
    if (is_color(rest[0])) {
        if (rest.size() == 2 && is_shape_word(rest[1])) {
            out.template_class = "attr_base";
            out.color = rest[0];
            out.shape = rest[1];
            return out;
        }
        if (rest.size() == 3 && is_shape_word(rest[1]) && is_category(rest[2])) {
            out.template_class = "attr_cls";
            out.color = rest[0];
            out.shape = rest[1];
            out.category = rest[2];
            return out;
        }
        throw ParseError("expression: malformed attribute phrase in: " + text);
    }
    // "<category> that is ..." forms
    if (!is_category(rest[0]) || rest.size() < 4 || rest[1] != "that" || rest[2] != "is")
        throw ParseError("expression: unrecognized form: " + text);
    out.category = rest[0];
    std::vector<std::string> tail(rest.begin() + 3, rest.end());

    // abs form 2: "to the <row> <col> of the workspace"
    if (tail.size() == 7 && tail[0] == "to" && tail[1] == "the" && is_row(tail[2]) && is_col(tail[3]) &&
        tail[4] == "of" && tail[5] == "the" && tail[6] == "workspace") {
        out.template_class = "abs";
        out.region_row = tail[2];
        out.region_col = tail[3];
        return out;
    }
    // rel: "<sector phrase> the <color> <category>"
    for (const auto* sec : kSectors) {
        const auto sw = split_words(sec);
        if (tail.size() != sw.size() + 3) continue;
        if (!std::equal(sw.begin(), sw.end(), tail.begin())) continue;
        const std::size_t p = sw.size();
        if (tail[p] != "the" || !is_color(tail[p + 1]) || !is_category(tail[p + 2])) continue;
        out.template_class = "rel";
        out.sector = sec;
        out.ref_color = tail[p + 1];
        out.ref_category = tail[p + 2];
        (void)ends_here;
        return out;
    }
    throw ParseError("expression: unrecognized spatial phrase in: " + text);
}

std::vector<int> evaluate_expression(const ParsedExpression& e, const SceneSample& scene) {
    std::vector<int> hits;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        const ObjectSpec& o = scene.objects[i];
        bool ok = true;
        if (!e.color.empty()) ok = ok && o.color == e.color;
        if (!e.shape.empty()) ok = ok && shape_word(o.shape) == e.shape;
        if (!e.category.empty()) ok = ok && o.category == e.category;
        if (!ok) continue;
        if (e.template_class == "abs") {
            const Point c = footprint_centroid(footprint_of(o));
            const int row = region_row_of(c[1], scene.size);
            const int col = region_col_of(c[0], scene.size);
            ok = kRows[static_cast<std::size_t>(row)] == e.region_row &&
                 kCols[static_cast<std::size_t>(col)] == e.region_col;
        } else if (e.template_class == "rel") {
            bool any_ref = false;
            for (std::size_t j = 0; j < scene.objects.size() && !any_ref; ++j) {
                if (j == i) continue;
                const ObjectSpec& r = scene.objects[j];
                if (r.color != e.ref_color || r.category != e.ref_category) continue;
                if (std::hypot(o.x - r.x, o.y - r.y) < 30.0) continue;
                auto sec = sector_of(r.x, r.y, o.x, o.y, 0.0);
                any_ref = sec && *sec == e.sector;
            }
            ok = any_ref;
        }
        if (ok) hits.push_back(static_cast<int>(i));
    }
    return hits;
}

// ---------------------------------------------------------------------------
// expression generation

namespace {

// 2 px interior margin on region cells keeps boundary centroids out of abs
// expressions (they get resampled instead).
bool region_unambiguous(const Point& c, int size) {
    const double cell = size / 3.0;
    for (int k = 1; k <= 2; ++k) {
        if (std::abs(c[0] - k * cell) < 2.0) return false;
        if (std::abs(c[1] - k * cell) < 2.0) return false;
    }
    return true;
}

std::string make_name(const ObjectSpec& o, const std::string& cls) {
    if (cls == "attr_base") return o.color + " " + shape_word(o.shape);
    if (cls == "attr_cls") return o.color + " " + shape_word(o.shape) + " " + o.category;
    return o.category;
}

}  // namespace

void gen_expression(SceneSample& scene, const std::string& template_class, std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xe4b));
    std::vector<int> order(scene.objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    const std::string& verb = kVerbs[static_cast<std::size_t>(rng.below(kVerbs.size()))];

    for (int ti : order) {
        const ObjectSpec& t = scene.objects[static_cast<std::size_t>(ti)];
        std::string text;
        if (template_class == "attr_base" || template_class == "attr_cls") {
            text = verb + " the " + make_name(t, template_class);
        } else if (template_class == "abs") {
            const Point c = footprint_centroid(footprint_of(t));
            if (!region_unambiguous(c, scene.size)) continue;
            const std::string row = kRows[static_cast<std::size_t>(region_row_of(c[1], scene.size))];
            const std::string col = kCols[static_cast<std::size_t>(region_col_of(c[0], scene.size))];
            if (rng.below(2) == 0)
                text = verb + " the " + row + " " + col + " " + t.category;
            else
                text = verb + " the " + t.category + " that is to the " + row + " " + col +
                       " of the workspace";
        } else if (template_class == "rel") {
            std::vector<int> refs(scene.objects.size());
            for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = static_cast<int>(i);
            rng.shuffle(refs);
            for (int ri : refs) {
                if (ri == ti) continue;
                const ObjectSpec& r = scene.objects[static_cast<std::size_t>(ri)];
                if (std::hypot(t.x - r.x, t.y - r.y) < 30.0) continue;
                auto sec = sector_of(r.x, r.y, t.x, t.y);
                if (!sec) continue;
                std::string cand = verb + " the " + t.category + " that is " + *sec + " the " + r.color +
                                   " " + r.category;
                ParsedExpression pe = parse_expression(cand);
                auto hits = evaluate_expression(pe, scene);
                if (hits.size() == 1 && hits[0] == ti) {
                    text = std::move(cand);
                    break;
                }
            }
            if (text.empty()) continue;
        } else {
            throw ParameterError("gen_expression: unknown template class " + template_class);
        }

        ParsedExpression pe = parse_expression(text);
        auto hits = evaluate_expression(pe, scene);
        if (hits.size() == 1 && hits[0] == ti) {
            scene.expression = text;
            scene.template_class = template_class;
            scene.target = ti;
            return;
        }
    }
    throw GenerationError("gen_expression: no unique referent for class " + template_class);
}

// ---------------------------------------------------------------------------
// grasp oracle

namespace {

// Extent of footprint ∩ band along the closing axis u. The band is centered
// on the grasp line with half-width across = h/2.
bool band_extent(const Footprint& f, const Point& center, const Point& u, const Point& v, double half_h,
                 double& lo, double& hi) {
    if (f.is_circle) {
        const double off = (f.cx - center[0]) * v[0] + (f.cy - center[1]) * v[1];
        const double cu = (f.cx - center[0]) * u[0] + (f.cy - center[1]) * u[1];
        const double t = std::clamp(off, -half_h, half_h);
        const double d = std::abs(t - off);
        if (d > f.r) return false;
        const double half = std::sqrt(f.r * f.r - d * d);
        lo = cu - half;
        hi = cu + half;
        return true;
    }
    bool any = false;
    lo = 1e18;
    hi = -1e18;
    auto account = [&](double px, double py) {
        const double across = (px - center[0]) * v[0] + (py - center[1]) * v[1];
        if (std::abs(across) > half_h + 1e-12) return;
        const double along = (px - center[0]) * u[0] + (py - center[1]) * u[1];
        lo = std::min(lo, along);
        hi = std::max(hi, along);
        any = true;
    };
    const std::size_t n = f.poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = f.poly[i];
        const Point& b = f.poly[(i + 1) % n];
        account(a[0], a[1]);
        // crossings with the two band boundary lines across = +-half_h
        const double ax = (a[0] - center[0]) * v[0] + (a[1] - center[1]) * v[1];
        const double bx = (b[0] - center[0]) * v[0] + (b[1] - center[1]) * v[1];
        for (double bound : {-half_h, half_h}) {
            if ((ax - bound) * (bx - bound) < 0.0) {
                const double t = (bound - ax) / (bx - ax);
                account(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]));
            }
        }
    }
    return any;
}

double seg_point_dist2(const Point& a, const Point& b, double px, double py) {
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - a[0]) * dx + (py - a[1]) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = a[0] + t * dx - px, qy = a[1] + t * dy - py;
    return qx * qx + qy * qy;
}

bool segments_intersect(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
    auto orient2 = [](const Point& a, const Point& b, const Point& c) {
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    };
    const double d1 = orient2(q1, q2, p1), d2 = orient2(q1, q2, p2);
    const double d3 = orient2(p1, p2, q1), d4 = orient2(p1, p2, q2);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    auto on_seg = [](const Point& a, const Point& b, const Point& c) {
        return std::min(a[0], b[0]) - 1e-12 <= c[0] && c[0] <= std::max(a[0], b[0]) + 1e-12 &&
               std::min(a[1], b[1]) - 1e-12 <= c[1] && c[1] <= std::max(a[1], b[1]) + 1e-12;
    };
    if (d1 == 0 && on_seg(q1, q2, p1)) return true;
    if (d2 == 0 && on_seg(q1, q2, p2)) return true;
    if (d3 == 0 && on_seg(p1, p2, q1)) return true;
    if (d4 == 0 && on_seg(p1, p2, q2)) return true;
    return false;
}

bool segment_hits_footprint(const Footprint& f, const Point& a, const Point& b) {
    if (f.is_circle) return seg_point_dist2(a, b, f.cx, f.cy) <= f.r * f.r;
    if (footprint_contains(f, a[0], a[1]) || footprint_contains(f, b[0], b[1])) return true;
    const std::size_t n = f.poly.size();
    for (std::size_t i = 0; i < n; ++i)
        if (segments_intersect(a, b, f.poly[i], f.poly[(i + 1) % n])) return true;
    return false;
}

}  // namespace

OracleOutcome grasp_success_oracle(const SceneSample& scene, const GraspPose& pose) {
    OracleOutcome out;
    if (pose.l <= 0.0) return out;

    int hit = -1;
    std::vector<Footprint> prints;
    prints.reserve(scene.objects.size());
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        prints.push_back(footprint_of(scene.objects[i]));
        if (hit < 0 && footprint_contains(prints.back(), pose.x, pose.y)) hit = static_cast<int>(i);
    }
    if (hit < 0) return out;

    const Point u{std::cos(pose.theta), std::sin(pose.theta)};
    const Point v{-u[1], u[0]};
    const Point c{pose.x, pose.y};
    const double jaw_len = pose.l * 0.5;  // contact segment length h = l/2

    // (b) the object must fit between the jaws
    double lo = 0, hi = 0;
    if (!band_extent(prints[static_cast<std::size_t>(hit)], c, u, v, jaw_len * 0.5, lo, hi)) return out;
    if (hi - lo >= pose.l) return out;

    // (c) jaw contact segments clear every footprint
    for (double side : {-1.0, 1.0}) {
        const Point jc{c[0] + side * (pose.l * 0.5) * u[0], c[1] + side * (pose.l * 0.5) * u[1]};
        const Point a{jc[0] - (jaw_len * 0.5) * v[0], jc[1] - (jaw_len * 0.5) * v[1]};
        const Point b{jc[0] + (jaw_len * 0.5) * v[0], jc[1] + (jaw_len * 0.5) * v[1]};
        for (const auto& f : prints)
            if (segment_hits_footprint(f, a, b)) return out;
    }

    out.grasped_any = true;
    out.grasped_correct_target = hit == scene.target;
    return out;
}

// ---------------------------------------------------------------------------
// grasp targets and weak labels

namespace {

struct GraspCandidate {
    double x, y, theta, extent;
};

std::vector<GraspCandidate> candidate_grasps(const ObjectSpec& o) {
    std::vector<GraspCandidate> out;
    auto world = [&](double lx, double ly) -> Point {
        const double c = std::cos(o.orient), s = std::sin(o.orient);
        return {o.x + c * lx - s * ly, o.y + s * lx + c * ly};
    };
    switch (o.shape) {
        case ShapeKind::Circle:
            for (int k = 0; k < 6; ++k) out.push_back({o.x, o.y, k * kPi / 6.0, o.size_a});
            break;
        case ShapeKind::Square:
            out.push_back({o.x, o.y, o.orient, o.size_a});
            out.push_back({o.x, o.y, o.orient + kPi / 2.0, o.size_a});
            break;
        case ShapeKind::Rectangle:
            out.push_back({o.x, o.y, o.orient + kPi / 2.0, o.size_b});  // across the minor axis
            out.push_back({o.x, o.y, o.orient, o.size_a});
            break;
        case ShapeKind::Triangle:
            for (int k = 0; k < 3; ++k)
                out.push_back({o.x, o.y, o.orient + kPi / 2.0 + k * 2.0 * kPi / 3.0,
                               o.size_a * std::sqrt(3.0) / 2.0});
            break;
        case ShapeKind::Ell: {
            const double h = o.size_a * 0.5, b = o.size_b;
            // grasp each arm in its outer half, clear of the corner junction
            const double along = (b * 0.5 + h) * 0.5 + (h - b * 0.5) * 0.25;
            const Point bar = world(along, -h + b * 0.5);
            const Point col = world(-h + b * 0.5, along);
            out.push_back({bar[0], bar[1], o.orient + kPi / 2.0, b});
            out.push_back({col[0], col[1], o.orient, b});
            break;
        }
    }
    for (auto& g : out) {
        // fold into (-pi/2, pi/2]
        while (g.theta > kPi / 2.0) g.theta -= kPi;
        while (g.theta <= -kPi / 2.0) g.theta += kPi;
    }
    return out;
}

int rotation_bin(double theta, int n_rot) {
    double deg = theta * 180.0 / kPi;
    while (deg < 0) deg += 180.0;
    return static_cast<int>(std::lround(deg / (180.0 / n_rot))) % n_rot;
}

double bin_angle(int k, int n_rot) {
    double deg = k * (180.0 / n_rot);
    if (deg > 90.0) deg -= 180.0;
    return deg * kPi / 180.0;
}

}  // namespace

void gen_grasp_targets(SceneSample& scene, std::uint64_t seed, const SynthConfig& cfg) {
    if (scene.target < 0) throw ContractError("gen_grasp_targets: scene has no target");
    Rng rng(Rng::mix(seed, 0x9ca5));
    const ObjectSpec& t = scene.objects[static_cast<std::size_t>(scene.target)];

    scene.target_grasps.clear();
    for (const auto& cand : candidate_grasps(t)) {
        const double width = std::min(cand.extent * 1.4 + 8.0, cfg.max_width);
        GraspPose pose{cand.x, cand.y, 0.0, cand.theta, width, 0.0};
        const OracleOutcome oc = grasp_success_oracle(scene, pose);
        if (oc.grasped_any && oc.grasped_correct_target)
            scene.target_grasps.push_back({cand.x, cand.y, cand.theta, width, width * 0.5});
    }
    if (scene.target_grasps.empty())
        throw GenerationError("gen_grasp_targets: target admits no clear grasp");

    // weak label: positive on a valid grasp cell, negative on background or a
    // failing rotation bin; both adjudicated by the oracle
    const bool want_positive = rng.below(2) == 0;
    const Footprint tf = footprint_of(t);
    WeakGraspLabel weak{};
    bool done = false;

    if (want_positive) {
        for (int attempt = 0; attempt < 32 && !done; ++attempt) {
            const GraspAnnotation& g =
                scene.target_grasps[static_cast<std::size_t>(rng.below(scene.target_grasps.size()))];
            const int px = static_cast<int>(std::lround(g.x + rng.uniform(-g.width / 6.0, g.width / 6.0)));
            const int py = static_cast<int>(std::lround(g.y + rng.uniform(-g.height / 6.0, g.height / 6.0)));
            if (px < 0 || px >= scene.size || py < 0 || py >= scene.size) continue;
            if (!footprint_contains(tf, px, py)) continue;
            const int k = rotation_bin(g.theta, cfg.rotations);
            const GraspPose pose{static_cast<double>(px), static_cast<double>(py), 0.0,
                                 bin_angle(k, cfg.rotations), cfg.jaw_open, 0.0};
            const OracleOutcome oc = grasp_success_oracle(scene, pose);
            if (oc.grasped_any && oc.grasped_correct_target) {
                weak = {px, py, k, 1};
                done = true;
            }
        }
    }
    if (!done) {
        // try a failing rotation bin at the target center first
        std::vector<int> bins(static_cast<std::size_t>(cfg.rotations));
        for (int k = 0; k < cfg.rotations; ++k) bins[static_cast<std::size_t>(k)] = k;
        rng.shuffle(bins);
        for (int k : bins) {
            const GraspPose pose{t.x, t.y, 0.0, bin_angle(k, cfg.rotations), cfg.jaw_open, 0.0};
            if (!grasp_success_oracle(scene, pose).grasped_correct_target &&
                footprint_contains(tf, t.x, t.y)) {
                weak = {static_cast<int>(std::lround(t.x)), static_cast<int>(std::lround(t.y)), k, 0};
                done = true;
                break;
            }
        }
    }
    if (!done) {
        // background pixel
        for (int attempt = 0; attempt < 256 && !done; ++attempt) {
            const int px = rng.irange(0, scene.size - 1);
            const int py = rng.irange(0, scene.size - 1);
            bool on_object = false;
            for (const auto& m : scene.masks)
                on_object = on_object || m[static_cast<std::size_t>(py) * scene.size + px] != 0;
            if (on_object) continue;
            const int k = rng.irange(0, cfg.rotations - 1);
            const GraspPose pose{static_cast<double>(px), static_cast<double>(py), 0.0,
                                 bin_angle(k, cfg.rotations), cfg.jaw_open, 0.0};
            if (!grasp_success_oracle(scene, pose).grasped_any) {
                weak = {px, py, k, 0};
                done = true;
            }
        }
    }
    if (!done) throw GenerationError("gen_grasp_targets: could not place a weak label");
    scene.weak = weak;
}

SceneSample gen_sample(std::uint64_t seed, int n_objects_lo, int n_objects_hi, bool allow_duplicates,
                       const std::vector<std::string>& template_classes, const SynthConfig& cfg) {
    if (template_classes.empty()) throw ParameterError("gen_sample: no template classes");
    std::string last_error = "no attempts";
    for (int attempt = 0; attempt < 64; ++attempt) {
        const std::uint64_t sub = Rng::mix(seed, static_cast<std::uint64_t>(attempt));
        Rng rng(sub);
        const int n = n_objects_lo == n_objects_hi
                          ? n_objects_lo
                          : rng.irange(n_objects_lo, n_objects_hi);
        const std::string& cls =
            template_classes[static_cast<std::size_t>(rng.below(template_classes.size()))];
        try {
            SceneSample scene = gen_scene(Rng::mix(sub, 1), n, allow_duplicates, cfg);
            gen_expression(scene, cls, Rng::mix(sub, 2));
            gen_grasp_targets(scene, Rng::mix(sub, 3), cfg);
            return scene;
        } catch (const GenerationError& e) {
            last_error = e.what();
        }
    }
    throw GenerationError("gen_sample: exhausted retries (" + last_error + ")");
}

// ---------------------------------------------------------------------------
// dataset export / import

void export_dataset(const std::vector<SceneSample>& samples, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "rgb");
    fs::create_directories(fs::path(dir) / "depth");
    fs::create_directories(fs::path(dir) / "mask");
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw InputError("export_dataset: cannot write manifest in " + dir);

    int idx = 0;
    for (const auto& s : samples) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "%06d", idx++);
        const std::string id(idbuf);
        const std::string rgb_rel = "rgb/" + id + ".png";
        const std::string depth_rel = "depth/" + id + ".png";
        const std::string mask_rel = "mask/" + id + ".png";
        write_png_rgb8((fs::path(dir) / rgb_rel).string(), s.size, s.size, s.rgb);
        write_png_gray16((fs::path(dir) / depth_rel).string(), s.size, s.size, s.depth_mm);
        std::vector<std::uint8_t> m255(s.masks[static_cast<std::size_t>(s.target)]);
        for (auto& v : m255) v = v ? 255 : 0;
        write_png_gray8((fs::path(dir) / mask_rel).string(), s.size, s.size, m255);

        nlohmann::json j;
        j["id"] = id;
        j["rgb"] = rgb_rel;
        j["depth"] = depth_rel;
        j["expr"] = s.expression;
        j["template"] = s.template_class;
        j["target_mask"] = mask_rel;
        nlohmann::json grasps = nlohmann::json::array();
        for (const auto& g : s.target_grasps)
            grasps.push_back({g.x, g.y, g.theta * 180.0 / kPi, g.width, g.height});
        j["grasps"] = grasps;
        j["weak"] = {{"x", s.weak.x}, {"y", s.weak.y}, {"k", s.weak.k}, {"label", s.weak.label}};
        manifest << j.dump() << "\n";
    }
}

std::vector<ManifestRecord> import_dataset(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.jsonl";
    std::ifstream in(manifest_path);
    if (!in) throw InputError("import_dataset: cannot open " + manifest_path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.id = j.at("id").get<std::string>();
            r.rgb = (fs::path(dir) / j.at("rgb").get<std::string>()).string();
            r.depth = (fs::path(dir) / j.at("depth").get<std::string>()).string();
            r.target_mask = (fs::path(dir) / j.at("target_mask").get<std::string>()).string();
            r.expr = j.at("expr").get<std::string>();
            r.template_class = j.at("template").get<std::string>();
            for (const auto& g : j.at("grasps")) {
                GraspAnnotation a;
                a.x = g.at(0).get<double>();
                a.y = g.at(1).get<double>();
                a.theta = g.at(2).get<double>() * kPi / 180.0;
                a.width = g.at(3).get<double>();
                a.height = g.at(4).get<double>();
                r.grasps.push_back(a);
            }
            const auto& wk = j.at("weak");
            r.weak = {wk.at("x").get<int>(), wk.at("y").get<int>(), wk.at("k").get<int>(),
                      wk.at("label").get<int>()};
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace ogrg
