#pragma once

#include <optional>
#include <string>

#include "ogrg/grasp_geometry.hpp"

namespace ogrg {

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic 2.5-D tabletop world. Scenes render at the native workspace
// resolution; grasp success is adjudicated analytically against the object
// footprints, which stands in for physics simulation at desk scale.

enum class ShapeKind { Circle, Square, Rectangle, Triangle, Ell };

std::string shape_word(ShapeKind k);

struct ObjectSpec {
    int pool_id = 0;
    ShapeKind shape = ShapeKind::Circle;
    std::string color;
    std::array<std::uint8_t, 3> rgb{};
    std::string category;
    double size_a = 0;    // primary extent, px
    double size_b = 0;    // secondary extent (arm width for ells), px
    double x = 0, y = 0;  // center, px
    double orient = 0;    // radians
    double height_m = 0;  // object height above the table
};

// Analytic footprint: a circle or a simple polygon in workspace pixels.
struct Footprint {
    bool is_circle = false;
    double cx = 0, cy = 0, r = 0;
    std::vector<Point> poly;
};

Footprint footprint_of(const ObjectSpec& obj);
bool footprint_contains(const Footprint& f, double x, double y);
double footprint_bound_radius(const ObjectSpec& obj);

struct GraspAnnotation {
    double x = 0, y = 0;
    double theta = 0;  // radians, closing axis
    double width = 0;  // jaw opening, px
    double height = 0; // jaw contact length, px
};

struct WeakGraspLabel {
    int x = 0, y = 0;
    int k = 0;      // rotation bin
    int label = 0;  // {0,1}
};

struct SceneSample {
    int size = 416;
    std::vector<std::uint8_t> rgb;        // size*size*3
    std::vector<std::uint16_t> depth_mm;  // size*size
    std::vector<ObjectSpec> objects;
    std::vector<std::vector<std::uint8_t>> masks;  // per object, {0,1}
    int target = -1;
    std::string expression;
    std::string template_class;  // abs | rel | attr_base | attr_cls
    std::vector<GraspAnnotation> target_grasps;
    WeakGraspLabel weak;
};

struct SynthConfig {
    int size = 416;
    int margin = 36;          // keep-out border for object centers
    double min_gap = 24.0;    // clearance between footprints, px
    double table_depth_m = 0.7;
    double jaw_open = 80.0;   // fixed RGA opening l*, px
    double max_width = 150.0; // annotation width cap, px
    int rotations = 6;
    bool test_textures = false;  // held-out background bank
};

// Object pool: 32 entries over 8 categories x 4 colors.
const std::vector<ObjectSpec>& object_pool();

// ---------------------------------------------------------------------------
// generation

SceneSample gen_scene(std::uint64_t seed, int n_objects, bool allow_duplicates,
                      const SynthConfig& cfg = {});

// Attribute/spatial expression with a unique referent; throws
// GenerationError when the scene admits none for the class.
void gen_expression(SceneSample& scene, const std::string& template_class, std::uint64_t seed);

// Grasp rectangles for the target plus a weak single-pixel label; candidate
// grasps that fail the success oracle are dropped.
void gen_grasp_targets(SceneSample& scene, std::uint64_t seed, const SynthConfig& cfg = {});

// Scene + expression + targets in one call, resampling until the template
// class admits a unique referent (bounded retries).
SceneSample gen_sample(std::uint64_t seed, int n_objects_lo, int n_objects_hi, bool allow_duplicates,
                       const std::vector<std::string>& template_classes, const SynthConfig& cfg = {});

// ---------------------------------------------------------------------------
// grasp success oracle

struct OracleOutcome {
    bool grasped_any = false;
    bool grasped_correct_target = false;
};

// Success requires: grasp center on some object, the object's extent along
// the closing axis inside the jaw band shorter than the opening, and both
// jaw contact segments clear of every footprint.
OracleOutcome grasp_success_oracle(const SceneSample& scene, const GraspPose& pose);

// ---------------------------------------------------------------------------
// expression grammar (parse side, used for referent-uniqueness checks)

struct ParsedExpression {
    std::string template_class;
    std::string color, shape, category;        // target attributes (may be empty)
    std::string region_row, region_col;        // abs
    std::string sector;                        // rel
    std::string ref_color, ref_category;       // rel
};

ParsedExpression parse_expression(const std::string& text);

// Objects satisfying the parsed description; referent uniqueness means this
// has exactly one element, the target.
std::vector<int> evaluate_expression(const ParsedExpression& expr, const SceneSample& scene);

int region_row_of(double y, int size);
int region_col_of(double x, int size);
std::optional<std::string> sector_of(double from_x, double from_y, double to_x, double to_y,
                                     double margin_deg = 3.0);

// ---------------------------------------------------------------------------
// dataset directory layout

struct ManifestRecord {
    std::string id;
    std::string rgb, depth, target_mask;
    std::string expr;
    std::string template_class;
    std::vector<GraspAnnotation> grasps;
    WeakGraspLabel weak;
};

void export_dataset(const std::vector<SceneSample>& samples, const std::string& dir);
std::vector<ManifestRecord> import_dataset(const std::string& dir);

}  // namespace ogrg
