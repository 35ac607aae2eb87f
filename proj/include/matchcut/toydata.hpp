#pragma once

// Procedural prompt-conditioned videos with analytic ground-truth motion.
//
// Each toy "prompt" is a class id selecting a scene family: one bright
// object (shape, colour, size) moving in a straight line over a dark
// background. Positions are in frame fractions, [0, 1) on each axis, and
// motion wraps around the frame edges (toroidal policy). Rendering uses
// 4x4 supersampling per pixel, so it is anti-aliased and fully
// deterministic.

#include <array>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "matchcut/tensor.hpp"

namespace matchcut {

enum class ShapeKind { circle, square, bar };
enum class BackgroundKind { solid, gradient };

using Rgb = std::array<double, 3>;

std::string to_string(ShapeKind s);
std::string to_string(BackgroundKind b);

struct SceneParams {
    int class_id = 0;
    ShapeKind shape = ShapeKind::circle;
    Rgb color{1.0, 1.0, 1.0};
    BackgroundKind background = BackgroundKind::solid;
    Rgb background_color{0.0, 0.0, 0.0};
    double start_x = 0.5;
    double start_y = 0.5;
    double velocity_x = 0.0;  // frame fractions per frame
    double velocity_y = 0.0;
    double size = 0.3;  // diameter / side / bar length, as a fraction of the width
    int frame_count = 16;
    int height = 32;
    int width = 32;

    void validate() const;
};

void to_json(nlohmann::json& j, const SceneParams& p);
void from_json(const nlohmann::json& j, SceneParams& p);

struct TrackPoint {
    int frame = 0;
    double x = 0.0;
    double y = 0.0;
};

struct Tracklet {
    std::vector<TrackPoint> points;
    std::size_t size() const noexcept { return points.size(); }
};

nlohmann::json to_json(const Tracklet& t);
Tracklet tracklet_from_json(const nlohmann::json& j);

/// A scene family: what a toy prompt class looks like.
struct ClassFamily {
    std::string name;
    ShapeKind shape;
    Rgb color;
    Rgb background_color;
    double size;
};

const std::vector<ClassFamily>& toy_classes();
int num_toy_classes();

/// Per-frame displacement modes shared by every class, in pixels per frame:
/// eight compass directions at speeds 1 and 2.
const std::vector<std::pair<int, int>>& motion_modes();

struct ToyVideoShape {
    int frames = 16;
    int height = 32;
    int width = 32;
};

PixelVideo render_scene(const SceneParams& p);
Tracklet trajectory_of(const SceneParams& p);

/// Draws a random scene of the given class: start on the pixel grid, one of the
/// shared motion modes, and a small per-channel tint applied to object and background.
SceneParams sample_scene(int class_id, std::uint64_t seed, ToyVideoShape shape = {});
SceneParams sample_scene(int class_id, int mode, std::uint64_t seed, ToyVideoShape shape = {});
/// Canonical scene of a class: centred, untinted, moving with motion mode `mode`.
SceneParams canonical_scene(int class_id, int mode, ToyVideoShape shape = {});

/// Two scenes with different class ids; class ids are uniform over ordered pairs.
std::pair<SceneParams, SceneParams> sample_prompt_pair(std::uint64_t seed, ToyVideoShape shape = {});

struct ToyDataset {
    std::vector<PixelVideo> clips;
    std::vector<SceneParams> params;

    std::size_t size() const noexcept { return clips.size(); }
    int label(std::size_t i) const { return params[i].class_id; }
};

/// Class-balanced dataset of `count` rendered clips; motion modes cycle so
/// every (class, mode) combination appears once `count` >= 64.
ToyDataset make_toy_dataset(int count, std::uint64_t seed, ToyVideoShape shape = {});

/// Estimates the moving object's track in any video: per-frame median
/// background, colour-distance weights, and a circular (wrap-aware) centroid.
Tracklet track_object(const PixelVideo& video);

/// Wrapped difference b - a on the unit torus, in (-0.5, 0.5].
double wrap_delta(double a, double b) noexcept;

}  // namespace matchcut
