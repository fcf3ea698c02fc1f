#pragma once

#include <cstdint>
#include <vector>

#include "diffsfm/camera.hpp"
#include "diffsfm/tensor.hpp"

namespace dsfm {

enum class SceneKind { fronto_plane, slanted_plane, two_planes };

/// Band-limit presets for the procedural textures. `precise` keeps the
/// bilinear resampling error of a warped render under ~1e-3 and backs
/// the exactness tests; `contrast` trades some of that floor for stronger
/// gradients, which the recovery problems want.
enum class TexturePreset { precise, contrast };

struct SceneSpec {
    SceneKind kind = SceneKind::fronto_plane;
    std::uint64_t seed = 1;
    double depth = 5.0;     // primary plane depth on the optical axis
    double slant = 0.35;    // radians, slanted_plane tilt
    double fg_depth = 3.0;  // two_planes foreground patch depth
    TexturePreset texture = TexturePreset::precise;
    double brightness = 0.0;  // additive source-side brightness amplitude
};

struct Sinusoid {
    double fu = 0.0, fv = 0.0;  // cycles per scene unit in plane coords
    double phase = 0.0;
    double amplitude = 0.0;
};

struct PlanePatch {
    Vec3 normal{0, 0, 1};  // unit
    double offset = 5.0;   // <normal, x> = offset
    Vec3 origin{0, 0, 5};  // texture origin, on the plane
    Vec3 u_axis{1, 0, 0};  // orthonormal in-plane frame
    Vec3 v_axis{0, 1, 0};
    double extent_u = 0.0, extent_v = 0.0;  // half extents; 0 = unbounded
    std::vector<Sinusoid> texture;
    std::vector<Sinusoid> brightness;
};

/// Analytic planar scene in the target camera frame (world == target).
/// Textures are seeded sums of <= 8 sinusoids whose frequencies respect
/// the preset's cycles-per-pixel budget for the camera they were built
/// for.
struct Scene {
    SceneKind kind = SceneKind::fronto_plane;
    std::vector<PlanePatch> planes;
    double base = 0.5;  // texture mean level
    std::uint64_t seed = 0;
};

Scene make_scene(const SceneSpec& spec, const Intrinsics& intr, const PixelGrid& grid);

struct RenderedImage {
    Tensor image;     // [H,W,1]
    Tensor depth;     // [H,W]
    Tensor plane_id;  // [H,W] constant; which patch each pixel hit
};

struct RenderOptions {
    bool add_brightness = false;
};

/// Exact per-pixel ray/plane intersection; no rasterization. `cam_pose`
/// maps world (target-frame) points into the rendered camera. Throws when
/// a ray misses every patch or hits only behind the camera.
RenderedImage render(const Scene& scene, const PoseSE3& cam_pose, const Intrinsics& intr, const PixelGrid& grid,
                     const RenderOptions& opts = {});

struct RenderedPair {
    Tensor target;          // [H,W,1]
    Tensor source;          // [H,W,1]
    Tensor gt_depth;        // [H,W] target-frame depth
    PoseSE3 gt_pose;        // target -> source
    Intrinsics gt_intrinsics;
    Tensor gt_visibility;   // [H,W] 0/1
    Tensor gt_calibration;  // [H,W]; zero unless scene brightness is on
};

/// Target rendered at identity, source at `pose`. gt_visibility marks
/// pixels whose reprojection lands in the source frame, un-occluded, with
/// the whole bilinear footprint on the same surface.
RenderedPair make_pair(const Scene& scene, const PoseSE3& pose, const Intrinsics& intr, const PixelGrid& grid);

struct SequenceFrame {
    Tensor image;  // [H,W,1]
    Tensor depth;  // [H,W]
    PoseSE3 pose;  // world -> this camera
};

/// One rendered frame per absolute camera pose.
std::vector<SequenceFrame> make_sequence(const Scene& scene, std::span<const PoseSE3> trajectory,
                                         const Intrinsics& intr, const PixelGrid& grid);

/// Relative steps k -> k+1 from absolute camera poses.
std::vector<PoseSE3> relative_steps(std::span<const PoseSE3> absolute);

/// Highest texture frequency over all patches, in cycles per pixel for
/// the given camera (worst pixel). The presets keep this well under 0.25.
double texture_max_cycles_per_pixel(const Scene& scene, const Intrinsics& intr, const PixelGrid& grid);

}  // namespace dsfm
