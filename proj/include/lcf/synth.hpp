#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lcf/geometry.hpp"
#include "lcf/image.hpp"

namespace lcf {

// Flat-shaded surface albedo: base color, optionally a two-color checker with
// the given cell size in meters (pattern anchored to world coordinates).
struct SurfaceTexture {
    double r = 0.7, g = 0.7, b = 0.7;
    bool checker = false;
    double r2 = 0.3, g2 = 0.3, b2 = 0.3;
    double cell = 1.0;
};

// Axis-aligned scene primitive. `plane` is an unbounded fronto-parallel plane
// at z; `rect` bounds it in x/y; `box` is a full axis-aligned box.
struct Surface {
    enum class Kind { plane, rect, box };
    Kind kind = Kind::rect;
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0, z0 = 0, z1 = 0; // plane/rect use z0
    SurfaceTexture tex;
    // Per-frame randomization amplitudes, sampled uniformly from [-a, a]
    // (scale from [1-a, 1+a]); all default to "no jitter".
    double jitter_xy = 0.0, jitter_z = 0.0, jitter_extent = 0.0, jitter_color = 0.0;
};

// Scene description: surfaces, sensor poses, the LiDAR sampling pattern, range
// noise and the outlier threshold. The LiDAR samples a camera-aligned angular
// grid: ray (i, j) passes through pixel center
//   (col_offset + j*col_step, row_offset + i*row_step)
// of a virtual pinhole with the same intrinsics, expressed in the LiDAR frame.
// Steps and offsets are integer pixels, which makes co-located sensors
// reproduce the camera depth exactly.
struct SceneSpec {
    CameraModel camera;
    RigidPose cam_pose;   // camera frame -> world
    RigidPose lidar_pose; // LiDAR frame -> world
    int scan_rows = 16;
    int scan_row_step = 2;
    int scan_row_offset = 0;
    int scan_col_step = 2;
    int scan_col_offset = 0;
    double dropout = 0.0;   // probability a ray is discarded (no return)
    double noise_std = 0.0; // additive Gaussian range noise, meters
    double tau_outlier = 1.0;
    std::vector<Surface> surfaces;

    void validate() const;
};

struct SyntheticFrame {
    Image image;
    PointCloud lidar_cloud; // LiDAR frame
    RigidPose lidar_to_cam;
    CameraModel camera;
    SparseDepthMap projected_depth;
    std::vector<double> true_cam_depth; // dense, 0 = no surface along the ray
    std::vector<std::uint8_t> outlier_mask;
    double tau_outlier = 1.0;
    std::uint64_t seed = 0;
};

// Parses the plain-text key-value scene format (see docs/formats.md).
SceneSpec parse_scene_spec(const std::string& text);
SceneSpec load_scene_spec(const std::filesystem::path& path);

// Renders one frame: exact nearest-surface ray casting for the dense camera
// depth, LiDAR sampling per the spec pattern, projection via
// project_to_depthmap(keep_nearest), and the outlier mask. Deterministic in
// (spec, seed). Throws "no surfaces" on an empty scene.
SyntheticFrame synth_scene(const SceneSpec& spec, std::uint64_t seed);

// Directory layout: image.ppm, depth_proj.raw, depth_true.raw, outliers.pbm,
// meta.txt. The point cloud is not persisted.
void save_frame(const SyntheticFrame& frame, const std::filesystem::path& dir);
SyntheticFrame load_frame(const std::filesystem::path& dir);

} // namespace lcf
