#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "lcf/geometry.hpp"
#include "lcf/image.hpp"

namespace lcf {

enum class ProxyReducer { min, avg };

// Per-pixel plausible depth d*, reduced from the valid depths in the n x n
// window around each valid pixel. Windows are clipped at raster borders. With
// include_center (the default) the pixel belongs to its own patch, so the min
// reducer satisfies proxy <= depth everywhere.
struct ProxyLabelMap {
    int width = 0, height = 0;
    std::vector<double> proxy; // 0 where not defined
    int window_n = 0;
    ProxyReducer reducer = ProxyReducer::min;

    double at(int v, int u) const { return proxy[static_cast<std::size_t>(v) * width + u]; }
    bool valid(int v, int u) const { return at(v, u) > 0.0; }
};

// Per-pixel uncertainty; larger sigma = less confident. Values are meaningful
// only where the source depth map is valid; the learned model produces
// sigma >= 1 there.
struct ConfidenceMap {
    int width = 0, height = 0;
    std::vector<double> sigma;

    ConfidenceMap() = default;
    ConfidenceMap(int w, int h) : width(w), height(h), sigma(static_cast<std::size_t>(w) * h, 0.0) {}
    double at(int v, int u) const { return sigma[static_cast<std::size_t>(v) * width + u]; }
    double& at(int v, int u) { return sigma[static_cast<std::size_t>(v) * width + u]; }
};

// Throws "window must be odd" for even n; requires n >= 3.
// With exclude_center = true a pixel with no other valid depth in its patch
// gets proxy 0 (undefined); with the default it falls back to its own depth.
ProxyLabelMap compute_proxy_labels(const SparseDepthMap& depth, int n,
                                   ProxyReducer reducer, bool include_center = true);

// sigma = |d - d*| + 1 on pixels valid in both maps (the +1 shift matches the
// learned model's sigma >= 1 convention; AUC only consumes the ordering).
ConfidenceMap abs_diff_confidence(const SparseDepthMap& depth, const ProxyLabelMap& proxy);

// --- file formats (all little-endian; see docs/formats.md) ---

// KITTI raw scan: packed float32 records (x, y, z, reflectance).
PointCloud read_velodyne_bin(const std::filesystem::path& path);
void write_velodyne_bin(const PointCloud& cloud, const std::filesystem::path& path);

// KITTI depth rasters: single-channel 16-bit PNG, meters = value / 256, 0 invalid.
SparseDepthMap read_depth_png16(const std::filesystem::path& path);
void write_depth_png16(const SparseDepthMap& map, const std::filesystem::path& path);

// KITTI calibration text. Reads the P2 projection row for intrinsics and the
// Tr / Tr_velo_to_cam row for the LiDAR-to-camera transform. Rotations within
// 1e-4 of orthonormal are re-orthonormalized; anything worse is rejected.
// Raster size is not stored in calib files, so the caller provides it.
std::pair<CameraModel, RigidPose> read_calib(const std::filesystem::path& path,
                                             int width, int height);

// Raw float32 raster: header u32 width, u32 height, then row-major float32.
void write_raster_f32(const std::vector<double>& values, int width, int height,
                      const std::filesystem::path& path);
std::vector<double> read_raster_f32(const std::filesystem::path& path,
                                    int& width, int& height);

void write_confidence_raster(const ConfidenceMap& map, const std::filesystem::path& path);
ConfidenceMap read_confidence_raster(const std::filesystem::path& path);

SparseDepthMap read_depth_raw(const std::filesystem::path& path);
void write_depth_raw(const SparseDepthMap& map, const std::filesystem::path& path);

// 8-bit binary PPM (P6); values quantized as round(v * 255).
void write_image_ppm(const Image& image, const std::filesystem::path& path);
Image read_image_ppm(const std::filesystem::path& path);

// 8-bit RGB (or gray) PNG, normalized to [0,1].
Image read_image_png(const std::filesystem::path& path);

// Reads .ppm or .png by extension.
Image read_image(const std::filesystem::path& path);

// Binary PBM (P4); bit 1 = flagged pixel.
void write_mask_pbm(const std::vector<std::uint8_t>& mask, int width, int height,
                    const std::filesystem::path& path);
std::vector<std::uint8_t> read_mask_pbm(const std::filesystem::path& path,
                                        int& width, int& height);

} // namespace lcf
