#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcf/geometry.hpp"
#include "lcf/image.hpp"
#include "lcf/synth.hpp"

namespace lcf {

// One training/evaluation sample: image, projected LiDAR depth, and an
// optional reference depth (dense ground truth for synthetic frames, sparse
// annotated depth for KITTI-style data).
struct Frame {
    std::string name;
    Image image;
    SparseDepthMap depth;
    SparseDepthMap reference;              // empty when unavailable
    std::vector<std::uint8_t> outlier_mask; // empty when unavailable

    bool has_reference() const { return !reference.depth.empty(); }
};

Frame frame_from_synthetic(const SyntheticFrame& synthetic, std::string name);

// Loads every frame directory (subdirectories containing meta.txt) in
// lexicographic order.
std::vector<Frame> load_dataset(const std::filesystem::path& dir);

// KITTI-style layout: <dir>/image/*.png, <dir>/lidar_raw/*.png (16-bit depth),
// <dir>/gt/*.png, matched by file name.
std::vector<Frame> load_kitti_dataset(const std::filesystem::path& dir);

} // namespace lcf
