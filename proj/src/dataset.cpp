#include "lcf/dataset.hpp"

#include <algorithm>

#include "lcf/depthio.hpp"
#include "lcf/util.hpp"

namespace lcf {

Frame frame_from_synthetic(const SyntheticFrame& synthetic, std::string name) {
    Frame frame;
    frame.name = std::move(name);
    frame.image = synthetic.image;
    frame.depth = synthetic.projected_depth;
    frame.reference.width = synthetic.camera.width;
    frame.reference.height = synthetic.camera.height;
    frame.reference.depth = synthetic.true_cam_depth;
    frame.outlier_mask = synthetic.outlier_mask;
    return frame;
}

std::vector<Frame> load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw io_error("dataset directory does not exist: " + dir.string());
    std::vector<std::filesystem::path> frame_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.txt"))
            frame_dirs.push_back(entry.path());
    std::sort(frame_dirs.begin(), frame_dirs.end());
    if (frame_dirs.empty())
        throw io_error("no frame directories with meta.txt under " + dir.string());
    std::vector<Frame> frames;
    frames.reserve(frame_dirs.size());
    for (const auto& fd : frame_dirs)
        frames.push_back(frame_from_synthetic(load_frame(fd), fd.filename().string()));
    return frames;
}

std::vector<Frame> load_kitti_dataset(const std::filesystem::path& dir) {
    const auto image_dir = dir / "image";
    const auto lidar_dir = dir / "lidar_raw";
    const auto gt_dir = dir / "gt";
    if (!std::filesystem::is_directory(lidar_dir))
        throw io_error("expected " + lidar_dir.string());
    std::vector<std::filesystem::path> names;
    for (const auto& entry : std::filesystem::directory_iterator(lidar_dir))
        if (entry.path().extension() == ".png") names.push_back(entry.path().filename());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw io_error("no .png depth maps under " + lidar_dir.string());
    std::vector<Frame> frames;
    frames.reserve(names.size());
    for (const auto& name : names) {
        Frame frame;
        frame.name = name.stem().string();
        frame.depth = read_depth_png16(lidar_dir / name);
        if (std::filesystem::exists(image_dir / name))
            frame.image = read_image_png(image_dir / name);
        else
            frame.image = Image(frame.depth.width, frame.depth.height);
        if (std::filesystem::exists(gt_dir / name))
            frame.reference = read_depth_png16(gt_dir / name);
        frames.push_back(std::move(frame));
    }
    return frames;
}

} // namespace lcf
