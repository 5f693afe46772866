#include "lcf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "lcf/depthio.hpp"
#include "lcf/rng.hpp"
#include "lcf/util.hpp"

namespace lcf {

void SceneSpec::validate() const {
    camera.validate();
    if (surfaces.empty()) throw std::invalid_argument("no surfaces");
    if (scan_rows < 1 || scan_row_step < 1 || scan_col_step < 1)
        throw std::invalid_argument("scan pattern needs scan_rows >= 1 and steps >= 1");
    if (scan_row_offset < 0 || scan_col_offset < 0)
        throw std::invalid_argument("scan offsets must be >= 0");
    if (scan_row_offset + (scan_rows - 1) * scan_row_step >= camera.height)
        throw std::invalid_argument("scan rows exceed the raster height");
    if (scan_col_offset >= camera.width)
        throw std::invalid_argument("scan column offset exceeds the raster width");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("dropout must be in [0, 1)");
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
    if (!(tau_outlier > 0.0)) throw std::invalid_argument("tau_outlier must be > 0");
}

namespace {

constexpr double kRayEps = 1e-9;

struct Hit {
    double t = -1.0;
    const Surface* surface = nullptr;
    bool ok() const { return t > 0.0; }
};

double intersect_one(const Surface& s, const Vec3& o, const Vec3& d) {
    switch (s.kind) {
        case Surface::Kind::plane:
        case Surface::Kind::rect: {
            if (d.z == 0.0) return -1.0;
            const double t = (s.z0 - o.z) / d.z;
            if (t <= kRayEps) return -1.0;
            if (s.kind == Surface::Kind::rect) {
                const double x = o.x + t * d.x, y = o.y + t * d.y;
                if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) return -1.0;
            }
            return t;
        }
        case Surface::Kind::box: {
            double tmin = -std::numeric_limits<double>::infinity();
            double tmax = std::numeric_limits<double>::infinity();
            const double lo[3] = {s.x0, s.y0, s.z0}, hi[3] = {s.x1, s.y1, s.z1};
            const double oc[3] = {o.x, o.y, o.z}, dc[3] = {d.x, d.y, d.z};
            for (int a = 0; a < 3; ++a) {
                if (dc[a] == 0.0) {
                    if (oc[a] < lo[a] || oc[a] > hi[a]) return -1.0;
                    continue;
                }
                double t0 = (lo[a] - oc[a]) / dc[a];
                double t1 = (hi[a] - oc[a]) / dc[a];
                if (t0 > t1) std::swap(t0, t1);
                tmin = std::max(tmin, t0);
                tmax = std::min(tmax, t1);
                if (tmin > tmax) return -1.0;
            }
            if (tmax <= kRayEps) return -1.0;
            return tmin > kRayEps ? tmin : tmax;
        }
    }
    return -1.0;
}

Hit cast_ray(const std::vector<Surface>& surfaces, const Vec3& o, const Vec3& d) {
    Hit best;
    for (const Surface& s : surfaces) {
        const double t = intersect_one(s, o, d);
        if (t > 0.0 && (!best.ok() || t < best.t)) {
            best.t = t;
            best.surface = &s;
        }
    }
    return best;
}

Vec3 albedo_at(const Surface& s, const Vec3& p) {
    if (!s.tex.checker) return {s.tex.r, s.tex.g, s.tex.b};
    const long parity = static_cast<long>(std::floor(p.x / s.tex.cell)) +
                        static_cast<long>(std::floor(p.y / s.tex.cell)) +
                        static_cast<long>(std::floor(p.z / s.tex.cell));
    if (((parity % 2) + 2) % 2 == 0) return {s.tex.r, s.tex.g, s.tex.b};
    return {s.tex.r2, s.tex.g2, s.tex.b2};
}

Vec3 pixel_ray_dir(const CameraModel& cam, double u, double v) {
    return {(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
}

std::vector<Surface> jitter_surfaces(const std::vector<Surface>& in, Rng& rng) {
    std::vector<Surface> out = in;
    for (Surface& s : out) {
        const double dx = rng.uniform(-s.jitter_xy, s.jitter_xy);
        const double dy = rng.uniform(-s.jitter_xy, s.jitter_xy);
        const double dz = rng.uniform(-s.jitter_z, s.jitter_z);
        const double scale = rng.uniform(1.0 - s.jitter_extent, 1.0 + s.jitter_extent);
        const double cr = rng.uniform(1.0 - s.jitter_color, 1.0 + s.jitter_color);
        const double cg = rng.uniform(1.0 - s.jitter_color, 1.0 + s.jitter_color);
        const double cb = rng.uniform(1.0 - s.jitter_color, 1.0 + s.jitter_color);
        const double mx = (s.x0 + s.x1) / 2.0, my = (s.y0 + s.y1) / 2.0, mz = (s.z0 + s.z1) / 2.0;
        const double hx = (s.x1 - s.x0) / 2.0 * scale, hy = (s.y1 - s.y0) / 2.0 * scale;
        const double hz = (s.z1 - s.z0) / 2.0 * scale;
        if (s.kind != Surface::Kind::plane) {
            s.x0 = mx + dx - hx;
            s.x1 = mx + dx + hx;
            s.y0 = my + dy - hy;
            s.y1 = my + dy + hy;
        }
        if (s.kind == Surface::Kind::box) {
            s.z0 = mz + dz - hz;
            s.z1 = mz + dz + hz;
        } else {
            s.z0 += dz;
        }
        s.tex.r = std::clamp(s.tex.r * cr, 0.0, 1.0);
        s.tex.g = std::clamp(s.tex.g * cg, 0.0, 1.0);
        s.tex.b = std::clamp(s.tex.b * cb, 0.0, 1.0);
        s.tex.r2 = std::clamp(s.tex.r2 * cr, 0.0, 1.0);
        s.tex.g2 = std::clamp(s.tex.g2 * cg, 0.0, 1.0);
        s.tex.b2 = std::clamp(s.tex.b2 * cb, 0.0, 1.0);
    }
    return out;
}

} // namespace

SyntheticFrame synth_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const std::vector<Surface> surfaces = jitter_surfaces(spec.surfaces, rng);
    const CameraModel& cam = spec.camera;

    SyntheticFrame frame;
    frame.camera = cam;
    frame.tau_outlier = spec.tau_outlier;
    frame.seed = seed;
    frame.image = Image(cam.width, cam.height);
    frame.true_cam_depth.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);

    // Dense camera render through pixel centers: depth is the ray parameter t,
    // which equals camera-frame z because the direction has unit z.
    const Vec3 cam_origin = spec.cam_pose.translation();
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            const Vec3 dir = spec.cam_pose.rotation() * pixel_ray_dir(cam, u, v);
            const Hit hit = cast_ray(surfaces, cam_origin, dir);
            if (!hit.ok()) continue;
            frame.true_cam_depth[static_cast<std::size_t>(v) * cam.width + u] = hit.t;
            const Vec3 color = albedo_at(*hit.surface, cam_origin + dir * hit.t);
            frame.image.at(0, v, u) = color.x;
            frame.image.at(1, v, u) = color.y;
            frame.image.at(2, v, u) = color.z;
        }
    }

    // LiDAR sampling over the camera-aligned angular grid.
    const Vec3 lidar_origin = spec.lidar_pose.translation();
    for (int i = 0; i < spec.scan_rows; ++i) {
        const int v = spec.scan_row_offset + i * spec.scan_row_step;
        for (int u = spec.scan_col_offset; u < cam.width; u += spec.scan_col_step) {
            const double keep = rng.uniform();
            if (keep < spec.dropout) continue;
            const Vec3 dir_local = pixel_ray_dir(cam, u, v);
            const Vec3 dir = spec.lidar_pose.rotation() * dir_local;
            const Hit hit = cast_ray(surfaces, lidar_origin, dir);
            if (!hit.ok()) continue;
            double range = hit.t * dir_local.norm();
            if (spec.noise_std > 0.0) range += rng.normal(0.0, spec.noise_std);
            if (range <= 0.0) continue;
            frame.lidar_cloud.points.push_back(dir_local.normalized() * range);
            const Vec3 color = albedo_at(*hit.surface, lidar_origin + dir * hit.t);
            frame.lidar_cloud.intensity.push_back(
                std::clamp(0.2126 * color.x + 0.7152 * color.y + 0.0722 * color.z, 0.0, 1.0));
        }
    }

    frame.lidar_to_cam = spec.cam_pose.inverse().compose(spec.lidar_pose);
    frame.projected_depth = project_to_depthmap(
        transform_points(frame.lidar_cloud, frame.lidar_to_cam), cam, Collision::keep_nearest);
    frame.outlier_mask = outlier_oracle(frame.projected_depth, frame.true_cam_depth,
                                        cam.width, cam.height, spec.tau_outlier);
    return frame;
}

// --- scene spec text format ---

namespace {

struct LineParser {
    std::istringstream ss;
    std::string key;
    int lineno;

    double num(const char* what) {
        double v;
        if (!(ss >> v))
            throw io_error("scene spec line " + std::to_string(lineno) + ": " + key +
                           " expects numeric " + what);
        return v;
    }
    bool next_word(std::string& w) { return static_cast<bool>(ss >> w); }
};

void parse_surface_options(LineParser& p, Surface& s) {
    std::string word;
    while (p.next_word(word)) {
        if (word == "checker") {
            s.tex.checker = true;
            s.tex.r2 = p.num("checker r");
            s.tex.g2 = p.num("checker g");
            s.tex.b2 = p.num("checker b");
            s.tex.cell = p.num("checker cell");
        } else if (word == "jitter_xy") {
            s.jitter_xy = p.num("jitter_xy");
        } else if (word == "jitter_z") {
            s.jitter_z = p.num("jitter_z");
        } else if (word == "jitter_extent") {
            s.jitter_extent = p.num("jitter_extent");
        } else if (word == "jitter_color") {
            s.jitter_color = p.num("jitter_color");
        } else {
            throw io_error("scene spec line " + std::to_string(p.lineno) +
                           ": unknown surface option '" + word + "'");
        }
    }
}

constexpr double kDegToRad = 0.017453292519943295;

} // namespace

SceneSpec parse_scene_spec(const std::string& text) {
    SceneSpec spec;
    spec.camera = CameraModel{100.0, 100.0, 0.0, 0.0, 0, 0};
    Vec3 cam_pos, cam_rot, lidar_offset, lidar_rot;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        LineParser p{std::istringstream(line), "", lineno};
        if (!(p.ss >> p.key)) continue;
        const std::string& key = p.key;
        if (key == "width") spec.camera.width = static_cast<int>(p.num("width"));
        else if (key == "height") spec.camera.height = static_cast<int>(p.num("height"));
        else if (key == "fx") spec.camera.fx = p.num("fx");
        else if (key == "fy") spec.camera.fy = p.num("fy");
        else if (key == "cx") spec.camera.cx = p.num("cx");
        else if (key == "cy") spec.camera.cy = p.num("cy");
        else if (key == "cam_pos") { cam_pos = {p.num("x"), p.num("y"), p.num("z")}; }
        else if (key == "cam_rot") { cam_rot = {p.num("rx"), p.num("ry"), p.num("rz")}; }
        else if (key == "lidar_offset") { lidar_offset = {p.num("x"), p.num("y"), p.num("z")}; }
        else if (key == "lidar_rot") { lidar_rot = {p.num("rx"), p.num("ry"), p.num("rz")}; }
        else if (key == "scan_rows") spec.scan_rows = static_cast<int>(p.num("count"));
        else if (key == "scan_row_step") spec.scan_row_step = static_cast<int>(p.num("step"));
        else if (key == "scan_row_offset") spec.scan_row_offset = static_cast<int>(p.num("offset"));
        else if (key == "scan_col_step") spec.scan_col_step = static_cast<int>(p.num("step"));
        else if (key == "scan_col_offset") spec.scan_col_offset = static_cast<int>(p.num("offset"));
        else if (key == "dropout") spec.dropout = p.num("probability");
        else if (key == "noise_std") spec.noise_std = p.num("std");
        else if (key == "tau_outlier") spec.tau_outlier = p.num("tau");
        else if (key == "plane") {
            Surface s;
            s.kind = Surface::Kind::plane;
            s.z0 = p.num("z");
            s.tex.r = p.num("r"); s.tex.g = p.num("g"); s.tex.b = p.num("b");
            parse_surface_options(p, s);
            spec.surfaces.push_back(s);
        } else if (key == "rect") {
            Surface s;
            s.kind = Surface::Kind::rect;
            s.z0 = p.num("z");
            s.x0 = p.num("x0"); s.x1 = p.num("x1");
            s.y0 = p.num("y0"); s.y1 = p.num("y1");
            s.tex.r = p.num("r"); s.tex.g = p.num("g"); s.tex.b = p.num("b");
            parse_surface_options(p, s);
            spec.surfaces.push_back(s);
        } else if (key == "box") {
            Surface s;
            s.kind = Surface::Kind::box;
            s.x0 = p.num("x0"); s.x1 = p.num("x1");
            s.y0 = p.num("y0"); s.y1 = p.num("y1");
            s.z0 = p.num("z0"); s.z1 = p.num("z1");
            s.tex.r = p.num("r"); s.tex.g = p.num("g"); s.tex.b = p.num("b");
            parse_surface_options(p, s);
            spec.surfaces.push_back(s);
        } else {
            throw io_error("scene spec line " + std::to_string(lineno) + ": unknown key '" +
                           key + "'");
        }
    }
    const Mat3 cam_r = euler_xyz(cam_rot.x * kDegToRad, cam_rot.y * kDegToRad, cam_rot.z * kDegToRad);
    spec.cam_pose = RigidPose::make(cam_r, cam_pos);
    const Mat3 rel_r =
        euler_xyz(lidar_rot.x * kDegToRad, lidar_rot.y * kDegToRad, lidar_rot.z * kDegToRad);
    spec.lidar_pose = spec.cam_pose.compose(RigidPose::make(rel_r, lidar_offset));
    spec.validate();
    return spec;
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open scene spec " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_scene_spec(buf.str());
    } catch (const std::invalid_argument& e) {
        throw io_error(path.string() + ": " + e.what());
    }
}

// --- frame persistence ---

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void save_frame(const SyntheticFrame& frame, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_image_ppm(frame.image, dir / "image.ppm");
    write_depth_raw(frame.projected_depth, dir / "depth_proj.raw");
    write_raster_f32(frame.true_cam_depth, frame.camera.width, frame.camera.height,
                     dir / "depth_true.raw");
    write_mask_pbm(frame.outlier_mask, frame.camera.width, frame.camera.height,
                   dir / "outliers.pbm");

    std::ostringstream meta;
    meta << "width " << frame.camera.width << "\n";
    meta << "height " << frame.camera.height << "\n";
    meta << "fx " << fmt17(frame.camera.fx) << "\n";
    meta << "fy " << fmt17(frame.camera.fy) << "\n";
    meta << "cx " << fmt17(frame.camera.cx) << "\n";
    meta << "cy " << fmt17(frame.camera.cy) << "\n";
    meta << "lidar_to_cam_r";
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) meta << " " << fmt17(frame.lidar_to_cam.rotation()(i, j));
    meta << "\n";
    const Vec3& t = frame.lidar_to_cam.translation();
    meta << "lidar_to_cam_t " << fmt17(t.x) << " " << fmt17(t.y) << " " << fmt17(t.z) << "\n";
    meta << "tau_outlier " << fmt17(frame.tau_outlier) << "\n";
    meta << "seed " << frame.seed << "\n";
    const std::string text = meta.str();
    std::ofstream out(dir / "meta.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + (dir / "meta.txt").string());
    out << text;
}

SyntheticFrame load_frame(const std::filesystem::path& dir) {
    SyntheticFrame frame;
    frame.image = read_image_ppm(dir / "image.ppm");
    frame.projected_depth = read_depth_raw(dir / "depth_proj.raw");
    int w = 0, h = 0;
    frame.true_cam_depth = read_raster_f32(dir / "depth_true.raw", w, h);
    if (w != frame.projected_depth.width || h != frame.projected_depth.height)
        throw io_error(dir.string() + ": depth_true.raw size mismatch");
    int mw = 0, mh = 0;
    frame.outlier_mask = read_mask_pbm(dir / "outliers.pbm", mw, mh);
    if (mw != w || mh != h) throw io_error(dir.string() + ": outliers.pbm size mismatch");

    std::ifstream meta(dir / "meta.txt");
    if (!meta) throw io_error("cannot open " + (dir / "meta.txt").string());
    Mat3 rot;
    Vec3 t;
    std::string line;
    while (std::getline(meta, line)) {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (key == "width") ss >> frame.camera.width;
        else if (key == "height") ss >> frame.camera.height;
        else if (key == "fx") ss >> frame.camera.fx;
        else if (key == "fy") ss >> frame.camera.fy;
        else if (key == "cx") ss >> frame.camera.cx;
        else if (key == "cy") ss >> frame.camera.cy;
        else if (key == "lidar_to_cam_r")
            for (int i = 0; i < 9; ++i) ss >> rot.m[static_cast<std::size_t>(i)];
        else if (key == "lidar_to_cam_t") ss >> t.x >> t.y >> t.z;
        else if (key == "tau_outlier") ss >> frame.tau_outlier;
        else if (key == "seed") ss >> frame.seed;
    }
    if (frame.camera.width != w || frame.camera.height != h)
        throw io_error(dir.string() + ": meta raster size disagrees with rasters");
    frame.lidar_to_cam = RigidPose::make(rot, t);
    return frame;
}

} // namespace lcf
