#include "lcf/depthio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lcf/util.hpp"

namespace lcf {

ProxyLabelMap compute_proxy_labels(const SparseDepthMap& depth, int n,
                                   ProxyReducer reducer, bool include_center) {
    if (n % 2 == 0) throw std::invalid_argument("window must be odd");
    if (n < 3) throw std::invalid_argument("window must be >= 3");
    depth.validate();
    ProxyLabelMap out;
    out.width = depth.width;
    out.height = depth.height;
    out.window_n = n;
    out.reducer = reducer;
    out.proxy.assign(depth.depth.size(), 0.0);
    const int half = n / 2;
    for (int v = 0; v < depth.height; ++v) {
        for (int u = 0; u < depth.width; ++u) {
            if (!depth.valid(v, u)) continue;
            const int v0 = std::max(0, v - half), v1 = std::min(depth.height - 1, v + half);
            const int u0 = std::max(0, u - half), u1 = std::min(depth.width - 1, u + half);
            double best = 0.0, sum = 0.0;
            std::size_t count = 0;
            for (int vv = v0; vv <= v1; ++vv) {
                for (int uu = u0; uu <= u1; ++uu) {
                    if (!include_center && vv == v && uu == u) continue;
                    const double d = depth.at(vv, uu);
                    if (d <= 0.0) continue;
                    if (count == 0 || d < best) best = d;
                    sum += d;
                    ++count;
                }
            }
            if (count == 0) continue; // only possible with exclude-center
            out.proxy[static_cast<std::size_t>(v) * depth.width + u] =
                reducer == ProxyReducer::min ? best : sum / static_cast<double>(count);
        }
    }
    return out;
}

ConfidenceMap abs_diff_confidence(const SparseDepthMap& depth, const ProxyLabelMap& proxy) {
    if (depth.width != proxy.width || depth.height != proxy.height)
        throw std::invalid_argument("abs_diff_confidence: raster size mismatch");
    ConfidenceMap out(depth.width, depth.height);
    for (std::size_t i = 0; i < depth.depth.size(); ++i)
        if (depth.depth[i] > 0.0 && proxy.proxy[i] > 0.0)
            out.sigma[i] = std::fabs(depth.depth[i] - proxy.proxy[i]) + 1.0;
    return out;
}

// --- low-level read/write helpers ---

static std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return data;
}

static void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw io_error("short write to " + path.string());
}

static float le_f32(const std::uint8_t* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

static void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    out.push_back(static_cast<std::uint8_t>(u & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xff));
}

static std::uint32_t le_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t u) {
    out.push_back(static_cast<std::uint8_t>(u & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xff));
}

// --- Velodyne binary ---

PointCloud read_velodyne_bin(const std::filesystem::path& path) {
    const auto data = read_file(path);
    const std::size_t whole = data.size() / 16;
    if (data.size() % 16 != 0) {
        std::ostringstream msg;
        msg << "truncated velodyne record in " << path.string() << " at byte offset "
            << whole * 16;
        throw io_error(msg.str());
    }
    PointCloud cloud;
    cloud.points.reserve(whole);
    cloud.intensity.reserve(whole);
    for (std::size_t i = 0; i < whole; ++i) {
        const std::uint8_t* rec = data.data() + i * 16;
        cloud.points.push_back({le_f32(rec), le_f32(rec + 4), le_f32(rec + 8)});
        cloud.intensity.push_back(le_f32(rec + 12));
    }
    return cloud;
}

void write_velodyne_bin(const PointCloud& cloud, const std::filesystem::path& path) {
    cloud.validate();
    std::vector<std::uint8_t> data;
    data.reserve(cloud.points.size() * 16);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        put_f32(data, static_cast<float>(cloud.points[i].x));
        put_f32(data, static_cast<float>(cloud.points[i].y));
        put_f32(data, static_cast<float>(cloud.points[i].z));
        put_f32(data, cloud.intensity.empty() ? 0.0f : static_cast<float>(cloud.intensity[i]));
    }
    write_file(path, data.data(), data.size());
}

// --- 16-bit PNG depth ---

namespace {

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

void open_png_reader(PngReader& r, const std::filesystem::path& path) {
    r.fp = std::fopen(path.string().c_str(), "rb");
    if (!r.fp) throw io_error("cannot open " + path.string());
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info) throw io_error("libpng init failed");
    if (setjmp(png_jmpbuf(r.png))) throw io_error("failed to decode " + path.string());
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);
}

} // namespace

SparseDepthMap read_depth_png16(const std::filesystem::path& path) {
    PngReader r;
    open_png_reader(r, path);
    const png_uint_32 w = png_get_image_width(r.png, r.info);
    const png_uint_32 h = png_get_image_height(r.png, r.info);
    const int bit_depth = png_get_bit_depth(r.png, r.info);
    const int color_type = png_get_color_type(r.png, r.info);
    if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_GRAY)
        throw io_error(path.string() + ": expected single-channel 16-bit PNG, got depth " +
                       std::to_string(bit_depth) + " color type " + std::to_string(color_type));
    if (png_get_interlace_type(r.png, r.info) != PNG_INTERLACE_NONE)
        throw io_error(path.string() + ": interlaced PNG not supported");
    png_set_swap(r.png); // PNG stores big-endian samples
    SparseDepthMap map(static_cast<int>(w), static_cast<int>(h));
    std::vector<std::uint16_t> row(w);
    if (setjmp(png_jmpbuf(r.png))) throw io_error("failed to decode " + path.string());
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(r.png, reinterpret_cast<png_bytep>(row.data()), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            map.depth[static_cast<std::size_t>(y) * w + x] = row[x] / 256.0;
    }
    return map;
}

void write_depth_png16(const SparseDepthMap& map, const std::filesystem::path& path) {
    map.validate();
    PngWriter wtr;
    wtr.fp = std::fopen(path.string().c_str(), "wb");
    if (!wtr.fp) throw io_error("cannot open " + path.string() + " for writing");
    wtr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    wtr.info = png_create_info_struct(wtr.png);
    if (!wtr.png || !wtr.info) throw io_error("libpng init failed");
    if (setjmp(png_jmpbuf(wtr.png))) throw io_error("failed to encode " + path.string());
    png_init_io(wtr.png, wtr.fp);
    // Fixed filter and compression settings keep the output byte-deterministic.
    png_set_filter(wtr.png, 0, PNG_FILTER_NONE);
    png_set_compression_level(wtr.png, 6);
    png_set_IHDR(wtr.png, wtr.info, static_cast<png_uint_32>(map.width),
                 static_cast<png_uint_32>(map.height), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wtr.png, wtr.info);
    png_set_swap(wtr.png);
    std::vector<std::uint16_t> row(static_cast<std::size_t>(map.width));
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            const double q = std::llround(map.at(y, x) * 256.0);
            row[static_cast<std::size_t>(x)] =
                static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
        }
        png_write_row(wtr.png, reinterpret_cast<png_bytep>(row.data()));
    }
    png_write_end(wtr.png, wtr.info);
}

// --- calibration text ---

static Mat3 orthonormalize(const Mat3& r) {
    // Gram-Schmidt on rows; adequate for inputs already close to a rotation.
    Vec3 a{r(0, 0), r(0, 1), r(0, 2)};
    Vec3 b{r(1, 0), r(1, 1), r(1, 2)};
    a = a.normalized();
    b = (b - a * a.dot(b)).normalized();
    const Vec3 c{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
    Mat3 out;
    out(0, 0) = a.x; out(0, 1) = a.y; out(0, 2) = a.z;
    out(1, 0) = b.x; out(1, 1) = b.y; out(1, 2) = b.z;
    out(2, 0) = c.x; out(2, 1) = c.y; out(2, 2) = c.z;
    return out;
}

std::pair<CameraModel, RigidPose> read_calib(const std::filesystem::path& path,
                                             int width, int height) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path.string());
    std::vector<double> proj, tr;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (!key.empty() && key.back() == ':') key.pop_back();
        if (key != "P2" && key != "Tr" && key != "Tr_velo_to_cam") continue;
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (vals.size() != 12)
            throw io_error(path.string() + ": row " + key + " must have 12 values, got " +
                           std::to_string(vals.size()));
        (key == "P2" ? proj : tr) = vals;
    }
    if (proj.empty()) throw io_error(path.string() + ": missing P2 row");
    if (tr.empty()) throw io_error(path.string() + ": missing Tr / Tr_velo_to_cam row");

    CameraModel cam;
    cam.fx = proj[0];
    cam.fy = proj[5];
    cam.cx = proj[2];
    cam.cy = proj[6];
    cam.width = width;
    cam.height = height;
    cam.validate();

    Mat3 rot;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rot(i, j) = tr[static_cast<std::size_t>(i * 4 + j)];
    const Mat3 gram = rot.transposed() * rot;
    double err = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            err = std::max(err, std::fabs(gram(i, j) - (i == j ? 1.0 : 0.0)));
    if (err > 1e-4)
        throw io_error(path.string() + ": transform rotation is not orthonormal (error " +
                       std::to_string(err) + ")");
    if (rot.det() < 0.0)
        throw io_error(path.string() + ": transform rotation has negative determinant");
    if (err > 1e-12) rot = orthonormalize(rot);
    const RigidPose pose = RigidPose::make(rot, Vec3{tr[3], tr[7], tr[11]});
    return {cam, pose};
}

// --- raw float32 rasters ---

void write_raster_f32(const std::vector<double>& values, int width, int height,
                      const std::filesystem::path& path) {
    if (values.size() != static_cast<std::size_t>(width) * height)
        throw std::invalid_argument("raster size does not match header");
    std::vector<std::uint8_t> data;
    data.reserve(8 + values.size() * 4);
    put_u32(data, static_cast<std::uint32_t>(width));
    put_u32(data, static_cast<std::uint32_t>(height));
    for (double v : values) put_f32(data, static_cast<float>(v));
    write_file(path, data.data(), data.size());
}

std::vector<double> read_raster_f32(const std::filesystem::path& path, int& width, int& height) {
    const auto data = read_file(path);
    if (data.size() < 8) throw io_error(path.string() + ": raster header truncated");
    const std::uint32_t w = le_u32(data.data());
    const std::uint32_t h = le_u32(data.data() + 4);
    const std::size_t expect = 8 + static_cast<std::size_t>(w) * h * 4;
    if (data.size() != expect)
        throw io_error(path.string() + ": raster payload is " + std::to_string(data.size() - 8) +
                       " bytes, header implies " + std::to_string(expect - 8));
    width = static_cast<int>(w);
    height = static_cast<int>(h);
    std::vector<double> values(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = le_f32(data.data() + 8 + i * 4);
    return values;
}

void write_confidence_raster(const ConfidenceMap& map, const std::filesystem::path& path) {
    write_raster_f32(map.sigma, map.width, map.height, path);
}

ConfidenceMap read_confidence_raster(const std::filesystem::path& path) {
    ConfidenceMap map;
    map.sigma = read_raster_f32(path, map.width, map.height);
    return map;
}

SparseDepthMap read_depth_raw(const std::filesystem::path& path) {
    SparseDepthMap map;
    map.depth = read_raster_f32(path, map.width, map.height);
    map.validate();
    return map;
}

void write_depth_raw(const SparseDepthMap& map, const std::filesystem::path& path) {
    write_raster_f32(map.depth, map.width, map.height, path);
}

// --- PPM / PBM ---

void write_image_ppm(const Image& image, const std::filesystem::path& path) {
    std::vector<std::uint8_t> data;
    char header[64];
    const int n = std::snprintf(header, sizeof header, "P6\n%d %d\n255\n", image.width, image.height);
    data.insert(data.end(), header, header + n);
    for (int v = 0; v < image.height; ++v)
        for (int u = 0; u < image.width; ++u)
            for (int c = 0; c < 3; ++c) {
                const double q = std::llround(image.at(c, v, u) * 255.0);
                data.push_back(static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0)));
            }
    write_file(path, data.data(), data.size());
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comments.
std::size_t next_token(const std::vector<std::uint8_t>& data, std::size_t pos, std::string& tok) {
    tok.clear();
    while (pos < data.size()) {
        const char c = static_cast<char>(data[pos]);
        if (c == '#') {
            while (pos < data.size() && data[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])))
        tok.push_back(static_cast<char>(data[pos++]));
    return pos;
}

} // namespace

Image read_image_ppm(const std::filesystem::path& path) {
    const auto data = read_file(path);
    std::string tok;
    std::size_t pos = next_token(data, 0, tok);
    if (tok != "P6") throw io_error(path.string() + ": not a binary PPM");
    pos = next_token(data, pos, tok);
    const int w = std::stoi(tok);
    pos = next_token(data, pos, tok);
    const int h = std::stoi(tok);
    pos = next_token(data, pos, tok);
    const int maxval = std::stoi(tok);
    if (maxval != 255) throw io_error(path.string() + ": only maxval 255 supported");
    ++pos; // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (data.size() - pos < need) throw io_error(path.string() + ": truncated PPM payload");
    Image img(w, h);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            for (int c = 0; c < 3; ++c)
                img.at(c, v, u) = data[pos + (static_cast<std::size_t>(v) * w + u) * 3 + c] / 255.0;
    return img;
}

Image read_image_png(const std::filesystem::path& path) {
    PngReader r;
    open_png_reader(r, path);
    png_set_expand(r.png);
    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_set_gray_to_rgb(r.png);
    png_read_update_info(r.png, r.info);
    const png_uint_32 w = png_get_image_width(r.png, r.info);
    const png_uint_32 h = png_get_image_height(r.png, r.info);
    if (png_get_channels(r.png, r.info) != 3)
        throw io_error(path.string() + ": expected an RGB image");
    Image img(static_cast<int>(w), static_cast<int>(h));
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    if (setjmp(png_jmpbuf(r.png))) throw io_error("failed to decode " + path.string());
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, static_cast<int>(y), static_cast<int>(x)) = row[x * 3 + c] / 255.0;
    }
    return img;
}

Image read_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".ppm") return read_image_ppm(path);
    if (ext == ".png") return read_image_png(path);
    throw io_error(path.string() + ": unsupported image extension '" + ext + "'");
}

void write_mask_pbm(const std::vector<std::uint8_t>& mask, int width, int height,
                    const std::filesystem::path& path) {
    if (mask.size() != static_cast<std::size_t>(width) * height)
        throw std::invalid_argument("mask size does not match raster");
    std::vector<std::uint8_t> data;
    char header[64];
    const int n = std::snprintf(header, sizeof header, "P4\n%d %d\n", width, height);
    data.insert(data.end(), header, header + n);
    const int row_bytes = (width + 7) / 8;
    for (int v = 0; v < height; ++v) {
        for (int b = 0; b < row_bytes; ++b) {
            std::uint8_t byte = 0;
            for (int bit = 0; bit < 8; ++bit) {
                const int u = b * 8 + bit;
                if (u < width && mask[static_cast<std::size_t>(v) * width + u])
                    byte |= static_cast<std::uint8_t>(0x80 >> bit);
            }
            data.push_back(byte);
        }
    }
    write_file(path, data.data(), data.size());
}

std::vector<std::uint8_t> read_mask_pbm(const std::filesystem::path& path, int& width,
                                        int& height) {
    const auto data = read_file(path);
    std::string tok;
    std::size_t pos = next_token(data, 0, tok);
    if (tok != "P4") throw io_error(path.string() + ": not a binary PBM");
    pos = next_token(data, pos, tok);
    width = std::stoi(tok);
    pos = next_token(data, pos, tok);
    height = std::stoi(tok);
    ++pos;
    const int row_bytes = (width + 7) / 8;
    if (data.size() - pos < static_cast<std::size_t>(row_bytes) * height)
        throw io_error(path.string() + ": truncated PBM payload");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u) {
            const std::uint8_t byte = data[pos + static_cast<std::size_t>(v) * row_bytes + u / 8];
            mask[static_cast<std::size_t>(v) * width + u] = (byte >> (7 - u % 8)) & 1;
        }
    return mask;
}

} // namespace lcf
