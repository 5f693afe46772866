#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lcf {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
    Vec3 normalized() const;
};

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }
    Vec3 operator*(const Vec3& v) const;
    Mat3 operator*(const Mat3& o) const;
    Mat3 transposed() const;
    double det() const;
};

// Rotation about x, then y, then z (angles in radians): Rz * Ry * Rx.
Mat3 euler_xyz(double rx, double ry, double rz);

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<double> intensity; // empty, or one value in [0,1] per point

    std::size_t size() const { return points.size(); }
    // Throws if a coordinate is non-finite or intensity length mismatches.
    void validate() const;
};

// Rigid transform p' = R p + t. Construct through make() so the orthonormality
// invariant (1e-9) is enforced.
class RigidPose {
  public:
    RigidPose() = default;
    static RigidPose make(const Mat3& rotation, const Vec3& translation);
    static RigidPose identity() { return {}; }

    const Mat3& rotation() const { return r_; }
    const Vec3& translation() const { return t_; }
    Vec3 apply(const Vec3& p) const { return r_ * p + t_; }
    RigidPose inverse() const;
    RigidPose compose(const RigidPose& inner) const; // this ∘ inner

  private:
    Mat3 r_;
    Vec3 t_;
};

struct CameraModel {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    int width = 0, height = 0;

    void validate() const; // fx, fy > 0; width, height >= 1
};

// Raster of metric depths; 0 marks an invalid pixel.
struct SparseDepthMap {
    int width = 0, height = 0;
    std::vector<double> depth; // row-major

    SparseDepthMap() = default;
    SparseDepthMap(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0) {}

    double at(int v, int u) const { return depth[static_cast<std::size_t>(v) * width + u]; }
    double& at(int v, int u) { return depth[static_cast<std::size_t>(v) * width + u]; }
    bool valid(int v, int u) const { return at(v, u) > 0.0; }
    std::size_t valid_count() const;
    void validate() const; // all values finite and >= 0
};

enum class Collision { keep_nearest, keep_last };

PointCloud transform_points(const PointCloud& cloud, const RigidPose& pose);

// Pinhole projection of a camera-frame cloud. Pixel indices are rounded to
// nearest (ties to even); points behind the camera or outside the raster are
// dropped. Same-pixel collisions resolve per `collision`; there is no
// cross-pixel occlusion reasoning.
SparseDepthMap project_to_depthmap(const PointCloud& cloud, const CameraModel& camera,
                                   Collision collision = Collision::keep_nearest);

// mask[p] = valid(p) && |projected[p] - true_depth[p]| > tau. Throws on size
// mismatch. true_depth value 0 means "no surface seen" and compares literally.
std::vector<std::uint8_t> outlier_oracle(const SparseDepthMap& projected,
                                         const std::vector<double>& true_depth,
                                         int width, int height, double tau);

} // namespace lcf
