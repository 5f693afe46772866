#include "lcf/geometry.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "lcf/util.hpp"

namespace lcf {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 Vec3::normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
}

Vec3 Mat3::operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
            r(i, j) = s;
        }
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 euler_xyz(double rx, double ry, double rz) {
    const double cx = std::cos(rx), sx = std::sin(rx);
    const double cy = std::cos(ry), sy = std::sin(ry);
    const double cz = std::cos(rz), sz = std::sin(rz);
    Mat3 Rx, Ry, Rz;
    Rx(1, 1) = cx; Rx(1, 2) = -sx; Rx(2, 1) = sx; Rx(2, 2) = cx;
    Ry(0, 0) = cy; Ry(0, 2) = sy; Ry(2, 0) = -sy; Ry(2, 2) = cy;
    Rz(0, 0) = cz; Rz(0, 1) = -sz; Rz(1, 0) = sz; Rz(1, 1) = cz;
    return Rz * (Ry * Rx);
}

void PointCloud::validate() const {
    for (const Vec3& p : points)
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw std::invalid_argument("point cloud contains a non-finite coordinate");
    if (!intensity.empty() && intensity.size() != points.size())
        throw std::invalid_argument("intensity length does not match point count");
}

static double orthonormality_error(const Mat3& r) {
    const Mat3 gram = r.transposed() * r;
    double err = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            err = std::max(err, std::fabs(gram(i, j) - (i == j ? 1.0 : 0.0)));
    return err;
}

RigidPose RigidPose::make(const Mat3& rotation, const Vec3& translation) {
    if (orthonormality_error(rotation) > 1e-9)
        throw std::invalid_argument("rotation is not orthonormal (tolerance 1e-9)");
    if (std::fabs(rotation.det() - 1.0) > 1e-9)
        throw std::invalid_argument("rotation determinant is not +1 (tolerance 1e-9)");
    RigidPose pose;
    pose.r_ = rotation;
    pose.t_ = translation;
    return pose;
}

RigidPose RigidPose::inverse() const {
    RigidPose inv;
    inv.r_ = r_.transposed();
    inv.t_ = (inv.r_ * t_) * -1.0;
    return inv;
}

RigidPose RigidPose::compose(const RigidPose& inner) const {
    RigidPose out;
    out.r_ = r_ * inner.r_;
    out.t_ = r_ * inner.t_ + t_;
    return out;
}

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::invalid_argument("camera focal lengths must be positive");
    if (width < 1 || height < 1)
        throw std::invalid_argument("camera raster must be at least 1x1");
}

std::size_t SparseDepthMap::valid_count() const {
    std::size_t n = 0;
    for (double d : depth)
        if (d > 0.0) ++n;
    return n;
}

void SparseDepthMap::validate() const {
    for (double d : depth)
        if (!std::isfinite(d) || d < 0.0)
            throw std::invalid_argument("depth map values must be finite and >= 0");
}

PointCloud transform_points(const PointCloud& cloud, const RigidPose& pose) {
    cloud.validate();
    PointCloud out;
    out.points.reserve(cloud.points.size());
    for (const Vec3& p : cloud.points) out.points.push_back(pose.apply(p));
    out.intensity = cloud.intensity;
    return out;
}

SparseDepthMap project_to_depthmap(const PointCloud& cloud, const CameraModel& camera,
                                   Collision collision) {
    cloud.validate();
    camera.validate();
    SparseDepthMap map(camera.width, camera.height);
    for (const Vec3& p : cloud.points) {
        if (!(p.z > 0.0)) continue;
        const long u = round_half_even(camera.fx * p.x / p.z + camera.cx);
        const long v = round_half_even(camera.fy * p.y / p.z + camera.cy);
        if (u < 0 || u >= camera.width || v < 0 || v >= camera.height) continue;
        double& cell = map.at(static_cast<int>(v), static_cast<int>(u));
        if (collision == Collision::keep_last || cell == 0.0 || p.z < cell) cell = p.z;
    }
    return map;
}

std::vector<std::uint8_t> outlier_oracle(const SparseDepthMap& projected,
                                         const std::vector<double>& true_depth,
                                         int width, int height, double tau) {
    if (projected.width != width || projected.height != height ||
        true_depth.size() != static_cast<std::size_t>(width) * height)
        throw std::invalid_argument("outlier_oracle: raster size mismatch");
    std::vector<std::uint8_t> mask(true_depth.size(), 0);
    for (std::size_t i = 0; i < true_depth.size(); ++i) {
        const double d = projected.depth[i];
        if (d > 0.0 && std::fabs(d - true_depth[i]) > tau) mask[i] = 1;
    }
    return mask;
}

} // namespace lcf
