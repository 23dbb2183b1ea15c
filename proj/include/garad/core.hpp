#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace garad {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Base error for all library failures.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration (unknown key, unparsable value, invalid combination).
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Bad input data (missing file, malformed line, dimension mismatch).
struct DataError : Error {
    explicit DataError(const std::string& what) : Error(what) {}
};

constexpr double kMinDepth = 1e-6;

/// Pinhole intrinsics. Pixel coordinates follow the sample-point
/// convention: a 3D point on the optical axis lands at (cx, cy).
struct Camera {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    bool valid() const { return fx > 0.0 && fy > 0.0 && width >= 1 && height >= 1; }

    bool contains(const Vec2& px) const {
        return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1.0 && px.y() <= height - 1.0;
    }

    /// Intrinsics for a pyramid level decimated by `factor` (2^level).
    Camera scaled(double factor) const {
        Camera c = *this;
        c.fx /= factor;
        c.fy /= factor;
        c.cx /= factor;
        c.cy /= factor;
        c.width = static_cast<int>(std::ceil(width / factor));
        c.height = static_cast<int>(std::ceil(height / factor));
        return c;
    }

    Mat3 matrix() const {
        Mat3 k = Mat3::Identity();
        k(0, 0) = fx;
        k(1, 1) = fy;
        k(0, 2) = cx;
        k(1, 2) = cy;
        return k;
    }
};

/// Rigid camera pose, stored world-to-camera: X_cam = rotation * X_world + translation.
/// This is the (R, t) the pose solver optimizes; invert for the camera center.
struct CameraPose {
    Quat rotation = Quat::Identity();
    Vec3 translation = Vec3::Zero();
    double timestamp = 0.0;

    static CameraPose identity(double t = 0.0) {
        CameraPose p;
        p.timestamp = t;
        return p;
    }

    Vec3 transform(const Vec3& world) const { return rotation * world + translation; }

    CameraPose inverse() const {
        CameraPose p;
        p.rotation = rotation.conjugate();
        p.translation = -(p.rotation * translation);
        p.timestamp = timestamp;
        return p;
    }

    /// Composition: (a * b).transform(x) == a.transform(b.transform(x)).
    friend CameraPose operator*(const CameraPose& a, const CameraPose& b) {
        CameraPose p;
        p.rotation = (a.rotation * b.rotation).normalized();
        p.translation = a.rotation * b.translation + a.translation;
        p.timestamp = a.timestamp;
        return p;
    }

    /// Camera center in world coordinates.
    Vec3 center() const { return rotation.conjugate() * (-translation); }

    bool unit_rotation(double tol = 1e-9) const { return std::abs(rotation.norm() - 1.0) <= tol; }
};

/// Relative motion mapping points in `prev`'s camera frame into `cur`'s.
inline CameraPose relative_pose(const CameraPose& cur, const CameraPose& prev) {
    return cur * prev.inverse();
}

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

/// SO(3) exponential as a quaternion.
inline Quat quat_exp(const Vec3& omega) {
    const double theta = omega.norm();
    if (theta < 1e-12) {
        Quat q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
        return q.normalized();
    }
    const double half = 0.5 * theta;
    const Vec3 axis = omega / theta;
    const double s = std::sin(half);
    return Quat(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

/// Rotation angle between two quaternions, radians.
inline double rotation_angle(const Quat& a, const Quat& b) {
    const double d = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
    return 2.0 * std::acos(d);
}

inline Vec2 project_camera_point(const Camera& cam, const Vec3& pc) {
    return {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
}

/// Pinhole projection of a world point. Throws on cheirality violation.
inline Vec2 project(const CameraPose& pose, const Camera& cam, const Vec3& world) {
    const Vec3 pc = pose.transform(world);
    if (pc.z() <= kMinDepth) throw Error("project: point behind camera");
    return project_camera_point(cam, pc);
}

inline std::optional<Vec2> try_project(const CameraPose& pose, const Camera& cam, const Vec3& world) {
    const Vec3 pc = pose.transform(world);
    if (pc.z() <= kMinDepth) return std::nullopt;
    return project_camera_point(cam, pc);
}

/// Back-projects a pixel with metric depth into world coordinates.
inline Vec3 back_project(const CameraPose& pose, const Camera& cam, const Vec2& px, double depth) {
    if (depth <= 0.0) throw Error("back_project: depth must be positive");
    const Vec3 pc(depth * (px.x() - cam.cx) / cam.fx, depth * (px.y() - cam.cy) / cam.fy, depth);
    return pose.rotation.conjugate() * (pc - pose.translation);
}

}  // namespace garad
