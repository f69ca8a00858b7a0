// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/common.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>

namespace pygs::geom {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCov2dFloor = 0.3;
inline constexpr double kCullSigma = 3.0;
inline constexpr int kMaxShDegree = 3;
inline constexpr int kShCoeffs = 16;

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Pinhole camera. Camera space is x right, y down, z forward; pixel (i, j) covers
/// [i, i+1) x [j, j+1) in image coordinates, so its center sits at (i + 0.5, j + 0.5).
struct Camera {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity(); // world -> camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    int index = -1; // row of the appearance table; -1 for cameras outside the training set

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

    Eigen::Matrix4d world_to_camera() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    // Throws ConfigError when the rotation is not a proper orthonormal matrix.
    void validate() const {
        const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
        if (ortho > 1e-6 || std::abs(rotation.determinant() - 1.0) > 1e-6)
            throw ConfigError("camera rotation is not orthonormal with determinant +1");
        if (width <= 0 || height <= 0) throw ConfigError("camera has empty image size");
        if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal length must be positive");
    }

    // Unit direction (world space) through continuous image coordinate (u, v).
    Eigen::Vector3d ray_direction(double u, double v) const {
        const Eigen::Vector3d d((u - cx) / fx, (v - cy) / fy, 1.0);
        return (rotation.transpose() * d).normalized();
    }

    /// Builds a camera from a camera-to-world matrix in the OpenGL convention
    /// (x right, y up, camera looking down -z). The rotation block is projected onto
    /// the nearest rotation, so small drift in serialized poses is tolerated.
    static Camera from_camera_to_world_gl(const Eigen::Matrix4d& c2w, double fx, double fy, double cx,
                                          double cy, int width, int height, int index = -1) {
        if (!c2w.allFinite() || std::abs(c2w.topLeftCorner<3, 3>().determinant()) < 1e-9)
            throw DataError("camera-to-world transform is not invertible");
        Eigen::Matrix3d r = c2w.topLeftCorner<3, 3>();
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
        r = svd.matrixU() * svd.matrixV().transpose();
        if (r.determinant() < 0.0) throw DataError("camera-to-world transform is a reflection");
        // GL -> CV axes: flip y and z of the camera frame.
        r.col(1) *= -1.0;
        r.col(2) *= -1.0;
        Camera cam;
        cam.rotation = r.transpose();
        cam.translation = -cam.rotation * c2w.topRightCorner<3, 1>();
        cam.fx = fx;
        cam.fy = fy;
        cam.cx = cx;
        cam.cy = cy;
        cam.width = width;
        cam.height = height;
        cam.index = index;
        return cam;
    }

    Eigen::Matrix4d camera_to_world_gl() const {
        Eigen::Matrix3d r = rotation.transpose();
        r.col(1) *= -1.0;
        r.col(2) *= -1.0;
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = r;
        m.topRightCorner<3, 1>() = center();
        return m;
    }

    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                          double fov_y, int width, int height, int index = -1) {
        const Eigen::Vector3d forward = (target - eye).normalized();
        Eigen::Vector3d right = forward.cross(up);
        if (right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d::UnitX());
        right.normalize();
        const Eigen::Vector3d down = forward.cross(right);
        Camera cam;
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = down.transpose();
        cam.rotation.row(2) = forward.transpose();
        cam.translation = -cam.rotation * eye;
        cam.fy = 0.5 * height / std::tan(0.5 * fov_y);
        cam.fx = cam.fy;
        cam.cx = 0.5 * width;
        cam.cy = 0.5 * height;
        cam.width = width;
        cam.height = height;
        cam.index = index;
        return cam;
    }
};

/// One anisotropic Gaussian. Rotation is a (w, x, y, z) quaternion.
template <typename T> struct Gaussian {
    Vec3<T> position = Vec3<T>::Zero();
    Vec4<T> rotation = Vec4<T>(T(1), T(0), T(0), T(0));
    Vec3<T> log_scale = Vec3<T>::Zero();
    T opacity_logit = T(0);
    std::array<Vec3<T>, kShCoeffs> sh{};
    int level = 1;
    int cluster = 0;

    T opacity() const { return sigmoid(opacity_logit); }
};

template <typename T> Mat3<T> quaternion_to_matrix(const Vec4<T>& q_raw) {
    const Vec4<T> q = q_raw / q_raw.norm();
    const T r = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> m;
    m << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - r * z), T(2) * (x * z + r * y),
        T(2) * (x * y + r * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - r * x),
        T(2) * (x * z - r * y), T(2) * (y * z + r * x), T(1) - T(2) * (x * x + y * y);
    return m;
}

template <typename T> Mat3<T> build_covariance(const Vec4<T>& rotation, const Vec3<T>& log_scale) {
    const Mat3<T> m = quaternion_to_matrix(rotation) * log_scale.array().exp().matrix().asDiagonal();
    return m * m.transpose();
}

/// Pulls a full-matrix covariance gradient back to the raw quaternion and log-scale.
template <typename T>
void build_covariance_backward(const Vec4<T>& q_raw, const Vec3<T>& log_scale, const Mat3<T>& dcov,
                               Vec4<T>& dq_raw, Vec3<T>& dlog_scale) {
    const T qn = q_raw.norm();
    const Vec4<T> q = q_raw / qn;
    const Mat3<T> rot = quaternion_to_matrix(q);
    const Vec3<T> s = log_scale.array().exp().matrix();
    const Mat3<T> m = rot * s.asDiagonal();
    const Mat3<T> dm = (dcov + dcov.transpose()) * m;

    Mat3<T> dr;
    for (int j = 0; j < 3; ++j) {
        dr.col(j) = dm.col(j) * s[j];
        dlog_scale[j] = dm.col(j).dot(rot.col(j)) * s[j];
    }
    const T r = q[0], x = q[1], y = q[2], z = q[3];
    Vec4<T> dq;
    dq[0] = T(2) * (-z * dr(0, 1) + y * dr(0, 2) + z * dr(1, 0) - x * dr(1, 2) - y * dr(2, 0) + x * dr(2, 1));
    dq[1] = T(2) * (y * dr(0, 1) + z * dr(0, 2) + y * dr(1, 0) - T(2) * x * dr(1, 1) - r * dr(1, 2) +
                    z * dr(2, 0) + r * dr(2, 1) - T(2) * x * dr(2, 2));
    dq[2] = T(2) * (-T(2) * y * dr(0, 0) + x * dr(0, 1) + r * dr(0, 2) + x * dr(1, 0) + z * dr(1, 2) -
                    r * dr(2, 0) + z * dr(2, 1) - T(2) * y * dr(2, 2));
    dq[3] = T(2) * (-T(2) * z * dr(0, 0) - r * dr(0, 1) + x * dr(0, 2) + r * dr(1, 0) - T(2) * z * dr(1, 1) +
                    y * dr(1, 2) + x * dr(2, 0) + y * dr(2, 1));
    dq_raw = (dq - q * q.dot(dq)) / qn;
}

template <typename T> struct Projection {
    Vec2<T> mean2d = Vec2<T>::Zero();
    Mat2<T> cov2d = Mat2<T>::Identity();
    T depth = T(0);
    T radius = T(0); // 3-sigma screen radius in pixels
    bool valid = false;
};

/// EWA-style perspective projection of a 3D Gaussian with covariance `cov3d`.
template <typename T> Projection<T> project(const Vec3<T>& position, const Mat3<T>& cov3d, const Camera& cam) {
    const Mat3<T> w = cam.rotation.cast<T>();
    const Vec3<T> p = w * position + cam.translation.cast<T>();
    Projection<T> out;
    out.depth = p.z();
    if (!(p.z() > T(kNearPlane))) return out;

    const T fx = T(cam.fx), fy = T(cam.fy);
    const T iz = T(1) / p.z();
    Eigen::Matrix<T, 2, 3> j;
    j << fx * iz, T(0), -fx * p.x() * iz * iz, T(0), fy * iz, -fy * p.y() * iz * iz;
    const Eigen::Matrix<T, 2, 3> t = j * w;
    out.cov2d = t * cov3d * t.transpose();
    out.cov2d(0, 0) += T(kCov2dFloor);
    out.cov2d(1, 1) += T(kCov2dFloor);
    out.mean2d = Vec2<T>(fx * p.x() * iz + T(cam.cx), fy * p.y() * iz + T(cam.cy));

    const T a = out.cov2d(0, 0), b = out.cov2d(0, 1), c = out.cov2d(1, 1);
    const T mid = T(0.5) * (a + c);
    const T lambda_max = mid + std::sqrt(std::max(T(0), mid * mid - (a * c - b * b)));
    out.radius = T(kCullSigma) * std::sqrt(lambda_max);
    const bool outside = out.mean2d.x() + out.radius < T(0) || out.mean2d.x() - out.radius > T(cam.width) ||
                         out.mean2d.y() + out.radius < T(0) || out.mean2d.y() - out.radius > T(cam.height);
    out.valid = !outside && std::isfinite(out.radius);
    return out;
}

/// Reverse pass of `project`. Accumulates into dposition and dcov3d.
template <typename T>
void project_backward(const Vec3<T>& position, const Mat3<T>& cov3d, const Camera& cam, const Vec2<T>& dmean2d,
                      const Mat2<T>& dcov2d, Vec3<T>& dposition, Mat3<T>& dcov3d) {
    const Mat3<T> w = cam.rotation.cast<T>();
    const Vec3<T> p = w * position + cam.translation.cast<T>();
    const T fx = T(cam.fx), fy = T(cam.fy);
    const T iz = T(1) / p.z();
    const T iz2 = iz * iz;
    Eigen::Matrix<T, 2, 3> j;
    j << fx * iz, T(0), -fx * p.x() * iz2, T(0), fy * iz, -fy * p.y() * iz2;
    const Eigen::Matrix<T, 2, 3> t = j * w;

    dcov3d += t.transpose() * dcov2d * t;
    const Eigen::Matrix<T, 2, 3> dt = dcov2d * t * cov3d.transpose() + dcov2d.transpose() * t * cov3d;
    const Eigen::Matrix<T, 2, 3> dj = dt * w.transpose();

    Vec3<T> dp;
    dp.x() = dmean2d.x() * fx * iz - dj(0, 2) * fx * iz2;
    dp.y() = dmean2d.y() * fy * iz - dj(1, 2) * fy * iz2;
    dp.z() = -dmean2d.x() * fx * p.x() * iz2 - dmean2d.y() * fy * p.y() * iz2 - dj(0, 0) * fx * iz2 -
             dj(1, 1) * fy * iz2 + dj(0, 2) * T(2) * fx * p.x() * iz2 * iz + dj(1, 2) * T(2) * fy * p.y() * iz2 * iz;
    dposition += w.transpose() * dp;
}

template <typename T> Projection<T> project_gaussian(const Gaussian<T>& g, const Camera& cam) {
    return project(g.position, build_covariance(g.rotation, g.log_scale), cam);
}

namespace sh {
inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                                0.5462742152960396};
inline constexpr double C3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                                -0.4570457994644658, 1.445305721320277, -0.5900435899266435};
} // namespace sh

/// Real SH basis in the ordering used by the 3DGS ecosystem. `jac`, when given, receives dY/ddir.
template <typename T>
void sh_basis(const Vec3<T>& dir, int degree, std::array<T, kShCoeffs>& basis,
              std::array<Vec3<T>, kShCoeffs>* jac = nullptr) {
    using namespace sh;
    const T x = dir.x(), y = dir.y(), z = dir.z();
    basis.fill(T(0));
    if (jac) jac->fill(Vec3<T>::Zero());
    basis[0] = T(C0);
    if (degree < 1) return;
    basis[1] = -T(C1) * y;
    basis[2] = T(C1) * z;
    basis[3] = -T(C1) * x;
    if (jac) {
        (*jac)[1] = Vec3<T>(0, -T(C1), 0);
        (*jac)[2] = Vec3<T>(0, 0, T(C1));
        (*jac)[3] = Vec3<T>(-T(C1), 0, 0);
    }
    if (degree < 2) return;
    const T xx = x * x, yy = y * y, zz = z * z;
    const T xy = x * y, yz = y * z, xz = x * z;
    basis[4] = T(C2[0]) * xy;
    basis[5] = T(C2[1]) * yz;
    basis[6] = T(C2[2]) * (T(2) * zz - xx - yy);
    basis[7] = T(C2[3]) * xz;
    basis[8] = T(C2[4]) * (xx - yy);
    if (jac) {
        (*jac)[4] = T(C2[0]) * Vec3<T>(y, x, 0);
        (*jac)[5] = T(C2[1]) * Vec3<T>(0, z, y);
        (*jac)[6] = T(C2[2]) * Vec3<T>(-T(2) * x, -T(2) * y, T(4) * z);
        (*jac)[7] = T(C2[3]) * Vec3<T>(z, 0, x);
        (*jac)[8] = T(C2[4]) * Vec3<T>(T(2) * x, -T(2) * y, 0);
    }
    if (degree < 3) return;
    basis[9] = T(C3[0]) * y * (T(3) * xx - yy);
    basis[10] = T(C3[1]) * xy * z;
    basis[11] = T(C3[2]) * y * (T(4) * zz - xx - yy);
    basis[12] = T(C3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy);
    basis[13] = T(C3[4]) * x * (T(4) * zz - xx - yy);
    basis[14] = T(C3[5]) * z * (xx - yy);
    basis[15] = T(C3[6]) * x * (xx - T(3) * yy);
    if (jac) {
        (*jac)[9] = T(C3[0]) * Vec3<T>(T(6) * xy, T(3) * xx - T(3) * yy, 0);
        (*jac)[10] = T(C3[1]) * Vec3<T>(y * z, x * z, xy);
        (*jac)[11] = T(C3[2]) * Vec3<T>(-T(2) * xy, T(4) * zz - xx - T(3) * yy, T(8) * yz);
        (*jac)[12] = T(C3[3]) * Vec3<T>(-T(6) * xz, -T(6) * yz, T(6) * zz - T(3) * xx - T(3) * yy);
        (*jac)[13] = T(C3[4]) * Vec3<T>(T(4) * zz - T(3) * xx - yy, -T(2) * xy, T(8) * xz);
        (*jac)[14] = T(C3[5]) * Vec3<T>(T(2) * xz, -T(2) * yz, xx - yy);
        (*jac)[15] = T(C3[6]) * Vec3<T>(T(3) * xx - T(3) * yy, -T(6) * xy, 0);
    }
}

/// rgb = sum_k coeffs[k] * Y_k(dir) + 0.5, unclamped. Coefficients past the active degree are ignored.
template <typename T> Vec3<T> eval_sh(const Vec3<T>* coeffs, int degree, const Vec3<T>& dir) {
    std::array<T, kShCoeffs> y;
    sh_basis(dir, degree, y);
    Vec3<T> rgb = Vec3<T>::Constant(T(0.5));
    for (int k = 0; k < sh_coeff_count(degree); ++k) rgb += coeffs[k] * y[k];
    return rgb;
}

template <typename T>
void eval_sh_backward(const Vec3<T>* coeffs, int degree, const Vec3<T>& dir, const Vec3<T>& drgb, Vec3<T>* dcoeffs,
                      Vec3<T>& ddir) {
    std::array<T, kShCoeffs> y;
    std::array<Vec3<T>, kShCoeffs> jac;
    sh_basis(dir, degree, y, &jac);
    ddir.setZero();
    for (int k = 0; k < sh_coeff_count(degree); ++k) {
        dcoeffs[k] += drgb * y[k];
        ddir += jac[k] * coeffs[k].dot(drgb);
    }
}

/// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(n-1) pi x), cos(2^(n-1) pi x)], componentwise.
template <typename T> VecX<T> positional_encoding(const Vec3<T>& x, int n_freqs) {
    VecX<T> out(3 + 6 * n_freqs);
    out.template head<3>() = x;
    T freq = std::numbers::pi_v<T>;
    for (int f = 0; f < n_freqs; ++f, freq *= T(2)) {
        for (int a = 0; a < 3; ++a) {
            out[3 + 6 * f + a] = std::sin(freq * x[a]);
            out[3 + 6 * f + 3 + a] = std::cos(freq * x[a]);
        }
    }
    return out;
}

inline constexpr int positional_encoding_size(int n_freqs) { return 3 + 6 * n_freqs; }

} // namespace pygs::geom
