#pragma once

#include <array>
#include <cmath>

#include "pcvs/common.hpp"

namespace pcvs {

// Small fixed-size linear algebra for camera work. Poses stay in double even
// when the learning side runs in float: pose error is pure noise we can avoid.

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }
};

struct Mat3 {
    // row-major
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
        Mat3 out;
        out.m = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
        return out;
    }

    Vec3 apply(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Vec3 apply_transposed(const Vec3& v) const {
        return {m[0] * v.x + m[3] * v.y + m[6] * v.z, m[1] * v.x + m[4] * v.y + m[7] * v.z,
                m[2] * v.x + m[5] * v.y + m[8] * v.z};
    }
    Mat3 transposed() const {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out.m[static_cast<std::size_t>(r) * 3 + c] = m[static_cast<std::size_t>(c) * 3 + r];
        return out;
    }
};

/// Pinhole camera. Pixel centers sit at integer coordinates, origin top-left,
/// +z looks forward. World-to-camera: x_cam = R·X + t.
struct Camera {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Mat3 R;
    Vec3 t;
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0) || !(fy > 0)) throw NumericError("camera: focal lengths must be positive");
        const Mat3 rt = R.transposed();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int k = 0; k < 3; ++k)
                    acc += rt.m[static_cast<std::size_t>(r) * 3 + k] * R.m[static_cast<std::size_t>(k) * 3 + c];
                const double want = r == c ? 1.0 : 0.0;
                if (std::abs(acc - want) > 1e-6) throw NumericError("camera: R is not a rotation");
            }
    }

    Vec3 center() const { return R.apply_transposed(t * -1.0); }

    /// World-space direction so that unproject(u,v,d) = center() + ray_dir·d.
    Vec3 ray_dir(double u, double v) const {
        return R.apply_transposed({(u - cx) / fx, (v - cy) / fy, 1.0});
    }

    Vec3 unproject(double u, double v, double depth) const {
        if (!(depth > 0)) throw NumericError("unproject: nonpositive depth");
        return center() + ray_dir(u, v) * depth;
    }

    struct Proj {
        double u = 0, v = 0, z = 0;
        bool valid = false;
    };

    Proj project(const Vec3& X) const {
        const Vec3 c = R.apply(X) + t;
        if (std::abs(c.z) < 1e-9) return {0, 0, c.z, false};
        return {fx * c.x / c.z + cx, fy * c.y / c.z + cy, c.z, true};
    }

    /// Camera at `eye` looking toward `target`. Image x follows viewdir×up
    /// so that image v grows downward for an up_hint pointing up.
    static Camera look_at(const Vec3& eye, const Vec3& target, double fx, double fy, int width, int height,
                          const Vec3& up_hint = {0, 1, 0}) {
        const Vec3 zc = (target - eye).normalized();
        Vec3 xc = zc.cross(up_hint);
        if (xc.norm() < 1e-6) xc = zc.cross({0, 0, 1});
        xc = xc.normalized();
        const Vec3 yc = zc.cross(xc);
        Camera cam;
        cam.fx = fx;
        cam.fy = fy;
        cam.cx = (width - 1) * 0.5;
        cam.cy = (height - 1) * 0.5;
        cam.width = width;
        cam.height = height;
        cam.R = Mat3::from_rows(xc, yc, zc);
        cam.t = cam.R.apply(eye) * -1.0;
        return cam;
    }
};

}  // namespace pcvs
