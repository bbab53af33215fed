#pragma once

#include "pcvs/camera.hpp"
#include "pcvs/ops.hpp"

namespace pcvs {

template <typename T>
struct WarpResult {
    Tensor<T> image;  // [C,H,W], zero where mask is 0
    Tensor<T> mask;   // [H,W], 1 where the reprojection landed inside the source and z > 0
};

/// Backward warp of a source view into the target camera using the target
/// depth map. Differentiable w.r.t. both the source image and the depth.
///
/// Per target pixel the reprojected source-camera point is affine in the
/// depth: x_cam = alpha·d + beta with per-pixel constants, so the whole warp
/// lowers to elementwise graph ops plus one grid_sample. z is clamped away
/// from zero before the divide; pixels with z <= 0 are masked out, their
/// (meaningless) sampled values zeroed.
template <typename T>
WarpResult<T> backward_warp(const Tensor<T>& src, const Camera& src_cam, const Camera& tgt_cam,
                            const Tensor<T>& tgt_depth, const Tensor<T>* tgt_valid = nullptr) {
    if (src.rank() != 3 || tgt_depth.rank() != 2) shape_fail("backward_warp", src.shape(), tgt_depth.shape());
    const int H = tgt_depth.dim(0), W = tgt_depth.dim(1);
    if (tgt_valid && !same_shape(tgt_valid->shape(), tgt_depth.shape()))
        shape_fail("backward_warp", tgt_depth.shape(), tgt_valid->shape());

    Tensor<T> ax = Tensor<T>::zeros({H, W}), ay = Tensor<T>::zeros({H, W}), az = Tensor<T>::zeros({H, W});
    const Vec3 beta = src_cam.R.apply(tgt_cam.center()) + src_cam.t;
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            const Vec3 a = src_cam.R.apply(tgt_cam.ray_dir(u, v));
            const std::size_t i = static_cast<std::size_t>(v) * W + u;
            ax.value()[i] = static_cast<T>(a.x);
            ay.value()[i] = static_cast<T>(a.y);
            az.value()[i] = static_cast<T>(a.z);
        }

    auto xc = add_scalar(mul(ax, tgt_depth), static_cast<T>(beta.x));
    auto yc = add_scalar(mul(ay, tgt_depth), static_cast<T>(beta.y));
    auto zc = add_scalar(mul(az, tgt_depth), static_cast<T>(beta.z));
    auto z_safe = clamp_min(zc, T(1e-6));
    auto u_s = add_scalar(mul_scalar(div(xc, z_safe), static_cast<T>(src_cam.fx)), static_cast<T>(src_cam.cx));
    auto v_s = add_scalar(mul_scalar(div(yc, z_safe), static_cast<T>(src_cam.fy)), static_cast<T>(src_cam.cy));

    auto sampled = grid_sample(src, u_s, v_s);

    Tensor<T> mask = Tensor<T>::zeros({H, W});
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        T m = sampled.mask.value()[i];
        if (zc.value()[i] <= T(1e-6)) m = T(0);
        if (tgt_valid && tgt_valid->value()[i] == T(0)) m = T(0);
        mask.value()[i] = m;
    }

    // zero out masked pixels so downstream consumers see no garbage values
    Tensor<T> mc = Tensor<T>::zeros({src.dim(0), H, W});
    for (int c = 0; c < src.dim(0); ++c)
        for (std::size_t i = 0; i < mask.numel(); ++i)
            mc.value()[static_cast<std::size_t>(c) * mask.numel() + i] = mask.value()[i];
    return {mul(sampled.values, mc), mask};
}

}  // namespace pcvs
