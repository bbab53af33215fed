#pragma once

#include <algorithm>

#include "pcvs/camera.hpp"
#include "pcvs/ops.hpp"

namespace pcvs {

struct SplatParams {
    double radius = 1.5;    // screen-space splat radius, pixels
    int max_per_pixel = 8;  // keep only the nearest (smallest z) this many splats
    double background = 0;  // fill for uncovered pixels, all channels

    void validate() const {
        if (!(radius > 0) || max_per_pixel < 1) throw NumericError("splat: invalid parameters");
    }
};

template <typename T>
struct RenderOutput {
    Tensor<T> image;    // [C,H,W]
    Tensor<T> mask;     // [H,W], 1 iff accumulated opacity > 0 (constant)
    Tensor<T> opacity;  // [H,W], accumulated opacity in [0,1] (constant)
};

namespace detail {

// Candidate splats for one pixel, sorted by (z, point index) ascending and
// truncated to max_per_pixel. The same ordering rule is used by the oracle.
struct SplatCand {
    double z;
    int index;
    bool operator<(const SplatCand& o) const { return z < o.z || (z == o.z && index < o.index); }
};

}  // namespace detail

/// Differentiable point splatting. Each point covers the pixels within
/// `radius` of its projected center with opacity 1-(dist/radius)^2; per pixel
/// the nearest max_per_pixel splats composite front to back over the
/// background. Gradients flow to attributes and to world positions through
/// the projected centers; the z-order and the candidate sets are constants.
template <typename T>
RenderOutput<T> splat(const Tensor<T>& positions, const Tensor<T>& attrs, const Camera& cam,
                      const SplatParams& params) {
    params.validate();
    if (positions.rank() != 2 || positions.dim(1) != 3 || attrs.rank() != 2 ||
        attrs.dim(0) != positions.dim(0))
        shape_fail("splat", positions.shape(), attrs.shape());
    if (cam.width < 1 || cam.height < 1) throw ShapeError("splat: camera has no image size");
    const int M = positions.dim(0), C = attrs.dim(1);
    const int H = cam.height, W = cam.width;
    const double r = params.radius, r2 = r * r;

    // gather per-pixel candidate lists by scattering each point over its
    // footprint; double precision for projection and distance tests so the
    // candidate sets cannot differ between runs or against the oracle
    std::vector<std::vector<detail::SplatCand>> cand(static_cast<std::size_t>(H) * W);
    for (int j = 0; j < M; ++j) {
        const Vec3 X{static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3]),
                     static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3 + 1]),
                     static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3 + 2])};
        const auto pr = cam.project(X);
        if (!pr.valid || pr.z <= 0) continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(pr.u - r)));
        const int x1 = std::min(W - 1, static_cast<int>(std::floor(pr.u + r)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(pr.v - r)));
        const int y1 = std::min(H - 1, static_cast<int>(std::floor(pr.v + r)));
        for (int qy = y0; qy <= y1; ++qy)
            for (int qx = x0; qx <= x1; ++qx) {
                const double d2 = (qx - pr.u) * (qx - pr.u) + (qy - pr.v) * (qy - pr.v);
                if (d2 <= r2) cand[static_cast<std::size_t>(qy) * W + qx].push_back({pr.z, j});
            }
    }

    // flatten kept candidates; the closure re-derives everything else
    auto offsets = std::make_shared<std::vector<int>>(static_cast<std::size_t>(H) * W + 1, 0);
    auto kept = std::make_shared<std::vector<int>>();
    for (std::size_t p = 0; p < cand.size(); ++p) {
        auto& list = cand[p];
        std::sort(list.begin(), list.end());
        if (static_cast<int>(list.size()) > params.max_per_pixel) list.resize(static_cast<std::size_t>(params.max_per_pixel));
        for (const auto& cd : list) kept->push_back(cd.index);
        (*offsets)[p + 1] = static_cast<int>(kept->size());
    }

    const Camera cam_c = cam;
    const SplatParams par_c = params;
    auto out = make_op_node<T>(
        "splat", {C, H, W}, {positions.node_ptr(), attrs.node_ptr()},
        [offsets, kept, cam_c, par_c, C, H, W](TensorNode<T>& nd) {
            auto& ppos = *nd.parents[0];
            auto& patt = *nd.parents[1];
            if (ppos.requires_grad) ppos.ensure_grad();
            if (patt.requires_grad) patt.ensure_grad();
            const double r2b = par_c.radius * par_c.radius;
            const std::size_t HW = static_cast<std::size_t>(H) * W;
            std::vector<double> alpha, trans, cu, cv, cz, suffix;
            for (std::size_t p = 0; p < HW; ++p) {
                const int lo = (*offsets)[p], hi = (*offsets)[p + 1];
                const int n = hi - lo;
                if (n == 0) continue;
                const double qx = static_cast<double>(p % W), qy = static_cast<double>(p / W);
                alpha.assign(static_cast<std::size_t>(n), 0.0);
                trans.assign(static_cast<std::size_t>(n), 1.0);
                cu.resize(static_cast<std::size_t>(n));
                cv.resize(static_cast<std::size_t>(n));
                cz.resize(static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i) {
                    const int j = (*kept)[static_cast<std::size_t>(lo + i)];
                    const Vec3 X{static_cast<double>(ppos.value[static_cast<std::size_t>(j) * 3]),
                                 static_cast<double>(ppos.value[static_cast<std::size_t>(j) * 3 + 1]),
                                 static_cast<double>(ppos.value[static_cast<std::size_t>(j) * 3 + 2])};
                    const auto pr = cam_c.project(X);
                    cu[static_cast<std::size_t>(i)] = pr.u;
                    cv[static_cast<std::size_t>(i)] = pr.v;
                    cz[static_cast<std::size_t>(i)] = pr.z;
                    const double d2 = (qx - pr.u) * (qx - pr.u) + (qy - pr.v) * (qy - pr.v);
                    alpha[static_cast<std::size_t>(i)] = static_cast<double>(static_cast<T>(1.0 - d2 / r2b));
                }
                double t = 1.0;
                for (int i = 0; i < n; ++i) {
                    trans[static_cast<std::size_t>(i)] = t;
                    t *= 1.0 - alpha[static_cast<std::size_t>(i)];
                }
                // suffix[i*C+c] = composite of candidates i..n-1 over background
                suffix.assign(static_cast<std::size_t>(n + 1) * C, par_c.background);
                for (int i = n - 1; i >= 0; --i) {
                    const int j = (*kept)[static_cast<std::size_t>(lo + i)];
                    for (int c = 0; c < C; ++c) {
                        const double a = static_cast<double>(patt.value[static_cast<std::size_t>(j) * C + c]);
                        suffix[static_cast<std::size_t>(i) * C + c] =
                            alpha[static_cast<std::size_t>(i)] * a +
                            (1.0 - alpha[static_cast<std::size_t>(i)]) * suffix[static_cast<std::size_t>(i + 1) * C + c];
                    }
                }
                for (int i = 0; i < n; ++i) {
                    const int j = (*kept)[static_cast<std::size_t>(lo + i)];
                    double dalpha = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double g = static_cast<double>(nd.grad[static_cast<std::size_t>(c) * HW + p]);
                        const double a = static_cast<double>(patt.value[static_cast<std::size_t>(j) * C + c]);
                        if (patt.requires_grad)
                            patt.grad[static_cast<std::size_t>(j) * C + c] +=
                                static_cast<T>(g * alpha[static_cast<std::size_t>(i)] * trans[static_cast<std::size_t>(i)]);
                        dalpha += g * trans[static_cast<std::size_t>(i)] *
                                  (a - suffix[static_cast<std::size_t>(i + 1) * C + c]);
                    }
                    if (!ppos.requires_grad) continue;
                    const double dcu = dalpha * 2.0 * (qx - cu[static_cast<std::size_t>(i)]) / r2b;
                    const double dcv = dalpha * 2.0 * (qy - cv[static_cast<std::size_t>(i)]) / r2b;
                    // d(cu,cv)/d(world X) through x_cam = R·X + t
                    const double z = cz[static_cast<std::size_t>(i)];
                    const double xc = (cu[static_cast<std::size_t>(i)] - cam_c.cx) / cam_c.fx * z;
                    const double yc = (cv[static_cast<std::size_t>(i)] - cam_c.cy) / cam_c.fy * z;
                    for (int a3 = 0; a3 < 3; ++a3) {
                        const double R0 = cam_c.R.m[static_cast<std::size_t>(a3)];
                        const double R1 = cam_c.R.m[static_cast<std::size_t>(3 + a3)];
                        const double R2 = cam_c.R.m[static_cast<std::size_t>(6 + a3)];
                        const double g = dcu * (cam_c.fx / z * R0 - cam_c.fx * xc / (z * z) * R2) +
                                         dcv * (cam_c.fy / z * R1 - cam_c.fy * yc / (z * z) * R2);
                        ppos.grad[static_cast<std::size_t>(j) * 3 + a3] += static_cast<T>(g);
                    }
                }
            }
        });

    // forward compositing (same math, T precision for the blend)
    Tensor<T> mask = Tensor<T>::zeros({H, W});
    Tensor<T> opacity = Tensor<T>::zeros({H, W});
    const std::size_t HW = static_cast<std::size_t>(H) * W;
    std::fill(out.value().begin(), out.value().end(), static_cast<T>(params.background));
    for (std::size_t p = 0; p < HW; ++p) {
        const int lo = (*offsets)[p], hi = (*offsets)[p + 1];
        if (lo == hi) continue;
        const double qx = static_cast<double>(p % W), qy = static_cast<double>(p / W);
        T t = T(1);
        std::vector<T> acc(static_cast<std::size_t>(C), T(0));
        for (int i = lo; i < hi; ++i) {
            const int j = (*kept)[static_cast<std::size_t>(i)];
            const Vec3 X{static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3]),
                         static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3 + 1]),
                         static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3 + 2])};
            const auto pr = cam.project(X);
            const double d2 = (qx - pr.u) * (qx - pr.u) + (qy - pr.v) * (qy - pr.v);
            const T a = static_cast<T>(1.0 - d2 / r2);
            for (int c = 0; c < C; ++c) acc[static_cast<std::size_t>(c)] += t * a * attrs.value()[static_cast<std::size_t>(j) * C + c];
            t *= T(1) - a;
        }
        for (int c = 0; c < C; ++c)
            out.value()[static_cast<std::size_t>(c) * HW + p] = acc[static_cast<std::size_t>(c)] + t * static_cast<T>(params.background);
        opacity.value()[p] = T(1) - t;
        mask.value()[p] = opacity.value()[p] > T(0) ? T(1) : T(0);
    }
    return {out, mask, opacity};
}

/// Depth rendering = splatting each point's camera-space z. The z attribute
/// is built in-graph from the positions, so depth maps stay differentiable
/// w.r.t. the cloud.
template <typename T>
RenderOutput<T> render_depth(const Tensor<T>& positions, const Camera& cam, const SplatParams& params) {
    Tensor<T> rz = Tensor<T>::zeros({3, 1});
    for (int a = 0; a < 3; ++a) rz.value()[static_cast<std::size_t>(a)] = static_cast<T>(cam.R.m[static_cast<std::size_t>(6 + a)]);
    auto z = add_scalar(matmul(positions, rz), static_cast<T>(cam.t.z));  // [M,1]
    auto out = splat(positions, z, cam, params);
    out.image = reshape(out.image, {cam.height, cam.width});
    return out;
}

/// Plain-loop reference renderer: every point tested against every pixel,
/// identical candidate rule, ordering, and compositing. Values only, no graph.
template <typename T>
RenderOutput<T> brute_force_reference(const Tensor<T>& positions, const Tensor<T>& attrs, const Camera& cam,
                                      const SplatParams& params) {
    params.validate();
    const int M = positions.dim(0), C = attrs.dim(1);
    const int H = cam.height, W = cam.width;
    const double r2 = params.radius * params.radius;

    RenderOutput<T> out;
    out.image = Tensor<T>::filled({C, H, W}, static_cast<T>(params.background));
    out.mask = Tensor<T>::zeros({H, W});
    out.opacity = Tensor<T>::zeros({H, W});

    std::vector<Camera::Proj> proj(static_cast<std::size_t>(M));
    for (int j = 0; j < M; ++j)
        proj[static_cast<std::size_t>(j)] =
            cam.project({static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3]),
                         static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3 + 1]),
                         static_cast<double>(positions.value()[static_cast<std::size_t>(j) * 3 + 2])});

    for (int qy = 0; qy < H; ++qy)
        for (int qx = 0; qx < W; ++qx) {
            std::vector<detail::SplatCand> list;
            for (int j = 0; j < M; ++j) {
                const auto& pr = proj[static_cast<std::size_t>(j)];
                if (!pr.valid || pr.z <= 0) continue;
                const double d2 = (qx - pr.u) * (qx - pr.u) + (qy - pr.v) * (qy - pr.v);
                if (d2 <= r2) list.push_back({pr.z, j});
            }
            std::sort(list.begin(), list.end());
            if (static_cast<int>(list.size()) > params.max_per_pixel)
                list.resize(static_cast<std::size_t>(params.max_per_pixel));
            T t = T(1);
            const std::size_t p = static_cast<std::size_t>(qy) * W + qx;
            std::vector<T> acc(static_cast<std::size_t>(C), T(0));
            for (const auto& cd : list) {
                const auto& pr = proj[static_cast<std::size_t>(cd.index)];
                const double d2 = (qx - pr.u) * (qx - pr.u) + (qy - pr.v) * (qy - pr.v);
                const T a = static_cast<T>(1.0 - d2 / r2);
                for (int c = 0; c < C; ++c)
                    acc[static_cast<std::size_t>(c)] += t * a * attrs.value()[static_cast<std::size_t>(cd.index) * C + c];
                t *= T(1) - a;
            }
            for (int c = 0; c < C; ++c)
                out.image.value()[static_cast<std::size_t>(c) * H * W + p] =
                    acc[static_cast<std::size_t>(c)] + t * static_cast<T>(params.background);
            out.opacity.value()[p] = T(1) - t;
            out.mask.value()[p] = out.opacity.value()[p] > T(0) ? T(1) : T(0);
        }
    return out;
}

}  // namespace pcvs
