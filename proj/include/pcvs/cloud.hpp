#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "pcvs/camera.hpp"
#include "pcvs/kdtree.hpp"
#include "pcvs/ops.hpp"
#include "pcvs/rng.hpp"

namespace pcvs {

/// Points lifted from one source view. Attribute tensors stay in the autodiff
/// graph: in self-supervised mode the positions are a function of predicted
/// depth and gradients must reach the depth network through them.
template <typename T>
struct SubCloud {
    Tensor<T> positions;  // [S,3]
    Tensor<T> colors;     // [S,3]
    Tensor<T> features;   // [S,32]
    Tensor<T> quality;    // [S,1], in [0,1]
    std::vector<int> pixel_index;  // flat v*W+u of each point in its source view
    int source_view = -1;
    int view_pixels = 0;  // H*W of the source view (anchor counts scale with it)

    int size() const { return positions.dim(0); }

    /// Color and feature rows side by side: [S, 3+Fdim].
    Tensor<T> descriptors() const { return concat<T>({colors, features}, 1); }
};

template <typename T>
struct UnionCloud {
    Tensor<T> positions;    // [M,3]
    Tensor<T> descriptors;  // [M,35]
    Tensor<T> quality;      // [M,1]
    std::vector<int> origin_view;  // per point; empty for fused clouds

    int size() const { return positions.dim(0); }
};

/// One point per valid-depth pixel, row-major pixel order. Positions are
/// center + ray·depth with per-pixel constant rays, so the whole lift is
/// differentiable w.r.t. the depth map.
template <typename T>
SubCloud<T> build_sub_cloud(const Tensor<T>& image, const Tensor<T>& depth, const Tensor<T>& features,
                            const Tensor<T>& quality, const Camera& cam, int source_view = -1) {
    if (image.rank() != 3 || image.dim(0) != 3 || depth.rank() != 2 || features.rank() != 3 ||
        quality.rank() != 2)
        shape_fail("build_sub_cloud", image.shape(), depth.shape(), features.shape(), quality.shape());
    const int H = depth.dim(0), W = depth.dim(1);
    if (image.dim(1) != H || image.dim(2) != W || features.dim(1) != H || features.dim(2) != W ||
        quality.dim(0) != H || quality.dim(1) != W)
        shape_fail("build_sub_cloud", image.shape(), depth.shape(), features.shape());

    std::vector<int> idx;
    for (int i = 0; i < H * W; ++i) {
        const T d = depth.value()[static_cast<std::size_t>(i)];
        if (d > T(0) && std::isfinite(static_cast<double>(d))) idx.push_back(i);
    }
    if (idx.empty()) throw NumericError("build_sub_cloud: empty sub-cloud (no valid depth)");
    const int S = static_cast<int>(idx.size());

    Tensor<T> rays = Tensor<T>::zeros({S, 3});
    Tensor<T> centers = Tensor<T>::zeros({S, 3});
    const Vec3 c = cam.center();
    for (int i = 0; i < S; ++i) {
        const int u = idx[static_cast<std::size_t>(i)] % W;
        const int v = idx[static_cast<std::size_t>(i)] / W;
        const Vec3 r = cam.ray_dir(u, v);
        rays.value()[static_cast<std::size_t>(i) * 3 + 0] = static_cast<T>(r.x);
        rays.value()[static_cast<std::size_t>(i) * 3 + 1] = static_cast<T>(r.y);
        rays.value()[static_cast<std::size_t>(i) * 3 + 2] = static_cast<T>(r.z);
        centers.value()[static_cast<std::size_t>(i) * 3 + 0] = static_cast<T>(c.x);
        centers.value()[static_cast<std::size_t>(i) * 3 + 1] = static_cast<T>(c.y);
        centers.value()[static_cast<std::size_t>(i) * 3 + 2] = static_cast<T>(c.z);
    }

    const int F = features.dim(0);
    auto d_rows = gather_rows(reshape(depth, {H * W, 1}), idx);              // [S,1]
    auto d3 = concat<T>({d_rows, d_rows, d_rows}, 1);                        // [S,3]
    auto positions = add(mul(rays, d3), centers);
    auto colors = gather_rows(transpose2d(reshape(image, {3, H * W})), idx);  // [S,3]
    auto feats = gather_rows(transpose2d(reshape(features, {F, H * W})), idx);
    auto qual = gather_rows(reshape(quality, {H * W, 1}), idx);

    SubCloud<T> out;
    out.positions = positions;
    out.colors = colors;
    out.features = feats;
    out.quality = qual;
    out.pixel_index = std::move(idx);
    out.source_view = source_view;
    out.view_pixels = H * W;
    return out;
}

/// Concatenation of sub-clouds; attributes are copied bit-exactly.
template <typename T>
UnionCloud<T> union_clouds(const std::vector<SubCloud<T>>& subs) {
    if (subs.empty()) throw ShapeError("union_clouds: no sub-clouds");
    std::vector<Tensor<T>> pos, desc, qual;
    UnionCloud<T> out;
    for (const auto& s : subs) {
        pos.push_back(s.positions);
        desc.push_back(s.descriptors());
        qual.push_back(s.quality);
        for (int i = 0; i < s.size(); ++i) out.origin_view.push_back(s.source_view);
    }
    out.positions = pos.size() == 1 ? pos[0] : concat<T>(pos, 0);
    out.descriptors = desc.size() == 1 ? desc[0] : concat<T>(desc, 0);
    out.quality = qual.size() == 1 ? qual[0] : concat<T>(qual, 0);
    return out;
}

/// Uniform sample of M distinct point indices.
inline std::vector<int> sample_anchors(std::size_t n_points, std::size_t m, Rng& rng) {
    if (m < 1 || m > n_points)
        throw ShapeError("sample_anchors: M=" + std::to_string(m) + " out of range for " +
                         std::to_string(n_points) + " points");
    auto picks = rng.sample_without_replacement(n_points, m);
    return {picks.begin(), picks.end()};
}

/// KdTree over the current position values of a cloud.
template <typename T>
KdTree build_kdtree(const Tensor<T>& positions) {
    if (positions.rank() != 2 || positions.dim(1) != 3) shape_fail("build_kdtree", positions.shape());
    std::vector<std::array<double, 3>> pts(static_cast<std::size_t>(positions.dim(0)));
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int a = 0; a < 3; ++a)
            pts[i][static_cast<std::size_t>(a)] = static_cast<double>(positions.value()[i * 3 + a]);
    return KdTree(std::move(pts));
}

/// ASCII PLY dump of positions and colors (colors in [0,1], written as 0-255).
template <typename T>
void export_ply(const Tensor<T>& positions, const Tensor<T>& colors, const std::string& path) {
    if (positions.rank() != 2 || positions.dim(1) != 3 || colors.rank() != 2 || colors.dim(1) != 3 ||
        colors.dim(0) != positions.dim(0))
        shape_fail("export_ply", positions.shape(), colors.shape());
    std::ofstream f(path);
    if (!f) throw IoError("export_ply: cannot open '" + path + "'");
    const int n = positions.dim(0);
    f << "ply\nformat ascii 1.0\nelement vertex " << n
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (int i = 0; i < n; ++i) {
        char line[160];
        const auto c8 = [&](int ch) {
            double v = static_cast<double>(colors.value()[static_cast<std::size_t>(i) * 3 + ch]);
            v = std::min(1.0, std::max(0.0, v));
            return static_cast<int>(std::lround(v * 255.0));
        };
        std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %d %d %d\n",
                      static_cast<double>(positions.value()[static_cast<std::size_t>(i) * 3 + 0]),
                      static_cast<double>(positions.value()[static_cast<std::size_t>(i) * 3 + 1]),
                      static_cast<double>(positions.value()[static_cast<std::size_t>(i) * 3 + 2]), c8(0),
                      c8(1), c8(2));
        f << line;
    }
    if (!f) throw IoError("export_ply: write failed for '" + path + "'");
}

}  // namespace pcvs
