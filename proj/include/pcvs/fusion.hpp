#pragma once

#include "pcvs/cloud.hpp"
#include "pcvs/nn.hpp"

namespace pcvs {

struct FusionConfig {
    int K = 8;
    double anchor_ratio = 1.1;  // anchors = ratio * (H*W of one view)
    bool use_quality = false;   // adds the neighbor's depth quality to the embedding
    int mlp_hidden = 32;
    int mlp_layers = 3;

    int embed_dim() const { return use_quality ? 6 : 5; }
};

/// The two weight heads: one scores neighbor positions, one descriptors.
template <typename T>
struct FusionParams {
    Mlp<T> f_p, f_c;
    int embed_dim = 5;
};

template <typename T>
FusionParams<T> make_fusion_params(ParameterStore<T>& store, const FusionConfig& cfg, Rng& rng) {
    FusionParams<T> p;
    p.embed_dim = cfg.embed_dim();
    p.f_p = Mlp<T>(store, "fusion.fp", p.embed_dim, cfg.mlp_hidden, cfg.mlp_layers, 1, rng);
    p.f_c = Mlp<T>(store, "fusion.fc", p.embed_dim, cfg.mlp_hidden, cfg.mlp_layers, 1, rng);
    return p;
}

/// [S,3] colors next to [S,32] features -> [S,35] descriptors.
template <typename T>
Tensor<T> build_descriptor(const Tensor<T>& colors, const Tensor<T>& features) {
    if (colors.rank() != 2 || features.rank() != 2 || colors.dim(1) != 3 || features.dim(1) != 32 ||
        colors.dim(0) != features.dim(0))
        shape_fail("build_descriptor", colors.shape(), features.shape());
    return concat<T>({colors, features}, 1);
}

/// Per-(anchor,neighbor) embeddings, flattened to [A*K, E].
/// E = 5: (dx, dy, dz, distance, cosine); with quality E = 6 and the
/// neighbor's quality sits between distance and cosine.
/// Cosine of a zero-norm descriptor is 0 by convention (0/eps underneath).
template <typename T>
Tensor<T> build_embeddings(const Tensor<T>& positions, const Tensor<T>& descriptors,
                           const Tensor<T>* quality, const std::vector<int>& anchor_idx,
                           const std::vector<int>& neighbor_idx, int K) {
    const int A = static_cast<int>(anchor_idx.size());
    if (K < 1 || neighbor_idx.size() != static_cast<std::size_t>(A) * K)
        throw ShapeError("build_embeddings: neighbor list is not anchors*K");
    std::vector<int> anchor_rep(static_cast<std::size_t>(A) * K);
    for (int a = 0; a < A; ++a)
        for (int k = 0; k < K; ++k) anchor_rep[static_cast<std::size_t>(a) * K + k] = anchor_idx[static_cast<std::size_t>(a)];

    auto pn = gather_rows(positions, neighbor_idx);
    auto pa = gather_rows(positions, anchor_rep);
    auto dx = sub(pn, pa);                                            // [AK,3]
    auto dist = reshape(sqrt_t(reduce_sum_axis(mul(dx, dx), 1)), {A * K, 1});

    auto fn = gather_rows(descriptors, neighbor_idx);
    auto fa = gather_rows(descriptors, anchor_rep);
    auto dot = reduce_sum_axis(mul(fn, fa), 1);
    auto nn_ = sqrt_t(reduce_sum_axis(mul(fn, fn), 1));
    auto na = sqrt_t(reduce_sum_axis(mul(fa, fa), 1));
    auto cosine = reshape(div(dot, clamp_min(mul(nn_, na), T(1e-12))), {A * K, 1});

    if (quality) {
        auto qn = gather_rows(*quality, neighbor_idx);  // [AK,1]
        return concat<T>({dx, dist, qn, cosine}, 1);
    }
    return concat<T>({dx, dist, cosine}, 1);
}

/// Softmax-normalized weights per head over each anchor's K neighbors.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> predict_weights(const Tensor<T>& embeddings, const FusionParams<T>& params,
                                                int A, int K) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != A * K || embeddings.dim(1) != params.embed_dim)
        shape_fail("predict_weights", embeddings.shape());
    auto wp = softmax_axis(reshape(params.f_p.forward(embeddings), {A, K}), 1);
    auto wf = softmax_axis(reshape(params.f_c.forward(embeddings), {A, K}), 1);
    return {wp, wf};
}

/// Convex combinations per anchor: positions with w_p, descriptors with w_f.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> fuse_neighborhood(const Tensor<T>& nbr_positions,
                                                  const Tensor<T>& nbr_descriptors, const Tensor<T>& w_p,
                                                  const Tensor<T>& w_f) {
    return {rows_weighted_sum(nbr_positions, w_p), rows_weighted_sum(nbr_descriptors, w_f)};
}

template <typename T>
struct FuseResult {
    UnionCloud<T> cloud;            // fused: positions [A,3], descriptors [A,35], quality [A,1]
    std::vector<int> anchor_idx;    // A indices into the union
    std::vector<int> neighbor_idx;  // A*K flat
    Tensor<T> w_p, w_f;             // [A,K]
};

namespace detail {

/// Core pass over an already-unioned cloud.
template <typename T>
FuseResult<T> fuse_union(const UnionCloud<T>& u, int anchors, const FusionConfig& cfg,
                         const FusionParams<T>& params, Rng& rng) {
    const int M = u.size();
    const int A = std::max(1, std::min(anchors, M));
    FuseResult<T> out;
    out.anchor_idx = sample_anchors(static_cast<std::size_t>(M), static_cast<std::size_t>(A), rng);

    KdTree tree = build_kdtree(u.positions);
    out.neighbor_idx.reserve(static_cast<std::size_t>(A) * cfg.K);
    for (int a = 0; a < A; ++a) {
        const std::size_t row = static_cast<std::size_t>(out.anchor_idx[static_cast<std::size_t>(a)]) * 3;
        const std::array<double, 3> q{static_cast<double>(u.positions.value()[row]),
                                      static_cast<double>(u.positions.value()[row + 1]),
                                      static_cast<double>(u.positions.value()[row + 2])};
        for (const auto& hit : tree.knn(q, cfg.K)) out.neighbor_idx.push_back(hit.index);
    }

    auto e = build_embeddings(u.positions, u.descriptors, cfg.use_quality ? &u.quality : nullptr,
                              out.anchor_idx, out.neighbor_idx, cfg.K);
    auto [wp, wf] = predict_weights(e, params, A, cfg.K);
    out.w_p = wp;
    out.w_f = wf;

    auto nbr_pos = reshape(gather_rows(u.positions, out.neighbor_idx), {A, cfg.K, 3});
    auto nbr_desc = reshape(gather_rows(u.descriptors, out.neighbor_idx), {A, cfg.K, u.descriptors.dim(1)});
    auto [fused_pos, fused_desc] = fuse_neighborhood(nbr_pos, nbr_desc, wp, wf);

    out.cloud.positions = fused_pos;
    out.cloud.descriptors = fused_desc;
    // fused quality: position-weighted mix of the neighbors' qualities
    auto nbr_q = reshape(gather_rows(u.quality, out.neighbor_idx), {A, cfg.K, 1});
    out.cloud.quality = rows_weighted_sum(nbr_q, wp);
    return out;
}

}  // namespace detail

/// Union the sub-clouds, sample anchors, and fuse each anchor's KNN
/// neighborhood. Differentiable through positions, descriptors, and both MLPs;
/// the KNN index selection itself is treated as constant.
template <typename T>
FuseResult<T> fuse_clouds(const std::vector<SubCloud<T>>& subs, const FusionConfig& cfg,
                          const FusionParams<T>& params, Rng& rng) {
    if (subs.empty()) throw ShapeError("fuse_clouds: no sub-clouds");
    int view_pixels = 0;
    for (const auto& s : subs) view_pixels = std::max(view_pixels, s.view_pixels);
    const int anchors = std::max(1, static_cast<int>(std::lround(cfg.anchor_ratio * view_pixels)));
    return detail::fuse_union(union_clouds(subs), anchors, cfg, params, rng);
}

/// Treat a fused cloud as a sub-cloud so it can enter another fusion pass.
template <typename T>
SubCloud<T> as_sub_cloud(const UnionCloud<T>& u, int view_pixels) {
    SubCloud<T> s;
    s.positions = u.positions;
    s.colors = slice(u.descriptors, 1, 0, 3);
    s.features = slice(u.descriptors, 1, 3, u.descriptors.dim(1) - 3);
    s.quality = u.quality;
    s.source_view = -1;
    s.view_pixels = view_pixels;
    return s;
}

/// Four or more views: fuse the first three, then fold in each remaining view
/// with another two-cloud pass. Fewer than four views fall through to the
/// single pass.
template <typename T>
FuseResult<T> cascade_fuse(const std::vector<SubCloud<T>>& subs, const FusionConfig& cfg,
                           const FusionParams<T>& params, Rng& rng) {
    if (subs.size() < 4) return fuse_clouds(subs, cfg, params, rng);
    int view_pixels = 0;
    for (const auto& s : subs) view_pixels = std::max(view_pixels, s.view_pixels);

    std::vector<SubCloud<T>> head(subs.begin(), subs.begin() + 3);
    FuseResult<T> cur = fuse_clouds(head, cfg, params, rng);
    for (std::size_t i = 3; i < subs.size(); ++i) {
        std::vector<SubCloud<T>> pair{as_sub_cloud(cur.cloud, view_pixels), subs[i]};
        cur = fuse_clouds(pair, cfg, params, rng);
    }
    return cur;
}

}  // namespace pcvs
