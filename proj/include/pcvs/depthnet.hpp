#pragma once

// Self-supervised plane-sweep depth estimation: a feature-variance cost
// volume over uniformly spaced depth hypotheses, per-slice 2-D conv
// regularization with soft-argmin regression, and the confidence (quality)
// map formed by summing probability over the hypotheses nearest the
// regressed depth.

#include <cmath>
#include <string>
#include <vector>

#include "pcvs/camera.hpp"
#include "pcvs/nn.hpp"
#include "pcvs/ops.hpp"

namespace pcvs {

struct DepthNetConfig {
    int planes = 128;    // depth hypotheses, uniformly spaced
    double d_min = 0.1;  // meters
    double d_max = 10.0;

    void validate() const {
        if (planes < 2) throw NumericError("depthnet: need at least 2 depth planes");
        if (!(d_min > 0.0) || !(d_max > d_min))
            throw NumericError("depthnet: depth range must satisfy 0 < d_min < d_max");
    }

    std::vector<double> hypotheses() const {
        validate();
        std::vector<double> d(static_cast<std::size_t>(planes));
        for (int k = 0; k < planes; ++k)
            d[static_cast<std::size_t>(k)] = d_min + (d_max - d_min) * k / (planes - 1);
        return d;
    }
};

namespace detail {

/// One bilinear sample of a source feature map for plane-sweep: taps are
/// clamped, samples strictly outside [0,W-1]x[0,H-1] (or behind the camera)
/// contribute zeros and receive no gradient.
struct SweepTap {
    bool ok = false;
    std::size_t i00 = 0, i01 = 0, i10 = 0, i11 = 0;  // pixel offsets into a channel plane
    double w00 = 0, w01 = 0, w10 = 0, w11 = 0;
};

inline SweepTap sweep_tap(const Camera& src, const Vec3& world, int h, int w) {
    SweepTap t;
    const auto p = src.project(world);
    if (!p.valid || p.z <= 0) return t;
    if (p.u < 0 || p.u > w - 1 || p.v < 0 || p.v > h - 1) return t;
    const int x0 = std::min(static_cast<int>(std::floor(p.u)), w - 2 < 0 ? 0 : w - 2);
    const int y0 = std::min(static_cast<int>(std::floor(p.v)), h - 2 < 0 ? 0 : h - 2);
    const double fx = p.u - x0, fy = p.v - y0;
    t.ok = true;
    t.i00 = static_cast<std::size_t>(y0) * w + x0;
    t.i01 = t.i00 + (w > 1 ? 1 : 0);
    t.i10 = t.i00 + (h > 1 ? static_cast<std::size_t>(w) : 0);
    t.i11 = t.i10 + (w > 1 ? 1 : 0);
    t.w00 = (1 - fy) * (1 - fx);
    t.w01 = (1 - fy) * fx;
    t.w10 = fy * (1 - fx);
    t.w11 = fy * fx;
    return t;
}

}  // namespace detail

/// Plane-sweep cost volume [D,H,W] over the reference view: every source
/// feature map is warped to the reference through each fronto-parallel depth
/// plane, and the cost is the per-pixel variance of the feature vectors
/// across all views (reference included), averaged over channels.  Samples
/// that fall outside a source view count as zero feature vectors.  The volume
/// is one monolithic node; its backward pass recomputes the sweep instead of
/// keeping per-hypothesis intermediates alive.
template <typename T>
Tensor<T> build_cost_volume(const Tensor<T>& ref_feats, const std::vector<Tensor<T>>& src_feats,
                            const Camera& ref_cam, const std::vector<Camera>& src_cams,
                            const DepthNetConfig& cfg) {
    cfg.validate();
    if (src_feats.empty()) throw ShapeError("build_cost_volume: need at least 2 views");
    if (src_feats.size() != src_cams.size())
        throw ShapeError("build_cost_volume: feature/camera count mismatch");
    if (ref_feats.rank() != 3) shape_fail("build_cost_volume", ref_feats.shape());
    const int C = ref_feats.dim(0), H = ref_feats.dim(1), W = ref_feats.dim(2);
    if (ref_cam.width != W || ref_cam.height != H)
        throw ShapeError("build_cost_volume: reference camera/feature size mismatch");
    for (std::size_t s = 0; s < src_feats.size(); ++s) {
        if (src_feats[s].rank() != 3 || src_feats[s].dim(0) != C)
            shape_fail("build_cost_volume", ref_feats.shape(), src_feats[s].shape());
        if (src_cams[s].width != src_feats[s].dim(2) || src_cams[s].height != src_feats[s].dim(1))
            throw ShapeError("build_cost_volume: source camera/feature size mismatch");
    }

    const int D = cfg.planes;
    const auto hyp = cfg.hypotheses();
    const int S = static_cast<int>(src_feats.size());
    const int V = S + 1;

    std::vector<std::shared_ptr<TensorNode<T>>> parents{ref_feats.node_ptr()};
    std::vector<Shape> src_shapes;
    for (const auto& f : src_feats) {
        parents.push_back(f.node_ptr());
        src_shapes.push_back(f.shape());
    }
    const Camera rc = ref_cam;
    const std::vector<Camera> scs = src_cams;

    // sweep_at(d, q) yields the taps of all sources for hypothesis d at ref
    // pixel q; shared by the forward fill and the gradient recomputation
    auto sweep_at = [rc, scs, src_shapes, W](int d, int q, const std::vector<double>& h,
                                             std::vector<detail::SweepTap>& taps) {
        const int u = q % W, v = q / W;
        const Vec3 world = rc.unproject(u, v, h[static_cast<std::size_t>(d)]);
        for (std::size_t s = 0; s < scs.size(); ++s)
            taps[s] = detail::sweep_tap(scs[s], world, src_shapes[s][1], src_shapes[s][2]);
    };

    auto out = make_op_node<T>(
        "cost_volume", {D, H, W}, parents,
        [sweep_at, hyp, C, H, W, D, S, V](TensorNode<T>& nd) {
            auto& ref = *nd.parents[0];
            ref.ensure_grad();
            for (int s = 0; s < S; ++s) nd.parents[static_cast<std::size_t>(s) + 1]->ensure_grad();
            const std::size_t hw = static_cast<std::size_t>(H) * W;
            std::vector<detail::SweepTap> taps(static_cast<std::size_t>(S));
            std::vector<double> x(static_cast<std::size_t>(V));
            for (int d = 0; d < D; ++d)
                for (std::size_t q = 0; q < hw; ++q) {
                    const T g = nd.grad[static_cast<std::size_t>(d) * hw + q];
                    if (g == T(0)) continue;
                    sweep_at(d, static_cast<int>(q), hyp, taps);
                    for (int c = 0; c < C; ++c) {
                        const std::size_t plane = static_cast<std::size_t>(c) * hw;
                        x[0] = static_cast<double>(ref.value[plane + q]);
                        double mean = x[0];
                        for (int s = 0; s < S; ++s) {
                            const auto& t = taps[static_cast<std::size_t>(s)];
                            const auto& sv = nd.parents[static_cast<std::size_t>(s) + 1]->value;
                            // source planes share the ref channel stride only if
                            // sizes match; recompute the plane offset per source
                            const std::size_t sp =
                                static_cast<std::size_t>(c) * (sv.size() / static_cast<std::size_t>(C));
                            x[static_cast<std::size_t>(s) + 1] =
                                !t.ok ? 0.0
                                      : t.w00 * sv[sp + t.i00] + t.w01 * sv[sp + t.i01] +
                                            t.w10 * sv[sp + t.i10] + t.w11 * sv[sp + t.i11];
                            mean += x[static_cast<std::size_t>(s) + 1];
                        }
                        mean /= V;
                        const double scale = 2.0 / (static_cast<double>(V) * C) * static_cast<double>(g);
                        ref.grad[plane + q] += static_cast<T>(scale * (x[0] - mean));
                        for (int s = 0; s < S; ++s) {
                            const auto& t = taps[static_cast<std::size_t>(s)];
                            if (!t.ok) continue;
                            auto& sg = nd.parents[static_cast<std::size_t>(s) + 1]->grad;
                            const std::size_t sp =
                                static_cast<std::size_t>(c) * (sg.size() / static_cast<std::size_t>(C));
                            const T gs = static_cast<T>(scale * (x[static_cast<std::size_t>(s) + 1] - mean));
                            sg[sp + t.i00] += gs * static_cast<T>(t.w00);
                            sg[sp + t.i01] += gs * static_cast<T>(t.w01);
                            sg[sp + t.i10] += gs * static_cast<T>(t.w10);
                            sg[sp + t.i11] += gs * static_cast<T>(t.w11);
                        }
                    }
                }
        });

    const std::size_t hw = static_cast<std::size_t>(H) * W;
    std::vector<detail::SweepTap> taps(static_cast<std::size_t>(S));
    for (int d = 0; d < D; ++d)
        for (std::size_t q = 0; q < hw; ++q) {
            sweep_at(d, static_cast<int>(q), hyp, taps);
            double cost = 0.0;
            for (int c = 0; c < C; ++c) {
                const std::size_t plane = static_cast<std::size_t>(c) * hw;
                double acc = static_cast<double>(ref_feats.value()[plane + q]);
                double acc2 = acc * acc;
                for (int s = 0; s < S; ++s) {
                    const auto& t = taps[static_cast<std::size_t>(s)];
                    double xv = 0.0;
                    if (t.ok) {
                        const auto& sv = src_feats[static_cast<std::size_t>(s)].value();
                        const std::size_t sp =
                            static_cast<std::size_t>(c) * (sv.size() / static_cast<std::size_t>(C));
                        xv = t.w00 * sv[sp + t.i00] + t.w01 * sv[sp + t.i01] +
                             t.w10 * sv[sp + t.i10] + t.w11 * sv[sp + t.i11];
                    }
                    acc += xv;
                    acc2 += xv * xv;
                }
                const double mean = acc / V;
                cost += acc2 / V - mean * mean;
            }
            out.value()[static_cast<std::size_t>(d) * hw + q] = static_cast<T>(cost / C);
        }
    return out;
}

/// Per-slice 2-D regularizer shared across depth slices, plus the softmax
/// sharpness.  The zero-initialized out conv makes the initial regularized
/// volume equal the raw cost.
template <typename T>
class DepthRegressor {
public:
    static constexpr int kWidth = 8;

    DepthRegressor() = default;
    DepthRegressor(ParameterStore<T>& store, const std::string& prefix, Rng& rng)
        : head_(store, prefix + ".head", 1, kWidth, rng),
          blocks_(store, prefix + ".blocks", kWidth, 2, rng),
          out_(store, prefix + ".out", kWidth, 1, rng, 3, 1, true),
          tau_(&store.add(prefix + ".tau", Tensor<T>::filled({1}, T(10)))) {}

    /// cost [D,H,W] -> regularized cost [D,H,W], smoothed per slice.
    Tensor<T> regularize(const Tensor<T>& cost) const {
        const int D = cost.dim(0), H = cost.dim(1), W = cost.dim(2);
        auto x = reshape(cost, {D, 1, H, W});
        auto r = out_.forward(blocks_.forward(leaky_relu(head_.forward(x))));
        return add(cost, reshape(r, {D, H, W}));
    }

    const Tensor<T>& tau() const { return *tau_; }

private:
    Conv2dLayer<T> head_;
    ResBlockStack<T> blocks_;
    Conv2dLayer<T> out_;
    Tensor<T>* tau_ = nullptr;
};

template <typename T>
struct DepthResult {
    Tensor<T> depth;  // [H,W], in [d_min, d_max]
    Tensor<T> prob;   // [D,H,W], sums to 1 over D at every pixel
};

/// Soft-argmin regression: P = softmax over D of the negated regularized
/// cost (scaled by the learnable sharpness), depth = sum_k d_k P_k.
template <typename T>
DepthResult<T> regress_depth(const Tensor<T>& cost, const DepthNetConfig& cfg,
                             const DepthRegressor<T>& net) {
    if (cost.rank() != 3 || cost.dim(0) != cfg.planes) shape_fail("regress_depth", cost.shape());
    const int D = cost.dim(0), H = cost.dim(1), W = cost.dim(2);
    auto prob = softmax_axis(neg(scale_by(net.regularize(cost), net.tau())), 0);
    const auto hyp = cfg.hypotheses();
    auto dcol = Tensor<T>::zeros({D, 1});
    for (int k = 0; k < D; ++k) dcol.value()[static_cast<std::size_t>(k)] = static_cast<T>(hyp[static_cast<std::size_t>(k)]);
    auto depth = reshape(matmul(transpose2d(reshape(prob, {D, H * W})), dcol), {H, W});
    return {depth, prob};
}

/// Confidence of the regressed depth: the probability mass on the (up to)
/// four hypotheses bracketing it.  The bracketing window is chosen from the
/// depth values, so gradients flow through the probabilities only.
template <typename T>
Tensor<T> probability_map(const Tensor<T>& prob, const Tensor<T>& depth,
                          const DepthNetConfig& cfg) {
    if (prob.rank() != 3 || prob.dim(0) != cfg.planes) shape_fail("probability_map", prob.shape());
    const int D = prob.dim(0), H = prob.dim(1), W = prob.dim(2);
    if (depth.shape() != Shape{H, W}) shape_fail("probability_map", prob.shape(), depth.shape());
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const double step = (cfg.d_max - cfg.d_min) / (D - 1);

    // window of hypothesis indices per pixel: bracketing pair plus one on
    // each side, truncated at the range edges
    std::vector<int> lo(hw), hi(hw);
    for (std::size_t q = 0; q < hw; ++q) {
        double dv = static_cast<double>(depth.value()[q]);
        dv = std::min(std::max(dv, cfg.d_min), cfg.d_max);
        int k = static_cast<int>(std::floor((dv - cfg.d_min) / step));
        k = std::min(std::max(k, 0), D - 2);
        lo[q] = std::max(k - 1, 0);
        hi[q] = std::min(k + 2, D - 1);
    }

    auto out = make_op_node<T>("probability_map", {H, W}, {prob.node_ptr()},
                               [lo, hi, hw](TensorNode<T>& nd) {
                                   auto& pa = *nd.parents[0];
                                   pa.ensure_grad();
                                   for (std::size_t q = 0; q < hw; ++q)
                                       for (int k = lo[q]; k <= hi[q]; ++k)
                                           pa.grad[static_cast<std::size_t>(k) * hw + q] += nd.grad[q];
                               });
    for (std::size_t q = 0; q < hw; ++q) {
        T acc = T(0);
        for (int k = lo[q]; k <= hi[q]; ++k) acc += prob.value()[static_cast<std::size_t>(k) * hw + q];
        out.value()[q] = acc;
    }
    return out;
}

}  // namespace pcvs
