#pragma once

// Training objectives and evaluation metrics: photometric (pixel + perceptual)
// losses over the restoration stages, masked warp-consistency and SSIM losses
// for self-estimated depth, depth smoothness, and PSNR/SSIM metrics.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcvs/nn.hpp"
#include "pcvs/ops.hpp"
#include "pcvs/rng.hpp"
#include "pcvs/tensor.hpp"

namespace pcvs {

// ---- perceptual feature pyramid ---------------------------------------------

/// Fixed (non-trained) strided conv pyramid standing in for a pretrained
/// feature extractor.  Weights are seeded and deterministic; each stage halves
/// the spatial resolution.  Stage outputs feed the perceptual term of
/// photometric_loss, each weighted by the inverse of its neuron count.
template <typename T>
struct PerceptualSurrogate {
    std::vector<Tensor<T>> weights;  // per stage, [C_out, C_in, 3, 3]
    std::vector<Tensor<T>> biases;   // per stage, [C_out]

    explicit PerceptualSurrogate(std::uint64_t seed = 71) {
        Rng rng(seed);
        int prev = 3;
        for (int ch : {8, 16, 24, 32, 32}) {
            weights.push_back(glorot_uniform<T>({ch, prev, 3, 3}, prev * 9, ch * 9, rng));
            biases.push_back(glorot_uniform<T>({ch}, prev * 9, ch * 9, rng));
            prev = ch;
        }
    }

    /// Feature maps of all five stages for a [3,H,W] image.
    std::vector<Tensor<T>> stages(const Tensor<T>& img) const {
        if (img.rank() != 3 || img.dim(0) != 3) shape_fail("perceptual stages", img.shape());
        std::vector<Tensor<T>> out;
        Tensor<T> cur = img;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            cur = leaky_relu(conv2d(cur, weights[l], &biases[l], 2));
            out.push_back(cur);
        }
        return out;
    }
};

// ---- photometric -------------------------------------------------------------

/// Mean absolute pixel error plus the perceptual term: for each pyramid stage
/// the summed absolute feature difference scaled by 1 / (C_l * H_l * W_l).
template <typename T>
Tensor<T> photometric_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                           const PerceptualSurrogate<T>& net) {
    if (pred.shape() != gt.shape()) shape_fail("photometric_loss", pred.shape(), gt.shape());
    auto loss = reduce_mean(abs_t(sub(pred, gt)));
    auto fp = net.stages(pred);
    auto fg = net.stages(gt);
    for (std::size_t l = 0; l < fp.size(); ++l) {
        const T lam = T(1) / static_cast<T>(fp[l].numel());
        loss = add(loss, mul_scalar(reduce_sum(abs_t(sub(fp[l], fg[l]))), lam));
    }
    return loss;
}

/// Photometric loss summed over the three restoration stages (coarse splat,
/// hole-filled, refined) against the same ground-truth view.
template <typename T>
Tensor<T> total_photometric(const Tensor<T>& coarse, const Tensor<T>& filled,
                            const Tensor<T>& refined, const Tensor<T>& gt,
                            const PerceptualSurrogate<T>& net) {
    return add(add(photometric_loss(coarse, gt, net), photometric_loss(filled, gt, net)),
               photometric_loss(refined, gt, net));
}

// ---- self-estimated depth ------------------------------------------------------

namespace detail {

/// Replicate a [H,W] map across C channels -> [C,H,W].
template <typename T>
Tensor<T> replicate_rows(const Tensor<T>& m, int channels) {
    auto one = reshape(m, {1, m.dim(0), m.dim(1)});
    if (channels == 1) return one;
    std::vector<Tensor<T>> parts(static_cast<std::size_t>(channels), one);
    return concat(parts, 0);
}

template <typename T>
double mask_count(const Tensor<T>& m, const char* op) {
    double n = 0.0;
    for (std::size_t i = 0; i < m.numel(); ++i) {
        const T v = m.value()[i];
        if (v != T(0) && v != T(1)) throw NumericError(std::string(op) + ": mask must be binary");
        n += static_cast<double>(v);
    }
    return n;
}

}  // namespace detail

/// Warp-consistency loss for one view: the masked mean absolute error between
/// the view and each image warped into it, one term per warped view, each
/// normalized by its own mask's valid-pixel count.  A term with an all-zero
/// mask contributes nothing; if every mask is empty the loss is 0.
template <typename T>
Tensor<T> depth_self_loss(const Tensor<T>& view, const std::vector<Tensor<T>>& warped,
                          const std::vector<Tensor<T>>& masks) {
    if (view.rank() != 3) shape_fail("depth_self_loss", view.shape());
    if (warped.size() != masks.size())
        throw ShapeError("depth_self_loss: warped/mask count mismatch");
    const int C = view.dim(0);
    auto loss = Tensor<T>::scalar(T(0));
    for (std::size_t i = 0; i < warped.size(); ++i) {
        if (warped[i].shape() != view.shape())
            shape_fail("depth_self_loss", view.shape(), warped[i].shape());
        if (masks[i].shape() != Shape{view.dim(1), view.dim(2)})
            shape_fail("depth_self_loss", view.shape(), masks[i].shape());
        const double n = detail::mask_count(masks[i], "depth_self_loss");
        if (n == 0.0) continue;
        auto diff = mul(sub(view, warped[i]), detail::replicate_rows(masks[i], C));
        loss = add(loss, mul_scalar(reduce_sum(abs_t(diff)), T(1.0 / n)));
    }
    return loss;
}

namespace detail {

template <typename T>
std::vector<T> gaussian_kernel(int radius, double sigma) {
    std::vector<T> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = static_cast<T>(v);
        sum += v;
    }
    for (auto& v : k) v = static_cast<T>(v / sum);
    return k;
}

}  // namespace detail

/// (1 - SSIM(M*X, M*Y)) / 2 over the windows that fit entirely inside the
/// image, so the result lies in [0,1] and is 0 for identical inputs.  SSIM
/// uses an 11x11 Gaussian window (sigma 1.5) with the standard stabilizers
/// C1 = 0.01^2, C2 = 0.03^2 for [0,1]-ranged images.  Pass mask = nullptr for
/// a full mask.
template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>* mask = nullptr) {
    if (x.shape() != y.shape()) shape_fail("ssim_loss", x.shape(), y.shape());
    Tensor<T> a = x, b = y;
    if (a.rank() == 2) {
        a = reshape(a, {1, x.dim(0), x.dim(1)});
        b = reshape(b, {1, x.dim(0), x.dim(1)});
    }
    if (a.rank() != 3) shape_fail("ssim_loss", x.shape());
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    constexpr int kRadius = 5;
    if (H < 2 * kRadius + 1 || W < 2 * kRadius + 1)
        throw ShapeError("ssim_loss: image smaller than the 11x11 window");
    if (mask) {
        if (mask->shape() != Shape{H, W}) shape_fail("ssim_loss", a.shape(), mask->shape());
        auto m = detail::replicate_rows(*mask, C);
        a = mul(a, m);
        b = mul(b, m);
    }

    const auto kern = detail::gaussian_kernel<T>(kRadius, 1.5);
    const T c1 = T(0.01) * T(0.01), c2 = T(0.03) * T(0.03);
    auto mx = separable_blur(a, kern);
    auto my = separable_blur(b, kern);
    auto sxx = sub(separable_blur(mul(a, a), kern), mul(mx, mx));
    auto syy = sub(separable_blur(mul(b, b), kern), mul(my, my));
    auto sxy = sub(separable_blur(mul(a, b), kern), mul(mx, my));
    auto num = mul(add_scalar(mul_scalar(mul(mx, my), T(2)), c1),
                   add_scalar(mul_scalar(sxy, T(2)), c2));
    auto den = mul(add_scalar(add(mul(mx, mx), mul(my, my)), c1),
                   add_scalar(add(sxx, syy), c2));
    auto ssim_map = div(num, den);
    auto interior = slice(slice(ssim_map, 1, kRadius, H - 2 * kRadius), 2, kRadius,
                          W - 2 * kRadius);
    return mul_scalar(add_scalar(neg(reduce_mean(interior)), T(1)), T(0.5));
}

/// Mean over pixels of |forward x-difference| + |forward y-difference| of a
/// [H,W] depth map; the last column/row has no forward neighbor and counts 0.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& depth) {
    if (depth.rank() != 2) shape_fail("smoothness_loss", depth.shape());
    const int H = depth.dim(0), W = depth.dim(1);
    auto total = Tensor<T>::scalar(T(0));
    if (W > 1) {
        auto dx = sub(slice(depth, 1, 1, W - 1), slice(depth, 1, 0, W - 1));
        total = add(total, reduce_sum(abs_t(dx)));
    }
    if (H > 1) {
        auto dy = sub(slice(depth, 0, 1, H - 1), slice(depth, 0, 0, H - 1));
        total = add(total, reduce_sum(abs_t(dy)));
    }
    return mul_scalar(total, T(1) / static_cast<T>(H * W));
}

// ---- aggregation ----------------------------------------------------------------

struct DepthLossWeights {
    double self = 12.0;
    double ssim = 6.0;
    double smooth = 0.18;
};

/// The three loss components of one view's depth estimate.
template <typename T>
struct DepthLossTerms {
    Tensor<T> self;
    Tensor<T> ssim;
    Tensor<T> smooth;
};

/// Weighted sum of the per-view depth loss components over all views.
template <typename T>
Tensor<T> total_depth_loss(const std::vector<DepthLossTerms<T>>& terms,
                           const DepthLossWeights& w = {}) {
    auto total = Tensor<T>::scalar(T(0));
    for (const auto& t : terms) {
        total = add(total, mul_scalar(t.self, static_cast<T>(w.self)));
        total = add(total, mul_scalar(t.ssim, static_cast<T>(w.ssim)));
        total = add(total, mul_scalar(t.smooth, static_cast<T>(w.smooth)));
    }
    return total;
}

enum class DepthMode { given, self_estimated };

/// Full objective: the photometric term alone when depth is given, plus the
/// depth self-supervision term when depth is estimated.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& photometric, const Tensor<T>& depth_term,
                     DepthMode mode) {
    if (mode == DepthMode::given) return photometric;
    return add(photometric, depth_term);
}

// ---- metrics -----------------------------------------------------------------------

struct Metrics {
    double psnr = 0.0;
    double ssim = 0.0;
};

/// PSNR (dB, capped at 99) and mean SSIM of a prediction against ground truth,
/// both expected in [0,1].
template <typename T>
Metrics metrics(const Tensor<T>& pred, const Tensor<T>& gt) {
    if (pred.shape() != gt.shape()) shape_fail("metrics", pred.shape(), gt.shape());
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pred.value()[i]) - static_cast<double>(gt.value()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(pred.numel());
    Metrics m;
    m.psnr = mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
    auto a = Tensor<T>::from(pred.shape(), pred.value());
    auto b = Tensor<T>::from(gt.shape(), gt.value());
    m.ssim = 1.0 - 2.0 * static_cast<double>(ssim_loss(a, b).item());
    return m;
}

}  // namespace pcvs
