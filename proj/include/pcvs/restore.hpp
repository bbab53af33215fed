#pragma once

// Geometry-guided restoration: per-view feature encoding, additive hole
// filling on top of the coarse render, and additive refinement from the
// backward-warped source views.  Both restoration nets end in a zero-
// initialized conv, so a freshly constructed stage is an exact identity.

#include <string>
#include <vector>

#include "pcvs/nn.hpp"
#include "pcvs/ops.hpp"

namespace pcvs {

/// Full-resolution feature encoder: 3 -> 16, two residual blocks, -> 32.
/// Output spatial dims equal the input's.
template <typename T>
class FeatureEncoder {
public:
    FeatureEncoder() = default;
    FeatureEncoder(ParameterStore<T>& store, const std::string& prefix, Rng& rng)
        : head_(store, prefix + ".head", 3, 16, rng),
          blocks_(store, prefix + ".blocks", 16, 2, rng),
          out_(store, prefix + ".out", 16, 32, rng) {}

    /// [3,H,W] image -> [32,H,W] per-pixel features.
    Tensor<T> forward(const Tensor<T>& img) const {
        if (img.rank() != 3 || img.dim(0) != 3) shape_fail("encode_features", img.shape());
        return out_.forward(blocks_.forward(leaky_relu(head_.forward(img))));
    }

private:
    Conv2dLayer<T> head_;
    ResBlockStack<T> blocks_;
    Conv2dLayer<T> out_;
};

/// Hole filler: learns an additive correction from the 35-channel rendered
/// descriptor map and applies it to the coarse color render.
template <typename T>
class HoleFiller {
public:
    static constexpr int kWidth = 16;

    HoleFiller() = default;
    HoleFiller(ParameterStore<T>& store, const std::string& prefix, Rng& rng, int in_ch = 35)
        : head_(store, prefix + ".head", in_ch, kWidth, rng),
          blocks_(store, prefix + ".blocks", kWidth, 6, rng),
          out_(store, prefix + ".out", kWidth, 3, rng, 3, 1, true),
          in_ch_(in_ch) {}

    /// descriptor map [35,H,W] + coarse render [3,H,W] -> filled render [3,H,W].
    Tensor<T> forward(const Tensor<T>& desc_map, const Tensor<T>& coarse) const {
        if (desc_map.rank() != 3 || desc_map.dim(0) != in_ch_)
            shape_fail("fill_holes", desc_map.shape());
        if (coarse.shape() != Shape{3, desc_map.dim(1), desc_map.dim(2)})
            shape_fail("fill_holes", desc_map.shape(), coarse.shape());
        return add(coarse, out_.forward(blocks_.forward(leaky_relu(head_.forward(desc_map)))));
    }

private:
    Conv2dLayer<T> head_;
    ResBlockStack<T> blocks_;
    Conv2dLayer<T> out_;
    int in_ch_ = 35;
};

/// Refiner: learns an additive correction from the filled render stacked with
/// the N backward-warped source views (each 3 channels, plus its warp mask as
/// a fourth channel when enabled).
template <typename T>
class Refiner {
public:
    static constexpr int kWidth = 16;

    Refiner() = default;
    Refiner(ParameterStore<T>& store, const std::string& prefix, int n_sources, Rng& rng,
            bool with_masks = true)
        : head_(store, prefix + ".head", 3 + (with_masks ? 4 : 3) * n_sources, kWidth, rng),
          blocks_(store, prefix + ".blocks", kWidth, 4, rng),
          out_(store, prefix + ".out", kWidth, 3, rng, 3, 1, true),
          n_sources_(n_sources),
          with_masks_(with_masks) {}

    bool with_masks() const { return with_masks_; }
    int n_sources() const { return n_sources_; }

    /// filled render [3,H,W] + N warped sources [3,H,W] (+ masks [H,W]) ->
    /// refined render [3,H,W].
    Tensor<T> forward(const Tensor<T>& filled, const std::vector<Tensor<T>>& warped,
                      const std::vector<Tensor<T>>& masks = {}) const {
        if (static_cast<int>(warped.size()) != n_sources_)
            throw ShapeError("refine: configured for " + std::to_string(n_sources_) +
                             " source views, got " + std::to_string(warped.size()));
        if (with_masks_ && static_cast<int>(masks.size()) != n_sources_)
            throw ShapeError("refine: configured for " + std::to_string(n_sources_) +
                             " warp masks, got " + std::to_string(masks.size()));
        const int H = filled.dim(1), W = filled.dim(2);
        std::vector<Tensor<T>> parts{filled};
        for (int i = 0; i < n_sources_; ++i) {
            if (warped[static_cast<std::size_t>(i)].shape() != filled.shape())
                shape_fail("refine", filled.shape(), warped[static_cast<std::size_t>(i)].shape());
            parts.push_back(warped[static_cast<std::size_t>(i)]);
            if (with_masks_) {
                if (masks[static_cast<std::size_t>(i)].shape() != Shape{H, W})
                    shape_fail("refine", filled.shape(), masks[static_cast<std::size_t>(i)].shape());
                parts.push_back(reshape(masks[static_cast<std::size_t>(i)], {1, H, W}));
            }
        }
        auto x = concat(parts, 0);
        return add(filled, out_.forward(blocks_.forward(leaky_relu(head_.forward(x)))));
    }

private:
    Conv2dLayer<T> head_;
    ResBlockStack<T> blocks_;
    Conv2dLayer<T> out_;
    int n_sources_ = 0;
    bool with_masks_ = true;
};

}  // namespace pcvs
