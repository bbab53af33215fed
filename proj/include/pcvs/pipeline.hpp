#pragma once

#include <string>
#include <vector>

#include "pcvs/cloud.hpp"
#include "pcvs/depthnet.hpp"
#include "pcvs/fusion.hpp"
#include "pcvs/losses.hpp"
#include "pcvs/render.hpp"
#include "pcvs/restore.hpp"
#include "pcvs/scene.hpp"
#include "pcvs/warp.hpp"

namespace pcvs {

// The full forward pass, source views to refined target view:
//   encode -> per-view depth (given or estimated) -> lift to sub-clouds ->
//   fuse -> splat descriptors -> fill holes -> warp sources via rendered
//   depth -> refine.
// The ablation switches skip stages without changing anything upstream of
// them, so partial configurations stay comparable.

struct PipelineConfig {
    DepthMode mode = DepthMode::given;
    int n_sources = 2;
    bool use_fusion = true;   // off: the raw union cloud goes straight to the splat
    bool use_inpaint = true;  // off: the coarse splat is the "filled" image
    bool use_refine = true;   // off: no residual pass over the warped sources
    bool refiner_masks = true;
    FusionConfig fusion;
    SplatParams splat;
    DepthNetConfig depth;

    void validate() const {
        if (n_sources < 2) throw NumericError("pipeline: need at least 2 source views");
        splat.validate();
        if (mode == DepthMode::self_estimated) depth.validate();
    }
};

/// Neighbourhood size and anchor budget matched to the rig size.
inline FusionConfig fusion_defaults(int n_sources) {
    FusionConfig f;
    f.K = n_sources <= 2 ? 8 : 14;
    f.anchor_ratio = n_sources <= 2 ? 1.1 : 1.6;
    return f;
}

template <typename T>
struct PipelineNets {
    FeatureEncoder<T> encoder;
    FusionParams<T> fusion;
    HoleFiller<T> filler;
    Refiner<T> refiner;
    DepthRegressor<T> regressor;  // registered only in self-estimated mode
    bool has_regressor = false;
    PerceptualSurrogate<T> percep;  // fixed weights, not part of the store
};

/// Register every learnable component on the store. Each component draws init
/// values from its own forked stream, so configurations that share a component
/// start from identical weights.
template <typename T>
PipelineNets<T> make_pipeline(ParameterStore<T>& store, PipelineConfig& cfg, Rng& rng) {
    // the neighbour quality embedding only exists when depth is estimated
    cfg.fusion.use_quality = cfg.mode == DepthMode::self_estimated;
    cfg.validate();
    PipelineNets<T> nets;
    Rng enc_rng = rng.fork(11), fus_rng = rng.fork(12), fill_rng = rng.fork(13),
        ref_rng = rng.fork(14), reg_rng = rng.fork(15);
    nets.encoder = FeatureEncoder<T>(store, "enc", enc_rng);
    nets.fusion = make_fusion_params(store, cfg.fusion, fus_rng);
    nets.filler = HoleFiller<T>(store, "fh", fill_rng);
    nets.refiner = Refiner<T>(store, "fr", cfg.n_sources, ref_rng, cfg.refiner_masks);
    if (cfg.mode == DepthMode::self_estimated) {
        nets.regressor = DepthRegressor<T>(store, "depth", reg_rng);
        nets.has_regressor = true;
    }
    return nets;
}

template <typename T>
struct ForwardOut {
    Tensor<T> coarse, filled, refined;  // [3,H,W] synthesis stages
    Tensor<T> desc_map;                 // [35,H,W] splatted descriptors
    Tensor<T> render_mask;              // [H,W], 1 where the splat hit (constant)
    Tensor<T> novel_depth;              // [H,W] rendered target-view depth, in-graph
    std::vector<Tensor<T>> warped;      // per source, [3,H,W]
    std::vector<Tensor<T>> warp_masks;  // per source, [H,W]
    UnionCloud<T> cloud;                // what was splatted (fused or raw union)
    std::vector<int> source_ids;        // scene view indices, pipeline order
    std::vector<Tensor<T>> source_depth;    // per source [H,W]
    std::vector<Tensor<T>> source_prob;     // self mode only, [D,H,W]
    std::vector<Tensor<T>> source_quality;  // per source [H,W]
    DepthNetConfig depth_cfg;               // hypotheses actually used
};

template <typename T>
ForwardOut<T> run_pipeline(const SceneSample<T>& scene, const PipelineConfig& cfg,
                           PipelineNets<T>& nets, Rng& rng) {
    cfg.validate();
    ForwardOut<T> out;
    out.source_ids = scene.sources();
    if (static_cast<int>(out.source_ids.size()) != cfg.n_sources)
        throw ShapeError("pipeline: configured for " + std::to_string(cfg.n_sources) +
                         " source views, scene has " + std::to_string(out.source_ids.size()));
    if (cfg.mode == DepthMode::self_estimated && !nets.has_regressor)
        throw ShapeError("pipeline: depth regressor was not built for this mode");
    const Camera& tcam = scene.cams[static_cast<std::size_t>(scene.target)];
    const int H = scene.height, W = scene.width;

    std::vector<Tensor<T>> feats;
    for (int id : out.source_ids)
        feats.push_back(nets.encoder.forward(scene.images[static_cast<std::size_t>(id)]));

    out.depth_cfg = cfg.depth;
    out.depth_cfg.d_min = scene.d_min;
    out.depth_cfg.d_max = scene.d_max;
    for (std::size_t s = 0; s < out.source_ids.size(); ++s) {
        const auto id = static_cast<std::size_t>(out.source_ids[s]);
        if (cfg.mode == DepthMode::given) {
            out.source_depth.push_back(scene.depths[id]);
            out.source_quality.push_back(Tensor<T>::filled({H, W}, T(1)));
        } else {
            std::vector<Tensor<T>> other_feats;
            std::vector<Camera> other_cams;
            for (std::size_t o = 0; o < out.source_ids.size(); ++o)
                if (o != s) {
                    other_feats.push_back(feats[o]);
                    other_cams.push_back(scene.cams[static_cast<std::size_t>(out.source_ids[o])]);
                }
            auto cost = build_cost_volume(feats[s], other_feats, scene.cams[id], other_cams,
                                          out.depth_cfg);
            auto dr = regress_depth(cost, out.depth_cfg, nets.regressor);
            out.source_depth.push_back(dr.depth);
            out.source_prob.push_back(dr.prob);
            out.source_quality.push_back(probability_map(dr.prob, dr.depth, out.depth_cfg));
        }
    }

    std::vector<SubCloud<T>> subs;
    for (std::size_t s = 0; s < out.source_ids.size(); ++s) {
        const auto id = static_cast<std::size_t>(out.source_ids[s]);
        subs.push_back(build_sub_cloud(scene.images[id], out.source_depth[s], feats[s],
                                       out.source_quality[s], scene.cams[id],
                                       static_cast<int>(s)));
    }

    if (cfg.use_fusion) {
        auto fr = cascade_fuse(subs, cfg.fusion, nets.fusion, rng);
        out.cloud = fr.cloud;
    } else {
        out.cloud = union_clouds(subs);
    }

    auto rend = splat(out.cloud.positions, out.cloud.descriptors, tcam, cfg.splat);
    out.desc_map = rend.image;
    out.render_mask = rend.mask;
    out.coarse = slice(rend.image, 0, 0, 3);
    out.filled = cfg.use_inpaint ? nets.filler.forward(out.desc_map, out.coarse) : out.coarse;

    auto rd = render_depth(out.cloud.positions, tcam, cfg.splat);
    out.novel_depth = reshape(rd.image, {H, W});
    for (int id : out.source_ids) {
        auto wr = backward_warp(scene.images[static_cast<std::size_t>(id)],
                                scene.cams[static_cast<std::size_t>(id)], tcam, out.novel_depth,
                                &rd.mask);
        out.warped.push_back(wr.image);
        out.warp_masks.push_back(wr.mask);
    }

    static const std::vector<Tensor<T>> kNoMasks;
    out.refined = cfg.use_refine
                      ? nets.refiner.forward(out.filled, out.warped,
                                             cfg.refiner_masks ? out.warp_masks : kNoMasks)
                      : out.filled;
    return out;
}

template <typename T>
struct LossTerms {
    Tensor<T> total;        // scalar fed to backward()
    Tensor<T> photometric;  // scalar
    Tensor<T> self, ssim, smooth;  // scalars, zero in given-depth mode
};

/// Training objective for one scene. `include_refined` drops the refined
/// stage's photometric term (used while the refinement net is out of the
/// graph). The self-supervision terms warp every other view into each source
/// view using that source's estimated depth.
template <typename T>
LossTerms<T> compute_losses(const ForwardOut<T>& out, const SceneSample<T>& scene,
                            const PipelineConfig& cfg, const PipelineNets<T>& nets,
                            bool include_refined = true) {
    const auto& gt = scene.images[static_cast<std::size_t>(scene.target)];
    LossTerms<T> L;
    auto photo = add(photometric_loss(out.coarse, gt, nets.percep),
                     photometric_loss(out.filled, gt, nets.percep));
    if (include_refined) photo = add(photo, photometric_loss(out.refined, gt, nets.percep));
    L.photometric = photo;

    L.self = Tensor<T>::scalar(T(0));
    L.ssim = Tensor<T>::scalar(T(0));
    L.smooth = Tensor<T>::scalar(T(0));
    if (cfg.mode == DepthMode::self_estimated) {
        std::vector<DepthLossTerms<T>> terms;
        for (std::size_t s = 0; s < out.source_ids.size(); ++s) {
            const auto id = static_cast<std::size_t>(out.source_ids[s]);
            const auto& view = scene.images[id];
            const auto& cam = scene.cams[id];
            std::vector<Tensor<T>> warped, masks;
            std::vector<Tensor<T>> ssim_parts;
            for (std::size_t j = 0; j < scene.images.size(); ++j) {
                if (j == id) continue;
                auto wr = backward_warp(scene.images[j], scene.cams[j], cam, out.source_depth[s]);
                ssim_parts.push_back(ssim_loss(view, wr.image, &wr.mask));
                warped.push_back(std::move(wr.image));
                masks.push_back(std::move(wr.mask));
            }
            DepthLossTerms<T> t;
            t.self = depth_self_loss(view, warped, masks);
            auto ssim_sum = ssim_parts[0];
            for (std::size_t k = 1; k < ssim_parts.size(); ++k)
                ssim_sum = add(ssim_sum, ssim_parts[k]);
            t.ssim = mul_scalar(ssim_sum, T(1) / static_cast<T>(ssim_parts.size()));
            t.smooth = smoothness_loss(out.source_depth[s]);
            L.self = add(L.self, t.self);
            L.ssim = add(L.ssim, t.ssim);
            L.smooth = add(L.smooth, t.smooth);
            terms.push_back(std::move(t));
        }
        L.total = total_loss(L.photometric, total_depth_loss(terms), cfg.mode);
    } else {
        L.total = total_loss(L.photometric, Tensor<T>::scalar(T(0)), cfg.mode);
    }
    return L;
}

}  // namespace pcvs
