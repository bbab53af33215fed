#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "pcvs/adam.hpp"
#include "pcvs/checkpoint.hpp"
#include "pcvs/pipeline.hpp"

namespace pcvs {

// Training driver. One scene per iteration, Adam on whatever parameters are
// actually in the graph. With the two-phase flag the synthesis stack first
// trains without the refinement net; the second phase then trains only the
// refinement parameters, leaving everything else untouched (bit-identical).

struct TrainConfig {
    PipelineConfig pipe;
    double lr = 1e-5;
    int iterations = 200;        // phase-1 iterations
    int phase2_iterations = -1;  // refinement-only iterations; -1 = iterations/2
    bool two_phase = false;
    std::uint64_t seed = 1;

    int resolved_phase2() const { return phase2_iterations < 0 ? iterations / 2 : phase2_iterations; }

    void validate() const {
        pipe.validate();
        if (!(lr > 0)) throw NumericError("train: lr must be positive");
        if (iterations < 1) throw NumericError("train: iterations must be positive");
        if (two_phase && !pipe.use_refine)
            throw NumericError("train: two-phase training needs the refinement stage");
        if (two_phase && resolved_phase2() < 1)
            throw NumericError("train: two-phase training needs phase-2 iterations");
    }
};

namespace detail {

/// Abort on the first non-finite value, naming where it appeared. Order is
/// fixed (loss, its components, then gradients by parameter name) so the
/// report is deterministic.
template <typename T>
void abort_on_nan(const LossTerms<T>& L, const ParameterStore<T>& store) {
    auto bad = [](T x) { return !std::isfinite(static_cast<double>(x)); };
    const std::pair<const char*, const Tensor<T>*> scalars[] = {
        {"loss", &L.total},         {"loss.photometric", &L.photometric},
        {"loss.self", &L.self},     {"loss.ssim", &L.ssim},
        {"loss.smooth", &L.smooth},
    };
    for (const auto& [name, t] : scalars)
        if (bad(t->item())) throw NanAbort("train: NaN in '" + std::string(name) + "'");
    for (const auto& [name, t] : store.all()) {
        if (!t.has_grad()) continue;
        for (T g : t.grad_ref())
            if (bad(g)) throw NanAbort("train: NaN in gradient of '" + name + "'");
    }
}

inline std::string log_line(int phase, int iter, double total, double photo, double self,
                            double ssim, double smooth) {
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "phase %d iter %06d total %.9e photo %.9e self %.9e ssim %.9e smooth %.9e\n",
                  phase, iter, total, photo, self, ssim, smooth);
    return buf;
}

}  // namespace detail

template <typename T>
struct TrainRun {
    ParameterStore<T> store;
    PipelineNets<T> nets;
    PipelineConfig pipe;   // as trained (quality embedding resolved from the mode)
    std::string log_text;  // one line per iteration, byte-stable across runs
};

template <typename T>
TrainRun<T> train(const std::vector<SceneSample<T>>& scenes, TrainConfig cfg,
                  std::ostream* echo = nullptr) {
    cfg.validate();
    if (scenes.empty()) throw IoError("train: no scenes");
    TrainRun<T> run;
    run.pipe = cfg.pipe;
    Rng init_rng(cfg.seed);
    run.nets = make_pipeline(run.store, run.pipe, init_rng);

    auto run_phase = [&](int phase, int iters, bool refine_active, ParameterStore<T>& opt_params) {
        Adam<T> opt(static_cast<T>(cfg.lr));
        PipelineConfig pc = run.pipe;
        pc.use_refine = run.pipe.use_refine && refine_active;
        for (int it = 0; it < iters; ++it) {
            const auto& scene = scenes[static_cast<std::size_t>(it) % scenes.size()];
            Rng iter_rng(detail::splitmix64(cfg.seed ^ (static_cast<std::uint64_t>(phase) * 0x51ed2701ull +
                                                        static_cast<std::uint64_t>(it) * 0x9e3779b9ull)));
            auto fwd = run_pipeline(scene, pc, run.nets, iter_rng);
            auto L = compute_losses(fwd, scene, pc, run.nets, pc.use_refine);
            backward(L.total);
            detail::abort_on_nan(L, run.store);
            opt.step(opt_params);
            const std::string line = detail::log_line(phase, it, static_cast<double>(L.total.item()),
                                                      static_cast<double>(L.photometric.item()),
                                                      static_cast<double>(L.self.item()),
                                                      static_cast<double>(L.ssim.item()),
                                                      static_cast<double>(L.smooth.item()));
            run.log_text += line;
            if (echo) (*echo) << line << std::flush;
        }
    };

    // parameters that participate in the phase-1 graph: skipped stages (and, in
    // two-phase mode, the refinement net) never receive gradients
    ParameterStore<T> phase1_params;
    const bool refine_in_phase1 = run.pipe.use_refine && !cfg.two_phase;
    for (const auto& [name, t] : run.store.all()) {
        if (name.rfind("fusion.", 0) == 0 && !run.pipe.use_fusion) continue;
        if (name.rfind("fh.", 0) == 0 && !run.pipe.use_inpaint) continue;
        if (name.rfind("fr.", 0) == 0 && !refine_in_phase1) continue;
        phase1_params.add(name, t);
    }
    run_phase(1, cfg.iterations, refine_in_phase1, phase1_params);

    if (cfg.two_phase) {
        // freeze everything but the refinement net; pruning keeps the frozen
        // parameters out of the backward pass entirely
        for (auto& [name, t] : run.store.all())
            if (name.rfind("fr.", 0) != 0) t.set_requires_grad(false);
        ParameterStore<T> phase2_params = run.store.filtered("fr.");
        run_phase(2, cfg.resolved_phase2(), true, phase2_params);
        for (auto& [name, t] : run.store.all()) t.set_requires_grad(true);
    }
    return run;
}

// ---------------------------------------------------------------------------
// checkpoint metadata

/// Pipeline settings serialized into the "_config" checkpoint record, so a
/// saved model knows what it was trained as.
inline CheckpointRecord config_record(const PipelineConfig& cfg) {
    CheckpointRecord r;
    r.data = {cfg.mode == DepthMode::self_estimated ? 1.0f : 0.0f,
              static_cast<float>(cfg.n_sources),
              cfg.use_fusion ? 1.0f : 0.0f,
              cfg.use_inpaint ? 1.0f : 0.0f,
              cfg.use_refine ? 1.0f : 0.0f,
              cfg.refiner_masks ? 1.0f : 0.0f,
              static_cast<float>(cfg.fusion.K),
              static_cast<float>(cfg.fusion.anchor_ratio),
              static_cast<float>(cfg.splat.radius),
              static_cast<float>(cfg.splat.max_per_pixel),
              static_cast<float>(cfg.splat.background),
              static_cast<float>(cfg.depth.planes)};
    r.shape = {static_cast<int>(r.data.size())};
    return r;
}

inline PipelineConfig config_from_record(const CheckpointData& ck) {
    auto it = ck.find("_config");
    if (it == ck.end()) throw IoError("checkpoint: record '_config' not found");
    const auto& d = it->second.data;
    if (d.size() != 12) throw IoError("checkpoint: record '_config' has unexpected size");
    PipelineConfig cfg;
    cfg.mode = d[0] != 0.0f ? DepthMode::self_estimated : DepthMode::given;
    cfg.n_sources = static_cast<int>(d[1]);
    cfg.use_fusion = d[2] != 0.0f;
    cfg.use_inpaint = d[3] != 0.0f;
    cfg.use_refine = d[4] != 0.0f;
    cfg.refiner_masks = d[5] != 0.0f;
    cfg.fusion.K = static_cast<int>(d[6]);
    cfg.fusion.anchor_ratio = static_cast<double>(d[7]);
    cfg.fusion.use_quality = cfg.mode == DepthMode::self_estimated;
    cfg.splat.radius = static_cast<double>(d[8]);
    cfg.splat.max_per_pixel = static_cast<int>(d[9]);
    cfg.splat.background = static_cast<double>(d[10]);
    cfg.depth.planes = static_cast<int>(d[11]);
    return cfg;
}

template <typename T>
void save_model(const std::string& path, const TrainRun<T>& run) {
    CheckpointData meta;
    meta["_config"] = config_record(run.pipe);
    save_checkpoint(path, run.store, meta);
}

/// Rebuild the pipeline a checkpoint was trained with and load its weights.
template <typename T>
TrainRun<T> load_model(const std::string& path) {
    const auto ck = read_checkpoint(path);
    TrainRun<T> run;
    run.pipe = config_from_record(ck);
    Rng rng(0);  // initializer values are immediately overwritten
    run.nets = make_pipeline(run.store, run.pipe, rng);
    load_checkpoint_into(ck, run.store);
    return run;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalRow {
    std::string name;
    double psnr = 0, ssim = 0;
};

/// Per-scene metrics of the refined output against the held-back target view,
/// plus a final mean row.
template <typename T>
std::vector<EvalRow> evaluate_scenes(const std::vector<SceneSample<T>>& scenes,
                                     const std::vector<std::string>& names,
                                     const PipelineConfig& cfg, PipelineNets<T>& nets,
                                     std::uint64_t seed) {
    if (scenes.size() != names.size()) throw ShapeError("evaluate_scenes: name/scene count mismatch");
    if (scenes.empty()) throw IoError("evaluate_scenes: no scenes");
    std::vector<EvalRow> rows;
    double psnr_sum = 0, ssim_sum = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        Rng rng(detail::splitmix64(seed ^ (0xeb1d43ull + i)));
        auto fwd = run_pipeline(scenes[i], cfg, nets, rng);
        const auto m = metrics(fwd.refined, scenes[i].images[static_cast<std::size_t>(scenes[i].target)]);
        rows.push_back({names[i], m.psnr, m.ssim});
        psnr_sum += m.psnr;
        ssim_sum += m.ssim;
    }
    rows.push_back({"mean", psnr_sum / static_cast<double>(scenes.size()),
                    ssim_sum / static_cast<double>(scenes.size())});
    return rows;
}

inline std::string eval_table(const std::vector<EvalRow>& rows) {
    std::size_t w = 5;
    for (const auto& r : rows) w = std::max(w, r.name.size());
    std::string out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-*s %8s %7s\n", static_cast<int>(w), "scene", "psnr", "ssim");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s %8.3f %7.4f\n", static_cast<int>(w), r.name.c_str(),
                      r.psnr, r.ssim);
        out += buf;
    }
    return out;
}

/// CSV with one row per scene plus the mean row.
inline std::string eval_csv(const std::vector<EvalRow>& rows) {
    std::string out = "scene,psnr,ssim\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", r.name.c_str(), r.psnr, r.ssim);
        out += buf;
    }
    return out;
}

template <typename T>
std::vector<SceneSample<T>> load_scene_set(const std::string& root) {
    std::vector<SceneSample<T>> out;
    for (const auto& d : list_scene_dirs(root)) out.push_back(load_scene<T>(d));
    return out;
}

}  // namespace pcvs
