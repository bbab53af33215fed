// Command-line driver: scene generation, training, rendering, evaluation,
// cloud export and a numerical gradient self-check. Exit codes: 0 success,
// 1 validation/usage error, 2 numeric abort (NaN during training).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcvs/pcvs.hpp"

namespace fs = std::filesystem;
using namespace pcvs;

namespace {

DepthMode parse_mode(const std::string& s) {
    if (s == "depth") return DepthMode::given;
    if (s == "selfdepth") return DepthMode::self_estimated;
    throw IoError("unknown mode '" + s + "' (expected depth|selfdepth)");
}

std::string mode_name(DepthMode m) { return m == DepthMode::given ? "depth" : "selfdepth"; }

// "64" or "64x48" -> width, height
void parse_res(const std::string& s, int& w, int& h) {
    const auto x = s.find('x');
    try {
        if (x == std::string::npos) {
            w = h = std::stoi(s);
        } else {
            w = std::stoi(s.substr(0, x));
            h = std::stoi(s.substr(x + 1));
        }
    } catch (const std::exception&) {
        throw IoError("bad resolution '" + s + "' (expected N or WxH)");
    }
}

std::string trimmed(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// key=value lines, '#' starts a comment
std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        line = trimmed(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError("config: " + path + ":" + std::to_string(lineno) + ": expected key=value");
        kv[trimmed(line.substr(0, eq))] = trimmed(line.substr(eq + 1));
    }
    return kv;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw IoError("config: key '" + key + "': expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
    try {
        if constexpr (std::is_same_v<T, double>) return std::stod(v);
        else if constexpr (std::is_same_v<T, std::uint64_t>) return std::stoull(v);
        else return std::stoi(v);
    } catch (const std::exception&) {
        throw IoError("config: key '" + key + "': bad value '" + v + "'");
    }
}

// Training knobs readable from a config file. `views`, `knn` and
// `anchor_ratio` are folded in by the caller because their defaults depend on
// each other; everything else lands directly in the TrainConfig.
void apply_config_kv(const std::map<std::string, std::string>& kv, TrainConfig& tc, int& views,
                     int& knn, double& anchor_ratio) {
    for (const auto& [k, v] : kv) {
        if (k == "mode") tc.pipe.mode = parse_mode(v);
        else if (k == "views") views = parse_num<int>(k, v);
        else if (k == "knn") knn = parse_num<int>(k, v);
        else if (k == "anchor_ratio") anchor_ratio = parse_num<double>(k, v);
        else if (k == "seed") tc.seed = parse_num<std::uint64_t>(k, v);
        else if (k == "lr") tc.lr = parse_num<double>(k, v);
        else if (k == "iterations") tc.iterations = parse_num<int>(k, v);
        else if (k == "phase2_iterations") tc.phase2_iterations = parse_num<int>(k, v);
        else if (k == "two_phase") tc.two_phase = parse_bool(k, v);
        else if (k == "fusion") tc.pipe.use_fusion = parse_bool(k, v);
        else if (k == "inpaint") tc.pipe.use_inpaint = parse_bool(k, v);
        else if (k == "refine") tc.pipe.use_refine = parse_bool(k, v);
        else if (k == "radius") tc.pipe.splat.radius = parse_num<double>(k, v);
        else if (k == "max_per_pixel") tc.pipe.splat.max_per_pixel = parse_num<int>(k, v);
        else if (k == "planes") tc.pipe.depth.planes = parse_num<int>(k, v);
        else throw IoError("config: unknown key '" + k + "'");
    }
}

std::string scene_name(const std::string& dir) { return fs::path(dir).filename().string(); }

// Loads every scene under `root` along with its directory basename.
std::pair<std::vector<SceneSample<float>>, std::vector<std::string>> load_named_scenes(
    const std::string& root) {
    std::vector<SceneSample<float>> scenes;
    std::vector<std::string> names;
    for (const auto& d : list_scene_dirs(root)) {
        scenes.push_back(load_scene<float>(d));
        names.push_back(scene_name(d));
    }
    return {std::move(scenes), std::move(names)};
}

void check_ckpt_match(const PipelineConfig& pipe, const std::string& flag, int requested,
                      int trained) {
    if (requested != trained)
        throw IoError("checkpoint mismatch: trained with " + flag + "=" + std::to_string(trained) +
                      ", requested " + std::to_string(requested) + " (mode " +
                      mode_name(pipe.mode) + ")");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point-cloud view synthesis"};
    app.require_subcommand(1);

    // ---- gen-scenes -------------------------------------------------------
    auto* gen = app.add_subcommand("gen-scenes", "generate procedural scene directories");
    std::string g_out, g_res = "64", g_preset = "bench";
    int g_count = 1, g_views = 2;
    std::uint64_t g_seed = 1;
    double g_noise = 0.0;
    gen->add_option("--out", g_out, "output root directory")->required();
    gen->add_option("--count", g_count, "number of scenes");
    gen->add_option("--seed", g_seed, "base seed");
    gen->add_option("--views", g_views, "source views per scene");
    gen->add_option("--res", g_res, "resolution, N or WxH");
    gen->add_option("--preset", g_preset, "scene preset (bench|wedge)");
    gen->add_option("--depth-noise", g_noise, "source depth noise, fraction of depth range");
    gen->callback([&] {
        SceneSpec spec;
        parse_res(g_res, spec.width, spec.height);
        spec.n_sources = g_views;
        spec.preset = g_preset;
        spec.depth_noise = g_noise;
        spec.seed = g_seed;
        for (const auto& d : generate_scene_set(spec, g_out, g_count))
            std::cout << "wrote " << d << "\n";
    });

    // ---- train ------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model on a scene set");
    std::string t_scenes, t_out, t_config, t_mode = "depth";
    int t_views = 0, t_knn = 0, t_iters = 0, t_phase2 = -1, t_maxpp = 0, t_planes = 0;
    double t_anchor = 0.0, t_lr = 0.0, t_radius = 0.0;
    std::uint64_t t_seed = 1;
    bool t_two_phase = false, t_no_fusion = false, t_no_inpaint = false, t_no_refine = false,
         t_quiet = false;
    tr->add_option("--scenes", t_scenes, "training scene root")->required();
    tr->add_option("--out", t_out, "output directory (model.pcvs, train_log.txt)")->required();
    tr->add_option("--config", t_config, "key=value config file; explicit flags win");
    tr->add_option("--mode", t_mode, "depth source")->check(CLI::IsMember({"depth", "selfdepth"}));
    tr->add_option("--views", t_views, "source views (default: from the scenes)");
    tr->add_option("--knn", t_knn, "fusion neighbours");
    tr->add_option("--anchor-ratio", t_anchor, "anchors per view pixel");
    tr->add_option("--seed", t_seed, "training seed");
    tr->add_option("--lr", t_lr, "Adam learning rate");
    tr->add_option("--iterations", t_iters, "phase-1 iterations");
    tr->add_option("--phase2-iterations", t_phase2, "refinement-only iterations");
    tr->add_flag("--two-phase", t_two_phase, "train refinement separately, prior weights fixed");
    tr->add_flag("--no-fusion", t_no_fusion, "splat the raw union cloud");
    tr->add_flag("--no-inpaint", t_no_inpaint, "skip hole filling");
    tr->add_flag("--no-refine", t_no_refine, "skip the refinement net");
    tr->add_option("--radius", t_radius, "splat radius, pixels");
    tr->add_option("--max-per-pixel", t_maxpp, "splats kept per pixel");
    tr->add_option("--planes", t_planes, "depth hypotheses (selfdepth)");
    tr->add_flag("--quiet", t_quiet, "suppress per-iteration output");
    tr->callback([&] {
        auto [scenes, names] = load_named_scenes(t_scenes);
        (void)names;

        TrainConfig tc;
        int views = 0, knn = 0;
        double anchor = 0.0;
        if (!t_config.empty()) apply_config_kv(read_config_file(t_config), tc, views, knn, anchor);

        // explicit flags override the config file
        if (tr->count("--mode")) tc.pipe.mode = parse_mode(t_mode);
        if (tr->count("--views")) views = t_views;
        if (tr->count("--knn")) knn = t_knn;
        if (tr->count("--anchor-ratio")) anchor = t_anchor;
        if (tr->count("--seed")) tc.seed = t_seed;
        if (tr->count("--lr")) tc.lr = t_lr;
        if (tr->count("--iterations")) tc.iterations = t_iters;
        if (tr->count("--phase2-iterations")) tc.phase2_iterations = t_phase2;
        if (t_two_phase) tc.two_phase = true;
        if (t_no_fusion) tc.pipe.use_fusion = false;
        if (t_no_inpaint) tc.pipe.use_inpaint = false;
        if (t_no_refine) tc.pipe.use_refine = false;
        if (tr->count("--radius")) tc.pipe.splat.radius = t_radius;
        if (tr->count("--max-per-pixel")) tc.pipe.splat.max_per_pixel = t_maxpp;
        if (tr->count("--planes")) tc.pipe.depth.planes = t_planes;

        if (views == 0) views = static_cast<int>(scenes.front().sources().size());
        for (std::size_t i = 0; i < scenes.size(); ++i)
            if (static_cast<int>(scenes[i].sources().size()) != views)
                throw IoError("train: scene " + std::to_string(i) + " has " +
                              std::to_string(scenes[i].sources().size()) + " source views, expected " +
                              std::to_string(views));
        tc.pipe.n_sources = views;
        const FusionConfig defaults = fusion_defaults(views);
        tc.pipe.fusion.K = knn > 0 ? knn : defaults.K;
        tc.pipe.fusion.anchor_ratio = anchor > 0.0 ? anchor : defaults.anchor_ratio;

        auto run = pcvs::train(scenes, tc, t_quiet ? nullptr : &std::cout);

        fs::create_directories(t_out);
        const std::string ckpt = t_out + "/model.pcvs";
        save_model(ckpt, run);
        std::ofstream log(t_out + "/train_log.txt", std::ios::binary);
        log << run.log_text;
        if (!log) throw IoError("train: cannot write '" + t_out + "/train_log.txt'");
        std::cout << "wrote " << ckpt << "\n";
    });

    // ---- render -----------------------------------------------------------
    auto* rd = app.add_subcommand("render", "synthesize the target view of a scene");
    std::string r_scene, r_ckpt, r_out, r_mode;
    int r_views = 0;
    std::uint64_t r_seed = 1;
    bool r_dump = false;
    rd->add_option("--scene", r_scene, "scene directory")->required();
    rd->add_option("--ckpt", r_ckpt, "model checkpoint")->required();
    rd->add_option("--out", r_out, "output PNG")->required();
    rd->add_option("--views", r_views, "expected source views (must match the checkpoint)");
    rd->add_option("--mode", r_mode, "expected mode (must match the checkpoint)")
        ->check(CLI::IsMember({"depth", "selfdepth"}));
    rd->add_option("--seed", r_seed, "anchor-sampling seed");
    rd->add_flag("--dump-cloud", r_dump, "also write the unified cloud PLY and depth PFM");
    rd->callback([&] {
        auto run = load_model<float>(r_ckpt);
        if (rd->count("--views")) check_ckpt_match(run.pipe, "views", r_views, run.pipe.n_sources);
        if (rd->count("--mode") && parse_mode(r_mode) != run.pipe.mode)
            throw IoError("checkpoint mismatch: trained in mode " + mode_name(run.pipe.mode) +
                          ", requested " + r_mode);
        const auto scene = load_scene<float>(r_scene);
        Rng rng(r_seed);
        auto fwd = run_pipeline(scene, run.pipe, run.nets, rng);
        write_png(r_out, fwd.refined);
        std::cout << "wrote " << r_out << "\n";
        if (r_dump) {
            fs::path base(r_out);
            base.replace_extension();
            const std::string ply = base.string() + "_cloud.ply";
            const std::string pfm = base.string() + "_depth.pfm";
            export_ply(fwd.cloud.positions, slice(fwd.cloud.descriptors, 1, 0, 3), ply);
            write_pfm(pfm, fwd.novel_depth);
            std::cout << "wrote " << ply << " (" << fwd.cloud.size() << " points)\n"
                      << "wrote " << pfm << "\n";
        }
    });

    // ---- eval -------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM of rendered targets against ground truth");
    std::string e_scenes, e_ckpt, e_csv, e_mode;
    int e_views = 0;
    std::uint64_t e_seed = 1;
    bool e_no_fusion = false, e_no_inpaint = false, e_no_refine = false;
    ev->add_option("--scenes", e_scenes, "held-out scene root")->required();
    ev->add_option("--ckpt", e_ckpt, "model checkpoint")->required();
    ev->add_option("--csv", e_csv, "also write the table as CSV");
    ev->add_option("--views", e_views, "expected source views (must match the checkpoint)");
    ev->add_option("--mode", e_mode, "expected mode (must match the checkpoint)")
        ->check(CLI::IsMember({"depth", "selfdepth"}));
    ev->add_option("--seed", e_seed, "anchor-sampling seed");
    ev->add_flag("--no-fusion", e_no_fusion, "evaluate with the raw union cloud");
    ev->add_flag("--no-inpaint", e_no_inpaint, "evaluate without hole filling");
    ev->add_flag("--no-refine", e_no_refine, "evaluate without refinement");
    ev->callback([&] {
        auto run = load_model<float>(e_ckpt);
        if (ev->count("--views")) check_ckpt_match(run.pipe, "views", e_views, run.pipe.n_sources);
        if (ev->count("--mode") && parse_mode(e_mode) != run.pipe.mode)
            throw IoError("checkpoint mismatch: trained in mode " + mode_name(run.pipe.mode) +
                          ", requested " + e_mode);
        if (e_no_fusion) run.pipe.use_fusion = false;
        if (e_no_inpaint) run.pipe.use_inpaint = false;
        if (e_no_refine) run.pipe.use_refine = false;
        auto [scenes, names] = load_named_scenes(e_scenes);
        const auto rows = evaluate_scenes(scenes, names, run.pipe, run.nets, e_seed);
        std::cout << eval_table(rows);
        if (!e_csv.empty()) {
            std::ofstream f(e_csv, std::ios::binary);
            f << eval_csv(rows);
            if (!f) throw IoError("eval: cannot write '" + e_csv + "'");
            std::cout << "wrote " << e_csv << "\n";
        }
    });

    // ---- fuse -------------------------------------------------------------
    auto* fu = app.add_subcommand("fuse", "build the unified cloud of a scene and export PLY");
    std::string f_scene, f_out, f_ckpt;
    int f_knn = 0;
    double f_anchor = 0.0;
    std::uint64_t f_seed = 1;
    bool f_no_fusion = false;
    fu->add_option("--scene", f_scene, "scene directory")->required();
    fu->add_option("--out", f_out, "output PLY")->required();
    fu->add_option("--ckpt", f_ckpt, "model checkpoint (default: seed-initialized weights)");
    fu->add_option("--knn", f_knn, "fusion neighbours");
    fu->add_option("--anchor-ratio", f_anchor, "anchors per view pixel");
    fu->add_option("--seed", f_seed, "seed for anchors (and weights without --ckpt)");
    fu->add_flag("--no-fusion", f_no_fusion, "export the raw union cloud instead");
    fu->callback([&] {
        const auto scene = load_scene<float>(f_scene);
        const int views = static_cast<int>(scene.sources().size());
        PipelineConfig cfg;
        ParameterStore<float> store;
        PipelineNets<float> nets;
        if (!f_ckpt.empty()) {
            auto run = load_model<float>(f_ckpt);
            if (fu->count("--knn")) check_ckpt_match(run.pipe, "knn", f_knn, run.pipe.fusion.K);
            cfg = run.pipe;
            nets = std::move(run.nets);
        } else {
            cfg.n_sources = views;
            cfg.fusion = fusion_defaults(views);
            if (f_knn > 0) cfg.fusion.K = f_knn;
            if (f_anchor > 0.0) cfg.fusion.anchor_ratio = f_anchor;
            Rng init_rng(f_seed);
            nets = make_pipeline(store, cfg, init_rng);
        }
        if (f_no_fusion) cfg.use_fusion = false;
        Rng rng(f_seed);
        auto fwd = run_pipeline(scene, cfg, nets, rng);
        export_ply(fwd.cloud.positions, slice(fwd.cloud.descriptors, 1, 0, 3), f_out);
        std::cout << "wrote " << f_out << " (" << fwd.cloud.size() << " points)\n";
    });

    // ---- gradcheck --------------------------------------------------------
    auto* gc = app.add_subcommand("gradcheck",
                                  "central-difference check of the end-to-end gradient");
    std::string c_mode = "depth";
    int c_res = 12, c_views = 2, c_probes = 4, c_planes = 8;
    std::uint64_t c_seed = 1;
    double c_tol = 1e-3;
    gc->add_option("--mode", c_mode, "depth source")->check(CLI::IsMember({"depth", "selfdepth"}));
    gc->add_option("--res", c_res, "synthetic scene resolution");
    gc->add_option("--views", c_views, "source views");
    gc->add_option("--probes", c_probes, "finite-difference probes per parameter");
    gc->add_option("--planes", c_planes, "depth hypotheses (selfdepth)");
    gc->add_option("--seed", c_seed, "scene and weight seed");
    gc->add_option("--tol", c_tol, "max relative error accepted");
    gc->callback([&] {
        SceneSpec spec;
        spec.width = spec.height = c_res;
        spec.n_sources = c_views;
        spec.seed = c_seed;
        const SceneSample<double> scene = make_scene(spec);

        PipelineConfig cfg;
        cfg.mode = parse_mode(c_mode);
        cfg.n_sources = c_views;
        cfg.fusion = fusion_defaults(c_views);
        cfg.depth.planes = c_planes;
        ParameterStore<double> store;
        Rng init_rng(c_seed);
        PipelineNets<double> nets = make_pipeline(store, cfg, init_rng);

        // the anchor draw must repeat exactly so the loss is a pure function
        // of the parameter values
        auto loss = [&] {
            Rng rng(c_seed + 17);
            auto fwd = run_pipeline(scene, cfg, nets, rng);
            return compute_losses(fwd, scene, cfg, nets, true).total;
        };
        std::vector<std::pair<std::string, Tensor<double>>> leaves(store.all().begin(),
                                                                   store.all().end());
        Rng probe_rng(c_seed + 29);
        const auto res = grad_check<double>(loss, leaves, probe_rng, 1e-5, c_probes);
        const bool ok = res.ok(c_tol);
        std::printf("gradcheck: %zu probes (%zu skipped at selection boundaries), "
                    "max rel err %.3e at %s (tol %.1e) -> %s\n",
                    res.probes, res.skipped, res.max_rel_err, res.worst.c_str(), c_tol,
                    ok ? "PASS" : "FAIL");
        if (!ok) throw NumericError("gradcheck: gradient mismatch");
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NanAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
