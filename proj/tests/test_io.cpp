#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "pcvs/checkpoint.hpp"
#include "pcvs/image_io.hpp"
#include "pcvs/nn.hpp"
#include "pcvs/scene.hpp"

using namespace pcvs;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
    const auto dir = fs::temp_directory_path() / ("pcvs_io_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("pfm round trip is bit exact") {
    const std::string dir = temp_dir("pfm");
    Rng rng(5);
    auto m = Tensor<float>::zeros({7, 5});
    for (auto& x : m.value()) x = static_cast<float>(rng.uniform(0.01, 9.0));
    m.value()[0] = 2.0f;
    m.value()[1] = 1.0f / 3.0f;
    m.value()[2] = 1e-12f;
    write_pfm(dir + "/a.pfm", m);
    const auto back = read_pfm<float>(dir + "/a.pfm");
    REQUIRE(back.shape() == Shape{7, 5});
    for (std::size_t i = 0; i < m.numel(); ++i)
        REQUIRE(std::bit_cast<std::uint32_t>(m.value()[i]) ==
                std::bit_cast<std::uint32_t>(back.value()[i]));

    // writing the same tensor twice gives byte-identical files
    write_pfm(dir + "/b.pfm", m);
    REQUIRE(slurp(dir + "/a.pfm") == slurp(dir + "/b.pfm"));
}

TEST_CASE("pfm reader honours the scale sign for byte order") {
    const std::string dir = temp_dir("pfm_be");
    // hand-write a 1x2 big-endian file (positive scale)
    std::ofstream f(dir + "/be.pfm", std::ios::binary);
    f << "Pf\n2 1\n1.0\n";
    const float vals[2] = {1.5f, -2.25f};
    for (float v : vals) {
        auto u = std::bit_cast<std::uint32_t>(v);
        char b[4] = {static_cast<char>(u >> 24), static_cast<char>(u >> 16),
                     static_cast<char>(u >> 8), static_cast<char>(u)};
        f.write(b, 4);
    }
    f.close();
    const auto m = read_pfm<float>(dir + "/be.pfm");
    REQUIRE(m.value()[0] == 1.5f);
    REQUIRE(m.value()[1] == -2.25f);
}

TEST_CASE("pfm reader rejects malformed files") {
    const std::string dir = temp_dir("pfm_bad");
    REQUIRE_THROWS_AS(read_pfm<float>(dir + "/missing.pfm"), IoError);
    {
        std::ofstream f(dir + "/color.pfm", std::ios::binary);
        f << "PF\n2 2\n-1.0\n";
    }
    REQUIRE_THROWS_AS(read_pfm<float>(dir + "/color.pfm"), IoError);
    {
        std::ofstream f(dir + "/short.pfm", std::ios::binary);
        f << "Pf\n4 4\n-1.0\n";
        f << "only a few bytes";
    }
    REQUIRE_THROWS_AS(read_pfm<float>(dir + "/short.pfm"), IoError);
    {
        std::ofstream f(dir + "/junk.pfm", std::ios::binary);
        f << "P6\n2 2\n255\n";
    }
    REQUIRE_THROWS_AS(read_pfm<float>(dir + "/junk.pfm"), IoError);
}

TEST_CASE("png round trip stays within one quantisation step") {
    const std::string dir = temp_dir("png");
    Rng rng(9);
    auto img = Tensor<float>::zeros({3, 6, 8});
    for (auto& x : img.value()) x = static_cast<float>(rng.uniform());
    img.value()[0] = 0.0f;
    img.value()[1] = 1.0f;
    img.value()[2] = 1.7f;   // clamps to 1
    img.value()[3] = -0.3f;  // clamps to 0
    write_png(dir + "/a.png", img);
    const auto back = read_png<float>(dir + "/a.png");
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i) {
        const float want = std::clamp(img.value()[i], 0.0f, 1.0f);
        REQUIRE(std::abs(back.value()[i] - want) <= 1.0f / 255.0f);
    }
    REQUIRE(back.value()[0] == 0.0f);
    REQUIRE(back.value()[1] == 1.0f);
    REQUIRE(back.value()[2] == 1.0f);
    REQUIRE(back.value()[3] == 0.0f);

    write_png(dir + "/b.png", img);
    REQUIRE(slurp(dir + "/a.png") == slurp(dir + "/b.png"));
    REQUIRE_THROWS_AS(write_png(dir + "/bad.png", Tensor<float>::zeros({1, 4, 4})), ShapeError);
    REQUIRE_THROWS_AS(read_png<float>(dir + "/missing.png"), IoError);
}

TEST_CASE("checkpoint round trips parameters and metadata") {
    const std::string dir = temp_dir("ckpt");
    Rng rng(3);
    ParameterStore<float> store;
    Linear<float> lin(store, "net.l0", 4, 3, rng);
    store.add("net.bias2", Tensor<float>::filled({3}, 0.25f));

    CheckpointData meta;
    meta["_config"] = {Shape{4}, {1.0f, 2.0f, 8.0f, 1.1f}};
    save_checkpoint(dir + "/m.pcvs", store, meta);

    const auto ck = read_checkpoint(dir + "/m.pcvs");
    REQUIRE(ck.size() == store.size() + 1);
    REQUIRE(ck.at("_config").data == std::vector<float>{1.0f, 2.0f, 8.0f, 1.1f});

    // magic is the first thing in the file
    const auto bytes = slurp(dir + "/m.pcvs");
    REQUIRE(std::string(bytes.data(), 4) == "PCVS");

    ParameterStore<float> fresh;
    Rng rng2(99);
    Linear<float> lin2(fresh, "net.l0", 4, 3, rng2);
    fresh.add("net.bias2", Tensor<float>::zeros({3}));
    load_checkpoint_into(ck, fresh);
    for (const auto& [name, t] : store.all()) {
        const auto& got = fresh.at(name).value();
        for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(got[i] == t.value()[i]);
    }

    // identical stores write identical bytes
    save_checkpoint(dir + "/m2.pcvs", store, meta);
    REQUIRE(slurp(dir + "/m.pcvs") == slurp(dir + "/m2.pcvs"));
}

TEST_CASE("checkpoint loader reports missing and mismatched parameters") {
    const std::string dir = temp_dir("ckpt_bad");
    ParameterStore<float> store;
    store.add("w", Tensor<float>::filled({2, 2}, 1.0f));
    save_checkpoint(dir + "/m.pcvs", store);
    const auto ck = read_checkpoint(dir + "/m.pcvs");

    ParameterStore<float> extra;
    extra.add("w", Tensor<float>::zeros({2, 2}));
    extra.add("v", Tensor<float>::zeros({2}));
    REQUIRE_THROWS_WITH(load_checkpoint_into(ck, extra),
                        Catch::Matchers::ContainsSubstring("parameter 'v' not found"));

    ParameterStore<float> wrong;
    wrong.add("w", Tensor<float>::zeros({4}));
    REQUIRE_THROWS_WITH(load_checkpoint_into(ck, wrong),
                        Catch::Matchers::ContainsSubstring("shape"));

    {
        std::ofstream f(dir + "/junk.pcvs", std::ios::binary);
        f << "NOPE";
    }
    REQUIRE_THROWS_WITH(read_checkpoint(dir + "/junk.pcvs"),
                        Catch::Matchers::ContainsSubstring("bad magic"));
    {
        std::ofstream f(dir + "/trunc.pcvs", std::ios::binary);
        f << "PCVS";
        f.put(1);  // half a version field
    }
    REQUIRE_THROWS_AS(read_checkpoint(dir + "/trunc.pcvs"), IoError);
}

TEST_CASE("fronto-parallel plane renders constant exact depth") {
    Primitive p;
    p.kind = Primitive::Kind::plane;
    p.center = {0, 0, 2};
    p.u_axis = {1, 0, 0};
    p.v_axis = {0, 1, 0};
    p.half = {50, 50, 0};
    Camera cam;
    cam.fx = cam.fy = 40;
    cam.cx = 15.5;
    cam.cy = 15.5;
    cam.width = cam.height = 32;
    const auto view = render_view({p}, cam);
    REQUIRE(view.complete);
    for (double d : view.depth.value()) REQUIRE(d == 2.0);
}

TEST_CASE("sphere renders exact centre depth") {
    Primitive s;
    s.kind = Primitive::Kind::sphere;
    s.center = {0, 0, 3};
    s.radius = 1.0;
    Camera cam;
    cam.fx = cam.fy = 40;
    cam.cx = 16;  // integer principal point: pixel (16,16) is the exact axis
    cam.cy = 16;
    cam.width = cam.height = 33;
    const auto view = render_view({s}, cam);
    REQUIRE(view.depth.value()[16 * 33 + 16] == 2.0);
    REQUIRE_FALSE(view.complete);  // sphere does not cover the frame
}

TEST_CASE("box intersection and surface distances agree with closed forms") {
    Primitive b;
    b.kind = Primitive::Kind::box;
    b.center = {0, 0, 4};
    b.half = {1, 0.5, 0.25};
    double t = 0;
    REQUIRE(intersect(b, {0, 0, 0}, {0, 0, 1}, t));
    REQUIRE(t == Catch::Approx(3.75).margin(1e-12));
    REQUIRE_FALSE(intersect(b, {0, 0, 0}, {0, 0, -1}, t));
    REQUIRE(surface_distance(b, {0, 0, 4}) == Catch::Approx(0.25).margin(1e-12));  // inside
    REQUIRE(surface_distance(b, {3, 0, 4}) == Catch::Approx(2.0).margin(1e-12));

    Primitive s;
    s.kind = Primitive::Kind::sphere;
    s.center = {1, 2, 3};
    s.radius = 0.5;
    REQUIRE(surface_distance(s, {1, 2, 3.7}) == Catch::Approx(0.2).margin(1e-12));
    REQUIRE(surface_distance(s, {1, 2, 3.1}) == Catch::Approx(0.4).margin(1e-12));

    Primitive pl;
    pl.kind = Primitive::Kind::plane;
    pl.center = {0, 0, 2};
    pl.u_axis = {1, 0, 0};
    pl.v_axis = {0, 1, 0};
    pl.half = {1, 1, 0};
    REQUIRE(surface_distance(pl, {0, 0, 2.3}) == Catch::Approx(0.3).margin(1e-12));
    REQUIRE(surface_distance(pl, {2, 0, 2}) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(surface_distance(std::vector<Primitive>{b, s, pl}, {1, 2, 3.7}) ==
            Catch::Approx(0.2).margin(1e-12));
}

TEST_CASE("generated scene directories are byte identical for the same seed") {
    SceneSpec spec;
    spec.width = spec.height = 24;
    spec.seed = 42;
    const std::string d1 = temp_dir("scene_a");
    const std::string d2 = temp_dir("scene_b");
    generate_scene(spec, d1);
    generate_scene(spec, d2);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(d1)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    REQUIRE(names.size() == 7);  // scene.json + 3 views x (png + pfm)
    for (const auto& n : names) REQUIRE(slurp(d1 + "/" + n) == slurp(d2 + "/" + n));

    SceneSpec other = spec;
    other.seed = 43;
    const std::string d3 = temp_dir("scene_c");
    generate_scene(other, d3);
    REQUIRE(slurp(d1 + "/depth_00.pfm") != slurp(d3 + "/depth_00.pfm"));
}

TEST_CASE("scene load round trips cameras, depths and geometry") {
    SceneSpec spec;
    spec.width = 20;
    spec.height = 16;
    spec.n_sources = 3;
    spec.seed = 7;
    const auto scene = make_scene(spec);
    const std::string dir = temp_dir("scene_rt");
    write_scene(dir, scene, spec);
    const auto back = load_scene<double>(dir);

    REQUIRE(back.width == 20);
    REQUIRE(back.height == 16);
    REQUIRE(back.target == 3);
    REQUIRE(back.cams.size() == 4);
    REQUIRE(back.sources() == std::vector<int>{0, 1, 2});
    REQUIRE(back.d_min == Catch::Approx(scene.d_min));
    REQUIRE(back.d_max == Catch::Approx(scene.d_max));
    for (std::size_t i = 0; i < back.cams.size(); ++i) {
        REQUIRE(back.cams[i].fx == scene.cams[i].fx);
        REQUIRE(back.cams[i].cx == scene.cams[i].cx);
        for (int k = 0; k < 9; ++k)
            REQUIRE(back.cams[i].R.m[static_cast<std::size_t>(k)] ==
                    Catch::Approx(scene.cams[i].R.m[static_cast<std::size_t>(k)]).margin(1e-15));
        // depth survives the float32 file exactly
        for (std::size_t px = 0; px < back.depths[i].numel(); ++px)
            REQUIRE(back.depths[i].value()[px] ==
                    static_cast<double>(static_cast<float>(scene.depths[i].value()[px])));
        // image survives up to 8-bit quantisation
        for (std::size_t px = 0; px < back.images[i].numel(); ++px)
            REQUIRE(std::abs(back.images[i].value()[px] - scene.images[i].value()[px]) <=
                    1.0 / 255.0);
    }
    REQUIRE(back.prims.size() == scene.prims.size());
    // reloaded geometry gives the same surface distances
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const Vec3 q{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0, 7)};
        REQUIRE(surface_distance(back.prims, q) ==
                Catch::Approx(surface_distance(scene.prims, q)).margin(1e-12));
    }

    // all stored depths sit inside the declared range
    for (const auto& d : back.depths)
        for (double x : d.value()) {
            REQUIRE(x >= back.d_min);
            REQUIRE(x <= back.d_max);
        }
}

TEST_CASE("wedge preset produces smooth fully covered views") {
    SceneSpec spec;
    spec.preset = "wedge";
    spec.width = spec.height = 24;
    spec.seed = 3;
    const auto scene = make_scene(spec);
    REQUIRE(scene.prims.size() == 1);
    for (const auto& d : scene.depths)
        for (double x : d.value()) REQUIRE(x > 0);
    // depth varies across the tilted slab but has no jumps
    const auto& d = scene.depths[0].value();
    double lo = 1e30, hi = 0, max_step = 0;
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            const double v = d[static_cast<std::size_t>(y * 24 + x)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            if (x) max_step = std::max(max_step, std::abs(v - d[static_cast<std::size_t>(y * 24 + x - 1)]));
        }
    REQUIRE(hi - lo > 0.1);
    REQUIRE(max_step < 0.2);
}

TEST_CASE("source depth noise perturbs sources and spares the target") {
    SceneSpec spec;
    spec.width = spec.height = 16;
    spec.seed = 12;
    auto noisy = make_scene(spec);
    // tensors are shared handles, so snapshot the raw values before perturbing
    std::vector<std::vector<double>> clean;
    for (const auto& d : noisy.depths) clean.push_back(d.value());
    apply_depth_noise(noisy, 0.01, spec.seed);
    const double sigma = 0.01 * (noisy.d_max - noisy.d_min);
    for (int i : noisy.sources()) {
        double rms = 0;
        for (std::size_t px = 0; px < clean[i].size(); ++px)
            rms += std::pow(noisy.depths[i].value()[px] - clean[i][px], 2);
        rms = std::sqrt(rms / static_cast<double>(clean[i].size()));
        REQUIRE(rms > 0.3 * sigma);
        REQUIRE(rms < 3.0 * sigma);
    }
    for (std::size_t px = 0; px < clean[noisy.target].size(); ++px)
        REQUIRE(noisy.depths[noisy.target].value()[px] == clean[noisy.target][px]);
}

TEST_CASE("scene loader names the file and field on errors") {
    SceneSpec spec;
    spec.width = spec.height = 12;
    spec.seed = 21;
    const std::string dir = temp_dir("scene_err");
    generate_scene(spec, dir);

    REQUIRE_THROWS_WITH(load_scene<float>(dir + "/nowhere"),
                        Catch::Matchers::ContainsSubstring("cannot open"));

    auto patch = [&](const std::function<void(nlohmann::json&)>& fn) {
        std::ifstream in(dir + "/scene.json");
        nlohmann::json j;
        in >> j;
        in.close();
        fn(j);
        std::ofstream out(dir + "/scene.json");
        out << j.dump(2);
    };

    patch([](nlohmann::json& j) { j["views"][1].erase("w2c"); });
    REQUIRE_THROWS_WITH(load_scene<float>(dir),
                        Catch::Matchers::ContainsSubstring("camera for view_01 not found"));

    patch([](nlohmann::json& j) { j["views"][1]["w2c"] = std::vector<double>(7, 0.0); });
    REQUIRE_THROWS_WITH(load_scene<float>(dir),
                        Catch::Matchers::ContainsSubstring("camera for view_01 must have 16 entries"));

    // restore a valid file, then break a different field
    generate_scene(spec, dir);
    patch([](nlohmann::json& j) { j.erase("depth_range"); });
    REQUIRE_THROWS_WITH(load_scene<float>(dir),
                        Catch::Matchers::ContainsSubstring("'depth_range' not found"));

    generate_scene(spec, dir);
    patch([](nlohmann::json& j) { j["views"][0].erase("K"); });
    REQUIRE_THROWS_WITH(load_scene<float>(dir),
                        Catch::Matchers::ContainsSubstring("intrinsics for view_00 not found"));

    generate_scene(spec, dir);
    {
        auto d = read_pfm<float>(dir + "/depth_02.pfm");
        d.value()[5] = 0.0f;
        write_pfm(dir + "/depth_02.pfm", d);
    }
    REQUIRE_THROWS_WITH(load_scene<float>(dir),
                        Catch::Matchers::ContainsSubstring("depth_02.pfm"));
}

TEST_CASE("camera rigs reject subjects outside the view") {
    SceneSpec spec;
    spec.width = spec.height = 16;
    spec.seed = 4;
    const auto scene = make_scene(spec);

    // the accepted rig passes the visibility test by construction
    REQUIRE(detail::rig_sees_subjects(scene.cams, scene.prims));

    // a subject far off to the side must fail it
    auto prims = scene.prims;
    for (auto& p : prims)
        if (p.subject) p.center = p.center + Vec3{50, 0, 0};
    REQUIRE_FALSE(detail::rig_sees_subjects(scene.cams, prims));
}

TEST_CASE("scene sets enumerate deterministically") {
    SceneSpec spec;
    spec.width = spec.height = 12;
    spec.seed = 100;
    const std::string root = temp_dir("scene_set");
    const auto dirs = generate_scene_set(spec, root, 3);
    REQUIRE(dirs.size() == 3);
    REQUIRE(list_scene_dirs(root) == dirs);
    // distinct seeds give distinct scenes
    REQUIRE(slurp(dirs[0] + "/depth_00.pfm") != slurp(dirs[1] + "/depth_00.pfm"));
    REQUIRE_THROWS_AS(list_scene_dirs(root + "/none"), IoError);
}
