#include <catch2/catch_amalgamated.hpp>
#include <fstream>
#include <sstream>

#include "pcvs/cloud.hpp"
#include "pcvs/gradcheck.hpp"

using namespace pcvs;
using Catch::Matchers::ContainsSubstring;

namespace {

struct ViewData {
    Tensor<double> image, depth, features, quality;
    Camera cam;
};

ViewData make_view(int H, int W, Rng& rng, const Vec3& eye = {0, 0, 0}) {
    ViewData v;
    v.image = Tensor<double>::zeros({3, H, W});
    for (auto& x : v.image.value()) x = rng.uniform();
    v.depth = Tensor<double>::zeros({H, W});
    for (auto& x : v.depth.value()) x = rng.uniform(1.0, 4.0);
    v.features = Tensor<double>::zeros({32, H, W});
    for (auto& x : v.features.value()) x = rng.uniform(-1, 1);
    v.quality = Tensor<double>::filled({H, W}, 1.0);
    v.cam = Camera::look_at(eye, {0, 0, 5}, 30, 30, W, H);
    return v;
}

}  // namespace

TEST_CASE("a fully valid 2x2 view lifts to 4 points") {
    Rng rng(1);
    auto v = make_view(2, 2, rng);
    auto sub = build_sub_cloud(v.image, v.depth, v.features, v.quality, v.cam, 0);
    REQUIRE(sub.size() == 4);
    REQUIRE(sub.positions.shape() == Shape{4, 3});
    REQUIRE(sub.colors.shape() == Shape{4, 3});
    REQUIRE(sub.features.shape() == Shape{4, 32});
    REQUIRE(sub.descriptors().shape() == Shape{4, 35});
}

TEST_CASE("constant depth under a fronto-parallel identity camera is a plane") {
    Camera cam;
    cam.fx = cam.fy = 20;
    cam.cx = 1.5;
    cam.cy = 1.5;
    cam.width = cam.height = 4;
    Tensor<double> img = Tensor<double>::filled({3, 4, 4}, 0.5);
    Tensor<double> depth = Tensor<double>::filled({4, 4}, 2.5);
    Tensor<double> feat = Tensor<double>::zeros({32, 4, 4});
    Tensor<double> qual = Tensor<double>::filled({4, 4}, 1.0);
    auto sub = build_sub_cloud(img, depth, feat, qual, cam);
    for (int i = 0; i < sub.size(); ++i)
        REQUIRE(sub.positions.value()[static_cast<std::size_t>(i) * 3 + 2] == Catch::Approx(2.5).margin(1e-12));
}

TEST_CASE("lifted positions match the per-pixel unproject oracle") {
    Rng rng(3);
    auto v = make_view(5, 7, rng, {0.4, -0.2, 0.1});
    v.depth.value()[9] = 0.0;   // one hole
    v.depth.value()[20] = -1.0; // and one negative entry
    auto sub = build_sub_cloud(v.image, v.depth, v.features, v.quality, v.cam, 2);
    REQUIRE(sub.size() == 5 * 7 - 2);
    for (int i = 0; i < sub.size(); ++i) {
        const int pix = sub.pixel_index[static_cast<std::size_t>(i)];
        const int u = pix % 7, y = pix / 7;
        const Vec3 want = v.cam.unproject(u, y, v.depth.value()[static_cast<std::size_t>(pix)]);
        REQUIRE(sub.positions.value()[static_cast<std::size_t>(i) * 3 + 0] == Catch::Approx(want.x).margin(1e-12));
        REQUIRE(sub.positions.value()[static_cast<std::size_t>(i) * 3 + 1] == Catch::Approx(want.y).margin(1e-12));
        REQUIRE(sub.positions.value()[static_cast<std::size_t>(i) * 3 + 2] == Catch::Approx(want.z).margin(1e-12));
        for (int c = 0; c < 3; ++c)
            REQUIRE(sub.colors.value()[static_cast<std::size_t>(i) * 3 + c] ==
                    v.image.value()[static_cast<std::size_t>(c) * 35 + pix]);
        REQUIRE(sub.source_view == 2);
    }
}

TEST_CASE("an all-invalid depth map refuses to build a cloud") {
    Rng rng(5);
    auto v = make_view(3, 3, rng);
    for (auto& d : v.depth.value()) d = 0.0;
    REQUIRE_THROWS_WITH(build_sub_cloud(v.image, v.depth, v.features, v.quality, v.cam),
                        ContainsSubstring("empty sub-cloud"));
}

TEST_CASE("cloud positions are differentiable w.r.t. the depth map") {
    Rng rng(7);
    auto v = make_view(4, 4, rng);
    auto f = [&]() {
        auto sub = build_sub_cloud(v.image, v.depth, v.features, v.quality, v.cam);
        return reduce_sum(mul(sub.positions, sub.positions));
    };
    auto res = grad_check<double>(f, {{"depth", v.depth}}, rng, 1e-6, 8);
    INFO(res.worst);
    REQUIRE(res.ok(1e-6));
}

TEST_CASE("union concatenates attributes bit-exactly and tracks origins") {
    Rng rng(9);
    auto v0 = make_view(3, 4, rng, {0, 0, 0});
    auto v1 = make_view(3, 4, rng, {0.5, 0, 0});
    auto s0 = build_sub_cloud(v0.image, v0.depth, v0.features, v0.quality, v0.cam, 0);
    auto s1 = build_sub_cloud(v1.image, v1.depth, v1.features, v1.quality, v1.cam, 1);
    auto u = union_clouds<double>({s0, s1});
    REQUIRE(u.size() == s0.size() + s1.size());
    auto d0 = s0.descriptors();
    for (std::size_t i = 0; i < d0.numel(); ++i) REQUIRE(u.descriptors.value()[i] == d0.value()[i]);
    for (int i = 0; i < s0.size(); ++i) REQUIRE(u.origin_view[static_cast<std::size_t>(i)] == 0);
    for (int i = s0.size(); i < u.size(); ++i) REQUIRE(u.origin_view[static_cast<std::size_t>(i)] == 1);
    for (std::size_t i = 0; i < s0.positions.numel(); ++i)
        REQUIRE(u.positions.value()[i] == s0.positions.value()[i]);
}

TEST_CASE("anchor sampling is seeded, unique, and bounds-checked") {
    Rng a(42), b(42), c(43);
    auto s1 = sample_anchors(100, 30, a);
    auto s2 = sample_anchors(100, 30, b);
    REQUIRE(s1 == s2);
    auto s3 = sample_anchors(100, 30, c);
    REQUIRE(s1 != s3);
    std::vector<bool> seen(100, false);
    for (int i : s1) {
        REQUIRE_FALSE(seen[static_cast<std::size_t>(i)]);
        seen[static_cast<std::size_t>(i)] = true;
    }
    Rng d(1);
    auto all = sample_anchors(10, 10, d);
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 10; ++i) REQUIRE(all[static_cast<std::size_t>(i)] == i);
    REQUIRE_THROWS_AS(sample_anchors(10, 0, d), ShapeError);
    REQUIRE_THROWS_AS(sample_anchors(10, 11, d), ShapeError);
}

TEST_CASE("kdtree matches exhaustive search on random clouds") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(trial < 35 ? 800 : 5000);
        std::vector<std::array<double, 3>> pts(n);
        const bool snap = trial % 3 == 0;  // coarse grid exercises distance ties
        for (auto& p : pts)
            for (auto& c : p) {
                c = rng.uniform(-2, 2);
                if (snap) c = std::round(c * 2.0) / 2.0;
            }
        KdTree tree(pts);
        const int k = 1 + static_cast<int>(rng.uniform_int(std::min<std::size_t>(n, 12)));
        for (int q = 0; q < 5; ++q) {
            std::array<double, 3> query{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
            if (q == 0) query = pts[rng.uniform_int(n)];  // exact hit
            auto got = tree.knn(query, k);
            std::vector<std::pair<double, int>> brute;
            for (std::size_t i = 0; i < n; ++i) {
                double d2 = 0;
                for (int a = 0; a < 3; ++a)
                    d2 += (query[static_cast<std::size_t>(a)] - pts[i][static_cast<std::size_t>(a)]) *
                          (query[static_cast<std::size_t>(a)] - pts[i][static_cast<std::size_t>(a)]);
                brute.emplace_back(d2, static_cast<int>(i));
            }
            std::sort(brute.begin(), brute.end());
            REQUIRE(got.size() == static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) {
                REQUIRE(got[static_cast<std::size_t>(i)].index == brute[static_cast<std::size_t>(i)].second);
                REQUIRE(got[static_cast<std::size_t>(i)].dist ==
                        Catch::Approx(std::sqrt(brute[static_cast<std::size_t>(i)].first)).margin(1e-12));
            }
        }
    }
}

TEST_CASE("kdtree K=1 at an existing point returns it at distance zero") {
    std::vector<std::array<double, 3>> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 0, 0}};
    KdTree tree(pts);
    auto hit = tree.knn({1, 0, 0}, 1);
    REQUIRE(hit.size() == 1);
    REQUIRE(hit[0].dist == 0.0);
    REQUIRE(hit[0].index == 1);  // duplicate at index 3 loses the tie
    REQUIRE_THROWS_AS(tree.knn({0, 0, 0}, 5), ShapeError);
    REQUIRE_THROWS_AS(tree.knn({0, 0, 0}, 0), ShapeError);
}

TEST_CASE("ply export writes vertex records and survives a reload") {
    auto pos = Tensor<double>::from({2, 3}, {0, 0, 1, -0.25, 0.5, 2.0});
    auto col = Tensor<double>::from({2, 3}, {1, 1, 1, 0, 0.5, 1.0});
    const std::string path = "test_cloud_dump.ply";
    export_ply(pos, col, path);

    std::ifstream f(path);
    REQUIRE(f.good());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    REQUIRE_THAT(text, ContainsSubstring("element vertex 2"));
    REQUIRE_THAT(text, ContainsSubstring("0 0 1 255 255 255"));

    // reload the vertex lines and compare positions
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (line == "end_header") break;
    int row = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        double x, y, z;
        int r, g, b;
        ls >> x >> y >> z >> r >> g >> b;
        REQUIRE(std::abs(x - pos.value()[static_cast<std::size_t>(row) * 3 + 0]) < 1e-5);
        REQUIRE(std::abs(y - pos.value()[static_cast<std::size_t>(row) * 3 + 1]) < 1e-5);
        REQUIRE(std::abs(z - pos.value()[static_cast<std::size_t>(row) * 3 + 2]) < 1e-5);
        ++row;
    }
    REQUIRE(row == 2);

    auto empty_pos = Tensor<double>::zeros({0, 3});
    auto empty_col = Tensor<double>::zeros({0, 3});
    export_ply(empty_pos, empty_col, path);
    std::ifstream f2(path);
    std::string text2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE_THAT(text2, ContainsSubstring("element vertex 0"));
}
