#include <catch2/catch_amalgamated.hpp>

#include "pcvs/gradcheck.hpp"
#include "pcvs/warp.hpp"

using namespace pcvs;

namespace {

double psnr(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& mask) {
    double se = 0;
    double cnt = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double m = mask[i % mask.size()];
        se += m * (a[i] - b[i]) * (a[i] - b[i]);
        cnt += m;
    }
    if (cnt == 0 || se == 0) return 99.0;
    return 10.0 * std::log10(1.0 / (se / (cnt * (a.size() / mask.size()))));
}

}  // namespace

TEST_CASE("unproject follows the principal ray for identity pose") {
    Camera cam;
    cam.fx = cam.fy = 50;
    cam.cx = 16;
    cam.cy = 12;
    const Vec3 p = cam.unproject(16, 12, 2.0);
    REQUIRE(p.x == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.y == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.z == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("unproject matches closed-form pinhole algebra") {
    Camera cam;
    cam.fx = cam.fy = 100;
    cam.cx = cam.cy = 32;
    const Vec3 p = cam.unproject(42, 32, 1.0);
    REQUIRE(p.x == Catch::Approx(0.1).margin(1e-12));
    REQUIRE(p.y == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.z == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("unproject rejects nonpositive depth") {
    Camera cam;
    REQUIRE_THROWS_AS(cam.unproject(0, 0, 0.0), NumericError);
    REQUIRE_THROWS_AS(cam.unproject(0, 0, -1.0), NumericError);
}

TEST_CASE("project puts the optical axis at the principal point") {
    Camera cam;
    cam.fx = cam.fy = 75;
    cam.cx = 31.5;
    cam.cy = 23.5;
    const auto pr = cam.project({0, 0, 2});
    REQUIRE(pr.valid);
    REQUIRE(pr.u == Catch::Approx(31.5));
    REQUIRE(pr.v == Catch::Approx(23.5));
    REQUIRE(pr.z == Catch::Approx(2.0));
}

TEST_CASE("project flags points behind or on the camera plane") {
    Camera cam;
    REQUIRE(cam.project({0, 0, -1}).z < 0);
    REQUIRE_FALSE(cam.project({1, 1, 0}).valid);
}

TEST_CASE("project and unproject are inverse over random posed cameras") {
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3 eye{rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-3, 3)};
        const Vec3 tgt{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(4, 6)};
        Camera cam = Camera::look_at(eye, tgt, 80, 80, 64, 48);
        cam.validate();
        const double u = rng.uniform(0, 63), v = rng.uniform(0, 47), d = rng.uniform(0.5, 8.0);
        const Vec3 X = cam.unproject(u, v, d);
        const auto pr = cam.project(X);
        REQUIRE(pr.valid);
        REQUIRE(std::abs(pr.u - u) < 1e-9);
        REQUIRE(std::abs(pr.v - v) < 1e-9);
        REQUIRE(std::abs(pr.z - d) < 1e-9);
    }
}

TEST_CASE("look_at places the eye at the camera center and centers the target") {
    const Vec3 eye{1, 2, -3}, tgt{0, 0, 4};
    Camera cam = Camera::look_at(eye, tgt, 60, 60, 32, 32);
    cam.validate();
    const Vec3 c = cam.center();
    REQUIRE(c.x == Catch::Approx(eye.x).margin(1e-12));
    REQUIRE(c.y == Catch::Approx(eye.y).margin(1e-12));
    REQUIRE(c.z == Catch::Approx(eye.z).margin(1e-12));
    const auto pr = cam.project(tgt);
    REQUIRE(pr.valid);
    REQUIRE(pr.u == Catch::Approx(cam.cx).margin(1e-9));
    REQUIRE(pr.v == Catch::Approx(cam.cy).margin(1e-9));
}

TEST_CASE("warping a view into its own camera is the identity") {
    Rng rng(103);
    const int H = 12, W = 16;
    Camera cam = Camera::look_at({0, 0, 0}, {0, 0, 1}, 20, 20, W, H);
    Tensor<double> img = Tensor<double>::zeros({3, H, W});
    for (auto& v : img.value()) v = rng.uniform();
    Tensor<double> depth = Tensor<double>::zeros({H, W});
    for (auto& v : depth.value()) v = rng.uniform(1.0, 5.0);

    auto res = backward_warp(img, cam, cam, depth);
    // boundary pixels may fall a rounding error outside the sample range, so
    // only the interior mask is guaranteed
    for (int v = 1; v < H - 1; ++v)
        for (int u = 1; u < W - 1; ++u) REQUIRE(res.mask.value()[static_cast<std::size_t>(v) * W + u] == 1.0);
    REQUIRE(psnr(res.image.value(), img.value(), res.mask.value()) > 60.0);
}

TEST_CASE("warp masks everything that lands behind the source camera") {
    Camera tgt_cam = Camera::look_at({0, 0, 0}, {0, 0, 1}, 20, 20, 8, 8);
    Camera src_cam = Camera::look_at({0, 0, 10}, {0, 0, 20}, 20, 20, 8, 8);
    Tensor<double> img = Tensor<double>::filled({3, 8, 8}, 0.5);
    Tensor<double> depth = Tensor<double>::filled({8, 8}, 1.0);  // world z=1, well behind src
    auto res = backward_warp(img, src_cam, tgt_cam, depth);
    for (std::size_t i = 0; i < res.mask.numel(); ++i) REQUIRE(res.mask.value()[i] == 0.0);
    for (std::size_t i = 0; i < res.image.numel(); ++i) REQUIRE(res.image.value()[i] == 0.0);
}

TEST_CASE("warp respects an externally supplied validity mask") {
    Camera cam = Camera::look_at({0, 0, 0}, {0, 0, 1}, 20, 20, 8, 8);
    Tensor<double> img = Tensor<double>::filled({3, 8, 8}, 0.5);
    Tensor<double> depth = Tensor<double>::filled({8, 8}, 2.0);
    Tensor<double> valid = Tensor<double>::filled({8, 8}, 1.0);
    valid.value()[5] = 0.0;
    auto res = backward_warp(img, cam, cam, depth, &valid);
    REQUIRE(res.mask.value()[5] == 0.0);
    REQUIRE(res.image.value()[5] == 0.0);
    REQUIRE(res.mask.value()[6] == 1.0);
}

TEST_CASE("warp gradients w.r.t. depth and source image pass finite differences") {
    Rng rng(107);
    const int H = 8, W = 8;
    Camera tgt_cam = Camera::look_at({0, 0, 0}, {0, 0, 5}, 24, 24, W, H);
    Camera src_cam = Camera::look_at({0.15, 0.05, 0}, {0, 0, 5}, 24, 24, W, H);
    Tensor<double> img = Tensor<double>::zeros({3, H, W});
    for (auto& v : img.value()) v = rng.uniform();
    Tensor<double> depth = Tensor<double>::zeros({H, W});
    for (auto& v : depth.value()) v = rng.uniform(2.0, 2.6);

    auto f = [&]() {
        auto res = backward_warp(img, src_cam, tgt_cam, depth);
        return reduce_sum(mul(res.image, res.image));
    };
    auto res = grad_check<double>(f, {{"depth", depth}, {"img", img}}, rng, 1e-6, 16);
    INFO(res.worst);
    REQUIRE(res.ok(1e-4));
}
