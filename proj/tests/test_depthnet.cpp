#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pcvs/depthnet.hpp"
#include "pcvs/gradcheck.hpp"

using namespace pcvs;

namespace {

Camera frontal_cam(int w, int h, double fx = 20.0) {
    Camera c;
    c.fx = fx;
    c.fy = fx;
    c.cx = (w - 1) / 2.0;
    c.cy = (h - 1) / 2.0;
    c.R = Mat3::identity();
    c.t = {0, 0, 0};
    c.width = w;
    c.height = h;
    return c;
}

Camera shifted_cam(const Camera& base, double bx, double by) {
    Camera c = base;
    c.t = {-bx, -by, 0};
    return c;
}

Tensor<double> random_feats(int c, int h, int w, Rng& rng) {
    auto t = Tensor<double>::zeros({c, h, w});
    for (auto& v : t.value()) v = rng.uniform(-1, 1);
    return t;
}

// feature maps a camera would see of a fronto-parallel plane at depth z0
// carrying a feature field affine in world position (bilinear-exact)
Tensor<double> plane_feats(const Camera& cam, double z0) {
    auto t = Tensor<double>::zeros({2, cam.height, cam.width});
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
            const Vec3 p = cam.unproject(u, v, z0);
            t.value()[static_cast<std::size_t>(v) * cam.width + u] = 0.8 * p.x + 0.2 * p.y;
            t.value()[static_cast<std::size_t>((cam.height + v)) * cam.width + u] =
                -0.3 * p.x + 0.9 * p.y + 0.5;
        }
    return t;
}

// loop reference: per-pixel variance across views through each depth plane
std::vector<double> ref_cost(const Tensor<double>& ref, const std::vector<Tensor<double>>& srcs,
                             const Camera& rc, const std::vector<Camera>& scs,
                             const DepthNetConfig& cfg) {
    const int C = ref.dim(0), H = ref.dim(1), W = ref.dim(2);
    const auto hyp = cfg.hypotheses();
    std::vector<double> cost(static_cast<std::size_t>(cfg.planes) * H * W);
    for (int d = 0; d < cfg.planes; ++d)
        for (int v = 0; v < H; ++v)
            for (int u = 0; u < W; ++u) {
                const Vec3 world = rc.unproject(u, v, hyp[static_cast<std::size_t>(d)]);
                double mean_c = 0.0;
                for (int c = 0; c < C; ++c) {
                    std::vector<double> xs;
                    xs.push_back(ref.value()[(static_cast<std::size_t>(c) * H + v) * W + u]);
                    for (std::size_t s = 0; s < srcs.size(); ++s) {
                        const auto pr = scs[s].project(world);
                        const int sh = srcs[s].dim(1), sw = srcs[s].dim(2);
                        double xv = 0.0;
                        if (pr.valid && pr.z > 0 && pr.u >= 0 && pr.u <= sw - 1 && pr.v >= 0 &&
                            pr.v <= sh - 1) {
                            int x0 = std::min(static_cast<int>(std::floor(pr.u)), sw - 2);
                            int y0 = std::min(static_cast<int>(std::floor(pr.v)), sh - 2);
                            const double fx = pr.u - x0, fy = pr.v - y0;
                            auto at = [&](int yy, int xx) {
                                return srcs[s].value()[(static_cast<std::size_t>(c) * sh + yy) * sw + xx];
                            };
                            xv = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                 fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                        }
                        xs.push_back(xv);
                    }
                    double m = 0.0;
                    for (double x : xs) m += x;
                    m /= static_cast<double>(xs.size());
                    double var = 0.0;
                    for (double x : xs) var += (x - m) * (x - m);
                    mean_c += var / static_cast<double>(xs.size());
                }
                cost[(static_cast<std::size_t>(d) * H + v) * W + u] = mean_c / C;
            }
    return cost;
}

}  // namespace

TEST_CASE("depth config validates its range and spaces hypotheses uniformly") {
    DepthNetConfig cfg;
    REQUIRE(cfg.planes == 128);
    cfg.planes = 5;
    cfg.d_min = 1.0;
    cfg.d_max = 3.0;
    auto h = cfg.hypotheses();
    REQUIRE(h.size() == 5);
    REQUIRE(h.front() == 1.0);
    REQUIRE(h.back() == 3.0);
    REQUIRE(h[2] == Catch::Approx(2.0).margin(1e-15));

    DepthNetConfig bad = cfg;
    bad.planes = 1;
    REQUIRE_THROWS_AS(bad.validate(), NumericError);
    bad = cfg;
    bad.d_min = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), NumericError);
    bad = cfg;
    bad.d_max = bad.d_min;
    REQUIRE_THROWS_AS(bad.validate(), NumericError);
}

TEST_CASE("cost volume vanishes for identical cameras and features") {
    Rng rng(3);
    Camera cam = frontal_cam(8, 7);
    auto feats = random_feats(4, 7, 8, rng);
    DepthNetConfig cfg;
    cfg.planes = 5;
    cfg.d_min = 1.0;
    cfg.d_max = 4.0;
    auto same = Tensor<double>::from(feats.shape(), feats.value());
    auto cost = build_cost_volume(feats, {same}, cam, {cam}, cfg);
    REQUIRE(cost.shape() == Shape{5, 7, 8});
    for (double v : cost.value()) REQUIRE(std::abs(v) < 1e-12);
}

TEST_CASE("cost volume rejects bad inputs") {
    Camera cam = frontal_cam(6, 6);
    auto feats = Tensor<double>::zeros({2, 6, 6});
    DepthNetConfig cfg;
    cfg.planes = 3;
    REQUIRE_THROWS_AS(build_cost_volume(feats, {}, cam, {}, cfg), ShapeError);
    REQUIRE_THROWS_AS(build_cost_volume(feats, {feats}, cam, {cam, cam}, cfg), ShapeError);
    REQUIRE_THROWS_AS(build_cost_volume(feats, {Tensor<double>::zeros({3, 6, 6})}, cam, {cam}, cfg),
                      ShapeError);
    Camera small = frontal_cam(4, 4);
    REQUIRE_THROWS_AS(build_cost_volume(feats, {feats}, small, {cam}, cfg), ShapeError);
    REQUIRE_THROWS_AS(build_cost_volume(feats, {feats}, cam, {small}, cfg), ShapeError);
}

TEST_CASE("cost volume matches a loop reference on random views") {
    Rng rng(5);
    Camera rc = frontal_cam(7, 6, 12.0);
    Camera s0 = shifted_cam(rc, 0.25, -0.1);
    Camera s1 = shifted_cam(rc, -0.3, 0.15);
    auto ref = random_feats(3, 6, 7, rng);
    auto f0 = random_feats(3, 6, 7, rng);
    auto f1 = random_feats(3, 6, 7, rng);
    DepthNetConfig cfg;
    cfg.planes = 4;
    cfg.d_min = 1.0;
    cfg.d_max = 3.5;
    auto cost = build_cost_volume(ref, {f0, f1}, rc, {s0, s1}, cfg);
    auto want = ref_cost(ref, {f0, f1}, rc, {s0, s1}, cfg);
    REQUIRE(cost.numel() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        REQUIRE(cost.value()[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("a textured plane carves its cost minimum at the true depth plane") {
    const double z0 = 2.0;
    Camera rc = frontal_cam(16, 16);
    Camera sc = shifted_cam(rc, 0.1, 0.0);
    auto ref = plane_feats(rc, z0);
    auto src = plane_feats(sc, z0);
    DepthNetConfig cfg;
    cfg.planes = 7;
    cfg.d_min = 1.0;
    cfg.d_max = 4.0;  // hypothesis 2 sits exactly at z0 = 2.0
    auto cost = build_cost_volume(ref, {src}, rc, {sc}, cfg);
    const std::size_t hw = 16 * 16;
    for (int v = 4; v < 12; ++v)
        for (int u = 4; u < 12; ++u) {
            const std::size_t q = static_cast<std::size_t>(v) * 16 + u;
            int best = 0;
            double bc = cost.value()[q];
            for (int d = 1; d < 7; ++d)
                if (cost.value()[static_cast<std::size_t>(d) * hw + q] < bc) {
                    bc = cost.value()[static_cast<std::size_t>(d) * hw + q];
                    best = d;
                }
            REQUIRE(best == 2);
            // exact up to the cancellation roundoff of the variance formula
            REQUIRE(bc < 1e-15);
        }
}

TEST_CASE("cost volume gradients pass finite differences") {
    Rng rng(7);
    Camera rc = frontal_cam(5, 5, 8.0);
    Camera s0 = shifted_cam(rc, 0.2, 0.05);
    Camera s1 = shifted_cam(rc, -0.15, -0.1);
    auto ref = random_feats(2, 5, 5, rng);
    auto f0 = random_feats(2, 5, 5, rng);
    auto f1 = random_feats(2, 5, 5, rng);
    DepthNetConfig cfg;
    cfg.planes = 3;
    cfg.d_min = 1.0;
    cfg.d_max = 2.5;
    // weight the volume so every cell sees a distinct upstream gradient
    auto wsum = Tensor<double>::zeros({3, 5, 5});
    for (std::size_t i = 0; i < wsum.numel(); ++i) wsum.value()[i] = 0.1 + 0.01 * static_cast<double>(i);
    auto f = [&]() {
        auto cost = build_cost_volume(ref, {f0, f1}, rc, {s0, s1}, cfg);
        return reduce_sum(mul(cost, wsum));
    };
    auto res = grad_check<double>(f, {{"ref", ref}, {"f0", f0}, {"f1", f1}}, rng, 1e-6, 12);
    INFO(res.worst);
    REQUIRE(res.ok(1e-4));
}

TEST_CASE("depth regression is a normalized soft argmin over hypotheses") {
    DepthNetConfig cfg;
    cfg.planes = 9;
    cfg.d_min = 1.0;
    cfg.d_max = 5.0;
    ParameterStore<double> store;
    Rng rng(11);
    DepthRegressor<double> net(store, "depth", rng);

    // constant cost: the fresh regularizer is residual-free, so P is uniform
    // and the soft argmin sits at the range midpoint
    auto flat = Tensor<double>::filled({9, 6, 6}, 0.37);
    auto res = regress_depth(flat, cfg, net);
    REQUIRE(res.depth.shape() == Shape{6, 6});
    REQUIRE(res.prob.shape() == Shape{9, 6, 6});
    for (double v : res.depth.value()) REQUIRE(v == Catch::Approx(3.0).margin(1e-9));

    // a deep notch at one hypothesis concentrates P there
    auto notch = Tensor<double>::filled({9, 6, 6}, 5.0);
    for (std::size_t q = 0; q < 36; ++q) notch.value()[static_cast<std::size_t>(4) * 36 + q] = 0.0;
    auto peak = regress_depth(notch, cfg, net);
    for (double v : peak.depth.value()) REQUIRE(v == Catch::Approx(3.0).margin(1e-6));
    for (std::size_t q = 0; q < 36; ++q)
        REQUIRE(peak.prob.value()[static_cast<std::size_t>(4) * 36 + q] ==
                Catch::Approx(1.0).margin(1e-6));

    // normalization and range bounds on a random volume
    Rng vr(13);
    auto vol = Tensor<double>::zeros({9, 6, 6});
    for (auto& v : vol.value()) v = vr.uniform(0.0, 3.0);
    auto rnd = regress_depth(vol, cfg, net);
    for (std::size_t q = 0; q < 36; ++q) {
        double sum = 0.0;
        for (int k = 0; k < 9; ++k) sum += rnd.prob.value()[static_cast<std::size_t>(k) * 36 + q];
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-5));
        REQUIRE(rnd.depth.value()[q] >= cfg.d_min);
        REQUIRE(rnd.depth.value()[q] <= cfg.d_max);
    }
}

TEST_CASE("depth regression gradients reach the regularizer parameters") {
    DepthNetConfig cfg;
    cfg.planes = 4;
    cfg.d_min = 1.0;
    cfg.d_max = 2.2;
    ParameterStore<double> store;
    Rng rng(17);
    DepthRegressor<double> net(store, "depth", rng);
    auto cost = Tensor<double>::zeros({4, 5, 5});
    for (auto& v : cost.value()) v = rng.uniform(0.0, 1.0);
    auto f = [&]() {
        auto res = regress_depth(cost, cfg, net);
        return reduce_mean(mul(res.depth, res.depth));
    };
    std::vector<std::pair<std::string, Tensor<double>>> leaves{{"cost", cost}};
    for (auto& [name, t] : store.all()) leaves.emplace_back(name, t);
    auto res = grad_check<double>(f, leaves, rng, 1e-6, 6);
    INFO(res.worst);
    REQUIRE(res.ok(1e-4));
}

TEST_CASE("probability map sums the hypotheses bracketing the depth") {
    DepthNetConfig cfg;
    cfg.planes = 128;
    cfg.d_min = 1.0;
    cfg.d_max = 2.27;
    const int H = 3, W = 4;

    // uniform volume: exactly four hypotheses, each carrying 1/128
    auto uni = Tensor<double>::filled({128, H, W}, 1.0 / 128.0);
    auto mid = Tensor<double>::filled({H, W}, 0.5 * (cfg.d_min + cfg.d_max));
    auto p = probability_map(uni, mid, cfg);
    REQUIRE(p.shape() == Shape{H, W});
    for (double v : p.value()) REQUIRE(v == 0.03125);

    // range edges truncate the window to three hypotheses
    auto lo = Tensor<double>::filled({H, W}, cfg.d_min);
    auto p_lo = probability_map(uni, lo, cfg);
    for (double v : p_lo.value()) REQUIRE(v == Catch::Approx(3.0 / 128.0).margin(1e-15));
    auto hi = Tensor<double>::filled({H, W}, cfg.d_max + 5.0);  // clamped into range
    auto p_hi = probability_map(uni, hi, cfg);
    for (double v : p_hi.value()) REQUIRE(v == Catch::Approx(3.0 / 128.0).margin(1e-15));

    // one-hot and split-pair volumes are fully captured
    DepthNetConfig small;
    small.planes = 8;
    small.d_min = 1.0;
    small.d_max = 8.0;  // hypothesis k sits at depth k+1
    auto onehot = Tensor<double>::zeros({8, H, W});
    for (std::size_t q = 0; q < H * W; ++q) onehot.value()[static_cast<std::size_t>(4) * H * W + q] = 1.0;
    auto d4 = Tensor<double>::filled({H, W}, 5.0);
    auto p_hot = probability_map(onehot, d4, small);
    for (double v : p_hot.value()) REQUIRE(v == 1.0);

    auto split = Tensor<double>::zeros({8, H, W});
    for (std::size_t q = 0; q < H * W; ++q) {
        split.value()[static_cast<std::size_t>(3) * H * W + q] = 0.5;
        split.value()[static_cast<std::size_t>(4) * H * W + q] = 0.5;
    }
    auto d35 = Tensor<double>::filled({H, W}, 4.5);
    auto p_split = probability_map(split, d35, small);
    for (double v : p_split.value()) REQUIRE(v == 1.0);

    REQUIRE_THROWS_AS(probability_map(onehot, Tensor<double>::zeros({W, H}), small), ShapeError);
}

TEST_CASE("probability map gradients flow into the volume") {
    DepthNetConfig cfg;
    cfg.planes = 6;
    cfg.d_min = 1.0;
    cfg.d_max = 2.0;
    Rng rng(19);
    auto vol = Tensor<double>::zeros({6, 4, 4});
    for (auto& v : vol.value()) v = rng.uniform(0.0, 1.0);
    auto depth = Tensor<double>::zeros({4, 4});
    for (auto& v : depth.value()) v = rng.uniform(cfg.d_min, cfg.d_max);
    // the bracketing windows come from the (fixed) depth input, so the map is
    // linear in the volume and the check probes that path only
    auto wsum = Tensor<double>::zeros({4, 4});
    for (std::size_t i = 0; i < wsum.numel(); ++i) wsum.value()[i] = 0.2 + 0.05 * static_cast<double>(i);
    auto f = [&]() { return reduce_sum(mul(probability_map(vol, depth, cfg), wsum)); };
    auto res = grad_check<double>(f, {{"vol", vol}}, rng, 1e-6, 8);
    INFO(res.worst);
    REQUIRE(res.ok(1e-4));
}
