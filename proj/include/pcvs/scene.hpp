#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pcvs/camera.hpp"
#include "pcvs/common.hpp"
#include "pcvs/image_io.hpp"
#include "pcvs/rng.hpp"
#include "pcvs/tensor.hpp"

namespace pcvs {

// Procedural test scenes: textured primitives ray-cast into a posed camera
// rig. Everything is seeded and analytic — depth maps are exact intersection
// distances, colours are view-independent albedo — so generated directories
// double as ground truth for the renderer, the warp and the depth estimator.
//
// A scene directory holds scene.json (cameras, filenames, depth range,
// primitive geometry) plus view_XX.png / depth_XX.pfm per view. The target
// view comes last; its depth map is written too, but only oracles may read it.

// ---------------------------------------------------------------------------
// textures

enum class TextureKind { checker, noise };

struct Texture {
    TextureKind kind = TextureKind::checker;
    double scale = 1.0;  // feature size in world units
    Vec3 color_a{0.9, 0.9, 0.9};
    Vec3 color_b{0.1, 0.1, 0.1};
    std::uint64_t salt = 0;  // decorrelates noise between primitives
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double lattice_hash(std::int64_t ix, std::int64_t iy, std::int64_t iz, std::uint64_t salt) {
    std::uint64_t h = splitmix64(salt ^ 0x8f1bbcdcbfa53e0bull);
    h = splitmix64(h ^ static_cast<std::uint64_t>(ix));
    h = splitmix64(h ^ static_cast<std::uint64_t>(iy));
    h = splitmix64(h ^ static_cast<std::uint64_t>(iz));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Smooth (C1) trilinear value noise in [0,1], lattice spacing 1.
inline double value_noise(const Vec3& p, std::uint64_t salt) {
    const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy),
               iz = static_cast<std::int64_t>(fz);
    auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double tx = fade(p.x - fx), ty = fade(p.y - fy), tz = fade(p.z - fz);
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                acc += w * lattice_hash(ix + dx, iy + dy, iz + dz, salt);
            }
    return acc;
}

}  // namespace detail

/// Albedo at a surface point. Solid (3-D) textures keep colours consistent
/// across views without any surface parameterisation.
inline Vec3 texture_albedo(const Texture& tex, const Vec3& X) {
    if (tex.kind == TextureKind::checker) {
        // fixed irrational-ish offset so primitives placed at round coordinates
        // don't land exactly on cell boundaries
        const double off = 37.1290417;
        const auto cell = static_cast<std::int64_t>(std::floor((X.x + off) / tex.scale)) +
                          static_cast<std::int64_t>(std::floor((X.y + off) / tex.scale)) +
                          static_cast<std::int64_t>(std::floor((X.z + off) / tex.scale));
        return (cell & 1) ? tex.color_b : tex.color_a;
    }
    // two octaves of smooth value noise; band-limited enough that bilinear
    // resampling between views stays accurate
    const double n1 = detail::value_noise(X * (1.0 / tex.scale), tex.salt);
    const double n2 = detail::value_noise(X * (2.17 / tex.scale) + Vec3{11.3, 7.9, 3.1},
                                          tex.salt ^ 0x9e3779b97f4a7c15ull);
    const double n = 0.62 * n1 + 0.38 * n2;
    return tex.color_a + (tex.color_b - tex.color_a) * n;
}

// ---------------------------------------------------------------------------
// primitives

struct Primitive {
    enum class Kind { plane, sphere, box };
    Kind kind = Kind::sphere;
    Vec3 center;
    // plane: finite rectangle spanned by unit axes u_axis/v_axis with half
    // extents half.x/half.y. box: axis-aligned with half extents half.
    Vec3 u_axis{1, 0, 0}, v_axis{0, 1, 0};
    Vec3 half{1, 1, 1};
    double radius = 1.0;  // sphere
    Texture tex;
    // environment pieces (backdrop, ground) exist to guarantee full pixel
    // coverage and are exempt from the per-camera visibility requirement
    bool subject = true;
};

/// Ray/primitive intersection. `d` need not be unit length: the returned t is
/// in units of |d|, which for camera rays (unit z in camera space) makes t the
/// camera-space depth directly.
inline bool intersect(const Primitive& p, const Vec3& o, const Vec3& d, double& t_out) {
    constexpr double kEps = 1e-9;
    switch (p.kind) {
        case Primitive::Kind::plane: {
            const Vec3 n = p.u_axis.cross(p.v_axis);
            const double denom = n.dot(d);
            if (std::abs(denom) < 1e-12) return false;
            const double t = n.dot(p.center - o) / denom;
            if (t <= kEps) return false;
            const Vec3 q = o + d * t - p.center;
            if (std::abs(q.dot(p.u_axis)) > p.half.x || std::abs(q.dot(p.v_axis)) > p.half.y)
                return false;
            t_out = t;
            return true;
        }
        case Primitive::Kind::sphere: {
            const Vec3 oc = o - p.center;
            const double a = d.dot(d);
            const double b = 2.0 * oc.dot(d);
            const double c = oc.dot(oc) - p.radius * p.radius;
            const double disc = b * b - 4.0 * a * c;
            if (disc < 0) return false;
            const double sq = std::sqrt(disc);
            double t = (-b - sq) / (2.0 * a);
            if (t <= kEps) t = (-b + sq) / (2.0 * a);
            if (t <= kEps) return false;
            t_out = t;
            return true;
        }
        case Primitive::Kind::box: {
            double tnear = -1e30, tfar = 1e30;
            const double od[3] = {o.x - p.center.x, o.y - p.center.y, o.z - p.center.z};
            const double dd[3] = {d.x, d.y, d.z};
            const double hh[3] = {p.half.x, p.half.y, p.half.z};
            for (int a = 0; a < 3; ++a) {
                if (std::abs(dd[a]) < 1e-12) {
                    if (std::abs(od[a]) > hh[a]) return false;
                    continue;
                }
                double t1 = (-hh[a] - od[a]) / dd[a];
                double t2 = (hh[a] - od[a]) / dd[a];
                if (t1 > t2) std::swap(t1, t2);
                tnear = std::max(tnear, t1);
                tfar = std::min(tfar, t2);
            }
            if (tnear > tfar || tfar <= kEps) return false;
            t_out = tnear > kEps ? tnear : tfar;
            return true;
        }
    }
    return false;
}

/// Unsigned distance from a point to the primitive's surface.
inline double surface_distance(const Primitive& p, const Vec3& X) {
    switch (p.kind) {
        case Primitive::Kind::plane: {
            const Vec3 n = p.u_axis.cross(p.v_axis);
            const Vec3 q = X - p.center;
            const double a = std::max(std::abs(q.dot(p.u_axis)) - p.half.x, 0.0);
            const double b = std::max(std::abs(q.dot(p.v_axis)) - p.half.y, 0.0);
            const double c = q.dot(n);
            return std::sqrt(a * a + b * b + c * c);
        }
        case Primitive::Kind::sphere:
            return std::abs((X - p.center).norm() - p.radius);
        case Primitive::Kind::box: {
            const double qx = std::abs(X.x - p.center.x) - p.half.x;
            const double qy = std::abs(X.y - p.center.y) - p.half.y;
            const double qz = std::abs(X.z - p.center.z) - p.half.z;
            const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
            const double outside = std::sqrt(ox * ox + oy * oy + oz * oz);
            const double inside = std::min(std::max(qx, std::max(qy, qz)), 0.0);
            return std::abs(outside + inside);
        }
    }
    return 0;
}

inline double surface_distance(const std::vector<Primitive>& prims, const Vec3& X) {
    double best = 1e30;
    for (const auto& p : prims) best = std::min(best, surface_distance(p, X));
    return best;
}

/// Deterministic points on the primitive surface with outward normals, used
/// for the camera visibility check.
inline void surface_samples(const Primitive& p, std::vector<Vec3>& points, std::vector<Vec3>& normals) {
    points.clear();
    normals.clear();
    switch (p.kind) {
        case Primitive::Kind::plane: {
            const Vec3 n = p.u_axis.cross(p.v_axis);
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j) {
                    const double a = (2.0 * (i + 0.5) / 8.0 - 1.0) * p.half.x;
                    const double b = (2.0 * (j + 0.5) / 8.0 - 1.0) * p.half.y;
                    points.push_back(p.center + p.u_axis * a + p.v_axis * b);
                    normals.push_back(n);  // thin sheet: either side counts as facing
                }
            break;
        }
        case Primitive::Kind::sphere: {
            // Fibonacci sphere
            const int n = 128;
            const double ga = 2.399963229728653;  // golden angle
            for (int i = 0; i < n; ++i) {
                const double z = 1.0 - 2.0 * (i + 0.5) / n;
                const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
                const double phi = ga * i;
                const Vec3 dir{r * std::cos(phi), r * std::sin(phi), z};
                points.push_back(p.center + dir * p.radius);
                normals.push_back(dir);
            }
            break;
        }
        case Primitive::Kind::box: {
            for (int axis = 0; axis < 3; ++axis)
                for (int sign = -1; sign <= 1; sign += 2)
                    for (int i = 0; i < 4; ++i)
                        for (int j = 0; j < 4; ++j) {
                            const double a = 2.0 * (i + 0.5) / 4.0 - 1.0;
                            const double b = 2.0 * (j + 0.5) / 4.0 - 1.0;
                            Vec3 q, n;
                            const double h[3] = {p.half.x, p.half.y, p.half.z};
                            double qa[3];
                            qa[axis] = sign * h[axis];
                            qa[(axis + 1) % 3] = a * h[(axis + 1) % 3];
                            qa[(axis + 2) % 3] = b * h[(axis + 2) % 3];
                            q = {qa[0], qa[1], qa[2]};
                            double na[3] = {0, 0, 0};
                            na[axis] = sign;
                            n = {na[0], na[1], na[2]};
                            points.push_back(p.center + q);
                            normals.push_back(n);
                        }
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// ray casting

struct RenderedView {
    Tensor<double> image;  // [3,H,W]
    Tensor<double> depth;  // [H,W], camera-space z of the nearest hit
    bool complete = true;  // every pixel hit some primitive
};

inline RenderedView render_view(const std::vector<Primitive>& prims, const Camera& cam) {
    RenderedView out;
    const int h = cam.height, w = cam.width;
    out.image = Tensor<double>::zeros({3, h, w});
    out.depth = Tensor<double>::zeros({h, w});
    const Vec3 o = cam.center();
    auto& img = out.image.value();
    auto& dep = out.depth.value();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec3 d = cam.ray_dir(x, y);
            double best = 1e30;
            const Primitive* hit = nullptr;
            for (const auto& p : prims) {
                double t;
                if (intersect(p, o, d, t) && t < best) {
                    best = t;
                    hit = &p;
                }
            }
            if (!hit) {
                out.complete = false;
                continue;
            }
            const Vec3 X = o + d * best;
            const Vec3 c = texture_albedo(hit->tex, X);
            const std::size_t px = static_cast<std::size_t>(y * w + x);
            img[0 * static_cast<std::size_t>(h * w) + px] = std::clamp(c.x, 0.0, 1.0);
            img[1 * static_cast<std::size_t>(h * w) + px] = std::clamp(c.y, 0.0, 1.0);
            img[2 * static_cast<std::size_t>(h * w) + px] = std::clamp(c.z, 0.0, 1.0);
            dep[px] = best;
        }
    return out;
}

// ---------------------------------------------------------------------------
// scene specification and generation

struct SceneSpec {
    int width = 64, height = 64;
    int n_sources = 2;            // target view is generated on top of these
    std::string preset = "bench";  // "bench": occluders over ground+backdrop; "wedge": one smooth slab
    double depth_noise = 0.0;      // stddev of source depth perturbation, fraction of depth range
    std::uint64_t seed = 1;

    void validate() const {
        if (width < 8 || height < 8) throw NumericError("scene: resolution must be at least 8x8");
        if (n_sources < 2) throw NumericError("scene: need at least 2 source views");
        if (preset != "bench" && preset != "wedge")
            throw NumericError("scene: unknown preset '" + preset + "'");
        if (depth_noise < 0) throw NumericError("scene: depth_noise must be non-negative");
    }
};

/// Everything about a generated or loaded scene. Views are ordered sources
/// first, target last. Target depth exists for oracles only — the pipeline
/// must never consume it.
template <typename T>
struct SceneSample {
    int width = 0, height = 0;
    int target = 0;
    double d_min = 0, d_max = 0;
    std::vector<Tensor<T>> images;  // [3,H,W] in [0,1]
    std::vector<Tensor<T>> depths;  // [H,W]
    std::vector<Camera> cams;
    std::vector<Primitive> prims;  // geometry only (textures not reloaded)

    std::vector<int> sources() const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(cams.size()); ++i)
            if (i != target) out.push_back(i);
        return out;
    }
};

namespace detail {

inline Vec3 palette_color(Rng& rng) {
    static const Vec3 palette[] = {
        {0.92, 0.30, 0.25}, {0.25, 0.55, 0.90}, {0.95, 0.80, 0.25}, {0.30, 0.75, 0.40},
        {0.85, 0.45, 0.75}, {0.95, 0.95, 0.92}, {0.20, 0.22, 0.28}, {0.60, 0.40, 0.20},
    };
    return palette[rng.uniform_int(8)];
}

inline std::vector<Primitive> bench_primitives(Rng& rng) {
    std::vector<Primitive> prims;

    Primitive backdrop;
    backdrop.kind = Primitive::Kind::plane;
    backdrop.center = {0, 0, rng.uniform(5.6, 6.4)};
    backdrop.u_axis = {1, 0, 0};
    backdrop.v_axis = {0, 1, 0};
    backdrop.half = {14, 14, 0};
    backdrop.subject = false;
    backdrop.tex.kind = TextureKind::checker;
    backdrop.tex.scale = rng.uniform(0.7, 1.1);
    backdrop.tex.color_a = palette_color(rng);
    backdrop.tex.color_b = palette_color(rng) * 0.35;
    prims.push_back(backdrop);

    Primitive ground;
    ground.kind = Primitive::Kind::plane;
    // image-down is world −y under the look_at convention, so the floor sits at negative y
    ground.center = {0, rng.uniform(-1.5, -1.1), 3.0};
    ground.u_axis = {1, 0, 0};
    ground.v_axis = {0, 0, 1};
    ground.half = {14, 14, 0};
    ground.subject = false;
    ground.tex.kind = TextureKind::noise;
    ground.tex.scale = rng.uniform(0.5, 0.9);
    ground.tex.color_a = palette_color(rng);
    ground.tex.color_b = palette_color(rng);
    ground.tex.salt = rng.next_u64();
    prims.push_back(ground);

    Primitive ball;
    ball.kind = Primitive::Kind::sphere;
    ball.radius = rng.uniform(0.4, 0.6);
    ball.center = {rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3), rng.uniform(2.8, 3.3)};
    ball.tex.kind = TextureKind::noise;
    ball.tex.scale = rng.uniform(0.35, 0.6);
    ball.tex.color_a = palette_color(rng);
    ball.tex.color_b = palette_color(rng);
    ball.tex.salt = rng.next_u64();
    prims.push_back(ball);

    Primitive block;
    block.kind = Primitive::Kind::box;
    for (int tries = 0; tries < 64; ++tries) {
        block.half = {rng.uniform(0.25, 0.42), rng.uniform(0.25, 0.42), rng.uniform(0.25, 0.42)};
        block.center = {rng.uniform(-0.6, 0.6), rng.uniform(-0.4, 0.25), rng.uniform(2.5, 3.5)};
        const double sep = (block.center - ball.center).norm();
        if (sep > ball.radius + std::max({block.half.x, block.half.y, block.half.z})) break;
    }
    block.tex.kind = TextureKind::checker;
    block.tex.scale = rng.uniform(0.18, 0.3);
    block.tex.color_a = palette_color(rng);
    block.tex.color_b = palette_color(rng);
    prims.push_back(block);

    return prims;
}

inline std::vector<Primitive> wedge_primitives(Rng& rng) {
    // One big tilted slab with a smooth texture: no silhouettes, smooth depth.
    Primitive slab;
    slab.kind = Primitive::Kind::plane;
    slab.center = {0, 0, rng.uniform(2.6, 3.2)};
    const double yaw = rng.uniform(0.26, 0.52) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const double pitch = rng.uniform(-0.14, 0.14);
    const Vec3 n{std::sin(yaw) * std::cos(pitch), std::sin(pitch), -std::cos(yaw) * std::cos(pitch)};
    Vec3 u = n.cross({0, 1, 0}).normalized();
    slab.u_axis = u;
    slab.v_axis = n.cross(u).normalized();
    slab.half = {18, 18, 0};
    slab.subject = false;
    slab.tex.kind = TextureKind::noise;
    slab.tex.scale = rng.uniform(0.55, 0.8);
    slab.tex.color_a = palette_color(rng);
    slab.tex.color_b = palette_color(rng);
    slab.tex.salt = rng.next_u64();
    return {slab};
}

/// Source offsets along the rig axis in units of the baseline: −1,+1,−2,+2,…
inline double rig_offset(int k) {
    const int step = k / 2 + 1;
    return (k % 2 == 0) ? -static_cast<double>(step) : static_cast<double>(step);
}

inline std::vector<Camera> draw_rig(Rng& rng, const SceneSpec& spec, const Vec3& aim_center) {
    const double f = 1.0 * spec.width;  // ~53 degree horizontal field of view
    const double baseline = rng.uniform(0.14, 0.22);
    std::vector<Camera> cams;
    for (int k = 0; k < spec.n_sources + 1; ++k) {
        const bool is_target = k == spec.n_sources;
        const double off = is_target ? 0.0 : rig_offset(k) * baseline;
        const Vec3 eye{off + rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                       rng.uniform(-0.03, 0.03)};
        const Vec3 aim = aim_center + Vec3{rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06),
                                           rng.uniform(-0.04, 0.04)};
        cams.push_back(Camera::look_at(eye, aim, f, f, spec.width, spec.height));
    }
    return cams;
}

/// A camera "sees" a primitive when ≥80% of its camera-facing surface samples
/// land inside the image. Environment pieces are exempt.
inline bool rig_sees_subjects(const std::vector<Camera>& cams, const std::vector<Primitive>& prims) {
    std::vector<Vec3> pts, nrm;
    for (const auto& p : prims) {
        if (!p.subject) continue;
        surface_samples(p, pts, nrm);
        for (const auto& cam : cams) {
            const Vec3 c = cam.center();
            int facing = 0, seen = 0;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                const double toward = nrm[i].dot(c - pts[i]);
                const bool faces = p.kind == Primitive::Kind::plane ? true : toward > 0;
                if (!faces) continue;
                ++facing;
                const auto pr = cam.project(pts[i]);
                if (pr.valid && pr.z > 0 && pr.u >= 0 && pr.u <= cam.width - 1 && pr.v >= 0 &&
                    pr.v <= cam.height - 1)
                    ++seen;
            }
            if (facing == 0 || seen < 0.8 * facing) return false;
        }
    }
    return true;
}

}  // namespace detail

/// Build a scene in memory: draw geometry, rejection-sample a camera rig until
/// every subject is sufficiently visible and every pixel of every view hits
/// geometry, then ray-cast all views. Depth maps here are exact.
inline SceneSample<double> make_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Rng geo_rng = rng.fork(1);
    Rng cam_rng = rng.fork(2);

    SceneSample<double> out;
    out.width = spec.width;
    out.height = spec.height;
    out.target = spec.n_sources;
    out.prims = spec.preset == "wedge" ? detail::wedge_primitives(geo_rng)
                                       : detail::bench_primitives(geo_rng);
    const Vec3 aim_center{0, 0, 3.0};

    std::vector<RenderedView> views;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        // a hopeless geometry draw should not burn the whole camera budget
        if (attempt > 0 && attempt % 250 == 0)
            out.prims = spec.preset == "wedge" ? detail::wedge_primitives(geo_rng)
                                               : detail::bench_primitives(geo_rng);
        out.cams = detail::draw_rig(cam_rng, spec, aim_center);
        if (!detail::rig_sees_subjects(out.cams, out.prims)) continue;
        views.clear();
        ok = true;
        for (const auto& cam : out.cams) {
            views.push_back(render_view(out.prims, cam));
            if (!views.back().complete) {
                ok = false;
                break;
            }
        }
    }
    if (!ok) throw NumericError("make_scene: no acceptable camera rig in 1000 tries");

    double dmin = 1e30, dmax = 0;
    for (const auto& v : views)
        for (double d : v.depth.value()) {
            dmin = std::min(dmin, d);
            dmax = std::max(dmax, d);
        }
    out.d_min = 0.95 * dmin;
    out.d_max = 1.05 * dmax;
    for (auto& v : views) {
        out.images.push_back(v.image);
        out.depths.push_back(v.depth);
    }
    return out;
}

/// Corrupt the stored source depths with seeded Gaussian noise (stddev =
/// depth_noise × depth range). The target's depth stays exact: it is the
/// evaluation oracle, never a pipeline input.
inline void apply_depth_noise(SceneSample<double>& scene, double depth_noise, std::uint64_t seed) {
    if (depth_noise <= 0) return;
    Rng rng(seed ^ 0xd6e8feb86659fd93ull);
    const double sigma = depth_noise * (scene.d_max - scene.d_min);
    for (int i : scene.sources()) {
        auto& d = scene.depths[static_cast<std::size_t>(i)].value();
        for (auto& x : d) x = std::max(1e-3, x + sigma * rng.normal());
    }
}

// ---------------------------------------------------------------------------
// directory format

namespace detail {

inline std::string view_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "view_%02d", i);
    return buf;
}

inline nlohmann::ordered_json vec3_json(const Vec3& v) {
    return nlohmann::ordered_json::array({v.x, v.y, v.z});
}

inline Vec3 vec3_from(const nlohmann::json& a) { return {a.at(0), a.at(1), a.at(2)}; }

}  // namespace detail

/// Write a scene directory: scene.json + per-view PNG/PFM. Writing the same
/// in-memory scene twice produces byte-identical files.
inline void write_scene(const std::string& dir, const SceneSample<double>& scene,
                        const SceneSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::ordered_json j;
    j["width"] = scene.width;
    j["height"] = scene.height;
    j["seed"] = spec.seed;
    j["preset"] = spec.preset;
    j["depth_noise"] = spec.depth_noise;
    j["target"] = scene.target;
    j["depth_range"] = {scene.d_min, scene.d_max};
    auto views = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < scene.cams.size(); ++i) {
        const auto& cam = scene.cams[i];
        const std::string name = detail::view_name(static_cast<int>(i));
        nlohmann::ordered_json v;
        v["image"] = name + ".png";
        v["depth"] = "depth_" + name.substr(5) + ".pfm";
        v["K"] = {cam.fx, 0.0, cam.cx, 0.0, cam.fy, cam.cy, 0.0, 0.0, 1.0};
        auto w2c = nlohmann::ordered_json::array();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) w2c.push_back(cam.R.m[static_cast<std::size_t>(r * 3 + c)]);
            w2c.push_back(r == 0 ? cam.t.x : r == 1 ? cam.t.y : cam.t.z);
        }
        for (double x : {0.0, 0.0, 0.0, 1.0}) w2c.push_back(x);
        v["w2c"] = w2c;
        views.push_back(v);
        write_png(dir + "/" + name + ".png", scene.images[i]);
        write_pfm(dir + "/depth_" + name.substr(5) + ".pfm", scene.depths[i]);
    }
    j["views"] = views;
    auto prims = nlohmann::ordered_json::array();
    for (const auto& p : scene.prims) {
        nlohmann::ordered_json pj;
        switch (p.kind) {
            case Primitive::Kind::plane:
                pj["kind"] = "plane";
                pj["center"] = detail::vec3_json(p.center);
                pj["u_axis"] = detail::vec3_json(p.u_axis);
                pj["v_axis"] = detail::vec3_json(p.v_axis);
                pj["half"] = {p.half.x, p.half.y};
                break;
            case Primitive::Kind::sphere:
                pj["kind"] = "sphere";
                pj["center"] = detail::vec3_json(p.center);
                pj["radius"] = p.radius;
                break;
            case Primitive::Kind::box:
                pj["kind"] = "box";
                pj["center"] = detail::vec3_json(p.center);
                pj["half"] = {p.half.x, p.half.y, p.half.z};
                break;
        }
        prims.push_back(pj);
    }
    j["primitives"] = prims;
    std::ofstream f(dir + "/scene.json", std::ios::binary);
    if (!f) throw IoError("write_scene: cannot open " + dir + "/scene.json");
    f << j.dump(2) << "\n";
}

/// Generate and write one scene directory. Fully determined by the spec.
inline void generate_scene(const SceneSpec& spec, const std::string& dir) {
    auto scene = make_scene(spec);
    apply_depth_noise(scene, spec.depth_noise, spec.seed);
    write_scene(dir, scene, spec);
}

template <typename T>
SceneSample<T> load_scene(const std::string& dir) {
    const std::string json_path = dir + "/scene.json";
    std::ifstream f(json_path, std::ios::binary);
    if (!f) throw IoError("load_scene: cannot open " + json_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("scene.json: parse error: " + std::string(e.what()));
    }
    auto need = [&](const char* field) -> const nlohmann::json& {
        if (!j.contains(field))
            throw IoError("scene.json: field '" + std::string(field) + "' not found");
        return j.at(field);
    };
    SceneSample<T> out;
    out.width = need("width");
    out.height = need("height");
    out.target = need("target");
    const auto& range = need("depth_range");
    if (!range.is_array() || range.size() != 2)
        throw IoError("scene.json: field 'depth_range' must be [min, max]");
    out.d_min = range.at(0);
    out.d_max = range.at(1);
    if (!(out.d_min > 0 && out.d_max > out.d_min))
        throw IoError("scene.json: depth_range must satisfy 0 < min < max");
    const auto& views = need("views");
    if (!views.is_array() || views.size() < 2)
        throw IoError("scene.json: field 'views' must list at least two views");
    if (out.target < 0 || out.target >= static_cast<int>(views.size()))
        throw IoError("scene.json: target index out of range");

    for (std::size_t i = 0; i < views.size(); ++i) {
        const std::string name = detail::view_name(static_cast<int>(i));
        const auto& v = views.at(i);
        if (!v.contains("w2c")) throw IoError("scene.json: camera for " + name + " not found");
        if (!v.contains("K")) throw IoError("scene.json: intrinsics for " + name + " not found");
        const auto& K = v.at("K");
        const auto& w2c = v.at("w2c");
        if (!K.is_array() || K.size() != 9)
            throw IoError("scene.json: intrinsics for " + name + " must have 9 entries");
        if (!w2c.is_array() || w2c.size() != 16)
            throw IoError("scene.json: camera for " + name + " must have 16 entries");
        for (std::size_t k = 12; k < 16; ++k)
            if (static_cast<double>(w2c.at(k)) != (k == 15 ? 1.0 : 0.0))
                throw IoError("scene.json: camera for " + name + " is not a rigid transform");
        Camera cam;
        cam.fx = K.at(0);
        cam.fy = K.at(4);
        cam.cx = K.at(2);
        cam.cy = K.at(5);
        cam.width = out.width;
        cam.height = out.height;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                cam.R.m[static_cast<std::size_t>(r * 3 + c)] = w2c.at(static_cast<std::size_t>(r * 4 + c));
        cam.t = {w2c.at(3), w2c.at(7), w2c.at(11)};
        try {
            cam.validate();
        } catch (const NumericError& e) {
            throw IoError("scene.json: camera for " + name + ": " + e.what());
        }
        out.cams.push_back(cam);

        if (!v.contains("image") || !v.contains("depth"))
            throw IoError("scene.json: filenames for " + name + " not found");
        const std::string img_name = v.at("image");
        const std::string dep_name = v.at("depth");
        auto img = read_png<T>(dir + "/" + img_name);
        if (img.dim(1) != out.height || img.dim(2) != out.width)
            throw IoError(img_name + ": expected " + std::to_string(out.width) + "x" +
                          std::to_string(out.height));
        auto dep = read_pfm<T>(dir + "/" + dep_name);
        if (dep.dim(0) != out.height || dep.dim(1) != out.width)
            throw IoError(dep_name + ": expected " + std::to_string(out.width) + "x" +
                          std::to_string(out.height));
        for (T d : dep.value())
            if (!(d > 0) || !std::isfinite(static_cast<double>(d)))
                throw IoError(dep_name + ": depth must be positive and finite");
        out.images.push_back(std::move(img));
        out.depths.push_back(std::move(dep));
    }

    if (j.contains("primitives")) {
        for (const auto& pj : j.at("primitives")) {
            Primitive p;
            const std::string kind = pj.at("kind");
            p.center = detail::vec3_from(pj.at("center"));
            if (kind == "plane") {
                p.kind = Primitive::Kind::plane;
                p.u_axis = detail::vec3_from(pj.at("u_axis"));
                p.v_axis = detail::vec3_from(pj.at("v_axis"));
                p.half = {pj.at("half").at(0), pj.at("half").at(1), 0};
            } else if (kind == "sphere") {
                p.kind = Primitive::Kind::sphere;
                p.radius = pj.at("radius");
            } else if (kind == "box") {
                p.kind = Primitive::Kind::box;
                p.half = detail::vec3_from(pj.at("half"));
            } else {
                throw IoError("scene.json: unknown primitive kind '" + kind + "'");
            }
            out.prims.push_back(p);
        }
    }
    return out;
}

/// Generate `count` scene directories scene_000, scene_001, … under `root`.
inline std::vector<std::string> generate_scene_set(const SceneSpec& base, const std::string& root,
                                                   int count) {
    std::vector<std::string> dirs;
    for (int i = 0; i < count; ++i) {
        SceneSpec spec = base;
        spec.seed = detail::splitmix64(base.seed ^ (0x5851f42d4c957f2dull * static_cast<std::uint64_t>(i + 1)));
        char buf[32];
        std::snprintf(buf, sizeof buf, "scene_%03d", i);
        const std::string dir = root + "/" + buf;
        generate_scene(spec, dir);
        dirs.push_back(dir);
    }
    return dirs;
}

/// Scene directories under `root`, name-sorted (scene_000, scene_001, …).
inline std::vector<std::string> list_scene_dirs(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("scene root not found: " + root);
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "scene.json")) dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw IoError("no scene directories under " + root);
    return dirs;
}

}  // namespace pcvs
