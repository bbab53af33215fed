#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pcvs/rng.hpp"
#include "pcvs/tensor.hpp"

namespace pcvs {

template <typename T>
struct GradCheckResult {
    T max_rel_err = T(0);
    std::string worst;  // "tensor[index]" of the worst probe
    std::size_t probes = 0;
    std::size_t skipped = 0;  // probes where the finite difference itself was invalid

    bool ok(T tol) const { return max_rel_err < tol; }
};

/// Central-difference check of reverse-mode gradients. `f` must rebuild the
/// graph from the current leaf values and return the scalar loss. At most
/// `max_probes` entries per leaf are tested (all of them if the leaf is small
/// enough); probe positions are drawn deterministically from `rng`.
///
/// The relative-error denominator is floored: for near-zero gradients the
/// finite difference is dominated by roundoff and the ratio would be noise.
template <typename T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>()>& f,
                              std::vector<std::pair<std::string, Tensor<T>>> leaves, Rng& rng,
                              T eps = T(1e-5), int max_probes = 8, T denom_floor = T(1e-6)) {
    for (auto& [name, leaf] : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    Tensor<T> loss = f();
    backward(loss);

    std::vector<std::vector<T>> analytic(leaves.size());
    for (std::size_t li = 0; li < leaves.size(); ++li)
        analytic[li] = leaves[li].second.has_grad() ? leaves[li].second.grad_ref()
                                                    : std::vector<T>(leaves[li].second.numel(), T(0));

    GradCheckResult<T> res;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li].second;
        const std::size_t n = leaf.numel();
        std::vector<std::size_t> probe_at;
        if (n <= static_cast<std::size_t>(max_probes)) {
            for (std::size_t i = 0; i < n; ++i) probe_at.push_back(i);
        } else {
            auto picks = rng.sample_without_replacement(n, static_cast<std::size_t>(max_probes));
            probe_at.assign(picks.begin(), picks.end());
        }
        for (std::size_t i : probe_at) {
            const T saved = leaf.value()[i];
            auto eval_at = [&](T x) {
                leaf.value()[i] = x;
                return f().item();
            };
            const T fp = eval_at(saved + eps);
            const T fm = eval_at(saved - eps);
            const T fp2 = eval_at(saved + eps / 2);
            const T fm2 = eval_at(saved - eps / 2);
            leaf.value()[i] = saved;
            const T numeric = (fp - fm) / (T(2) * eps);
            const T numeric2 = (fp2 - fm2) / eps;
            const T a = analytic[li][i];
            // The model has hard selections (nearest neighbours, per-pixel splat
            // cutoffs): a probe interval that straddles one measures the jump, not
            // the derivative. For smooth probes the two step sizes agree to
            // O(eps^2); a flip makes them disagree by the contamination itself,
            // so inconsistent probes are rejected as invalid measurements.
            const T scale = std::max({std::abs(numeric), std::abs(numeric2), denom_floor});
            if (std::abs(numeric - numeric2) > T(5e-4) * scale) {
                ++res.skipped;
                continue;
            }
            const T denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
            const T rel = std::abs(a - numeric) / denom;
            ++res.probes;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                std::ostringstream os;
                os << leaves[li].first << "[" << i << "] analytic=" << a << " numeric=" << numeric;
                res.worst = os.str();
            }
        }
    }
    return res;
}

}  // namespace pcvs
