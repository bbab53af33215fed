#pragma once

#include <string>
#include <vector>

#include "pcvs/ops.hpp"
#include "pcvs/params.hpp"
#include "pcvs/rng.hpp"

namespace pcvs {

template <typename T>
Tensor<T> glorot_uniform(const Shape& shape, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor<T> t = Tensor<T>::zeros(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t.value()[i] = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

/// Fully connected layer; x: [R,in] -> [R,out].
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParameterStore<T>& store, const std::string& prefix, int in, int out, Rng& rng)
        : w_(&store.add(prefix + ".w", glorot_uniform<T>({in, out}, in, out, rng))),
          b_(&store.add(prefix + ".b", Tensor<T>::zeros({out}))) {}

    Tensor<T> forward(const Tensor<T>& x) const { return add_rowvec(matmul(x, *w_), *b_); }

private:
    Tensor<T>* w_ = nullptr;
    Tensor<T>* b_ = nullptr;
};

/// MLP with LeakyReLU on every hidden layer and a linear head.
template <typename T>
class Mlp {
public:
    Mlp() = default;
    Mlp(ParameterStore<T>& store, const std::string& prefix, int in, int hidden, int n_hidden, int out,
        Rng& rng, T slope = T(0.01))
        : slope_(slope) {
        int cur = in;
        for (int i = 0; i < n_hidden; ++i) {
            layers_.emplace_back(store, prefix + ".h" + std::to_string(i), cur, hidden, rng);
            cur = hidden;
        }
        head_ = Linear<T>(store, prefix + ".out", cur, out, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (const auto& l : layers_) h = leaky_relu(l.forward(h), slope_);
        return head_.forward(h);
    }

private:
    std::vector<Linear<T>> layers_;
    Linear<T> head_;
    T slope_ = T(0.01);
};

/// 3x3 (by default) conv layer with bias, 'same' padding.
template <typename T>
class Conv2dLayer {
public:
    Conv2dLayer() = default;
    Conv2dLayer(ParameterStore<T>& store, const std::string& prefix, int in_ch, int out_ch, Rng& rng,
                int ksize = 3, int stride = 1, bool zero_init = false)
        : stride_(stride) {
        Tensor<T> w = zero_init ? Tensor<T>::zeros({out_ch, in_ch, ksize, ksize})
                                : glorot_uniform<T>({out_ch, in_ch, ksize, ksize}, in_ch * ksize * ksize,
                                                    out_ch * ksize * ksize, rng);
        w_ = &store.add(prefix + ".w", std::move(w));
        b_ = &store.add(prefix + ".b", Tensor<T>::zeros({out_ch}));
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, *w_, b_, stride_); }

private:
    Tensor<T>* w_ = nullptr;
    Tensor<T>* b_ = nullptr;
    int stride_ = 1;
};

/// x + conv2(relu(conv1(x))). conv2 starts at zero, so a fresh block is the
/// identity map and stacks of them stay well-conditioned at initialization.
template <typename T>
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(ParameterStore<T>& store, const std::string& prefix, int ch, Rng& rng)
        : c1_(store, prefix + ".c1", ch, ch, rng), c2_(store, prefix + ".c2", ch, ch, rng, 3, 1, true) {}

    Tensor<T> forward(const Tensor<T>& x) const { return add(x, c2_.forward(relu(c1_.forward(x)))); }

private:
    Conv2dLayer<T> c1_, c2_;
};

template <typename T>
class ResBlockStack {
public:
    ResBlockStack() = default;
    ResBlockStack(ParameterStore<T>& store, const std::string& prefix, int ch, int n_blocks, Rng& rng) {
        for (int i = 0; i < n_blocks; ++i) blocks_.emplace_back(store, prefix + ".rb" + std::to_string(i), ch, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (const auto& b : blocks_) h = b.forward(h);
        return h;
    }

private:
    std::vector<ResBlock<T>> blocks_;
};

}  // namespace pcvs
