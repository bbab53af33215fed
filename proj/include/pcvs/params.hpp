#pragma once

#include <map>
#include <string>

#include "pcvs/tensor.hpp"

namespace pcvs {

/// Named learnable tensors. std::map keeps iteration in name order, which the
/// optimizer and checkpoint writer rely on for reproducible behaviour.
template <typename T>
class ParameterStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        auto [it, inserted] = params_.emplace(name, std::move(t));
        if (!inserted) throw ShapeError("parameter '" + name + "' registered twice");
        it->second.set_requires_grad(true);
        return it->second;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ShapeError("unknown parameter '" + name + "'");
        return it->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    std::map<std::string, Tensor<T>>& all() { return params_; }
    const std::map<std::string, Tensor<T>>& all() const { return params_; }

    std::size_t size() const { return params_.size(); }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    /// Sub-store sharing the same underlying tensors; names filtered by prefix.
    ParameterStore<T> filtered(const std::string& prefix) const {
        ParameterStore<T> out;
        for (const auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) out.params_.emplace(name, t);
        return out;
    }

private:
    std::map<std::string, Tensor<T>> params_;
};

}  // namespace pcvs
