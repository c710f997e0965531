#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "td/tensor.hpp"

namespace td {

// Ordered, named collection of trainable tensors. Insertion order is the
// serialization and optimizer order, so it must be deterministic.
class ParamSet {
  public:
    Tensor& add(std::string name, Tensor t) {
        if (contains(name)) throw ValidationError("ParamSet: duplicate parameter '" + name + "'");
        t.set_requires_grad(true);
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    bool contains(std::string_view name) const {
        for (const auto& n : names_)
            if (n == name) return true;
        return false;
    }

    Tensor& get(std::string_view name) {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return tensors_[i];
        throw ValidationError("ParamSet: unknown parameter '" + std::string(name) + "'");
    }
    const Tensor& get(std::string_view name) const {
        return const_cast<ParamSet*>(this)->get(name);
    }

    std::span<Tensor> tensors() { return tensors_; }
    std::span<const Tensor> tensors() const { return tensors_; }
    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return tensors_.size(); }

    size_t numel() const {
        size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& t : tensors_) t.zero_grad();
    }

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

}  // namespace td
