#pragma once

#include "maskgen/error.hpp"
#include "maskgen/rng.hpp"

#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace maskgen {

// Dense row-major tensor. Model math runs in double; checkpoints store f32.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    size_t numel() const { return data.size(); }
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    void fill_normal(Rng& rng, double std_dev) {
        for (double& v : data) v = rng.normal() * std_dev;
    }
};

// Ordered name -> tensor map. Iteration order (lexicographic) is what the
// container format serializes, so layouts are reproducible.
using TensorMap = std::map<std::string, Tensor>;

inline size_t total_params(const TensorMap& m) {
    size_t n = 0;
    for (const auto& [k, t] : m) n += t.numel();
    return n;
}

inline Tensor& at(TensorMap& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw ContractError("missing tensor: " + name);
    return it->second;
}

inline const Tensor& at(const TensorMap& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw ContractError("missing tensor: " + name);
    return it->second;
}

// Grad buffers shaped like an existing parameter map.
inline TensorMap zeros_like(const TensorMap& m) {
    TensorMap out;
    for (const auto& [k, t] : m) out.emplace(k, Tensor(t.shape));
    return out;
}

} // namespace maskgen
