// SPDX-License-Identifier: MIT
#pragma once

#include <cstddef>
#include <vector>

#include "unilm/error.hpp"

namespace unilm {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

// Dense row-major f32 tensor. Invariant: product(shape) == data.size().
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            raise(ErrorCode::ShapeMismatch, "tensor data size does not match shape");
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
    }

    static Tensor full(std::vector<std::size_t> shape, float value) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<float>(n, value));
    }

    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t numel() const noexcept { return data.size(); }

    // Rank-2 accessors.
    float at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
    float& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

} // namespace unilm
