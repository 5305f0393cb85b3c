#ifndef HEGEMONY_TENSOR_HPP
#define HEGEMONY_TENSOR_HPP

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "hegemony/errors.hpp"

namespace hegemony {

/// Dense row-major real tensor.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(count(shape), fill) {}

    static std::size_t count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    template <class... I>
    double& operator()(I... idx) {
        return data[offset({static_cast<std::size_t>(idx)...})];
    }
    template <class... I>
    double operator()(I... idx) const {
        return data[offset({static_cast<std::size_t>(idx)...})];
    }

    std::string shape_string() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
        return s + ")";
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        std::size_t off = 0, i = 0;
        for (auto x : idx) off = off * shape[i++] + x;
        return off;
    }
};

using Matrix = std::vector<std::vector<double>>;

}  // namespace hegemony

#endif  // HEGEMONY_TENSOR_HPP
