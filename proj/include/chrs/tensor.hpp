#ifndef CHRS_TENSOR_HPP
#define CHRS_TENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "chrs/errors.hpp"

namespace chrs::ad {

// Dense row-major double tensor. Rank 0 is a scalar with one element.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s, double fill = 0.0);
    static Tensor scalar(double v);
    static Tensor from(std::vector<std::int64_t> s, std::vector<double> d);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;
};

std::int64_t numel_of(const std::vector<std::int64_t>& shape);

}  // namespace chrs::ad

#endif
