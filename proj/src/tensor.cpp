#include "chrs/tensor.hpp"

#include <sstream>

namespace chrs::ad {

std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d <= 0) throw input_error("Tensor: non-positive dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<std::int64_t> s, double fill) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data = {v};
    return t;
}

Tensor Tensor::from(std::vector<std::int64_t> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    if (numel_of(t.shape) != static_cast<std::int64_t>(d.size()))
        throw input_error("Tensor::from: data size does not match shape");
    t.data = std::move(d);
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

}  // namespace chrs::ad
