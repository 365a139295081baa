#include "deepclust/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace deepclust {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    // splitmix64 over (master, stream)
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), real_t{0}) {
    for (std::size_t e : shape_) {
        if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape_));
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<real_t> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != data_.size()) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, real_t value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(shape_));
    }
    return shape_[axis];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw std::invalid_argument("tensor: cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(real_t value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool all_finite(const Tensor& t) {
    // Single accumulation pass catches NaN/Inf without a branch per element
    // in the common case; the exact scan only runs when something is off.
    real_t acc = 0;
    for (real_t v : t.values()) acc += v;
    if (std::isfinite(acc)) return true;
    for (real_t v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void require_finite(const Tensor& t, const char* what) {
    if (!all_finite(t)) {
        throw std::runtime_error(std::string(what) + ": non-finite values in tensor " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

}  // namespace deepclust
