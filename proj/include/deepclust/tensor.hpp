#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace deepclust {

#ifdef DEEPCLUST_SINGLE_PRECISION
using real_t = float;
#else
using real_t = double;
#endif

using Rng = std::mt19937;

/// Mixes a master seed with a stream tag so that independent consumers
/// (weight init, batch shuffles, fold assignment, ...) draw from
/// decorrelated, reproducible streams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

/// Dense n-dimensional array of real_t, flat row-major storage.
/// The batch axis, when present, is always the first extent.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<real_t> values);

    static Tensor full(std::vector<std::size_t> shape, real_t value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const;
    bool empty() const { return data_.empty(); }

    real_t* data() { return data_.data(); }
    const real_t* data() const { return data_.data(); }
    std::vector<real_t>& values() { return data_; }
    const std::vector<real_t>& values() const { return data_; }

    real_t& operator[](std::size_t i) { return data_[i]; }
    real_t operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Returns a copy viewing the same data under a different shape.
    /// The element count must be preserved.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    void fill(real_t value);

private:
    std::vector<std::size_t> shape_;
    std::vector<real_t> data_;
};

bool all_finite(const Tensor& t);

/// Throws std::runtime_error naming `what` if the tensor holds NaN or Inf.
void require_finite(const Tensor& t, const char* what);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace deepclust
