#pragma once

#include <cstddef>
#include <vector>

namespace deepclust {

/// Unsupervised clustering accuracy: the best one-to-one mapping between
/// cluster ids and class labels (Hungarian algorithm on the padded-square
/// contingency matrix).
double acc(const std::vector<std::size_t>& y, const std::vector<std::size_t>& c);

/// Normalized mutual information I(Y,C) / ((H(Y)+H(C))/2), natural log,
/// with 0/0 defined as 0.
double nmi(const std::vector<std::size_t>& y, const std::vector<std::size_t>& c);

}  // namespace deepclust
