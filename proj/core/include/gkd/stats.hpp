#pragma once

#include <span>

namespace gkd {

/// Median; the midpoint of the two central values for even counts.
double median_of(std::span<const double> values);

}  // namespace gkd
