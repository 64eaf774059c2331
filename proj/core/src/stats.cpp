#include "gkd/stats.hpp"

#include <algorithm>
#include <vector>

#include "gkd/errors.hpp"

namespace gkd {

double median_of(std::span<const double> values) {
    if (values.empty()) throw ContractError("median of an empty list");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    if (sorted.size() % 2 == 1) return sorted[mid];
    return 0.5 * (sorted[mid - 1] + sorted[mid]);
}

}  // namespace gkd
