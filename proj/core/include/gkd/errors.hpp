#pragma once

#include <stdexcept>
#include <string>

namespace gkd {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

// A documented precondition was violated (non-scalar loss, asymmetric graph, bad range).
struct ContractError : Error {
    using Error::Error;
};

// Malformed file contents: IDX headers, checkpoints, truncated payloads.
struct FormatError : Error {
    using Error::Error;
};

// Invalid experiment configuration or CLI usage.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace gkd
