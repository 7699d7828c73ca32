#pragma once

#include <stdexcept>
#include <string>

namespace ropedit {

// Shape disagreement between tensors/grids/masks.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration value (bad head_dim, layer index out of range, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Bad user-supplied input (empty prompt, missing file, malformed CSV line).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// K/V substitution failed at a concrete (timestep, layer).
struct InjectionError : std::runtime_error {
    InjectionError(int timestep, int layer, const std::string& what)
        : std::runtime_error("injection error at t=" + std::to_string(timestep) +
                             " layer=" + std::to_string(layer) + ": " + what),
          timestep(timestep),
          layer(layer) {}
    int timestep;
    int layer;
};

// A mask pipeline produced (or was handed) an empty mask. For editing tasks this
// means the attention reasoning failed and the run must be surfaced, not retried.
struct EmptyMaskError : std::runtime_error {
    explicit EmptyMaskError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ropedit
