#pragma once

#include <stdexcept>
#include <string>

namespace gestpose {

// Shape/extent disagreements between tensors or model pieces.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Class labels outside the valid range or inconsistent with a taxonomy.
struct LabelError : std::runtime_error {
    explicit LabelError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated call contracts (non-scalar backward root, bad axis, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite input is assumed.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate geometric input (zero or collinear 6D rotation vectors).
struct DegenerateInputError : std::runtime_error {
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed dataset file; carries the offending line number.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, int line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
    int line_number;
};

// Bad run configuration (unknown keys, invalid ratios, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint manifest/payload mismatches.
struct ManifestError : std::runtime_error {
    explicit ManifestError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mesh topology mismatches (vertex counts).
struct TopologyError : std::runtime_error {
    explicit TopologyError(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate inputs to evaluation metrics (silhouette with one label, ...).
struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gestpose
