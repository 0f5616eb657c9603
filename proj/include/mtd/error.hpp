#pragma once

#include <stdexcept>
#include <string>

namespace mtd {

// Failure classes the library reports distinctly. Callers catch the concrete
// type when the kind of failure matters and std::exception otherwise.

// Operand shapes are incompatible (matmul inner dims, rank, parallel lengths).
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A sequence or buffer would exceed its fixed capacity (max_len).
struct CapacityError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Pooling over an empty selection.
struct EmptyPoolError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input corpus or dataset has no usable content.
struct EmptyCorpusError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Too few records for the requested operation.
struct SizeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A record or sequence violates its schema (bad label, missing segment,
// out-of-range score, duplicate id).
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The object is not in a state that permits the call (tape already consumed,
// gradients absent).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed input text; the message names the offending line.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric has no defined value on this input (AUPRC with zero positives).
struct UndefinedMetricError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Training produced a non-finite loss; the message names the batch.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration value.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Filesystem failure (unreadable path, failed write).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mtd
