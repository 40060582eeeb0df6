#pragma once
#include <stdexcept>
#include <string>

namespace seqattn {

// Dimension or rank disagreement between tensors.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (dropout rate, layer sizes, task spec, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based line number when known.
struct ParseError : std::runtime_error {
  int line = 0;
  ParseError(const std::string& msg, int line_no)
      : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Example violates the cloze contract (no candidates, answer missing, ...).
struct InvalidExampleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Loss target outside the candidate set or masked out.
struct InvalidTargetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input admits no well-defined result (e.g. softmax with an all-false mask).
struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: non-scalar loss in backward, non-deterministic grad-check fn.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training aborted (non-finite loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace seqattn
