#pragma once

#include <stdexcept>
#include <string>

namespace npcf {

// Input file structure is wrong: missing column, short row, bad magic.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input content violates a data invariant (non-monotone time, mixed frame
// intervals, negative spacing in a stored episode).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Synthetic generation became infeasible: the follower reached the leader.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training loss became non-finite.
struct TrainDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace npcf
