#include "viva/episode.hpp"

#include <algorithm>
#include <string>

#include "viva/errors.hpp"
#include "viva/returns.hpp"

namespace viva {

std::string to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::kDrop:
      return "drop";
    case FailureKind::kMisplace:
      return "misplace";
    case FailureKind::kStall:
      return "stall";
  }
  return "unknown";
}

FailureKind failure_kind_from_string(const std::string& name) {
  if (name == "drop") return FailureKind::kDrop;
  if (name == "misplace") return FailureKind::kMisplace;
  if (name == "stall") return FailureKind::kStall;
  throw ValidationError("unknown failure kind '" + name + "'");
}

int future_index(int t, int horizon_k, int episode_length) { return std::min(t + horizon_k, episode_length); }

TrainingTuple sample_tuple(const Episode& episode, int t, int horizon_k, std::size_t episode_ref) {
  const int last = episode.horizon();
  if (last < 1) throw ValidationError("episode must have at least two steps");
  if (t < 0 || t > last) {
    throw ValidationError("step " + std::to_string(t) + " outside [0, " + std::to_string(last) + "]");
  }
  if (horizon_k < 1) throw ValidationError("prediction horizon K must be >= 1");

  TrainingTuple tuple;
  tuple.current = episode.steps[t];
  tuple.future_proprio = episode.steps[future_index(t, horizon_k, last)].proprio;
  tuple.return_target = return_to_go({last, episode.success}, t);
  tuple.t = t;
  tuple.episode_ref = episode_ref;
  return tuple;
}

}  // namespace viva
