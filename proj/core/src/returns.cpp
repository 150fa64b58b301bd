#include "viva/returns.hpp"

#include <cmath>
#include <string>

#include "viva/errors.hpp"

namespace viva {
namespace {

void check_step(int t, int horizon) {
  if (horizon < 1) {
    throw ValidationError("reward schedule needs T >= 1, got " + std::to_string(horizon));
  }
  if (t < 0 || t > horizon) {
    throw ValidationError("step " + std::to_string(t) + " outside [0, " + std::to_string(horizon) + "]");
  }
}

}  // namespace

double reward(const RewardSchedule& sched, int t) {
  check_step(t, sched.horizon);
  if (t < sched.horizon) return 1.0 / sched.horizon;
  return sched.success ? 0.0 : 1.0;
}

double return_to_go(const RewardSchedule& sched, int t) {
  check_step(t, sched.horizon);
  // Snapped to multiples of 2^-52 so the +1 failure shift is exact and the
  // success/failure gap is 1.0 bit for bit.
  const double remaining =
      std::ldexp(std::nearbyint(std::ldexp(static_cast<double>(sched.horizon - t) / sched.horizon, 52)), -52);
  return sched.success ? remaining : remaining + 1.0;
}

double margin(int t, int horizon) {
  return return_to_go({horizon, false}, t) - return_to_go({horizon, true}, t);
}

}  // namespace viva
