#pragma once

namespace viva {

// Outcome-aware reward schedule for an episode with steps 0..T.
//
// Every non-terminal step earns 1/T. The terminal step earns 0 on success and
// 1 on failure, so the undiscounted return-to-go lands in [0,1] for successful
// episodes and in [1,2] for failed ones with a constant gap of exactly 1.0.
struct RewardSchedule {
  int horizon = 1;  // T
  bool success = true;
};

double reward(const RewardSchedule& sched, int t);

// Closed form of sum_{k=t..T} reward(k).
double return_to_go(const RewardSchedule& sched, int t);

// return_to_go(failure, t) - return_to_go(success, t).
double margin(int t, int horizon);

}  // namespace viva
