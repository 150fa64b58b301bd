#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viva/episode.hpp"
#include "viva/sampler.hpp"

namespace viva {

// Rank correlation with average ranks for ties. Returns 0 when either input
// is constant.
double spearman(std::span<const double> a, std::span<const double> b);

// P(score of a positive > score of a negative), ties counted half.
double roc_auc(std::span<const double> positive_scores, std::span<const double> negative_scores);

// Least-squares non-increasing fit (pool adjacent violators).
std::vector<double> isotonic_decreasing(std::span<const double> y);
// Mean squared deviation of y from its non-increasing isotonic fit.
double isotonic_residual(std::span<const double> y);

// Window (in steps) on each side of the injected event used by failure_sensitivity.
int sensitivity_window(int horizon);

// Mean v_hat over trace points in [e, e+w] minus the mean over [e-w, e).
// Positive means the value rose toward the failure range at the event.
std::optional<double> failure_sensitivity(const std::vector<TracePoint>& trace, int failure_step, int horizon);

// Mean v_hat over trace points with 0.45T <= t <= 0.55T (the point nearest T/2
// when none fall inside).
double mid_episode_value(const std::vector<TracePoint>& trace, int horizon);

struct EpisodeTrace {
  std::size_t episode = 0;
  std::vector<TracePoint> points;
};

struct ModelMetrics {
  std::string model;
  std::size_t episodes = 0;
  double spearman_mean = 0.0;     // success episodes
  double spearman_all = 0.0;      // every episode
  double auc_mid_episode = 0.0;   // failure = positive class
  std::optional<double> failure_sensitivity;  // mean over failure episodes
  std::optional<double> failure_sensitivity_positive_fraction;
  std::map<std::string, double> failure_sensitivity_by_kind;
  double trace_variance = 0.0;    // success episodes
  std::vector<EpisodeTrace> traces;
};

ModelMetrics evaluate(const ValueEstimator& estimator, const std::vector<Episode>& episodes, int stride,
                      std::uint64_t seed = 0);

// Text printed at the head of every report.
std::string metric_definitions();

}  // namespace viva
