#include "viva/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "viva/errors.hpp"

namespace viva {

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double mean(std::span<const double> x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman inputs differ in length");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double ma = mean(ra);
  const double mb = mean(rb);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw ValidationError("AUC needs both classes");
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<double> isotonic_decreasing(std::span<const double> y) {
  struct Block {
    double sum;
    double count;
  };
  std::vector<Block> blocks;
  for (double v : y) {
    blocks.push_back({v, 1.0});
    while (blocks.size() > 1) {
      const Block& last = blocks.back();
      const Block& prev = blocks[blocks.size() - 2];
      if (prev.sum / prev.count >= last.sum / last.count) break;
      const Block merged{prev.sum + last.sum, prev.count + last.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> fit;
  fit.reserve(y.size());
  for (const auto& b : blocks) fit.insert(fit.end(), static_cast<std::size_t>(b.count), b.sum / b.count);
  return fit;
}

double isotonic_residual(std::span<const double> y) {
  if (y.empty()) return 0.0;
  const auto fit = isotonic_decreasing(y);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - fit[i]) * (y[i] - fit[i]);
  return s / static_cast<double>(y.size());
}

int sensitivity_window(int horizon) { return std::max(2, horizon / 10); }

std::optional<double> failure_sensitivity(const std::vector<TracePoint>& trace, int failure_step, int horizon) {
  if (failure_step < 0) return std::nullopt;
  const int w = sensitivity_window(horizon);
  std::vector<double> pre, post;
  for (const auto& p : trace) {
    if (p.t >= failure_step - w && p.t < failure_step) pre.push_back(p.v_hat);
    if (p.t >= failure_step && p.t <= failure_step + w) post.push_back(p.v_hat);
  }
  if (pre.empty() || post.empty()) return std::nullopt;
  return mean(post) - mean(pre);
}

double mid_episode_value(const std::vector<TracePoint>& trace, int horizon) {
  if (trace.empty()) throw ValidationError("empty trace");
  std::vector<double> inside;
  for (const auto& p : trace) {
    if (p.t >= 0.45 * horizon && p.t <= 0.55 * horizon) inside.push_back(p.v_hat);
  }
  if (!inside.empty()) return mean(inside);
  const auto nearest = std::min_element(trace.begin(), trace.end(), [&](const TracePoint& a, const TracePoint& b) {
    return std::abs(2 * a.t - horizon) < std::abs(2 * b.t - horizon);
  });
  return nearest->v_hat;
}

ModelMetrics evaluate(const ValueEstimator& estimator, const std::vector<Episode>& episodes, int stride,
                      std::uint64_t seed) {
  if (episodes.empty()) throw ValidationError("no episodes to evaluate");
  ModelMetrics m;
  m.model = estimator.name();
  m.episodes = episodes.size();
  std::vector<double> rho_success, rho_all, mid_success, mid_failure, sens, variances;
  std::map<std::string, std::vector<double>> sens_by_kind;
  bool missing_labels = false;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    EpisodeTrace trace{e, value_trace(estimator, ep, stride, mix_seed(seed, e))};
    std::vector<double> v, g;
    for (const auto& p : trace.points) {
      v.push_back(p.v_hat);
      g.push_back(p.g_true.value_or(0.0));
    }
    const double rho = spearman(v, g);
    rho_all.push_back(rho);
    const double mid = mid_episode_value(trace.points, ep.horizon());
    if (ep.success) {
      rho_success.push_back(rho);
      mid_success.push_back(mid);
      variances.push_back(isotonic_residual(v));
    } else {
      mid_failure.push_back(mid);
      if (!ep.meta.failure_kind || ep.meta.failure_step < 0) {
        missing_labels = true;
      } else if (const auto s = failure_sensitivity(trace.points, ep.meta.failure_step, ep.horizon())) {
        sens.push_back(*s);
        sens_by_kind[to_string(*ep.meta.failure_kind)].push_back(*s);
      }
    }
    m.traces.push_back(std::move(trace));
  }
  m.spearman_mean = mean(rho_success);
  m.spearman_all = mean(rho_all);
  if (!mid_success.empty() && !mid_failure.empty()) m.auc_mid_episode = roc_auc(mid_failure, mid_success);
  if (missing_labels) spdlog::warn("{}: failure episodes without event metadata are skipped by failure_sensitivity", m.model);
  if (!sens.empty()) {
    m.failure_sensitivity = mean(sens);
    m.failure_sensitivity_positive_fraction =
        static_cast<double>(std::count_if(sens.begin(), sens.end(), [](double s) { return s > 0.0; })) /
        static_cast<double>(sens.size());
    for (const auto& [kind, values] : sens_by_kind) m.failure_sensitivity_by_kind[kind] = mean(values);
  }
  m.trace_variance = mean(variances);
  return m;
}

std::string metric_definitions() {
  return "spearman_mean: mean over success episodes of the Spearman rank correlation between v_hat_t and G_t\n"
         "spearman_all: the same averaged over every episode\n"
         "auc_mid_episode: ROC AUC separating failure (positive) from success episodes by mean v_hat over 0.45T..0.55T\n"
         "failure_sensitivity: mean v_hat over [e, e+w] minus mean over [e-w, e) at the injected event e, "
         "w = max(2, T/10); positive = value rises toward the failure range\n"
         "failure_sensitivity_positive_fraction: share of failure episodes with failure_sensitivity > 0\n"
         "trace_variance: mean squared deviation of v_hat from its non-increasing isotonic fit, success episodes\n";
}

}  // namespace viva
