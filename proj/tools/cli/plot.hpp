#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "viva/sampler.hpp"

namespace viva::cli {

using Rgb = std::array<std::uint8_t, 3>;

struct PlotSeries {
  std::vector<TracePoint> points;
  Rgb color;
};

// Colour assigned to the i-th model in every plot.
Rgb series_color(std::size_t i);

// One value-trace chart per episode: y in [0,2] with guide lines at 0, 1 and
// 2, ground-truth G_t in grey, the region after an injected failure shaded.
void write_trace_plot(const std::filesystem::path& path, int horizon, std::optional<int> failure_step,
                      const std::vector<PlotSeries>& series);

}  // namespace viva::cli
