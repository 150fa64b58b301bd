#include "plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "viva/errors.hpp"

namespace viva::cli {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 320;
constexpr int kMargin = 24;

class Image {
 public:
  Image() : pixels_(static_cast<std::size_t>(kWidth) * kHeight * 3, 255) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= kWidth || y >= kHeight) return;
    auto* p = &pixels_[(static_cast<std::size_t>(y) * kWidth + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y <= std::min(kHeight - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(kWidth - 1, x1); ++x) set(x, y, c);
  }

  void line(double x0, double y0, double x1, double y1, Rgb c, int thickness) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double a = static_cast<double>(i) / steps;
      const int x = static_cast<int>(std::lround(x0 + a * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + a * (y1 - y0)));
      rect(x - thickness / 2, y - thickness / 2, x + (thickness - 1) / 2, y + (thickness - 1) / 2, c);
    }
  }

  void save(const std::filesystem::path& path) const {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw RuntimeFailure("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(f);
      throw RuntimeFailure("libpng failed writing " + path.string());
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, kWidth, kHeight, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < kHeight; ++y) {
      png_write_row(png, const_cast<png_bytep>(&pixels_[static_cast<std::size_t>(y) * kWidth * 3]));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
  }

 private:
  std::vector<std::uint8_t> pixels_;
};

}  // namespace

Rgb series_color(std::size_t i) {
  static constexpr std::array<Rgb, 6> kPalette{{{31, 119, 180}, {214, 39, 40}, {44, 160, 44},
                                                {148, 103, 189}, {255, 127, 14}, {23, 190, 207}}};
  return kPalette[i % kPalette.size()];
}

void write_trace_plot(const std::filesystem::path& path, int horizon, std::optional<int> failure_step,
                      const std::vector<PlotSeries>& series) {
  Image img;
  const double x_span = kWidth - 2.0 * kMargin;
  const double y_span = kHeight - 2.0 * kMargin;
  const auto px = [&](double t) { return kMargin + x_span * t / std::max(1, horizon); };
  const auto py = [&](double v) { return kMargin + y_span * (1.0 - v / 2.0); };

  if (failure_step && *failure_step >= 0) {
    img.rect(static_cast<int>(px(*failure_step)), kMargin, kWidth - kMargin, kHeight - kMargin, {255, 222, 222});
  }
  for (double v : {0.0, 1.0, 2.0}) img.line(px(0), py(v), px(horizon), py(v), {200, 200, 200}, 1);
  img.line(px(0), py(0), px(0), py(2), {80, 80, 80}, 1);

  // Ground truth from the first series that carries it.
  for (const auto& s : series) {
    if (s.points.empty() || !s.points.front().g_true) continue;
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      img.line(px(s.points[i - 1].t), py(*s.points[i - 1].g_true), px(s.points[i].t), py(*s.points[i].g_true),
               {130, 130, 130}, 1);
    }
    break;
  }
  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      img.line(px(s.points[i - 1].t), py(s.points[i - 1].v_hat), px(s.points[i].t), py(s.points[i].v_hat), s.color, 2);
    }
  }
  img.save(path);
}

}  // namespace viva::cli
