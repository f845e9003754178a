#include "memora/harness/plots.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace memora::harness {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
const char* const kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

std::string header(const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{3}</text>\n",
      kWidth, kHeight, kWidth / 2, escape(title));
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, double y_min, double y_max,
                           std::optional<double> reference) {
  if (!(y_max > y_min)) throw std::invalid_argument("line chart needs y_max > y_min");
  double x_min = 0.0, x_max = 1.0;
  bool first = true;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.label + "' is ragged");
    for (double x : s.x) {
      x_min = first ? x : std::min(x_min, x);
      x_max = first ? x : std::max(x_max, x);
      first = false;
    }
  }
  if (x_max == x_min) x_max = x_min + 1.0;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (std::clamp(y, y_min, y_max) - y_min) / (y_max - y_min)) * ph; };

  std::string svg = header(title);
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", kLeft,
                     kTop, pw, ph);
  for (int i = 0; i <= 5; ++i) {
    const double y = y_min + (y_max - y_min) * i / 5.0, x = x_min + (x_max - x_min) * i / 5.0;
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"#ddd\"/>\n", kLeft, py(y),
                       kLeft + pw);
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.2g}</text>\n", kLeft - 6, py(y) + 4, y);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{:.4g}</text>\n", px(x), kTop + ph + 18,
                       x);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2, kHeight - 16,
                     escape(x_label));
  svg += fmt::format("<text transform=\"translate(18 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
                     kTop + ph / 2, escape(y_label));
  if (reference)
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"#888\" stroke-dasharray=\"6 4\"/>\n",
        kLeft, py(*reference), kLeft + pw);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kColours[k % std::size(kColours)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", colour, points);
    for (std::size_t i = 0; i < s.x.size(); ++i)
      svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", px(s.x[i]), py(s.y[i]), colour);
    const double ly = kTop + 14 + 18 * static_cast<double>(k);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                       kLeft + pw + 12, ly, kLeft + pw + 32, colour);
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", kLeft + pw + 38, ly + 4, escape(s.label));
  }
  return svg + "</svg>\n";
}

std::string histogram_svg(const std::string& title, const std::vector<int>& counts, double lo, double hi) {
  if (counts.empty() || !(hi > lo)) throw std::invalid_argument("histogram needs bins and hi > lo");
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  const double pw = kWidth - kLeft - 40, ph = kHeight - kTop - kBottom;
  const double bw = pw / static_cast<double>(counts.size());
  std::string svg = header(title);
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", kLeft,
                     kTop, pw, ph);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double h = ph * counts[i] / static_cast<double>(peak);
    svg += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"#1f77b4\"/>\n",
                       kLeft + bw * static_cast<double>(i), kTop + ph - h, std::max(bw - 1.0, 0.5), h);
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{:.2g}</text>\n", kLeft + pw * i / 4.0,
                       kTop + ph + 18, v);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", kLeft - 6, kTop + 10, peak);
  return svg + "</svg>\n";
}

std::string pgm_grid(const Matrix& images, int image_size, int columns, int scale) {
  if (images.cols() != static_cast<Eigen::Index>(image_size) * image_size)
    throw std::invalid_argument("pgm_grid: images do not match the image size");
  if (columns < 1 || scale < 1) throw std::invalid_argument("pgm_grid: columns and scale must be positive");
  const int n = static_cast<int>(images.rows());
  const int rows = std::max(1, (n + columns - 1) / columns);
  const int gap = 1;
  const int cell = image_size * scale + gap;
  const int w = columns * cell + gap, h = rows * cell + gap;
  std::string pixels(static_cast<std::size_t>(w) * h, static_cast<char>(40));
  for (int k = 0; k < n; ++k) {
    const int ox = gap + (k % columns) * cell, oy = gap + (k / columns) * cell;
    for (int y = 0; y < image_size * scale; ++y)
      for (int x = 0; x < image_size * scale; ++x) {
        const double v = images(k, (y / scale) * image_size + x / scale);
        const double g = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
        pixels[static_cast<std::size_t>(oy + y) * w + ox + x] = static_cast<char>(static_cast<unsigned char>(g));
      }
  }
  return fmt::format("P5\n{} {}\n255\n", w, h) + pixels;
}

}  // namespace memora::harness
