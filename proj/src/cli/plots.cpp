#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "ldfuse/cli.hpp"
#include "ldfuse/errors.hpp"

namespace ldfuse::cli {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{3}</text>\n",
      kWidth, kHeight, kWidth / 2, escape(title));
}

std::pair<double, double> padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(std::abs(lo) * 0.05, 1e-6);
    return {lo - pad, hi + pad};
  }
  return {lo, hi};
}

// Frame plus four horizontal gridlines labelled with y values.
std::string y_axis(double lo, double hi) {
  std::string s = fmt::format(
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
      kLeft, kTop, kWidth - kLeft - kRight, kHeight - kTop - kBottom);
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    const double y = kHeight - kBottom - (kHeight - kTop - kBottom) * i / 4.0;
    s += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"#ddd\"/>\n"
        "<text x=\"{3:.2f}\" y=\"{4:.2f}\" text-anchor=\"end\">{5:.4g}</text>\n",
        kLeft, y, kWidth - kRight, kLeft - 6, y + 4, v);
  }
  return s;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
  return out;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::vector<double>& x,
                           const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("line chart needs as many x as y values");
  if (x.empty()) throw ParameterError("line chart needs at least one point");
  const auto [xlo, xhi] = padded_range(*std::min_element(x.begin(), x.end()),
                                       *std::max_element(x.begin(), x.end()));
  const auto [ylo, yhi] = padded_range(*std::min_element(y.begin(), y.end()),
                                       *std::max_element(y.begin(), y.end()));
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  std::string s = header(title) + y_axis(ylo, yhi);
  for (int i = 0; i <= 4; ++i) {
    const double v = xlo + (xhi - xlo) * i / 4.0;
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.6g}</text>\n",
                     kLeft + pw * i / 4.0, kHeight - kBottom + 18, v);
  }
  s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">step</text>\n",
                   kLeft + pw / 2, kHeight - 10);
  s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double px = kLeft + pw * (x[i] - xlo) / (xhi - xlo);
    const double py = kHeight - kBottom - ph * (y[i] - ylo) / (yhi - ylo);
    s += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", px, py);
  }
  s += "\"/>\n</svg>\n";
  return s;
}

std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars) {
  if (bars.empty()) throw ParameterError("bar chart needs at least one bar");
  double lo = 0.0, hi = 0.0;
  for (const auto& [name, v] : bars) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::tie(lo, hi) = padded_range(lo, hi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double slot = pw / static_cast<double>(bars.size());
  auto to_y = [&](double v) { return kHeight - kBottom - ph * (v - lo) / (hi - lo); };
  std::string s = header(title) + y_axis(lo, hi);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [name, v] = bars[i];
    const double x = kLeft + slot * (static_cast<double>(i) + 0.15);
    const double top = to_y(std::max(v, 0.0)), bottom = to_y(std::min(v, 0.0));
    s += fmt::format(
        "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"#4c72b0\"/>\n"
        "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.4g}</text>\n"
        "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
        x, top, slot * 0.7, bottom - top, x + slot * 0.35, top - 4, v, x + slot * 0.35,
        kHeight - kBottom + 18, escape(name));
  }
  s += "</svg>\n";
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<std::filesystem::path> emit_plots(const pipeline::TrainLog& log,
                                              const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  if (log.records.empty()) return written;
  std::set<std::string> names;
  for (const auto& r : log.records) {
    for (const auto& [name, v] : r.components) names.insert(name);
  }
  const std::string stage = file_safe(log.stage.empty() ? "train" : log.stage);
  std::vector<std::pair<std::string, double>> finals;
  for (const std::string& name : names) {
    std::vector<double> x, y;
    for (const auto& r : log.records) {
      const auto it = r.components.find(name);
      if (it == r.components.end()) continue;
      x.push_back(static_cast<double>(r.step));
      y.push_back(it->second);
    }
    const auto path = dir / (stage + "_" + file_safe(name) + ".svg");
    write_text(path, line_chart_svg(log.stage + ": " + name, x, y));
    written.push_back(path);
    finals.emplace_back(name, y.back());
  }
  if (!finals.empty()) {
    const auto path = dir / (stage + "_summary.svg");
    write_text(path, bar_chart_svg(log.stage + ": final loss components", finals));
    written.push_back(path);
  }
  return written;
}

}  // namespace ldfuse::cli
