#include "voxelforge/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "voxelforge/errors.hpp"

namespace vxf {
namespace {

constexpr double kWidth = 960, kHeight = 420;
constexpr double kTop = 50, kBottom = 360;

struct Series {
  const char* name;
  const char* colour;
  std::vector<std::pair<double, double>> points;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

void chart(std::string& out, double left, double right, const char* title, double ymax,
           double x0, double x1, const std::vector<Series>& series) {
  auto px = [&](double x) { return x1 > x0 ? left + (x - x0) / (x1 - x0) * (right - left) : (left + right) / 2; };
  auto py = [&](double y) { return kBottom - y / ymax * (kBottom - kTop); };

  out += "<g class=\"chart\">\n";
  out += "<text x=\"" + num((left + right) / 2) + "\" y=\"30\" text-anchor=\"middle\" font-size=\"15\">" + title +
         "</text>\n";
  out += "<rect x=\"" + num(left) + "\" y=\"" + num(kTop) + "\" width=\"" + num(right - left) + "\" height=\"" +
         num(kBottom - kTop) + "\" fill=\"none\" stroke=\"#999\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = ymax * t / 4.0;
    out += "<line x1=\"" + num(left) + "\" x2=\"" + num(right) + "\" y1=\"" + num(py(y)) + "\" y2=\"" +
           num(py(y)) + "\" stroke=\"#eee\"/>\n";
    out += "<text x=\"" + num(left - 6) + "\" y=\"" + num(py(y) + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" + label(y) + "</text>\n";
  }
  out += "<text x=\"" + num(left) + "\" y=\"" + num(kBottom + 16) + "\" font-size=\"11\">" + label(x0) +
         "</text>\n";
  out += "<text x=\"" + num(right) + "\" y=\"" + num(kBottom + 16) + "\" text-anchor=\"end\" font-size=\"11\">" +
         label(x1) + "</text>\n";
  out += "<text x=\"" + num((left + right) / 2) + "\" y=\"" + num(kBottom + 32) +
         "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";

  double legend_y = kBottom + 50;
  double legend_x = left;
  for (const auto& s : series) {
    std::string path;
    for (const auto& [x, y] : s.points) path += (path.empty() ? "" : " ") + num(px(x)) + "," + num(py(y));
    if (!path.empty())
      out += "<polyline class=\"line series-" + std::string(s.name) + "\" points=\"" + path +
             "\" fill=\"none\" stroke=\"" + s.colour + "\" stroke-width=\"1.5\"/>\n";
    for (const auto& [x, y] : s.points)
      out += "<circle class=\"pt series-" + std::string(s.name) + "\" cx=\"" + num(px(x)) + "\" cy=\"" +
             num(py(y)) + "\" r=\"2.5\" fill=\"" + s.colour + "\"/>\n";
    out += "<rect x=\"" + num(legend_x) + "\" y=\"" + num(legend_y - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
           s.colour + "\"/><text x=\"" + num(legend_x + 14) + "\" y=\"" + num(legend_y) + "\" font-size=\"11\">" +
           s.name + "</text>\n";
    legend_x += 95;
  }
  out += "</g>\n";
}

}  // namespace

std::string render_metrics_svg(const MetricsLog& log) {
  if (log.rows.empty()) throw DataError("metrics log has no rows");
  double x0 = log.rows.front().epoch, x1 = x0;
  for (const auto& r : log.rows) {
    x0 = std::min<double>(x0, r.epoch);
    x1 = std::max<double>(x1, r.epoch);
  }

  auto collect = [&](const char* name, const char* colour, double MetricsRow::*field) {
    Series s{name, colour, {}};
    for (const auto& r : log.rows)
      if (std::isfinite(r.*field)) s.points.emplace_back(r.epoch, r.*field);
    return s;
  };
  const std::vector<Series> loss{collect("train_loss", "#1f77b4", &MetricsRow::train_loss)};
  const std::vector<Series> dice{collect("val_mean_dice", "#000000", &MetricsRow::val_mean_dice),
                                 collect("dice_tc", "#d62728", &MetricsRow::dice_tc),
                                 collect("dice_wt", "#2ca02c", &MetricsRow::dice_wt),
                                 collect("dice_et", "#ff7f0e", &MetricsRow::dice_et)};
  double loss_max = 0.0;
  for (const auto& [x, y] : loss[0].points) loss_max = std::max(loss_max, y);
  loss_max = loss_max > 0.0 ? loss_max * 1.05 : 1.0;

  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  chart(out, 60, 450, "Average loss per epoch", loss_max, x0, x1, loss);
  chart(out, 550, 940, "Average dice per epoch", 1.0, x0, x1, dice);
  out += "</svg>\n";
  return out;
}

}  // namespace vxf
