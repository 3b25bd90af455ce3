#include "csteer/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <vector>

#include "csteer/errors.hpp"

namespace csteer {
namespace {

// Coordinates rounded to centipixels keep the file small and the bytes
// independent of how the doubles were produced.
void append_px(std::string& s, double v) {
  const double r = std::round(v * 100.0) / 100.0;
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), r);
  s.append(buf, res.ptr);
}

void append_attr(std::string& s, const char* name, double v) {
  s += ' ';
  s += name;
  s += "=\"";
  append_px(s, v);
  s += '"';
}

std::string format_level(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Boundary {
  int step;
  double level;
};

}  // namespace

std::string render_state_svg(std::span<const Trajectory> trajectories,
                             const SafeSet& safe, const PlotOptions& opts) {
  if (trajectories.empty()) throw EmptyInput("no trajectories to plot");
  const int n_x = static_cast<int>(trajectories[0].x.cols());
  const int T = static_cast<int>(trajectories[0].x.rows()) - 1;
  for (const Trajectory& tr : trajectories)
    if (tr.x.cols() != n_x || tr.x.rows() != T + 1)
      throw DimensionMismatch("trajectories disagree on state shape");

  // Axis-aligned constraints split per coordinate; others are not drawable
  // in one-dimensional panels and are skipped.
  std::vector<std::vector<Boundary>> bounds(n_x);
  for (const SafeConstraint& c : safe.constraints) {
    int nz = -1;
    bool single = true;
    for (int i = 0; i < c.a.size(); ++i) {
      if (c.a(i) != 0.0) {
        if (nz >= 0) single = false;
        nz = i;
      }
    }
    if (!single || nz < 0 || nz >= n_x || c.step > T) continue;
    bounds[nz].push_back({c.step, c.b / c.a(nz)});
  }

  const int margin_l = 56, margin_r = 16, margin_t = 28, margin_b = 26;
  const int pw = opts.width - margin_l - margin_r;
  const int ph = opts.panel_height - margin_t - margin_b;
  const int total_h = opts.panel_height * n_x;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"";
  s += std::to_string(opts.width);
  s += "\" height=\"";
  s += std::to_string(total_h);
  s += "\" viewBox=\"0 0 ";
  s += std::to_string(opts.width);
  s += ' ';
  s += std::to_string(total_h);
  s += "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opts.title.empty()) {
    s += "<text x=\"";
    s += std::to_string(margin_l);
    s += "\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">";
    s += opts.title;
    s += "</text>\n";
  }

  for (int coord = 0; coord < n_x; ++coord) {
    const int top = opts.panel_height * coord + margin_t;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Trajectory& tr : trajectories) {
      lo = std::min(lo, tr.x.col(coord).minCoeff());
      hi = std::max(hi, tr.x.col(coord).maxCoeff());
    }
    for (const Boundary& b : bounds[coord]) {
      lo = std::min(lo, b.level);
      hi = std::max(hi, b.level);
    }
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    const auto px = [&](double k) { return margin_l + pw * k / T; };
    const auto py = [&](double v) { return top + ph * (hi - v) / (hi - lo); };

    s += "<rect x=\"";
    s += std::to_string(margin_l);
    s += "\" y=\"";
    s += std::to_string(top);
    s += "\" width=\"";
    s += std::to_string(pw);
    s += "\" height=\"";
    s += std::to_string(ph);
    s += "\" fill=\"none\" stroke=\"#ccc\"/>\n";

    s += "<text x=\"6\" y=\"";
    s += std::to_string(top + ph / 2);
    s += "\" font-family=\"sans-serif\" font-size=\"12\">x";
    s += std::to_string(coord);
    s += "</text>\n";
    // Range labels at the panel corners.
    s += "<text x=\"18\" y=\"";
    s += std::to_string(top + 10);
    s += "\" font-family=\"sans-serif\" font-size=\"9\">";
    s += format_level(std::round(hi * 1000.0) / 1000.0);
    s += "</text>\n<text x=\"18\" y=\"";
    s += std::to_string(top + ph);
    s += "\" font-family=\"sans-serif\" font-size=\"9\">";
    s += format_level(std::round(lo * 1000.0) / 1000.0);
    s += "</text>\n";

    for (const Trajectory& tr : trajectories) {
      s += "<polyline fill=\"none\" stroke=\"#23537f\" stroke-width=\"1\" "
           "stroke-opacity=\"0.45\" points=\"";
      for (int k = 0; k <= T; ++k) {
        if (k) s += ' ';
        append_px(s, px(k));
        s += ',';
        append_px(s, py(tr.x(k, coord)));
      }
      s += "\"/>\n";
    }

    for (const Boundary& b : bounds[coord]) {
      s += "<line stroke=\"#c22\" stroke-width=\"1.5\"";
      append_attr(s, "x1", px(std::max(0.0, b.step - 0.45)));
      append_attr(s, "x2", px(std::min(static_cast<double>(T), b.step + 0.45)));
      append_attr(s, "y1", py(b.level));
      append_attr(s, "y2", py(b.level));
      s += "/>\n";
    }

    // Step ticks along the bottom edge of the last panel only.
    if (coord == n_x - 1) {
      for (int k = 0; k <= T; ++k) {
        s += "<text text-anchor=\"middle\" font-family=\"sans-serif\" "
             "font-size=\"9\"";
        append_attr(s, "x", px(k));
        s += " y=\"";
        s += std::to_string(top + ph + 14);
        s += "\">";
        s += std::to_string(k);
        s += "</text>\n";
      }
    }
  }
  s += "</svg>\n";
  return s;
}

}  // namespace csteer
