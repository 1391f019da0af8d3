#include "kvae/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "kvae/bytes.hpp"
#include "kvae/config.hpp"
#include "kvae/error.hpp"

namespace kvae {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_header(std::uint64_t seed, const std::string& config_hash, const std::string& body) {
  return "# seed=" + std::to_string(seed) + ", config_hash=" + config_hash + ", version=" + git_blob_hash(body) + "\n";
}

std::string write_csv(const std::string& path, std::uint64_t seed, const std::string& config_hash,
                      const std::string& body) {
  const std::string text = csv_header(seed, config_hash, body) + body;
  write_text_file(path, text);
  return text;
}

SvgPlot::SvgPlot(std::string title, std::string x_label, std::string y_label)
    : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

void SvgPlot::add_line(const std::vector<double>& x, const std::vector<double>& y, const std::string& label) {
  series_.push_back({Kind::kLine, x, y, label});
}

void SvgPlot::add_scatter(const std::vector<double>& x, const std::vector<double>& y, const std::string& label) {
  series_.push_back({Kind::kScatter, x, y, label});
}

void SvgPlot::add_bars(const std::vector<double>& centers, const std::vector<double>& heights,
                       const std::string& label) {
  series_.push_back({Kind::kBars, centers, heights, label});
}

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string SvgPlot::render() const {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 50;
  auto tx = [&](double v) { return log_x_ ? std::log10(v) : v; };
  auto ty = [&](double v) { return log_y_ ? std::log10(v) : v; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series_) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      const double a = tx(s.x[i]), b = ty(s.y[i]);
      if (!std::isfinite(a) || !std::isfinite(b)) continue;
      x0 = std::min(x0, a);
      x1 = std::max(x1, a);
      y0 = std::min(y0, b);
      y1 = std::max(y1, b);
    }
    if (s.kind == Kind::kBars) y0 = std::min(y0, 0.0);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title_) + "</text>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    const double gx = L + (W - L - R) * k / 4.0, gy = H - B - (H - T - B) * k / 4.0;
    const std::string lx = log_x_ ? "1e" + format_double(std::round(fx * 100) / 100) : format_double(fx);
    const std::string ly = log_y_ ? "1e" + format_double(std::round(fy * 100) / 100) : format_double(fy);
    s += "<text x=\"" + num(gx) + "\" y=\"" + num(H - B + 16) + "\" text-anchor=\"middle\" font-size=\"10\">" +
         lx.substr(0, 8) + "</text>\n";
    s += "<text x=\"" + num(L - 6) + "\" y=\"" + num(gy + 3) + "\" text-anchor=\"end\" font-size=\"10\">" +
         ly.substr(0, 8) + "</text>\n";
  }
  s += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 10) + "\" text-anchor=\"middle\" font-size=\"12\">" +
       escape(x_label_) + "</text>\n";
  s += "<text transform=\"translate(16," + num((T + H - B) / 2) + ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" +
       escape(y_label_) + "</text>\n";

  for (std::size_t k = 0; k < series_.size(); ++k) {
    const auto& sr = series_[k];
    const std::string color = kColors[k % 5];
    const std::size_t m = std::min(sr.x.size(), sr.y.size());
    if (sr.kind == Kind::kLine) {
      s += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < m; ++i) s += num(px(sr.x[i])) + "," + num(py(sr.y[i])) + " ";
      s += "\"/>\n";
    } else if (sr.kind == Kind::kScatter) {
      for (std::size_t i = 0; i < m; ++i)
        s += "<circle cx=\"" + num(px(sr.x[i])) + "\" cy=\"" + num(py(sr.y[i])) + "\" r=\"2\" fill=\"" + color +
             "\" fill-opacity=\"0.6\"/>\n";
    } else {
      const double bw = m > 1 ? (W - L - R) / static_cast<double>(m) * 0.8 : 10.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double top = py(sr.y[i]), base = py(0.0);
        s += "<rect x=\"" + num(px(sr.x[i]) - bw / 2) + "\" y=\"" + num(std::min(top, base)) + "\" width=\"" +
             num(bw) + "\" height=\"" + num(std::abs(base - top)) + "\" fill=\"" + color + "\" fill-opacity=\"0.5\"/>\n";
      }
    }
    const double ly = T + 16.0 * static_cast<double>(k);
    s += "<rect x=\"" + num(W - R + 10) + "\" y=\"" + num(ly) + "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + num(W - R + 25) + "\" y=\"" + num(ly + 9) + "\" font-size=\"11\">" + escape(sr.label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

void SvgPlot::save(const std::string& path) const { write_text_file(path, render()); }

void empirical_cdf(std::vector<double> values, std::vector<double>& xs, std::vector<double>& ps) {
  std::sort(values.begin(), values.end());
  xs = values;
  ps.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) ps[i] = static_cast<double>(i + 1) / static_cast<double>(values.size());
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kInvalidArgument, "KS statistic needs two nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace kvae
