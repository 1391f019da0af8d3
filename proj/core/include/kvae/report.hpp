#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kvae {

std::string format_double(double v);  // %.10g

// "# seed=<seed>, config_hash=<hash>, version=<git blob hash of body>"
std::string csv_header(std::uint64_t seed, const std::string& config_hash, const std::string& body);
// Writes header + body; returns the full file contents.
std::string write_csv(const std::string& path, std::uint64_t seed, const std::string& config_hash,
                      const std::string& body);

// Minimal SVG line/scatter plotter.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string x_label, std::string y_label);

  void add_line(const std::vector<double>& x, const std::vector<double>& y, const std::string& label);
  void add_scatter(const std::vector<double>& x, const std::vector<double>& y, const std::string& label);
  void add_bars(const std::vector<double>& centers, const std::vector<double>& heights, const std::string& label);
  void set_log_x(bool on) { log_x_ = on; }
  void set_log_y(bool on) { log_y_ = on; }

  std::string render() const;
  void save(const std::string& path) const;

 private:
  enum class Kind { kLine, kScatter, kBars };
  struct Series {
    Kind kind;
    std::vector<double> x;
    std::vector<double> y;
    std::string label;
  };

  std::string title_, x_label_, y_label_;
  std::vector<Series> series_;
  bool log_x_ = false;
  bool log_y_ = false;
};

// Empirical CDF steps (sorted values, cumulative fractions).
void empirical_cdf(std::vector<double> values, std::vector<double>& xs, std::vector<double>& ps);
double ks_statistic(std::vector<double> a, std::vector<double> b);
// Linear interpolation between order statistics, q in [0, 1].
double percentile(std::vector<double> values, double q);

}  // namespace kvae
