#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace bddm {

/// Fixed-format number rendering shared by every CSV the project writes.
std::string format_number(double v);

/// Header-first CSV writer; every row must match the header width.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> header);

  void row(const std::vector<double>& values);
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
  std::size_t width_;
  std::string path_;
};

/// Writes `<csv_path>.json` next to a CSV: the resolved configuration plus any metadata.
void write_sidecar(const std::string& csv_path, const nlohmann::json& metadata);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// Raw little-endian doubles, independent of the host byte order.
void write_le_doubles(std::ostream& out, const double* data, std::size_t count);
void read_le_doubles(std::istream& in, double* data, std::size_t count);

/// Row-major little-endian doubles; `rows` x `cols` taken from the matrix with
/// one row per sample (the matrix is d x n, so the file holds n rows of d values).
/// A JSON sidecar `<path>.json` records shape and seed.
void write_state_dump(const std::string& path, const Eigen::MatrixXd& samples_by_column,
                      std::uint64_t seed, const nlohmann::json& extra = {});
Eigen::MatrixXd read_state_dump(const std::string& path);

/// Minimal SVG emitter for line plots, scatter plots and histograms.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string x_label, std::string y_label, bool log_x = false,
          bool log_y = false);

  void line(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
            const std::string& label = "", bool dashed = false);
  void scatter(const std::vector<double>& x, const std::vector<double>& y,
               const std::string& color, const std::string& label = "", double radius = 1.5);
  void bars(const std::vector<double>& left, const std::vector<double>& right,
            const std::vector<double>& height, const std::string& color,
            const std::string& label = "");
  void vertical_marker(double x, const std::string& color);

  void save(const std::string& path) const;

 private:
  struct Series {
    enum class Kind { line, scatter, bars, marker } kind;
    std::vector<double> x, y, x2;
    std::string color, label;
    bool dashed = false;
    double radius = 1.5;
  };
  std::string title_, x_label_, y_label_;
  bool log_x_, log_y_;
  std::vector<Series> series_;
};

}  // namespace bddm
