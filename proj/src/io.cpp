#include "bddm/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <sstream>

#include "bddm/error.hpp"

namespace bddm {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path, std::vector<std::string> header)
    : out_(path), width_(header.size()), path_(path) {
  if (!out_) throw ConfigError("cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != width_) throw ConfigError("row width mismatch in " + path_);
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
  out_ << '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) throw ConfigError("row width mismatch in " + path_);
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
}

void write_sidecar(const std::string& csv_path, const nlohmann::json& metadata) {
  write_json(csv_path + ".json", metadata);
}

// ---------------------------------------------------------------------------
// Binary state dumps

void write_le_doubles(std::ostream& out, const double* data, std::size_t count) {
  unsigned char bytes[8];
  for (std::size_t n = 0; n < count; ++n) {
    const auto bits = std::bit_cast<std::uint64_t>(data[n]);
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

void read_le_doubles(std::istream& in, double* data, std::size_t count) {
  unsigned char bytes[8];
  for (std::size_t n = 0; n < count; ++n) {
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw ConfigError("truncated binary data");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    data[n] = std::bit_cast<double>(bits);
  }
}

void write_state_dump(const std::string& path, const Eigen::MatrixXd& samples, std::uint64_t seed,
                      const nlohmann::json& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  // A column-major d x n matrix is exactly n rows of d values in row-major order.
  const Eigen::MatrixXd dense = samples;
  write_le_doubles(out, dense.data(), static_cast<std::size_t>(dense.size()));
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["shape"] = {samples.cols(), samples.rows()};
  meta["dtype"] = "float64";
  meta["byte_order"] = "little";
  meta["layout"] = "row-major";
  meta["seed"] = seed;
  write_json(path + ".json", meta);
}

Eigen::MatrixXd read_state_dump(const std::string& path) {
  const nlohmann::json meta = read_json(path + ".json");
  const auto rows = meta.at("shape")[0].get<Eigen::Index>();
  const auto cols = meta.at("shape")[1].get<Eigen::Index>();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  Eigen::MatrixXd samples(cols, rows);
  read_le_doubles(in, samples.data(), static_cast<std::size_t>(samples.size()));
  return samples;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string escape(const std::string& text) {
  std::string r;
  for (char c : text) {
    if (c == '<') r += "&lt;";
    else if (c == '>') r += "&gt;";
    else if (c == '&') r += "&amp;";
    else r += c;
  }
  return r;
}

}  // namespace

SvgPlot::SvgPlot(std::string title, std::string x_label, std::string y_label, bool log_x,
                 bool log_y)
    : title_(std::move(title)),
      x_label_(std::move(x_label)),
      y_label_(std::move(y_label)),
      log_x_(log_x),
      log_y_(log_y) {}

void SvgPlot::line(const std::vector<double>& x, const std::vector<double>& y,
                   const std::string& color, const std::string& label, bool dashed) {
  Series s{Series::Kind::line, x, y, {}, color, label, dashed};
  series_.push_back(std::move(s));
}

void SvgPlot::scatter(const std::vector<double>& x, const std::vector<double>& y,
                      const std::string& color, const std::string& label, double radius) {
  Series s{Series::Kind::scatter, x, y, {}, color, label};
  s.radius = radius;
  series_.push_back(std::move(s));
}

void SvgPlot::bars(const std::vector<double>& left, const std::vector<double>& right,
                   const std::vector<double>& height, const std::string& color,
                   const std::string& label) {
  Series s{Series::Kind::bars, left, height, right, color, label};
  series_.push_back(std::move(s));
}

void SvgPlot::vertical_marker(double x, const std::string& color) {
  Series s{Series::Kind::marker, {x}, {}, {}, color, ""};
  series_.push_back(std::move(s));
}

void SvgPlot::save(const std::string& path) const {
  constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
  auto tx = [&](double v) { return log_x_ ? std::log10(std::max(v, 1e-300)) : v; };
  auto ty = [&](double v) { return log_y_ ? std::log10(std::max(v, 1e-300)) : v; };

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  auto grow_x = [&](double v) {
    if (std::isfinite(tx(v))) x_lo = std::min(x_lo, tx(v)), x_hi = std::max(x_hi, tx(v));
  };
  auto grow_y = [&](double v) {
    if (std::isfinite(ty(v))) y_lo = std::min(y_lo, ty(v)), y_hi = std::max(y_hi, ty(v));
  };
  for (const auto& s : series_) {
    for (double v : s.x) grow_x(v);
    for (double v : s.x2) grow_x(v);
    if (s.kind == Series::Kind::bars) grow_y(log_y_ ? 1.0 : 0.0);
    for (double v : s.y) grow_y(v);
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1;
  if (!std::isfinite(y_lo)) y_lo = 0, y_hi = 1;
  if (x_hi - x_lo < 1e-12) x_lo -= 0.5, x_hi += 0.5;
  if (y_hi - y_lo < 1e-12) y_lo -= 0.5, y_hi += 0.5;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (tx(v) - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double v) { return kTop + ph - (ty(v) - y_lo) / (y_hi - y_lo) * ph; };

  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  auto num = [](double v) { return format_number(std::round(v * 100.0) / 100.0); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(title_) << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x_lo + (x_hi - x_lo) * i / 4.0;
    const double fy = y_lo + (y_hi - y_lo) * i / 4.0;
    const double gx = kLeft + pw * i / 4.0, gy = kTop + ph - ph * i / 4.0;
    out << "<text x=\"" << num(gx) << "\" y=\"" << kTop + ph + 16
        << "\" text-anchor=\"middle\">" << format_number(log_x_ ? std::pow(10.0, fx) : fx)
        << "</text>\n";
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(gy + 4) << "\" text-anchor=\"end\">"
        << format_number(log_y_ ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
      << escape(x_label_) << "</text>\n";
  out << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kHeight / 2 << ")\">" << escape(y_label_) << "</text>\n";

  int legend = 0;
  for (const auto& s : series_) {
    switch (s.kind) {
      case Series::Kind::line: {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
            << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
          if (std::isfinite(tx(s.x[i])) && std::isfinite(ty(s.y[i])))
            out << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        out << "\"/>\n";
        break;
      }
      case Series::Kind::scatter:
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
          out << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\""
              << s.radius << "\" fill=\"" << s.color << "\" fill-opacity=\"0.6\"/>\n";
        break;
      case Series::Kind::bars:
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          const double x0 = px(s.x[i]), x1 = px(s.x2[i]);
          const double top = py(s.y[i]), base = py(log_y_ ? 1.0 : 0.0);
          out << "<rect x=\"" << num(std::min(x0, x1)) << "\" y=\"" << num(std::min(top, base))
              << "\" width=\"" << num(std::max(std::abs(x1 - x0), 0.5)) << "\" height=\""
              << num(std::abs(base - top)) << "\" fill=\"" << s.color
              << "\" fill-opacity=\"0.5\" stroke=\"" << s.color << "\"/>\n";
        }
        break;
      case Series::Kind::marker:
        out << "<line x1=\"" << num(px(s.x[0])) << "\" x2=\"" << num(px(s.x[0])) << "\" y1=\""
            << kTop << "\" y2=\"" << kTop + ph << "\" stroke=\"" << s.color
            << "\" stroke-dasharray=\"2,2\"/>\n";
        break;
    }
    if (!s.label.empty()) {
      const double ly = kTop + 14 + 16 * legend++;
      out << "<rect x=\"" << kLeft + pw - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
          << s.color << "\"/>\n";
      out << "<text x=\"" << kLeft + pw - 135 << "\" y=\"" << ly << "\">" << escape(s.label) << "</text>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace bddm
