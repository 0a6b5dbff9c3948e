#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bddm/error.hpp"
#include "bddm/io.hpp"

using namespace bddm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bddm_io_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("number format round trips") {
  for (double v : {0.0, 1.0, -2.5, 1.0 / 3.0, 1e-300, 6.02e23, 0.1 + 0.2}) {
    const std::string s = format_number(v);
    CHECK(std::abs(std::stod(s) - v) <= 1e-11 * std::abs(v));
  }
  CHECK(format_number(3.0) == format_number(3.0));
}

TEST_CASE("csv writer enforces the header width") {
  const fs::path p = scratch("t.csv");
  {
    CsvWriter csv(p.string(), {"a", "b"});
    csv.row({1.0, 2.0});
    csv.row(std::vector<std::string>{"x", "y"});
    CHECK_THROWS_AS(csv.row(std::vector<double>{1.0}), ConfigError);
  }
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  CHECK(line == "a,b");
  std::getline(in, line);
  CHECK(line == format_number(1.0) + "," + format_number(2.0));
  CHECK_THROWS(CsvWriter((fs::temp_directory_path() / "no_such_dir" / "x.csv").string(), {"a"}));
}

TEST_CASE("sidecar and json files") {
  const fs::path p = scratch("s.csv");
  write_sidecar(p.string(), {{"config", {{"seed", 3}}}});
  const auto j = read_json(p.string() + ".json");
  CHECK(j.at("config").at("seed") == 3);
  std::ofstream(scratch("bad.json")) << "{ not json";
  CHECK_THROWS_AS(read_json(scratch("bad.json").string()), ConfigError);
  CHECK_THROWS_AS(read_json(scratch("missing.json").string()), ConfigError);
}

TEST_CASE("little-endian doubles") {
  const double values[3] = {1.0, -0.5, 1e-310};
  std::stringstream buf;
  write_le_doubles(buf, values, 3);
  const std::string bytes = buf.str();
  REQUIRE(bytes.size() == 24);
  // 1.0 = 0x3FF0000000000000, least significant byte first
  CHECK(static_cast<unsigned char>(bytes[6]) == 0xF0);
  CHECK(static_cast<unsigned char>(bytes[7]) == 0x3F);
  double back[3];
  read_le_doubles(buf, back, 3);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == values[i]);
  std::stringstream short_buf(std::string(8, '\0'));
  CHECK_THROWS_AS(read_le_doubles(short_buf, back, 3), ConfigError);
}

TEST_CASE("state dump round trip") {
  const fs::path p = scratch("states.bin");
  const Eigen::MatrixXd m = Eigen::MatrixXd::Random(3, 5);
  write_state_dump(p.string(), m, 42, {{"note", "x"}});
  CHECK(fs::file_size(p) == 15 * sizeof(double));
  const auto side = read_json(p.string() + ".json");
  CHECK(side.at("shape") == nlohmann::json::array({5, 3}));
  CHECK(side.at("note") == "x");
  CHECK(side.at("seed") == 42);
  CHECK(read_state_dump(p.string()) == m);
  // row-major: the first row on disk is the first sample
  std::ifstream in(p, std::ios::binary);
  double first[3];
  read_le_doubles(in, first, 3);
  for (int i = 0; i < 3; ++i) CHECK(first[i] == m(i, 0));
}

TEST_CASE("svg output is deterministic") {
  auto draw = [](const fs::path& p) {
    SvgPlot plot("title <&>", "x", "y", true, false);
    plot.line({1, 2, 3}, {1, 4, 9}, "#123456", "squares", true);
    plot.scatter({1, 2}, {3, 4}, "red");
    plot.bars({0, 1}, {1, 2}, {5, 6}, "blue", "hist");
    plot.vertical_marker(2.0, "black");
    plot.save(p.string());
  };
  draw(scratch("a.svg"));
  draw(scratch("b.svg"));
  const std::string a = slurp(scratch("a.svg"));
  CHECK(a == slurp(scratch("b.svg")));
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(a.find("&lt;&amp;&gt;") != std::string::npos);
  SvgPlot empty("t", "x", "y");
  CHECK_NOTHROW(empty.save(scratch("c.svg").string()));
  fs::remove_all(fs::temp_directory_path() / "bddm_io_test");
}

}  // TEST_SUITE
