#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

std::string kdl_bin() {
  const char* p = std::getenv("KDL_BIN");
  return p ? p : "./kdl";
}

int run(const std::string& args, std::string* out = nullptr) {
  const std::string dir = "/tmp/kdl_cli_test";
  const std::string cmd = kdl_bin() + " " + args + " > " + dir + "/stdout.txt 2> " +
                          dir + "/stderr.txt";
  std::filesystem::create_directories(dir);
  const int rc = std::system(cmd.c_str());
  if (out) {
    std::ifstream is(dir + "/stdout.txt");
    std::stringstream ss;
    ss << is.rdbuf();
    *out = ss.str();
  }
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("unknown command exits with validation status") {
  CHECK(run("frobnicate --out /tmp/kdl_cli_test/a") == 2);
}

TEST_CASE("invalid gamma names the admissible range and exits 2") {
  const int rc = run(
      "deflation --set params.gamma=-3 --set params.M_values=[4] --out /tmp/kdl_cli_test/b");
  CHECK(rc == 2);
  const std::string err = slurp("/tmp/kdl_cli_test/stderr.txt");
  CHECK(err.find("-(d-1)/2") != std::string::npos);
}

TEST_CASE("inequality suite: same seed reproduces the summary bitwise") {
  const std::string args =
      "inequality-suite --set trials=5 --set seed=77 --set 'kinds=[\"HLS\",\"QLossLr\"]'";
  REQUIRE(run(args + " --out /tmp/kdl_cli_test/r1 --threads 2") == 0);
  REQUIRE(run(args + " --out /tmp/kdl_cli_test/r2 --threads 1") == 0);
  const std::string a = slurp("/tmp/kdl_cli_test/r1/summary.json");
  const std::string b = slurp("/tmp/kdl_cli_test/r2/summary.json");
  CHECK(!a.empty());
  CHECK(a == b);
  CHECK(!slurp("/tmp/kdl_cli_test/r1/manifest.json").empty());
  CHECK(!slurp("/tmp/kdl_cli_test/r1/inequalities.json").empty());
}

TEST_CASE("deflation with reduced parameters writes artifacts with ratio > 1") {
  const int rc = run(
      "deflation --set params.M=2 --set params.N2=4 --set params.N1=8 "
      "--set n_times=3 --set bracket_samples=16 --out /tmp/kdl_cli_test/defl");
  REQUIRE(rc == 0);
  const std::string csv = slurp("/tmp/kdl_cli_test/defl/deflation.csv");
  CHECK(csv.find("M,t,norm_fa,norm_fr,norm_fb") == 0);
  const std::string summary = slurp("/tmp/kdl_cli_test/defl/summary.json");
  CHECK(!summary.empty());
  // the leading ratio entry must exceed one (exp[-beta] >= 1 on the core)
  const auto pos = summary.find("\"ratio\"");
  REQUIRE(pos != std::string::npos);
  const double ratio = std::atof(summary.c_str() + pos + 8);
  CHECK(ratio > 1.0);
}

TEST_CASE("wellposed command reports halving residuals") {
  const int rc =
      run("wellposed --set n_steps=4 --set nv=16 --set max_iter=6 --out "
          "/tmp/kdl_cli_test/wp");
  REQUIRE(rc == 0);
  const std::string csv = slurp("/tmp/kdl_cli_test/wp/residuals.csv");
  CHECK(csv.find("iteration,distance") == 0);
}
