#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hyneter/backbone.hpp"
#include "hyneter/cli.hpp"

using namespace hyneter;

namespace {

struct Run {
  int status = 0;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.status = cli_dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("params prints three counts and two ratios") {
  const Run r = run({"params"});
  REQUIRE(r.status == 0);
  for (const char* name : {"hyneter-1.0", "hyneter-plus", "hyneter-max"}) {
    const std::string expect = std::string(name) + ": " + std::to_string(count_params(variant_config(name), false));
    CHECK(r.out.find(expect) != std::string::npos);
  }
  CHECK(r.out.find("ratio hyneter-plus/hyneter-1.0: ") != std::string::npos);
  CHECK(r.out.find("ratio hyneter-max/hyneter-1.0: ") != std::string::npos);
}

TEST_CASE("build and forward on micro") {
  const Run b = run({"build", "--variant", "micro"});
  CHECK(b.status == 0);
  CHECK(b.out.find(std::to_string(count_params(variant_config("hyneter-micro")))) != std::string::npos);
  const Run f = run({"forward", "--variant", "micro", "--batch", "2"});
  CHECK(f.status == 0);
  CHECK(f.out.find("status: pass") != std::string::npos);
}

TEST_CASE("gradcheck passes on micro") {
  const Run r = run({"gradcheck", "--seed", "7", "--samples", "100", "--op-seeds", "3"});
  CHECK(r.status == 0);
  CHECK(r.out.find("worst_relative_error:") != std::string::npos);
  CHECK(r.out.find("status: pass") != std::string::npos);
}

TEST_CASE("sweep writes one row per value") {
  const auto path = std::filesystem::temp_directory_path() / "hyneter_test_cli_sweep.csv";
  std::filesystem::remove(path);
  const Run r = run({"sweep", "--factor", "delta", "--values", "0.5,1,1.5,2", "--steps", "2", "--batch", "4",
                     "--samples", "30", "--test-samples", "15", "--out", path.string()});
  REQUIRE(r.status == 0);
  CHECK(count_lines(r.out) == 5);
  std::ifstream in(path, std::ios::binary);
  const std::string file{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  CHECK(file == r.out);
}

TEST_CASE("bad arguments fail with a message") {
  CHECK(run({}).status != 0);
  CHECK(run({"frobnicate"}).status != 0);
  CHECK(run({"forward", "--batch", "zero"}).status != 0);
  const Run v = run({"build", "--variant", "huge"});
  CHECK(v.status != 0);
  CHECK(v.err.find("valid variants") != std::string::npos);
  const Run s = run({"sweep", "--factor", "TB", "--values", "1,x"});
  CHECK(s.status != 0);
  CHECK(s.err.find("'x'") != std::string::npos);
  CHECK(run({"--help"}).status == 0);
}

}  // TEST_SUITE
