#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "difftrace/difftrace.hpp"

using namespace difftrace;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(DIFFTRACE_CLI) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  Run r;
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), p) != nullptr) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "difftrace_test_cli" / name;
  fs::remove_all(dir);
  return dir.string();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const std::string kScenes = DIFFTRACE_SCENES;

}  // namespace

TEST_CASE("render writes the map files and a versioned report") {
  const std::string out = fresh_dir("render");
  const Run r = run("render --scene " + kScenes + "/sphere.json --res 32 --out " + out);
  REQUIRE(r.code == 0);
  CHECK(lines(r.out).size() == 1);
  for (const char* f : {"depth.pfm", "normal.png", "sil.pgm", "report.json"}) CHECK(fs::exists(fs::path(out) / f));
  const Json rep = read_json_file(out + "/report.json");
  CHECK(rep.at("schema") == "difftrace-report");
  CHECK(rep.at("version") == 1);
  CHECK(rep.at("command") == "render");
  CHECK(rep.at("exit_code") == 0);
  const Image depth = read_depth_pfm(out + "/depth.pfm");
  CHECK(depth.width == 32);
}

TEST_CASE("bench prints four rows with strictly decreasing queries") {
  const std::string out = fresh_dir("bench");
  const Run r = run("bench --scene " + kScenes + "/bench.json --res 64 --out " + out);
  REQUIRE(r.code == 0);
  const Json rep = read_json_file(out + "/report.json");
  const Json& rows = rep.at("rows");
  CHECK(lines(r.out).size() == 6);  // header, 4 strategies, summary
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].at("queries") < rows[i - 1].at("queries"));
  CHECK(rep.at("metrics").at("strictly_decreasing") == true);
}

TEST_CASE("gradcheck passes and reports each check") {
  const std::string out = fresh_dir("gradcheck");
  const Run r = run("gradcheck --out " + out);
  CHECK(r.code == 0);
  const Json rep = read_json_file(out + "/report.json");
  CHECK(rep.at("checks").size() == 6);
}

TEST_CASE("exit codes") {
  CHECK(run("").code == 2);
  CHECK(run("render").code == 2);  // --scene missing
  CHECK(run("render --scene " + kScenes + "/sphere.json --res -3").code == 2);
  CHECK(run("render --scene /nonexistent/scene.json").code == 4);

  const std::string dir = fresh_dir("bad");
  fs::create_directories(dir);
  write_json_file(dir + "/unknown.json", Json{{"format", "difftrace-scene"}, {"version", 1}, {"colour", 3}});
  CHECK(run("render --scene " + dir + "/unknown.json").code == 2);
  // completion needs a latent code; an analytic scene is a configuration error
  CHECK(run("complete-depth --scene " + kScenes + "/sphere.json --out " + dir).code == 2);
}
