// Command-line front end. All work happens in difftrace/app.hpp; this file only
// parses flags, prints the summary and maps errors onto exit codes.

#include <CLI11.hpp>
#include <iostream>

#include "difftrace/app.hpp"

using namespace difftrace;

namespace {

int emit(const CommandResult& r) {
  for (const std::string& line : r.table) std::cout << line << '\n';
  std::cout << r.summary << std::endl;
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"difftrace: sphere tracing and inverse rendering of signed distance fields"};
  cli.require_subcommand(1);
  CommonOptions common;
  std::string scene_path;
  std::function<int()> action;

  auto add = [&](const char* name, const char* help, bool needs_scene, auto run) {
    CLI::App* sub = cli.add_subcommand(name, help);
    sub->add_option("--seed", common.seed, "random seed")->capture_default_str();
    sub->add_option("--threads", common.threads, "worker threads (0: all cores)")->capture_default_str();
    sub->add_option("--res", common.res, "override camera resolution (square)")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", common.out, "output directory (default: the scene's)");
    if (needs_scene) sub->add_option("--scene", scene_path, "scene JSON")->required();
    sub->callback([&, run] { action = [&, run] { return run(); }; });
  };
  add("render", "render depth, normal and silhouette maps", true, [&] { return emit(run_render(read_scene(scene_path), common)); });
  add("complete-depth", "fit a latent code to depth (+ silhouette)", true,
      [&] { return emit(run_complete_depth(read_scene(scene_path), common)); });
  add("recover-pose", "recover a perturbed camera pose", true, [&] { return emit(run_recover_pose(read_scene(scene_path), common)); });
  add("mvs", "latent code from textured multi-view images", true, [&] { return emit(run_mvs(read_scene(scene_path), common)); });
  add("fit-toy", "fit a neural field to analytic shapes", true, [&] { return emit(run_fit_toy(read_scene(scene_path), common)); });
  add("gradcheck", "compare analytic gradients against finite differences", false,
      [&] { return emit(run_gradcheck_command(common)); });
  add("bench", "query counts as tracer accelerations are enabled", true,
      [&] { return emit(run_bench_command(read_scene(scene_path), common)); });

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorCategory::config);
  }
  try {
    return action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return static_cast<int>(ErrorCategory::numeric);
  }
}
