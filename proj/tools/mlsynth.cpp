#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlsynth/errors.hpp"
#include "mlsynth/pipeline.hpp"

using namespace mlsynth;

namespace {

int run_verb(const std::string& verb, const std::string& config_path, const std::string& out_flag, int threads) {
  RunConfig cfg = load_config(config_path);
  const std::string out = out_flag.empty() ? cfg.output_dir : out_flag;
  Pipeline p(std::move(cfg));
  std::vector<std::string> stages;
  std::string stage = "spec";
  int status = 0;
  try {
    write_dfa(p, out);
    if (verb == "quantify" || verb == "all") {
      if (p.uses_grid()) {
        stage = "quantify";
        p.run_quantify();
        write_layerspec(p, out);
        stages.push_back(stage);
      } else if (verb == "quantify") {
        std::cerr << "mode " << mode_name(p.cfg.mode) << " has no grid layers to quantify\n";
        status = 1;
      }
    }
    if (verb == "abstract" || verb == "all") {
      if (p.uses_grid()) {
        stage = "abstract";
        p.run_abstract();
        write_abstraction_summary(p, out);
        stages.push_back(stage);
      } else if (verb == "abstract") {
        std::cerr << "mode " << mode_name(p.cfg.mode) << " has no grid layers to abstract\n";
        status = 1;
      }
    }
    if (verb == "waypoints" || verb == "all") {
      if (p.uses_waypoints()) {
        stage = "waypoints";
        p.run_waypoints();
        write_waypoints(p, out);
        stages.push_back(stage);
      } else if (verb == "waypoints") {
        std::cerr << "mode " << mode_name(p.cfg.mode) << " has no waypoint layer\n";
        status = 1;
      }
    }
    if (verb == "synthesize" || verb == "simulate" || verb == "all") {
      stage = "synthesize";
      p.run_synthesize();
      if (p.layers) write_layerspec(p, out);
      if (p.grid) write_abstraction_summary(p, out);
      if (p.waypoints) write_waypoints(p, out);
      write_values(p, out);
      stages.push_back(stage);
      std::cout << "value iteration: " << p.result->iterations << " sweeps, residual " << p.result->residual
                << (p.result->converged ? "" : " (not converged)") << '\n';
    }
    if (verb == "simulate" || verb == "all") {
      stage = "simulate";
      p.run_validate();
      write_validation(p, out);
      stages.push_back(stage);
      for (const auto& row : p.validation) {
        std::cout << "x0 = [" << row.x0.transpose() << "]: certified " << row.certified.value << ", empirical "
                  << row.mc.probability << " +/- " << row.mc.half_width << (row.sound ? "" : "  BELOW BOUND") << '\n';
        if (!row.sound) status = 1;
      }
    }
  } catch (const PartialModelError& e) {
    if (p.waypoints) write_waypoints(p, out);
    std::cerr << "stage " << stage << " failed: " << e.what() << '\n';
    status = 1;
  } catch (const std::exception& e) {
    std::cerr << "stage " << stage << " failed: " << e.what() << '\n';
    status = 1;
  }
  p.seconds["threads"] = threads;
  write_manifest(p, out, stages);
  std::cout << "artifacts in " << std::filesystem::absolute(out).string() << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-layered abstraction-based controller synthesis for stochastic linear systems"};
  app.require_subcommand(1);
  std::string config, out;
  int threads = 1;
  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"quantify", "compute the precision/deviation matrix of the grid layers"},
      {"abstract", "build the gridded abstraction"},
      {"waypoints", "sample the waypoint model"},
      {"synthesize", "run value iteration and write values and policies"},
      {"simulate", "synthesize, then check the certified bounds by Monte-Carlo"},
      {"all", "every stage the configured mode needs"}};
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config, "JSON run configuration (a manifest also works)")->required();
    sub->add_option("-o,--out", out, "output directory (default: the config's 'output')");
    sub->add_option("-t,--threads", threads, "worker cap (computation is single-threaded)")->check(CLI::PositiveNumber);
  }
  CLI11_PARSE(app, argc, argv);
  std::string verb = app.get_subcommands().front()->get_name();
  try {
    return run_verb(verb, config, out, threads);
  } catch (const std::exception& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  }
}
