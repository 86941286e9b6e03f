// Experiment runner: kdl <command> --config cfg.json [--set k=v]... [--threads N] [--out dir]
//
// Commands: deflation, collision-check, inequality-suite, wellposed, correction.
// The config is a single JSON document; --set applies dotted-path overrides.
// Exit codes: 0 success, 2 validation failure, 3 numerical divergence.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "kdl/experiments.hpp"
#include "kdl/par.hpp"

namespace {

using nlohmann::json;

void apply_override(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw kdl::validation_error("--set expects key=value, got: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (...) {
    value = raw;  // plain string
  }
  json* node = &cfg;
  size_t pos = 0;
  for (;;) {
    const size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdl - cutoff Boltzmann norm-deflation laboratory"};
  std::string command, config_path, out_dir;
  std::vector<std::string> overrides;
  int threads = 0;
  app.add_option("command", command,
                 "deflation | collision-check | inequality-suite | wellposed | correction")
      ->required();
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--set", overrides, "dotted-path config override key=value");
  app.add_option("--threads", threads, "worker cap (0 = hardware)");
  app.add_option("--out", out_dir, "output directory");
  CLI11_PARSE(app, argc, argv);

  json cfg = json::object();
  try {
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw kdl::validation_error("cannot open config: " + config_path);
      is >> cfg;
    }
    cfg["command"] = command;
    for (const std::string& kv : overrides) apply_override(cfg, kv);
    if (threads > 0) {
      kdl::par::set_max_threads(threads);
      cfg["threads"] = threads;
    }
    if (out_dir.empty()) out_dir = cfg.value("output_dir", std::string("out"));
    cfg["output_dir"] = out_dir;

    const json summary = kdl::run_experiment(cfg, out_dir);
    std::cout << summary.dump(2) << std::endl;
  } catch (const kdl::divergence_error& e) {
    std::cerr << "divergence: " << e.what() << std::endl;
    return 3;
  } catch (const kdl::validation_error& e) {
    std::cerr << "invalid configuration: " << e.what() << std::endl;
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "invalid configuration: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
