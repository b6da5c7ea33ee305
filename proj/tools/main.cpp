// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "commands.hpp"

using namespace gridcast::cli;

namespace {

/// Shortcut flags per command, each bound to one config key.
const std::map<std::string, std::vector<std::pair<std::string, std::string>>>& shortcuts() {
  static const std::map<std::string, std::vector<std::pair<std::string, std::string>>> s = {
      {"gen-data", {{"--episodes", "data.episodes"}, {"--scenario", "data.scenario"}, {"--steps", "data.steps"}}},
      {"train",
       {{"--data", "data.dir"}, {"--variant", "model.variant"}, {"--epochs", "train.epochs"},
        {"--N", "train.N"}, {"--P", "train.P"}, {"--lr", "train.lr"}}},
      {"predict",
       {{"--checkpoint", "checkpoint"}, {"--data", "data.dir"}, {"--episode", "predict.episode"},
        {"--N", "eval.N"}, {"--P", "eval.P"}}},
      {"eval", {{"--checkpoint", "checkpoint"}, {"--data", "data.dir"}, {"--N", "eval.N"}, {"--P", "eval.P"}}},
      {"ablate",
       {{"--checkpoint", "checkpoint"}, {"--data", "data.dir"}, {"--heads", "ablate.heads"},
        {"--layer", "ablate.layer"}, {"--episode", "predict.episode"}, {"--N", "eval.N"}, {"--P", "eval.P"}}},
      {"bench-attn", {{"--history", "bench.history"}, {"--runs", "bench.runs"}, {"--size", "bench.size"}}},
  };
  return s;
}

const char* describe(const std::string& cmd) {
  if (cmd == "gen-data") return "simulate LiDAR scenes and write DST occupancy episodes";
  if (cmd == "train") return "train a sequence model on episodes; writes checkpoints and the loss curve";
  if (cmd == "predict") return "roll a checkpoint forward on one episode; writes frames and PGM images";
  if (cmd == "eval") return "score predictions per horizon step (MSE, IS, MOBBM); writes JSONL and SVG plots";
  if (cmd == "ablate") return "drop each attention head in turn and compare the predictions";
  return "time temporal attention for several history lengths";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridcast: occupancy grid prediction with attention-augmented recurrent networks"};
  app.require_subcommand(1);
  app.footer(describe_keys());

  struct Parsed {
    std::string config_file, out, seed;
    std::vector<std::string> overrides;
    std::map<std::string, std::string> flags;
  };
  std::map<std::string, Parsed> parsed;
  for (const auto& name : command_names()) {
    Parsed& p = parsed[name];
    CLI::App* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", p.config_file, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--out", p.out, "output directory (key: out)");
    sub->add_option("--seed", p.seed, "random seed (key: seed)");
    sub->add_option("--set", p.overrides, "key=value override (repeatable)");
    sub->add_option("overrides", p.overrides, "key=value overrides, applied last");
    for (const auto& [flag, key] : shortcuts().at(name)) {
      sub->add_option(flag, p.flags[key], "sets " + key);
    }
    sub->footer("Run 'gridcast --help' for the list of config keys.");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    // CLI11 reports a missing --config file as a validation error.
    const std::string what = e.what();
    return what.find("File does not exist") != std::string::npos ? kMissingInput : kBadConfig;
  }

  for (const auto& name : command_names()) {
    if (!app.got_subcommand(name)) continue;
    Parsed& p = parsed[name];
    Config cfg;
    try {
      if (!p.config_file.empty()) cfg.load_file(p.config_file);
      if (!p.out.empty()) cfg.set("out", p.out);
      if (!p.seed.empty()) cfg.set("seed", p.seed);
      for (const auto& [key, value] : p.flags) {
        if (!value.empty()) cfg.set(key, value);
      }
      for (const auto& o : p.overrides) cfg.apply_override(o);
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kBadConfig;
    } catch (const MissingInput& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kMissingInput;
    }
    return run_command_checked(name, cfg);
  }
  return kBadConfig;
}
