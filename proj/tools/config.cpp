// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace gridcast::cli {

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"seed", "0", "seed for scene generation, initialization and window sampling"},
      {"out", "out", "output directory"},
      {"threads", "0", "gen-data worker threads (0 = all cores)"},
      {"checkpoint", "", "model checkpoint read by predict/eval/ablate; 'persistence' = repeat-last-frame baseline"},

      {"data.dir", "data", "directory of .gcep episode files read by train/predict/eval/ablate"},
      {"data.episodes", "8", "episodes written by gen-data"},
      {"data.scenario", "all", "straight_pass | intersection_turn | static_clutter | crossing | all (cycled)"},
      {"data.steps", "30", "frames per episode at 10 Hz"},
      {"data.height", "32", "grid rows H"},
      {"data.width", "32", "grid columns W"},
      {"data.resolution", "0.333333333333", "cell size, meters"},
      {"data.alpha", "0.98", "evidence aging factor per step, in (0,1]"},
      {"data.world_cells", "256", "side of the world-frame fusion grid"},
      {"sensor.rays", "720", "LiDAR rays per sweep"},
      {"sensor.range", "8", "LiDAR range, meters"},
      {"sensor.noise", "0", "range noise standard deviation, meters"},
      {"sensor.p_occ", "0.7", "m(O) assigned to a hit cell"},
      {"sensor.p_free", "0.6", "m(F) assigned to cells a ray passes"},

      {"model.variant", "taa", "prednet | taa | saa | predrnn"},
      {"model.channels", "2,16,32", "per-layer channels (first = input channels)"},
      {"model.kernels", "3,3,3", "per-layer recurrent kernel sizes (odd)"},
      {"model.heads", "3", "attention heads N_h"},
      {"model.history", "4", "temporal attention history H_a"},
      {"model.attention_channels", "9", "attention channels d_k = d_v per attention layer (0 = use fraction)"},
      {"model.attention_fraction", "0.25", "attention share of a layer's channels when attention_channels = 0"},
      {"model.relative", "true", "relative position logits in attention"},
      {"model.layout", "channel", "gate peephole/bias shape: channel ([d]) | cell ([d,H,W])"},
      {"model.history_mode", "recent", "recent (learned weights) | uniform (fixed 1/H_a)"},
      {"model.hidden", "64,64,64,64", "predrnn: hidden channels per causal LSTM layer"},
      {"model.kernel", "5", "predrnn: kernel size"},
      {"model.patch", "4", "predrnn: space-to-depth patch size"},

      {"train.N", "5", "input frames per training window"},
      {"train.P", "10", "predicted frames per training window"},
      {"train.epochs", "200", "epochs"},
      {"train.samples", "32", "windows per epoch"},
      {"train.batch", "4", "windows per optimizer step"},
      {"train.lr", "0.001", "Adam learning rate"},
      {"train.clip", "1", "global gradient norm bound (0 = off)"},
      {"train.truncation", "0", "truncate backpropagation every k steps (0 = full)"},

      {"eval.N", "5", "input frames for predict/eval/ablate"},
      {"eval.P", "25", "predicted frames for predict/eval/ablate"},
      {"eval.start", "0", "first input frame within each episode"},
      {"eval.baseline", "true", "eval also scores the persistence baseline for the plots"},
      {"predict.episode", "0", "episode index (sorted file order) for predict/ablate"},
      {"ablate.layer", "-1", "layer whose heads are dropped (-1 = topmost attention layer)"},
      {"ablate.heads", "0", "expected head count (0 = take from the checkpoint)"},

      {"bench.history", "1,2,4,6", "history lengths H_a timed by bench-attn"},
      {"bench.size", "16", "bench-attn grid side"},
      {"bench.heads", "4", "bench-attn heads"},
      {"bench.channels", "32", "bench-attn channels"},
      {"bench.runs", "20", "bench-attn repetitions (median reported)"},
      {"bench.backward", "false", "bench-attn times the backward pass too"},
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  it->second = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override \"" + assignment + "\" is not key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingInput("config file not found: " + path);
  std::ifstream in(path);
  if (!in) throw MissingInput("cannot open config file " + path);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    try {
      apply_override(body);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  return it->second;
}

double Config::real(const std::string& key) const {
  const std::string& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": \"" + s + "\" is not a number");
}

std::int64_t Config::integer(const std::string& key) const {
  const std::string& s = str(key);
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": \"" + s + "\" is not an integer");
  }
  return v;
}

std::size_t Config::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError(key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

bool Config::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": \"" + s + "\" is not a boolean");
}

std::vector<std::size_t> Config::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError(key + ": \"" + str(key) + "\" is not a comma-separated list of counts");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key + " is empty");
  return out;
}

std::string Config::canonical() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  return s;
}

std::string Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

std::string describe_keys() {
  std::size_t width = 0;
  for (const auto& k : config_keys()) width = std::max(width, k.key.size() + k.default_value.size() + 1);
  std::string s = "Config keys (key=default), set in a --config file or as key=value arguments:\n";
  for (const auto& k : config_keys()) {
    std::string left = k.key + "=" + k.default_value;
    left.resize(width + 2, ' ');
    s += "  " + left + k.help + "\n";
  }
  return s;
}

}  // namespace gridcast::cli
