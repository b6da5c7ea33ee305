// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "gridcast/bench.hpp"
#include "gridcast/checkpoint.hpp"
#include "gridcast/metrics.hpp"
#include "gridcast/training.hpp"
#include "render.hpp"

#ifndef GRIDCAST_VERSION
#define GRIDCAST_VERSION "unknown"
#endif

namespace fs = std::filesystem;

namespace gridcast::cli {

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"gen-data", "train",  "predict",
                                                 "eval",     "ablate", "bench-attn"};
  return names;
}

std::vector<std::string> episode_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw MissingInput("episode directory not found: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".gcep") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw MissingInput("no .gcep episode files in " + dir);
  return out;
}

namespace {

// ---------------------------------------------------------------- helpers

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

fs::path output_dir(const Config& cfg) {
  const fs::path out = cfg.str("out");
  if (out.empty()) throw ConfigError("out must not be empty");
  fs::create_directories(out);
  return out;
}

nlohmann::json versions() {
  return {{"gridcast", GRIDCAST_VERSION},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION}};
}

/// Record written next to every command's artifacts. No timestamps, so that
/// reruns with the same config produce identical files.
void write_manifest(const fs::path& out, const std::string& command, const Config& cfg,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json m = {{"command", command},
                      {"config_hash", cfg.hash()},
                      {"seed", cfg.integer("seed")},
                      {"config", cfg.to_json()},
                      {"versions", versions()},
                      {"inputs", inputs},
                      {"outputs", outputs}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(out / (command + ".manifest.json"), m.dump(2) + "\n");
}

template <typename F>
auto as_config_error(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::uint64_t seed_of(const Config& cfg) {
  const std::int64_t s = cfg.integer("seed");
  if (s < 0) throw ConfigError("seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

ScenarioConfig scenario_config(const Config& cfg) {
  ScenarioConfig sc;
  sc.height = cfg.count("data.height");
  sc.width = cfg.count("data.width");
  sc.resolution = cfg.real("data.resolution");
  sc.steps = cfg.count("data.steps");
  sc.alpha = cfg.real("data.alpha");
  sc.world_cells = cfg.count("data.world_cells");
  sc.sensor.rays = cfg.count("sensor.rays");
  sc.sensor.range = cfg.real("sensor.range");
  sc.sensor.noise_sigma = cfg.real("sensor.noise");
  sc.sensor.p_occ = cfg.real("sensor.p_occ");
  sc.sensor.p_free = cfg.real("sensor.p_free");
  if (sc.height == 0 || sc.width == 0 || sc.steps == 0) throw ConfigError("grid size and steps must be positive");
  if (!(sc.resolution > 0)) throw ConfigError("data.resolution must be positive");
  if (!(sc.alpha > 0 && sc.alpha <= 1)) throw ConfigError("data.alpha must lie in (0,1]");
  if (sc.sensor.rays == 0 || !(sc.sensor.range > 0)) throw ConfigError("sensor rays and range must be positive");
  for (double p : {sc.sensor.p_occ, sc.sensor.p_free}) {
    if (!(p >= 0 && p <= 1)) throw ConfigError("sensor masses must lie in [0,1]");
  }
  return sc;
}

std::unique_ptr<SequenceModel<float>> model_from_config(const Config& cfg) {
  const std::string variant = cfg.str("model.variant");
  const std::uint64_t seed = seed_of(cfg);
  return as_config_error("model configuration", [&]() -> std::unique_ptr<SequenceModel<float>> {
    if (variant == "predrnn") {
      PredRNNConfig pc;
      pc.hidden = cfg.counts("model.hidden");
      pc.kernel = cfg.count("model.kernel");
      pc.patch = cfg.count("model.patch");
      pc.height = cfg.count("data.height");
      pc.width = cfg.count("data.width");
      pc.validate();
      return std::make_unique<PredRNNpp<float>>(pc, seed);
    }
    StackConfig sc;
    sc.channels = cfg.counts("model.channels");
    sc.kernels = cfg.counts("model.kernels");
    sc.height = cfg.count("data.height");
    sc.width = cfg.count("data.width");
    sc.heads = cfg.count("model.heads");
    sc.horizon = cfg.count("model.history");
    sc.attention_channels = cfg.count("model.attention_channels");
    sc.attention_fraction = cfg.real("model.attention_fraction");
    sc.relative = cfg.flag("model.relative");
    sc.layout = gate_layout_from_string(cfg.str("model.layout"));
    sc.history_mode = history_mode_from_string(cfg.str("model.history_mode"));
    apply_variant(sc, variant);
    sc.validate();
    return std::make_unique<PredNet<float>>(sc, seed);
  });
}

std::vector<EpisodeRecord> load_episodes(const std::vector<std::string>& files) {
  std::vector<EpisodeRecord> eps;
  for (const auto& f : files) eps.push_back(load_episode(f));
  return eps;
}

void check_grid(const nlohmann::json& model_manifest, const EpisodeRecord& ep) {
  const auto& c = model_manifest.at("config");
  const std::size_t h = c.at("height"), w = c.at("width");
  if (h != ep.height || w != ep.width) {
    throw ConfigError("model grid " + std::to_string(h) + "x" + std::to_string(w) +
                      " does not match episode grid " + std::to_string(ep.height) + "x" +
                      std::to_string(ep.width));
  }
}

struct LoadedModel {
  std::unique_ptr<SequenceModel<float>> model;  // null for the persistence baseline
  nlohmann::json manifest;
  std::string id;
};

LoadedModel load_model(const Config& cfg) {
  const std::string path = cfg.str("checkpoint");
  if (path.empty()) throw ConfigError("checkpoint is not set (a .ckpt path or 'persistence')");
  if (path == "persistence") return {nullptr, {}, "persistence"};
  if (!fs::exists(path)) throw MissingInput("checkpoint not found: " + path);
  LoadedModel m;
  m.model = load_checkpoint<float>(path, &m.manifest);
  m.id = path;
  return m;
}

Predictor predictor_of(const LoadedModel& m) {
  if (!m.model) return persistence_predictor();
  const SequenceModel<float>* model = m.model.get();
  return [model](const Tensor<float>& in, std::size_t horizon) { return model->predict(in, horizon); };
}

std::pair<std::size_t, std::size_t> protocol(const Config& cfg, const std::string& prefix) {
  const std::size_t n = cfg.count(prefix + ".N"), p = cfg.count(prefix + ".P");
  if (n == 0 || p == 0) throw ConfigError(prefix + ".N and " + prefix + ".P must be >= 1");
  return {n, p};
}

std::vector<double> pignistic_image(const Tensor<float>& frame) {
  const std::size_t n = frame.numel() / 2;
  std::vector<double> img(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double o = frame.storage()[i], f = frame.storage()[n + i];
    img[i] = pignistic(Masses{o, f});
  }
  return img;
}

Tensor<float> frame_at(const Tensor<float>& frames, std::size_t t) {
  const auto& s = frames.shape();
  const std::size_t n = s[1] * s[2] * s[3];
  std::vector<float> v(frames.data() + t * n, frames.data() + (t + 1) * n);
  return Tensor<float>(Shape{s[1], s[2], s[3]}, std::move(v));
}

/// Predicted frames packaged as an episode aligned with the target steps.
EpisodeRecord prediction_record(const EpisodeRecord& src, const Tensor<float>& preds,
                                std::size_t first_step) {
  EpisodeRecord r;
  r.height = src.height;
  r.width = src.width;
  r.resolution = src.resolution;
  r.frames = preds;
  const std::size_t P = preds.shape()[0];
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t t = std::min(first_step + p, src.steps() - 1);
    r.ego.push_back(src.ego[t]);
    if (first_step + p < src.steps()) {
      for (BoxRecord b : src.boxes_at(t)) {
        b.step = static_cast<std::uint32_t>(p);
        r.boxes.push_back(b);
      }
    }
  }
  return r;
}

std::string frame_name(const std::string& stem, std::size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu.pgm", stem.c_str(), k);
  return buf;
}

// ---------------------------------------------------------------- commands

void gen_data(const Config& cfg) {
  const fs::path out = output_dir(cfg);
  const ScenarioConfig base = scenario_config(cfg);
  const std::size_t n = cfg.count("data.episodes");
  if (n == 0) throw ConfigError("data.episodes must be >= 1");
  const std::string which = cfg.str("data.scenario");
  std::vector<Scenario> scenarios;
  if (which == "all") {
    scenarios = all_scenarios();
  } else {
    scenarios = {as_config_error("data.scenario", [&] { return scenario_from_string(which); })};
  }
  const std::uint64_t seed = seed_of(cfg);

  std::vector<std::string> names(n);
  std::vector<std::string> warnings(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        ScenarioConfig sc = base;
        sc.scenario = scenarios[i % scenarios.size()];
        sc.seed = seed * 1000003ULL + i;
        const EpisodeRecord ep = generate_episode(sc);
        char buf[96];
        std::snprintf(buf, sizeof buf, "episode_%04zu_%s.gcep", i, to_string(sc.scenario).c_str());
        names[i] = buf;
        save_episode((out / buf).string(), ep);
        for (const auto& w : ep.warnings) warnings[i] += w + "; ";
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::size_t threads = cfg.count("threads");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  nlohmann::json warn = nlohmann::json::object();
  for (std::size_t i = 0; i < n; ++i) {
    if (!warnings[i].empty()) {
      warn[names[i]] = warnings[i];
      std::cerr << "warning: " << names[i] << ": " << warnings[i] << "\n";
    }
  }
  write_manifest(out, "gen-data", cfg, {}, names, {{"warnings", warn}});
  std::cout << "wrote " << n << " episodes to " << out.string() << "\n";
}

void train_cmd(const Config& cfg) {
  const auto files = episode_files(cfg.str("data.dir"));
  auto model = model_from_config(cfg);
  const auto data = load_episodes(files);
  for (const auto& ep : data) check_grid(model->manifest(), ep);
  const fs::path out = output_dir(cfg);

  TrainConfig tc;
  std::tie(tc.input_length, tc.horizon) = protocol(cfg, "train");
  tc.epochs = cfg.count("train.epochs");
  tc.samples_per_epoch = cfg.count("train.samples");
  tc.batch = cfg.count("train.batch");
  tc.adam.lr = cfg.real("train.lr");
  tc.clip = cfg.real("train.clip");
  tc.truncation = cfg.count("train.truncation");
  tc.seed = seed_of(cfg);
  if (tc.epochs == 0 || tc.samples_per_epoch == 0 || tc.batch == 0) {
    throw ConfigError("train.epochs, train.samples and train.batch must be >= 1");
  }
  if (!(tc.adam.lr >= 0)) throw ConfigError("train.lr must be >= 0");
  if (enumerate_windows(data, tc.input_length + tc.horizon).empty()) {
    throw ConfigError("no episode has the train.N + train.P frames a window needs");
  }

  const nlohmann::json extra = {{"config_hash", cfg.hash()}, {"seed", tc.seed}, {"config", cfg.to_json()}};
  std::ofstream curve(out / "loss.txt");
  curve << "# epoch loss grad_norm\n";
  std::vector<double> losses;
  auto on_epoch = [&](const EpochStats& s) {
    curve << s.epoch << " " << s.loss << " " << s.grad_norm << "\n" << std::flush;
    losses.push_back(s.loss);
    if (s.best) save_checkpoint((out / "best.ckpt").string(), *model, extra);
    std::cerr << "epoch " << s.epoch << "/" << tc.epochs << " loss " << s.loss << " grad " << s.grad_norm
              << " (" << s.seconds << " s)" << (s.best ? " *" : "") << "\n";
  };
  auto on_divergence = [&](const std::string& msg) {
    write_text(out / "diverged.txt", msg + "\n");
  };
  const TrainResult r = train(*model, data, tc, on_epoch, on_divergence);
  save_checkpoint((out / "model.ckpt").string(), *model, extra);
  write_text(out / "loss.svg", svg_line_chart("Training loss", "epoch", "L1 loss", {{"loss", losses, {}}}));
  write_manifest(out, "train", cfg, files, {"model.ckpt", "best.ckpt", "loss.txt", "loss.svg"},
                 {{"best_epoch", r.best_epoch},
                  {"best_loss", r.best_loss},
                  {"first_loss", r.epochs.front().loss},
                  {"final_loss", r.epochs.back().loss},
                  {"parameters", model->params().scalar_count()}});
  std::cout << "final loss " << r.epochs.back().loss << " (epoch 1: " << r.epochs.front().loss
            << ", best " << r.best_loss << " at epoch " << r.best_epoch << ")\n";
}

struct PredictionInput {
  std::string file;
  EpisodeRecord episode;
  std::size_t start = 0, N = 0, P = 0;
  Tensor<float> inputs;
};

PredictionInput prediction_input(const Config& cfg) {
  PredictionInput in;
  const auto files = episode_files(cfg.str("data.dir"));
  const std::size_t idx = cfg.count("predict.episode");
  if (idx >= files.size()) {
    throw ConfigError("predict.episode " + std::to_string(idx) + " out of range (" +
                      std::to_string(files.size()) + " episodes)");
  }
  in.file = files[idx];
  in.episode = load_episode(in.file);
  std::tie(in.N, in.P) = protocol(cfg, "eval");
  in.start = cfg.count("eval.start");
  if (in.start + in.N > in.episode.steps()) {
    throw ConfigError("episode has " + std::to_string(in.episode.steps()) + " frames, needs " +
                      std::to_string(in.start + in.N) + " inputs");
  }
  in.inputs = in.episode.window(in.start, in.N);
  return in;
}

void predict_cmd(const Config& cfg) {
  const LoadedModel m = load_model(cfg);
  const PredictionInput in = prediction_input(cfg);
  if (m.model) check_grid(m.manifest.at("model"), in.episode);
  const fs::path out = output_dir(cfg);
  const Tensor<float> preds = predictor_of(m)(in.inputs, in.P);
  if (!preds.all_finite()) throw NumericalError("prediction contains non-finite values");

  const std::size_t first = in.start + in.N;
  save_episode((out / "prediction.gcep").string(), prediction_record(in.episode, preds, first));
  const fs::path frames = out / "frames";
  fs::create_directories(frames);
  std::vector<std::string> outputs{"prediction.gcep"};
  const std::size_t H = in.episode.height, W = in.episode.width;
  for (std::size_t k = 0; k < in.N; ++k) {
    write_pgm((frames / frame_name("input", k + 1)).string(), H, W, pignistic_image(frame_at(in.inputs, k)));
    outputs.push_back("frames/" + frame_name("input", k + 1));
  }
  for (std::size_t p = 0; p < in.P; ++p) {
    write_pgm((frames / frame_name("pred", p + 1)).string(), H, W, pignistic_image(frame_at(preds, p)));
    outputs.push_back("frames/" + frame_name("pred", p + 1));
    if (first + p < in.episode.steps()) {
      write_pgm((frames / frame_name("target", p + 1)).string(), H, W,
                pignistic_image(in.episode.frame(first + p)));
      outputs.push_back("frames/" + frame_name("target", p + 1));
    }
  }
  write_manifest(out, "predict", cfg, {in.file, m.id}, outputs);
  std::cout << "predicted " << in.P << " frames from " << in.file << " into " << out.string() << "\n";
}

std::vector<Series> metric_series(const std::vector<std::pair<std::string, const EvalReport*>>& reps,
                                  std::vector<double> EvalReport::*mean,
                                  std::vector<double> EvalReport::*se) {
  std::vector<Series> s;
  for (const auto& [label, r] : reps) s.push_back({label, r->*mean, r->*se});
  return s;
}

void eval_cmd(const Config& cfg) {
  const LoadedModel m = load_model(cfg);
  const auto files = episode_files(cfg.str("data.dir"));
  const auto eps = load_episodes(files);
  if (m.model) {
    for (const auto& ep : eps) check_grid(m.manifest.at("model"), ep);
  }
  const auto [N, P] = protocol(cfg, "eval");
  const std::size_t start = cfg.count("eval.start");
  const fs::path out = output_dir(cfg);

  EvalReport rep = evaluate(predictor_of(m), eps, N, P, start);
  rep.model_id = m.id;
  rep.dataset_id = cfg.str("data.dir");
  write_text(out / "eval.jsonl", rep.to_jsonl());
  std::vector<std::pair<std::string, const EvalReport*>> series{{m.model ? "model" : "persistence", &rep}};
  EvalReport base;
  if (m.model && cfg.flag("eval.baseline")) {
    base = evaluate(persistence_predictor(), eps, N, P, start);
    base.model_id = "persistence";
    base.dataset_id = rep.dataset_id;
    write_text(out / "eval_persistence.jsonl", base.to_jsonl());
    series.push_back({"persistence", &base});
  }
  write_text(out / "eval_is.svg",
             svg_line_chart("Image similarity", "prediction step (0.1 s)", "IS (lower is better)",
                            metric_series(series, &EvalReport::is, &EvalReport::is_se)));
  write_text(out / "eval_mse.svg",
             svg_line_chart("Mean squared error", "prediction step (0.1 s)", "MSE",
                            metric_series(series, &EvalReport::mse, &EvalReport::mse_se)));
  write_text(out / "eval_mobbm.svg",
             svg_line_chart("Occupied cells kept inside boxes", "prediction step (0.1 s)", "MOBBM",
                            metric_series(series, &EvalReport::mobbm, &EvalReport::mobbm_se)));
  std::vector<std::string> inputs = files;
  inputs.push_back(m.id);
  std::vector<std::string> outputs{"eval.jsonl", "eval_is.svg", "eval_mse.svg", "eval_mobbm.svg"};
  if (series.size() > 1) outputs.push_back("eval_persistence.jsonl");
  write_manifest(out, "eval", cfg, inputs, outputs, {{"summary", rep.summary()}});
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";

  std::printf("%-12s %5s %10s %10s %10s\n", "model", "step", "MSE", "IS", "MOBBM");
  for (const auto& [label, r] : series) {
    for (std::size_t p = 0; p < r->horizon; ++p) {
      std::printf("%-12s %5zu %10.5f %10.4f %10.4f\n", label.c_str(), p + 1, r->mse[p], r->is[p], r->mobbm[p]);
    }
    std::printf("%-12s %5s %10.5f %10.4f %10.4f  (±%.5f, ±%.4f, ±%.4f over %zu episodes)\n", label.c_str(),
                "mean", r->mean_mse, r->mean_is, r->mean_mobbm, r->mean_mse_se, r->mean_is_se,
                r->mean_mobbm_se, r->episodes);
  }
}

void ablate_cmd(const Config& cfg) {
  const LoadedModel m = load_model(cfg);
  if (!m.model) throw ConfigError("ablate needs a model checkpoint");
  const auto layers = m.model->attention_layers();
  if (layers.empty()) throw ConfigError("checkpoint " + m.id + " has no attention layers");
  const std::int64_t req = cfg.integer("ablate.layer");
  std::size_t layer = layers.back();
  if (req >= 0) {
    layer = static_cast<std::size_t>(req);
    if (std::find(layers.begin(), layers.end(), layer) == layers.end()) {
      throw ConfigError("layer " + std::to_string(req) + " has no attention");
    }
  }
  const std::size_t heads = m.manifest.at("model").at("config").at("heads");
  const std::size_t want = cfg.count("ablate.heads");
  if (want != 0 && want != heads) {
    throw ConfigError("checkpoint has " + std::to_string(heads) + " heads, ablate.heads is " +
                      std::to_string(want));
  }
  const PredictionInput in = prediction_input(cfg);
  check_grid(m.manifest.at("model"), in.episode);
  const fs::path out = output_dir(cfg);

  const Tensor<float> unmasked = m.model->predict(in.inputs, in.P);
  m.model->set_head_mask(layer, HeadMask::all(heads));
  const Tensor<float> full = m.model->predict(in.inputs, in.P);
  const bool keep_all_exact = full.storage() == unmasked.storage();

  std::vector<std::string> labels{"full"};
  std::vector<Tensor<float>> sets{full};
  for (std::size_t h = 0; h < heads; ++h) {
    m.model->set_head_mask(layer, HeadMask::drop(heads, h));
    sets.push_back(m.model->predict(in.inputs, in.P));
    labels.push_back("drop" + std::to_string(h));
  }
  m.model->set_head_mask(layer, HeadMask::all(heads));

  std::vector<std::string> outputs;
  const std::size_t first = in.start + in.N;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (!sets[k].all_finite()) throw NumericalError("ablation prediction is not finite");
    const std::string name = "ablate_" + labels[k] + ".gcep";
    save_episode((out / name).string(), prediction_record(in.episode, sets[k], first));
    outputs.push_back(name);
    const std::string img = "ablate_" + labels[k] + "_last.pgm";
    write_pgm((out / img).string(), in.episode.height, in.episode.width,
              pignistic_image(frame_at(sets[k], in.P - 1)));
    outputs.push_back(img);
  }
  nlohmann::json l2 = nlohmann::json::array();
  double min_off = INFINITY;
  for (std::size_t a = 0; a < sets.size(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t b = 0; b < sets.size(); ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < sets[a].numel(); ++i) {
        const double d = double(sets[a].storage()[i]) - double(sets[b].storage()[i]);
        acc += d * d;
      }
      row.push_back(std::sqrt(acc));
      if (a != b) min_off = std::min(min_off, std::sqrt(acc));
    }
    l2.push_back(row);
  }
  const nlohmann::json report = {{"layer", layer},
                                 {"heads", heads},
                                 {"labels", labels},
                                 {"l2", l2},
                                 {"min_pairwise_l2", min_off},
                                 {"keep_all_matches_unmasked", keep_all_exact}};
  write_text(out / "ablate.json", report.dump(2) + "\n");
  outputs.push_back("ablate.json");
  write_manifest(out, "ablate", cfg, {in.file, m.id}, outputs);

  std::printf("pairwise L2 between prediction sets (layer %zu, %zu heads)\n%8s", layer, heads, "");
  for (const auto& l : labels) std::printf(" %10s", l.c_str());
  std::printf("\n");
  for (std::size_t a = 0; a < sets.size(); ++a) {
    std::printf("%8s", labels[a].c_str());
    for (std::size_t b = 0; b < sets.size(); ++b) std::printf(" %10.5f", l2[a][b].get<double>());
    std::printf("\n");
  }
  std::printf("all-heads mask reproduces the unmasked prediction: %s\n", keep_all_exact ? "yes" : "NO");
}

void bench_attn(const Config& cfg) {
  AttentionBenchConfig bc;
  bc.horizons = cfg.counts("bench.history");
  bc.size = cfg.count("bench.size");
  bc.heads = cfg.count("bench.heads");
  bc.channels = cfg.count("bench.channels");
  bc.runs = cfg.count("bench.runs");
  bc.backward = cfg.flag("bench.backward");
  bc.seed = seed_of(cfg);
  for (std::size_t h : bc.horizons) {
    if (h == 0) throw ConfigError("bench.history entries must be >= 1");
  }
  if (bc.runs == 0) throw ConfigError("bench.runs must be >= 1");
  as_config_error("bench configuration", [&] {
    AttentionConfig ac{bc.channels, bc.heads, bc.channels, bc.channels, true, bc.size, bc.size};
    ac.validate();
    return 0;
  });
  const fs::path out = output_dir(cfg);
  const auto rows = bench_temporal_attention(bc);
  write_text(out / "bench_attn.json", to_json(rows).dump(2) + "\n");
  write_manifest(out, "bench-attn", cfg, {}, {"bench_attn.json"});
  std::printf("%8s %14s %14s %10s\n", "H_a", "median (ms)", "min (ms)", "ratio");
  for (const auto& r : rows) {
    std::printf("%8zu %14.3f %14.3f %10.3f\n", r.horizon, 1e3 * r.median_seconds, 1e3 * r.min_seconds,
                r.ratio_to_first);
  }
}

}  // namespace

void run_command(const std::string& name, const Config& cfg) {
  if (name == "gen-data") return gen_data(cfg);
  if (name == "train") return train_cmd(cfg);
  if (name == "predict") return predict_cmd(cfg);
  if (name == "eval") return eval_cmd(cfg);
  if (name == "ablate") return ablate_cmd(cfg);
  if (name == "bench-attn") return bench_attn(cfg);
  throw ConfigError("unknown command \"" + name + "\"");
}

int run_command_checked(const std::string& name, const Config& cfg) {
  try {
    run_command(name, cfg);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace gridcast::cli
