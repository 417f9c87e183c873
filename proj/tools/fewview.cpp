// Command-line front end: make-toy, train, render, eval, match.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "fewview/correspondence.hpp"
#include "fewview/error.hpp"
#include "fewview/io.hpp"
#include "fewview/parallel.hpp"
#include "fewview/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fewview;

namespace {

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
}

// Settings written next to a generated toy scene: degree-0 color, a
// smaller random init, and the default three-stage schedule.
std::vector<MatchSet> load_matches_for(const Dataset& ds, const fs::path& path, const TrainConfig& cfg) {
  IngestOptions opts;
  opts.min_confidence = cfg.min_confidence;
  return ingest_matches(path, ds.frame_info(), opts);
}

std::vector<int> split_indices(const Dataset& ds, const std::string& split) {
  if (split == "test") return ds.test_indices();
  if (split == "train") return ds.train_indices();
  if (split == "all") {
    std::vector<int> all(ds.views.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
  }
  throw Error(ErrorCode::ConfigError, "split must be train, test or all");
}

std::string view_stem(const DatasetView& v, int index) {
  std::string s = fs::path(v.name).replace_extension().string();
  for (char& c : s) {
    if (c == '/' || c == '\\') c = '_';
  }
  return s.empty() ? std::to_string(index) : s;
}

int cmd_make_toy(std::uint64_t seed, const fs::path& out, const ToyParams& params) {
  const ToyScene toy = generate_toy_scene(seed, params);
  save_dataset(toy.dataset, out);
  write_matches(out / "matches.json", toy.matches);
  write_ply(out / "truth.ply", toy.truth);
  std::ofstream(out / "config.json") << config_to_json(toy_train_config()) << '\n';
  std::size_t n = 0;
  for (const MatchSet& m : toy.matches) n += m.matches.size();
  std::cout << json{{"out", out.string()}, {"views", toy.dataset.views.size()}, {"matches", n}}.dump() << '\n';
  return 0;
}

int cmd_train(const fs::path& data, const std::string& config_path, const fs::path& out,
              const std::string& init, const std::string& matches_path, long long seed) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config(config_path);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  const Dataset ds = load_dataset(data);
  std::vector<MatchSet> matches;
  const fs::path mpath = matches_path.empty() ? data / "matches.json" : fs::path(matches_path);
  if (cfg.schedule.iters_intermediate > 0) {
    if (fs::exists(mpath)) {
      matches = load_matches_for(ds, mpath, cfg);
    } else if (!matches_path.empty() || !cfg.builtin_matcher) {
      throw Error(ErrorCode::IoError, "match file not found: " + mpath.string());
    }
  }
  std::optional<GaussianScene> init_scene;
  if (init != "random") init_scene = read_ply(init == "ply" ? data / "init.ply" : fs::path(init));

  fs::create_directories(out);
  std::ofstream(out / "config.json") << config_to_json(cfg) << '\n';
  std::ofstream log(out / "log.jsonl");
  if (!log) throw Error(ErrorCode::IoError, "cannot write " + (out / "log.jsonl").string());
  TrainCallbacks cb;
  cb.on_report = [&](const LossReport& r) { log << report_to_json(r) << '\n'; };
  cb.on_checkpoint = [&](long it, const GaussianScene& s) {
    // Write then rename so an interrupted run keeps the previous checkpoint.
    const fs::path tmp = out / "checkpoint.ply.tmp";
    write_ply(tmp, s);
    fs::rename(tmp, out / "checkpoint.ply");
    std::ofstream(out / "checkpoint.json") << json{{"iteration", it}}.dump() << '\n';
  };
  const TrainResult r = run_training(ds, std::move(matches), cfg, init_scene ? &*init_scene : nullptr, cb);
  std::cout << json{{"out", out.string()},
                    {"gaussians", r.scene.size()},
                    {"skipped", r.skipped},
                    {"no_consistency", r.no_consistency}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_render(const fs::path& checkpoint, const fs::path& data, const std::string& split,
               const fs::path& out) {
  const GaussianScene scene = read_ply(checkpoint);
  const Dataset ds = load_dataset(data);
  fs::create_directories(out);
  for (int v : split_indices(ds, split)) {
    const RenderResult r = render_forward(scene, ds.views[v].camera);
    const std::string stem = view_stem(ds.views[v], v);
    write_png(out / (stem + ".png"), r.buffers.color);
    write_pfm(out / (stem + "_depth.pfm"), r.buffers.depth);
  }
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, const std::string& split,
             const fs::path& out) {
  const GaussianScene scene = read_ply(checkpoint);
  const Dataset ds = load_dataset(data);
  const EvalResult e = evaluate_views(scene, ds, split_indices(ds, split));
  json views = json::array();
  for (std::size_t k = 0; k < e.views.size(); ++k) {
    views.push_back({{"view", e.views[k]},
                     {"name", ds.views[e.views[k]].name},
                     {"psnr", e.metrics[k].psnr},
                     {"ssim", e.metrics[k].ssim}});
  }
  const json doc = {{"split", split},
                    {"mean_psnr", e.mean_psnr},
                    {"mean_ssim", e.mean_ssim},
                    {"views", views},
                    {"note", "full-frame metrics; no background masking"}};
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << doc.dump(2) << '\n';
  std::cout << json{{"mean_psnr", e.mean_psnr}, {"mean_ssim", e.mean_ssim}}.dump() << '\n';
  return 0;
}

int cmd_match(const fs::path& data, const fs::path& out, const std::string& policy) {
  const Dataset ds = load_dataset(data);
  const std::vector<MatchSet> sets = builtin_pair_matches(ds, policy);
  if (sets.empty()) throw Error(ErrorCode::TooFewKeypoints, "no training pair produced enough matches");
  write_matches(out, sets);
  std::size_t n = 0;
  for (const MatchSet& m : sets) n += m.matches.size();
  std::cout << json{{"pairs", sets.size()}, {"matches", n}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-view Gaussian splatting with novel-view consistency"};
  app.require_subcommand(1);

  std::uint64_t toy_seed = 0;
  fs::path toy_out;
  ToyParams toy;
  auto* make_toy = app.add_subcommand("make-toy", "Generate a synthetic toy dataset");
  make_toy->add_option("--seed", toy_seed)->required();
  make_toy->add_option("--out", toy_out)->required();
  make_toy->add_option("--gaussians", toy.gaussians);
  make_toy->add_option("--size", toy.width)->each([&](const std::string& s) { toy.height = std::stoi(s); });

  fs::path data, out, checkpoint;
  std::string config_path, init = "random", matches_path, split = "test", policy = "all";
  long long seed = -1;
  auto* train = app.add_subcommand("train", "Train a scene");
  train->add_option("--data", data)->required();
  train->add_option("--config", config_path);
  train->add_option("--out", out)->required();
  train->add_option("--init", init, "random, ply (DATA/init.ply) or a PLY path");
  train->add_option("--matches", matches_path);
  train->add_option("--seed", seed);

  auto* render = app.add_subcommand("render", "Render a checkpoint");
  render->add_option("--checkpoint", checkpoint)->required();
  render->add_option("--data", data)->required();
  render->add_option("--split", split);
  render->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("eval", "Compute PSNR and SSIM of a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--split", split);
  eval->add_option("--out", out)->required();

  bool builtin = true;
  auto* match = app.add_subcommand("match", "Match training-view pairs with the built-in matcher");
  match->add_option("--data", data)->required();
  match->add_option("--out", out)->required();
  match->add_flag("--builtin", builtin);
  match->add_option("--pair-policy", policy);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("UsageError", e.what());
    return 64;
  }

  try {
    set_thread_count(default_thread_count());
    if (*make_toy) return cmd_make_toy(toy_seed, toy_out, toy);
    if (*train) return cmd_train(data, config_path, out, init, matches_path, seed);
    if (*render) return cmd_render(checkpoint, data, split, out);
    if (*eval) return cmd_eval(checkpoint, data, split, out);
    if (*match) return cmd_match(data, out, policy);
  } catch (const Error& e) {
    print_error(std::string(error_name(e.code())), e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("Internal", e.what());
    return 3;
  }
  return 1;
}
