#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fewview/error.hpp"
#include "fewview/io.hpp"
#include "fewview/trainer.hpp"
#include "support/oracles.hpp"

using namespace fewview;
using namespace fewview::testing;

namespace {

ToyParams small_toy() {
  ToyParams p;
  p.gaussians = 12;
  p.width = 32;
  p.height = 32;
  p.focal = 50.0;
  return p;
}

TrainConfig tiny_config(long pre, long mid, long tune) {
  TrainConfig c;
  c.schedule.iters_pretrain = pre;
  c.schedule.iters_intermediate = mid;
  c.schedule.iters_tune = tune;
  c.sh_degree = 0;
  c.init_points = 60;
  c.densify_from = 2;
  c.densify_interval = 3;
  c.seed = 5;
  return c;
}

std::vector<std::string> run_log(const ToyScene& toy, const TrainConfig& c, TrainResult* out = nullptr) {
  std::vector<std::string> lines;
  TrainCallbacks cb;
  cb.on_report = [&](const LossReport& r) { lines.push_back(report_to_json(r)); };
  TrainResult r = run_training(toy.dataset, toy.matches, c, nullptr, cb);
  if (out) *out = std::move(r);
  return lines;
}

bool throws_config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.code() == ErrorCode::ConfigError;
  }
  return false;
}

}  // namespace

TEST_CASE("default weights and schedule") {
  const TrainConfig c;
  CHECK(c.schedule.lambda == 1.0);
  CHECK(c.schedule.chi == 0.001);
  CHECK(c.schedule.zeta == 0.001);
  CHECK(c.schedule.kappa == 1.0);
  CHECK(c.schedule.eta == 0.05);
  CHECK(c.schedule.consistency.alpha == 0.5);
  CHECK(c.schedule.consistency.beta == 0.05);
  CHECK(c.schedule.consistency.gamma == 0.001);
  CHECK(c.schedule.consistency.theta_g == 10.0);
  CHECK(c.schedule.consistency.theta_grad == 0.1);
  CHECK(c.schedule.iters_pretrain == 2000);
  CHECK(c.schedule.iters_intermediate == 7500);
  CHECK(c.schedule.iters_tune == 500);
  CHECK(c.schedule.total() == 10000);
  CHECK(c.locality_delta == 2.0);
  CHECK(c.lr.mean_init == 1.6e-4);
  CHECK(c.lr.mean_final == 1.6e-6);
  CHECK(c.init_points == 10000);
  CHECK(c.densify_until_iter() == 9000);
}

TEST_CASE("stage_at follows the configured boundaries") {
  StageSchedule s;
  s.iters_pretrain = 3;
  s.iters_intermediate = 4;
  s.iters_tune = 2;
  CHECK(s.stage_at(1) == Stage::Pretrain);
  CHECK(s.stage_at(3) == Stage::Pretrain);
  CHECK(s.stage_at(4) == Stage::Intermediate);
  CHECK(s.stage_at(7) == Stage::Intermediate);
  CHECK(s.stage_at(8) == Stage::Tune);
  CHECK(s.stage_at(9) == Stage::Tune);
  s.iters_pretrain = 0;
  CHECK(s.stage_at(1) == Stage::Intermediate);
}

TEST_CASE("exponential learning rate endpoints") {
  CHECK(exponential_lr(0, 100, 1e-2, 1e-4) == doctest::Approx(1e-2).epsilon(1e-12));
  CHECK(exponential_lr(100, 100, 1e-2, 1e-4) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(exponential_lr(50, 100, 1e-2, 1e-4) == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("config parsing") {
  SUBCASE("json") {
    const TrainConfig c = parse_config(R"({"iters_pretrain": 10, "alpha": 0.25, "pair_policy": "adjacent",
                                            "locality_detach_means": true})");
    CHECK(c.schedule.iters_pretrain == 10);
    CHECK(c.schedule.consistency.alpha == 0.25);
    CHECK(c.pair_policy == "adjacent");
    CHECK(c.locality_detach_means);
    CHECK(c.schedule.iters_intermediate == 7500);
  }
  SUBCASE("key=value with comments") {
    const TrainConfig c = parse_config("# toy\niters_tune = 3\neta=0.5\n\nseed = 42  # trailing\n");
    CHECK(c.schedule.iters_tune == 3);
    CHECK(c.schedule.eta == 0.5);
    CHECK(c.seed == 42);
  }
  SUBCASE("round trip through config_to_json") {
    TrainConfig a;
    a.schedule.iters_intermediate = 17;
    a.schedule.consistency.theta_px = 1.5;
    a.lr.opacity = 0.02;
    a.feature_provider = "none";
    a.seed = 99;
    const std::string text = config_to_json(a);
    CHECK(config_to_json(parse_config(text)) == text);
  }
  SUBCASE("unknown keys and bad values") {
    CHECK(throws_config_error("{\"lamda\": 1}"));
    CHECK(throws_config_error("bogus = 3"));
    CHECK(throws_config_error("iters_pretrain = -1"));
    CHECK(throws_config_error("alpha = -0.5"));
    CHECK(throws_config_error("pair_policy = nearest"));
    CHECK(throws_config_error("t_min = 0.9\nt_max = 0.1"));
    CHECK(throws_config_error("iters_pretrain = ten"));
  }
}

TEST_CASE("zero gradients leave parameters unchanged") {
  std::mt19937_64 rng(2);
  const CameraView view = random_view(rng, 24, 24);
  GaussianScene scene = random_scene(rng, view, 6, 1);
  scene.renormalize_rotations();
  const GaussianScene before = scene;
  OptimizerState st = OptimizerState::for_scene(scene);
  GroupRates rates{0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  optimizer_step(st, ParamGrads::zeros(scene), scene, rates);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Gaussian3D& a = scene.gaussians[i];
    const Gaussian3D& b = before.gaussians[i];
    CHECK(a.mean == b.mean);
    CHECK(a.log_scale == b.log_scale);
    CHECK(a.opacity_logit == b.opacity_logit);
    CHECK(a.sh == b.sh);
    CHECK((a.rotation - b.rotation).norm() < 1e-15);
  }
}

TEST_CASE("first Adam step moves each parameter by lr against the gradient sign") {
  std::mt19937_64 rng(4);
  const CameraView view = random_view(rng, 24, 24);
  GaussianScene scene = random_scene(rng, view, 3, 0);
  const GaussianScene before = scene;
  OptimizerState st = OptimizerState::for_scene(scene);
  ParamGrads g = ParamGrads::zeros(scene);
  g.mean[0] = Vec3(3.0, -0.002, 0.0);
  g.opacity_logit[1] = -7.0;
  g.sh[2 * g.sh_coeffs + 1] = 1e-6;
  GroupRates rates{0.01, 0.0, 0.0, 0.05, 0.0025, 0.0};
  optimizer_step(st, g, scene, rates);
  CHECK(scene.gaussians[0].mean.x() == doctest::Approx(before.gaussians[0].mean.x() - 0.01).epsilon(1e-12));
  CHECK(scene.gaussians[0].mean.y() == doctest::Approx(before.gaussians[0].mean.y() + 0.01).epsilon(1e-12));
  CHECK(scene.gaussians[0].mean.z() == before.gaussians[0].mean.z());
  CHECK(scene.gaussians[1].opacity_logit == doctest::Approx(before.gaussians[1].opacity_logit + 0.05).epsilon(1e-12));
  CHECK(scene.gaussians[2].sh[1] == doctest::Approx(before.gaussians[2].sh[1] - 0.0025).epsilon(1e-8));
}

TEST_CASE("Adam on a quadratic bowl in mean space converges") {
  GaussianScene scene;
  scene.gaussians.resize(1);
  scene.gaussians[0].mean = Vec3(0.6, -0.2, 0.1);
  const Vec3 target(0.3, 0.1, -0.2);
  OptimizerState st = OptimizerState::for_scene(scene);
  for (long step = 0; step < 100; ++step) {
    ParamGrads g = ParamGrads::zeros(scene);
    g.mean[0] = 2.0 * (scene.gaussians[0].mean - target);
    GroupRates rates;
    rates.mean = exponential_lr(step, 100, 0.05, 1e-4);
    optimizer_step(st, g, scene, rates);
  }
  CHECK((scene.gaussians[0].mean - target).norm() < 1e-3);
}

TEST_CASE("non-finite gradients are rejected without touching the scene") {
  std::mt19937_64 rng(6);
  const CameraView view = random_view(rng, 24, 24);
  GaussianScene scene = random_scene(rng, view, 4, 0);
  const std::uint64_t fp = scene.fingerprint();
  OptimizerState st = OptimizerState::for_scene(scene);
  ParamGrads g = ParamGrads::zeros(scene);
  g.log_scale[2][1] = std::nan("");
  try {
    optimizer_step(st, g, scene, GroupRates{1, 1, 1, 1, 1, 1});
    FAIL("expected NonFiniteGradient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteGradient);
  }
  CHECK(scene.fingerprint() == fp);
  CHECK(st.step == 0);
}

TEST_CASE("moments follow their Gaussians through remap") {
  GaussianScene scene;
  scene.gaussians.resize(3);
  OptimizerState st = OptimizerState::for_scene(scene);
  for (std::size_t i = 0; i < 3; ++i) {
    st.opacity.m[i] = 10.0 + i;
    st.opacity.v[i] = 20.0 + i;
    for (int d = 0; d < 3; ++d) st.mean.m[i * 3 + d] = 100.0 * i + d;
  }
  // Gaussian 1 pruned, 0 and 2 kept, two new slots.
  st.remap({std::size_t{2}, std::nullopt, std::size_t{0}, std::nullopt});
  REQUIRE(st.size() == 4);
  CHECK(st.opacity.m == std::vector<double>{12.0, 0.0, 10.0, 0.0});
  CHECK(st.opacity.v == std::vector<double>{22.0, 0.0, 20.0, 0.0});
  CHECK(st.mean.m[0] == 200.0);
  CHECK(st.mean.m[5] == 0.0);
  CHECK(st.mean.m[7] == 1.0);
  CHECK(st.rotation.m.size() == 16);
}

TEST_CASE("training view loss is the weighted sum of its terms") {
  const ToyScene toy = generate_toy_scene(1, small_toy());
  std::mt19937_64 rng(3);
  const GaussianScene scene = random_init(toy.dataset, 40, 0, 0.3, rng);
  const Neighbors nb = knn_neighbors(scene, 4);
  TrainConfig c;
  c.schedule.lambda = 0.7;
  c.schedule.chi = 0.3;
  c.schedule.zeta = 0.2;
  RenderOptions opts;
  const DatasetView& v = toy.dataset.views[0];
  const ViewLoss one = training_view_loss(scene, nb, v.camera, v.image, c, 1.0, opts);
  CHECK(one.total == doctest::Approx(0.7 * one.photometric + 0.3 * one.opacity + 0.2 * one.locality).epsilon(1e-12));
  CHECK(one.photometric > 0.0);
  CHECK(one.opacity > 0.0);
  CHECK(one.locality > 0.0);
  const ViewLoss twice = training_view_loss(scene, nb, v.camera, v.image, c, 2.0, opts);
  CHECK(twice.total == one.total);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    CHECK((twice.grads.mean[i] - 2.0 * one.grads.mean[i]).norm() <= 1e-12 * (1.0 + one.grads.mean[i].norm()));
    CHECK(twice.grads.opacity_logit[i] == doctest::Approx(2.0 * one.grads.opacity_logit[i]).epsilon(1e-12));
  }

  c.schedule.lambda = c.schedule.chi = c.schedule.zeta = 0.0;
  const ViewLoss none = training_view_loss(scene, nb, v.camera, v.image, c, 1.0, opts);
  CHECK(none.total == 0.0);
  CHECK(none.grads.max_abs() == 0.0);
}

TEST_CASE("random initialization lies in the training frusta bounds") {
  const ToyScene toy = generate_toy_scene(2, small_toy());
  std::mt19937_64 rng(8);
  const GaussianScene s = random_init(toy.dataset, 200, 2, 0.1, rng);
  REQUIRE(s.size() == 200);
  CHECK(s.sh_degree == 2);
  CHECK(s.consistent());
  for (const Gaussian3D& g : s.gaussians) {
    CHECK(g.opacity() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(g.log_scale.x() == g.log_scale.y());
    CHECK(g.log_scale.x() == s.gaussians[0].log_scale.x());
  }
  // every Gaussian is seen by at least one training camera
  for (const Gaussian3D& g : s.gaussians) {
    bool seen = false;
    for (int v : toy.dataset.train_indices()) {
      const Projection p = project_point(toy.dataset.views[v].camera, g.mean);
      seen = seen || (p.depth > 0.0);
    }
    CHECK(seen);
  }
}

TEST_CASE("run_training stage boundaries are exact") {
  const ToyScene toy = generate_toy_scene(1, small_toy());
  TrainResult res;
  const TrainConfig c = tiny_config(4, 5, 3);
  std::vector<std::string> stages;
  TrainCallbacks cb;
  long last = 0;
  cb.on_report = [&](const LossReport& r) {
    CHECK(r.iteration == last + 1);
    last = r.iteration;
    stages.push_back(r.stage);
  };
  res = run_training(toy.dataset, toy.matches, c, nullptr, cb);
  REQUIRE(stages.size() == 12);
  for (int i = 0; i < 4; ++i) CHECK(stages[i] == "pretrain");
  for (int i = 4; i < 9; ++i) CHECK(stages[i] == "intermediate");
  for (int i = 9; i < 12; ++i) CHECK(stages[i] == "tune");
  CHECK(res.stage_starts == std::vector<long>{1, 5, 10});
  CHECK(res.scene.consistent());
}

TEST_CASE("degenerate schedule is plain photometric training") {
  const ToyScene toy = generate_toy_scene(1, small_toy());
  std::vector<LossReport> reports;
  TrainCallbacks cb;
  cb.on_report = [&](const LossReport& r) { reports.push_back(r); };
  const TrainResult res = run_training(toy.dataset, {}, tiny_config(15, 0, 0), nullptr, cb);
  REQUIRE(reports.size() == 15);
  for (const LossReport& r : reports) {
    CHECK(r.stage == "pretrain");
    CHECK(r.consistency == 0.0);
    CHECK(r.surviving_matches == 0);
  }
  CHECK(res.no_consistency == 0);
  CHECK(reports.back().photometric < reports.front().photometric);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const ToyScene toy = generate_toy_scene(3, small_toy());
  TrainResult a, b, c;
  const std::vector<std::string> la = run_log(toy, tiny_config(6, 8, 2), &a);
  const std::vector<std::string> lb = run_log(toy, tiny_config(6, 8, 2), &b);
  CHECK(la == lb);
  CHECK(a.scene.fingerprint() == b.scene.fingerprint());
  TrainConfig other = tiny_config(6, 8, 2);
  other.seed = 6;
  const std::vector<std::string> lc = run_log(toy, other, &c);
  CHECK(lc != la);
}

TEST_CASE("invalid run inputs fail before the first iteration") {
  const ToyScene toy = generate_toy_scene(1, small_toy());
  long iterations = 0;
  TrainCallbacks cb;
  cb.on_report = [&](const LossReport&) { ++iterations; };
  SUBCASE("bad config") {
    TrainConfig c = tiny_config(2, 2, 0);
    c.schedule.consistency.theta_px = -1.0;
    CHECK_THROWS_AS(run_training(toy.dataset, toy.matches, c, nullptr, cb), Error);
  }
  SUBCASE("match pair naming a test view") {
    std::vector<MatchSet> bad = toy.matches;
    bad[0].view_j = toy.dataset.test_indices()[0];
    try {
      run_training(toy.dataset, bad, tiny_config(2, 2, 0), nullptr, cb);
      FAIL("expected UnknownViewIndex");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnknownViewIndex);
    }
  }
  CHECK(iterations == 0);
}
