#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fewview/consistency.hpp"
#include "fewview/correspondence.hpp"
#include "fewview/io.hpp"
#include "fewview/regularization.hpp"
#include "fewview/renderer.hpp"
#include "fewview/scene.hpp"

namespace fewview {

enum class Stage { Pretrain, Intermediate, Tune };
const char* stage_name(Stage s);

struct StageSchedule {
  long iters_pretrain = 2000;
  long iters_intermediate = 7500;
  long iters_tune = 500;
  double lambda = 1.0;   // photometric
  double chi = 0.001;    // opacity
  double zeta = 0.001;   // locality
  double kappa = 1.0;    // novel-view consistency
  double eta = 0.05;     // training-view term during the intermediate stage
  ConsistencyWeights consistency;

  long total() const noexcept { return iters_pretrain + iters_intermediate + iters_tune; }
  // Stage of a 1-based iteration number.
  Stage stage_at(long iteration) const noexcept;
  bool valid() const noexcept;
};

struct LearningRates {
  double mean_init = 1.6e-4;   // times scene_extent
  double mean_final = 1.6e-6;  // times scene_extent
  double sh_dc = 2.5e-3;
  double sh_rest = 1.25e-4;
  double opacity = 5e-2;
  double scale = 5e-3;
  double rotation = 1e-3;
};

struct TrainConfig {
  StageSchedule schedule;
  LearningRates lr;
  double lambda_ssim = 0.2;
  int locality_k = 4;
  double locality_delta = 2.0;
  bool locality_detach_means = false;
  bool depth_alpha_normalize = false;
  int sh_degree = 3;
  long sh_interval = 1000;
  long densify_interval = 100;
  long densify_from = 500;
  long densify_until = -1;  // negative: iters_pretrain + iters_intermediate - 500
  double densify_grad = 2e-4;
  double prune_opacity = 0.005;
  double densify_scale_fraction = 0.01;
  long knn_interval = 100;
  std::size_t init_points = 10000;
  double init_opacity = 0.1;
  std::uint64_t seed = 0;
  std::string pair_policy = "all";  // all | adjacent
  double t_min = 0.1;
  double t_max = 0.9;
  double min_match_alpha = 0.5;
  std::string feature_provider = "filterbank";
  bool builtin_matcher = true;
  double min_confidence = 0.5;
  long checkpoint_interval = 0;  // 0: final checkpoint only

  long densify_until_iter() const noexcept;
  // Throws ConfigError on invalid values.
  void validate() const;
};

// Settings used for generated toy scenes: no view-dependent color, a
// small random start and a coarser densification threshold so the
// desk-scale runs stay small. Depth and color consistency weights are
// swapped relative to the defaults (see trainer.cpp).
TrainConfig toy_train_config();

// JSON object or key=value lines ('#' comments) with the flat keys of
// config_to_json. Unknown keys raise ConfigError.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
std::string config_to_json(const TrainConfig& config);

// Log-linear interpolation from init to final over max_steps.
double exponential_lr(long step, long max_steps, double init, double final_value);

// Adam moments for every parameter group, one slot per Gaussian.
struct OptimizerState {
  struct Group {
    int dim = 0;
    std::vector<double> m, v;
  };
  Group mean{3, {}, {}}, rotation{4, {}, {}}, log_scale{3, {}, {}}, opacity{1, {}, {}},
      sh_dc{3, {}, {}}, sh_rest{0, {}, {}};
  long step = 0;

  static OptimizerState for_scene(const GaussianScene& scene);
  std::size_t size() const noexcept { return opacity.m.size(); }
  // Moments follow their Gaussians through density control; new ones are zero.
  void remap(const std::vector<std::optional<std::size_t>>& origin);
};

struct GroupRates {
  double mean = 0.0, rotation = 0.0, log_scale = 0.0, opacity = 0.0, sh_dc = 0.0, sh_rest = 0.0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-15;

// One Adam update; quaternions are renormalized afterwards. Throws
// NonFiniteGradient (scene untouched) when grads hold NaN or inf.
void optimizer_step(OptimizerState& state, const ParamGrads& grads, GaussianScene& scene,
                    const GroupRates& rates);

// Loss of one pretrain/tune view: lambda*photometric + chi*opacity +
// zeta*locality, scaled as a whole by `weight`.
struct ViewLoss {
  double photometric = 0.0;
  double opacity = 0.0;
  double locality = 0.0;
  double total = 0.0;  // before `weight`
  ParamGrads grads;    // includes `weight`
};
ViewLoss training_view_loss(const GaussianScene& scene, const Neighbors& neighbors,
                            const CameraView& view, const Image& target,
                            const TrainConfig& config, double weight,
                            const RenderOptions& options);

// Uniform Gaussians in the bounding box of the training frusta, isotropic
// scale equal to the mean nearest-neighbor distance.
GaussianScene random_init(const Dataset& dataset, std::size_t count, int sh_degree,
                          double opacity, std::mt19937_64& rng);

struct TrainCallbacks {
  std::function<void(const LossReport&)> on_report;
  std::function<void(long iteration, const GaussianScene&)> on_checkpoint;
};

struct TrainResult {
  GaussianScene scene;
  long skipped = 0;
  long no_consistency = 0;  // intermediate iterations without surviving matches
  std::vector<long> stage_starts;  // first iteration of each non-empty stage
};

// matches may be empty when builtin_matcher is enabled. init may be null
// for random initialization.
TrainResult run_training(const Dataset& dataset, std::vector<MatchSet> matches,
                         const TrainConfig& config, const GaussianScene* init = nullptr,
                         const TrainCallbacks& callbacks = {});

// Pairs of training views used by the intermediate stage.
std::vector<MatchSet> builtin_pair_matches(const Dataset& dataset, const std::string& policy,
                                           const MatchParams& params = {});

struct EvalResult {
  std::vector<int> views;
  std::vector<ImageMetrics> metrics;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};
EvalResult evaluate_views(const GaussianScene& scene, const Dataset& dataset,
                          const std::vector<int>& views, const RenderOptions& options = {});

std::string report_to_json(const LossReport& report);

}  // namespace fewview
