#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "xdet/annotation.hpp"
#include "xdet/reward.hpp"
#include "xdet/rng.hpp"

namespace xdet {

// ---------------------------------------------------------------------------
// Group-relative advantages

inline constexpr double kAdvantageEpsilon = 1e-8;

[[noreturn]] void throw_group_too_small(std::size_t size);

/// a_i = (r_i - mean(r)) / (popstd(r) + epsilon); all zeros when every
/// reward is identical. Throws Error(group_too_small) for fewer than two
/// rewards.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> compute_advantages(
    const Eigen::MatrixBase<Derived>& rewards,
    typename Derived::Scalar epsilon = typename Derived::Scalar(kAdvantageEpsilon));

Eigen::VectorXd compute_advantages(std::span<const double> rewards,
                                   double epsilon = kAdvantageEpsilon);

// ---------------------------------------------------------------------------
// Synthetic world

/// Scene generator settings. Boxes live on a square grid of cells; a planted
/// flaw raises the saliency signal of every cell it covers.
struct EnvConfig {
  int grid = 8;      ///< cells per side
  int cell_px = 8;   ///< pixels per cell
  double fake_prob = 0.5;
  int min_planted = 1;
  int max_planted = 3;
  double signal_strength = 1.0;
  double noise = 0.2;

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

void check_env(const EnvConfig& env);

/// Candidate box in cell units. Side lengths are 1, 2 or 4 cells.
struct Anchor {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  friend bool operator==(const Anchor&, const Anchor&) = default;
};

/// Every anchor of an n x n grid, ordered by (h, w, y, x).
std::vector<Anchor> anchor_grid(int grid);

BoundingBox to_pixels(const Anchor& a, int cell_px);

/// Fixed caption vocabulary used by the toy policy and the planted flaws.
std::span<const std::string_view> caption_vocabulary();

struct SyntheticScene {
  std::string id;
  int width = 0;
  int height = 0;
  Label label = Label::real;
  std::vector<FakeRegion> planted;
  std::vector<Anchor> planted_anchors;
  Eigen::MatrixXd signal;  ///< grid x grid, row = y, column = x

  /// The dataset-record view used for scoring.
  ImageRecord record() const;
};

SyntheticScene make_scene(Rng& rng, const EnvConfig& env, std::string id);

// ---------------------------------------------------------------------------
// Toy policy

/// Number of verdict features: bias, max cell signal, mean cell signal.
inline constexpr int kVerdictFeatures = 3;
/// Anchor features, with areas in units of the largest anchor: signal mass
/// of the cells not yet covered, area of those cells, min signal, novelty
/// (fraction of cells not yet covered), followed by the stop-action bias.
inline constexpr int kAnchorFeatures = 5;

struct PolicyParams {
  Eigen::VectorXd verdict_weights = Eigen::VectorXd::Zero(kVerdictFeatures);
  Eigen::VectorXd anchor_logits_weights = Eigen::VectorXd::Zero(kAnchorFeatures);
  double temperature = 1.0;

  bool finite() const;
};

/// Small seeded perturbation of the uniform policy.
PolicyParams initial_params(Rng& rng, double scale = 0.01);

/// Hand-set sharp parameters for the given world; an upper-bound reference
/// for the learnable policy.
PolicyParams oracle_params(const EnvConfig& env);

nlohmann::json to_json(const PolicyParams& params);

/// Per-scene quantities the policy is allowed to observe. Built from the
/// signal grid only.
struct Observation {
  Eigen::Vector<double, kVerdictFeatures> verdict_features;
  Eigen::MatrixXd signal;
  Eigen::VectorXd anchor_mean;
  Eigen::VectorXd anchor_min;
  Eigen::VectorXd anchor_area;  ///< normalized to the largest anchor
  double largest_area = 1.0;    ///< cells of the largest anchor
  int grid = 0;
  int cell_px = 0;
};

Observation observe(const Eigen::MatrixXd& signal, int cell_px);

/// One sampled answer in action space.
struct Action {
  Verdict verdict = Verdict::real;
  std::vector<int> anchors;  ///< indices into anchor_grid, selection order
  bool stopped = false;      ///< ended by the stop action rather than the box cap
  std::vector<int> captions; ///< indices into caption_vocabulary
  bool malformed = false;    ///< format corruption injected after sampling
  int corruption = 0;        ///< which corruption, when malformed
};

struct PolicyOptions {
  int max_boxes = 6;
  double malformed_prob = 0.0;
};

/// log pi(action) under `params`; fills `grad_verdict` / `grad_anchor` with
/// its gradient when non-null. Captions and format corruption do not depend
/// on the parameters and are excluded.
double log_likelihood(const PolicyParams& params, const Observation& obs, const Action& action,
                      int max_boxes, Eigen::VectorXd* grad_verdict = nullptr,
                      Eigen::VectorXd* grad_anchor = nullptr);

Action sample_action(const PolicyParams& params, const Observation& obs,
                     const PolicyOptions& options, Rng& rng);

/// Most likely verdict, then greedy box selection until stop or the cap.
Action greedy_action(const PolicyParams& params, const Observation& obs, int max_boxes);

/// Structured text for an action.
std::string render_action(const Action& action, const Observation& obs);

/// Ground-truth answer: true verdict and planted boxes verbatim.
std::string oracle_policy(const SyntheticScene& scene);

// ---------------------------------------------------------------------------
// GRPO

struct Group {
  std::string scene_id;
  std::vector<std::string> outputs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd advantages;
  std::vector<RewardBreakdown> breakdowns;
  // Sampling record for the update step.
  std::vector<Action> actions;
  Eigen::VectorXd old_log_probs;
};

Group sample_group(const PolicyParams& params, const SyntheticScene& scene, int group_size,
                   const StageConfig& stage, Rng& rng, const PolicyOptions& options = {});

inline constexpr double kDefaultClip = 0.2;

/// One ascent step on the clipped surrogate
///   mean_i min(rho_i a_i, clip(rho_i, 1 - c, 1 + c) a_i)
/// over every output of every group, rho_i = pi(o_i) / pi_old(o_i).
/// `scenes[k]` is the scene of `groups[k]`. Throws
/// Error(non_finite_gradient) naming the first offending group.
PolicyParams policy_update(const PolicyParams& params, std::span<const Group> groups,
                           std::span<const SyntheticScene> scenes, double lr,
                           double clip = kDefaultClip, int max_boxes = 6);

/// Value of the clipped surrogate (for diagnostics and tests).
double clipped_surrogate(const PolicyParams& params, std::span<const Group> groups,
                         std::span<const SyntheticScene> scenes, double clip,
                         int max_boxes = 6);

// ---------------------------------------------------------------------------
// Training schedule

struct ScheduleConfig {
  std::vector<StageConfig> stages = {alpha_stage(), beta_stage(), gamma_stage()};
  int iterations_per_stage = 200;
  int group_size = 8;
  int scenes_per_iteration = 16;
  int update_epochs = 4;
  double lr = 0.5;
  double clip = kDefaultClip;
  int max_boxes = 6;
  double malformed_prob = 0.05;
  int heldout_scenes = 200;
  double init_scale = 0.01;
  EnvConfig env;
  std::uint64_t seed = 7;
};

/// Reads a JSON schedule; missing keys keep their defaults. `stages` entries
/// are built-in names or stage objects.
ScheduleConfig schedule_from_json(const nlohmann::json& j);
ScheduleConfig load_schedule(const std::filesystem::path& path);
nlohmann::json to_json(const ScheduleConfig& config);

struct LogRow {
  int iteration = 0;
  std::string stage;
  double mean_reward = 0.0;  ///< held-out mean composite reward
  double accuracy = 0.0;     ///< held-out verdict accuracy
  double mean_iou = 0.0;     ///< held-out mean set IoU over fake scenes
  double train_reward = 0.0; ///< mean reward of this iteration's sampled groups

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

struct HeldoutMetrics {
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double mean_iou = 0.0;
};

/// Greedy-decoded policy metrics on a scene set.
HeldoutMetrics evaluate_policy(const PolicyParams& params, std::span<const SyntheticScene> scenes,
                               const StageConfig& stage, int max_boxes);

/// Oracle-answer metrics on a scene set.
HeldoutMetrics evaluate_oracle(std::span<const SyntheticScene> scenes, const StageConfig& stage);

struct TrainingLog {
  std::vector<LogRow> rows;  ///< row 0 is the evaluation before any update
  PolicyParams final_params;
  std::vector<SyntheticScene> heldout;
};

TrainingLog run_training(const ScheduleConfig& config);

std::vector<SyntheticScene> make_heldout(const ScheduleConfig& config);

/// CSV `iteration,stage,mean_reward,accuracy,mean_iou`.
void write_log_csv(std::ostream& out, const TrainingLog& log);

/// Mean of `values[end - window + 1 .. end]`, clamped at the start.
double window_mean(std::span<const double> values, std::size_t end, std::size_t window);

// ---------------------------------------------------------------------------

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> compute_advantages(
    const Eigen::MatrixBase<Derived>& rewards, typename Derived::Scalar epsilon) {
  using Scalar = typename Derived::Scalar;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  if (rewards.size() < 2) {
    throw_group_too_small(static_cast<std::size_t>(rewards.size()));
  }
  const Vec r = rewards.derived();
  if (r.maxCoeff() == r.minCoeff()) return Vec::Zero(r.size());
  const Vec centered = r.array() - r.mean();
  const Scalar popstd = std::sqrt(centered.squaredNorm() / Scalar(r.size()));
  return centered / (popstd + epsilon);
}

}  // namespace xdet
