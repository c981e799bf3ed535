#include "xdet/grpo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "xdet/error.hpp"
#include "xdet/grammar.hpp"

namespace xdet {

using nlohmann::json;

void throw_group_too_small(std::size_t size) {
  throw Error(ErrorKind::group_too_small,
              "a group needs at least 2 outputs, got " + std::to_string(size));
}

Eigen::VectorXd compute_advantages(std::span<const double> rewards, double epsilon) {
  const Eigen::Map<const Eigen::VectorXd> r(rewards.data(),
                                            static_cast<Eigen::Index>(rewards.size()));
  return compute_advantages(r, epsilon);
}

// --- world ------------------------------------------------------------------

namespace {

constexpr std::array<int, 3> kSides = {1, 2, 4};

constexpr std::array<std::string_view, 16> kCaptions = {
    "malformed limb with an extra joint",
    "repetitive texture pattern",
    "illegible text",
    "melted object boundary",
    "inconsistent shadow direction",
    "distorted facial features",
    "extra fingers on the hand",
    "blurred fine detail",
    "impossible object geometry",
    "metallic sheen on organic surface",
    "duplicated background element",
    "warped straight edge",
    "unnatural color bleeding",
    "floating disconnected part",
    "smeared fur texture",
    "mismatched reflections",
};

}  // namespace

std::span<const std::string_view> caption_vocabulary() { return kCaptions; }

void check_env(const EnvConfig& env) {
  const auto fail = [](const std::string& what) {
    throw Error(ErrorKind::invalid_argument, "environment: " + what);
  };
  if (env.grid < 1) fail("grid must be positive");
  if (env.cell_px < 1) fail("cell_px must be positive");
  if (!(env.fake_prob >= 0.0 && env.fake_prob <= 1.0)) fail("fake_prob must be in [0, 1]");
  if (env.min_planted < 1 || env.max_planted < env.min_planted) {
    fail("planted count range must satisfy 1 <= min <= max");
  }
  if (!std::isfinite(env.signal_strength) || env.signal_strength < 0) {
    fail("signal_strength must be finite and non-negative");
  }
  if (!std::isfinite(env.noise) || env.noise < 0) fail("noise must be finite and non-negative");
}

std::vector<Anchor> anchor_grid(int grid) {
  std::vector<Anchor> out;
  for (int h : kSides) {
    if (h > grid) continue;
    for (int w : kSides) {
      if (w > grid) continue;
      for (int y = 0; y + h <= grid; ++y) {
        for (int x = 0; x + w <= grid; ++x) out.push_back({x, y, w, h});
      }
    }
  }
  return out;
}

BoundingBox to_pixels(const Anchor& a, int cell_px) {
  return {static_cast<double>(a.x * cell_px), static_cast<double>(a.y * cell_px),
          static_cast<double>((a.x + a.w) * cell_px), static_cast<double>((a.y + a.h) * cell_px)};
}

ImageRecord SyntheticScene::record() const {
  ImageRecord r;
  r.id = id;
  r.width = width;
  r.height = height;
  r.label = label;
  if (label == Label::fake) r.generator = "synthetic-world";
  r.regions = planted;
  return r;
}

SyntheticScene make_scene(Rng& rng, const EnvConfig& env, std::string id) {
  check_env(env);
  SyntheticScene s;
  s.id = std::move(id);
  s.width = env.grid * env.cell_px;
  s.height = s.width;
  s.label = rng.bernoulli(env.fake_prob) ? Label::fake : Label::real;

  Eigen::MatrixXd covered = Eigen::MatrixXd::Zero(env.grid, env.grid);
  if (s.label == Label::fake) {
    std::vector<int> sides;
    for (int side : kSides) {
      if (side <= env.grid) sides.push_back(side);
    }
    const auto count = env.min_planted +
                       static_cast<int>(rng.uniform_index(
                           static_cast<std::uint64_t>(env.max_planted - env.min_planted + 1)));
    for (int k = 0; k < count; ++k) {
      Anchor a;
      a.w = sides[rng.uniform_index(sides.size())];
      a.h = sides[rng.uniform_index(sides.size())];
      a.x = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(env.grid - a.w + 1)));
      a.y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(env.grid - a.h + 1)));
      const auto caption = kCaptions[rng.uniform_index(kCaptions.size())];
      if (std::find(s.planted_anchors.begin(), s.planted_anchors.end(), a) !=
          s.planted_anchors.end()) {
        continue;
      }
      s.planted_anchors.push_back(a);
      s.planted.push_back({to_pixels(a, env.cell_px), std::string(caption)});
      covered.block(a.y, a.x, a.h, a.w).setOnes();
    }
  }

  s.signal.resize(env.grid, env.grid);
  for (int y = 0; y < env.grid; ++y) {
    for (int x = 0; x < env.grid; ++x) {
      s.signal(y, x) = env.signal_strength * covered(y, x) + env.noise * rng.normal();
    }
  }
  return s;
}

// --- policy -----------------------------------------------------------------

bool PolicyParams::finite() const {
  return verdict_weights.allFinite() && anchor_logits_weights.allFinite() &&
         std::isfinite(temperature) && temperature > 0;
}

PolicyParams initial_params(Rng& rng, double scale) {
  PolicyParams p;
  for (Eigen::Index i = 0; i < p.verdict_weights.size(); ++i) {
    p.verdict_weights[i] = scale * rng.normal();
  }
  for (Eigen::Index i = 0; i < p.anchor_logits_weights.size(); ++i) {
    p.anchor_logits_weights[i] = scale * rng.normal();
  }
  return p;
}

PolicyParams oracle_params(const EnvConfig& env) {
  // An anchor scores the summed excess of its uncovered cells over half the
  // planted level, so the anchor adding the most hot area wins and stop wins
  // once no anchor adds net hot area.
  const double s = env.signal_strength > 0 ? env.signal_strength : 1.0;
  const double threshold = 0.5 * s + 0.5 * env.noise;
  PolicyParams p;
  p.verdict_weights << -40.0 * threshold / s, 40.0 / s, 0.0;
  constexpr double sharpness = 1280.0;
  p.anchor_logits_weights << sharpness / s, -0.5 * sharpness, 0.0, 0.0, 0.05 * sharpness / 16.0;
  return p;
}

json to_json(const PolicyParams& p) {
  return json{{"verdict_weights", std::vector<double>(p.verdict_weights.begin(),
                                                      p.verdict_weights.end())},
              {"anchor_logits_weights",
               std::vector<double>(p.anchor_logits_weights.begin(),
                                   p.anchor_logits_weights.end())},
              {"temperature", p.temperature}};
}

Observation observe(const Eigen::MatrixXd& signal, int cell_px) {
  Observation o;
  o.grid = static_cast<int>(signal.rows());
  o.cell_px = cell_px;
  o.signal = signal;
  o.verdict_features << 1.0, signal.maxCoeff(), signal.mean();
  const auto anchors = anchor_grid(o.grid);
  const auto n = static_cast<Eigen::Index>(anchors.size());
  o.anchor_mean.resize(n);
  o.anchor_min.resize(n);
  o.anchor_area.resize(n);
  double largest = 1.0;
  for (const auto& a : anchors) largest = std::max(largest, static_cast<double>(a.w * a.h));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = anchors[static_cast<std::size_t>(i)];
    const auto block = signal.block(a.y, a.x, a.h, a.w);
    o.anchor_mean[i] = block.mean();
    o.anchor_min[i] = block.minCoeff();
    o.anchor_area[i] = static_cast<double>(a.w * a.h) / largest;
  }
  o.largest_area = largest;
  return o;
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Tracks which cells the already-selected anchors cover, with summed-area
// tables of the uncovered cells and their signal for O(1) queries.
class Coverage {
 public:
  explicit Coverage(const Eigen::MatrixXd& signal)
      : signal_(signal), open_(Eigen::MatrixXd::Ones(signal.rows(), signal.cols())) {
    rebuild();
  }

  void add(const Anchor& a) {
    open_.block(a.y, a.x, a.h, a.w).setZero();
    rebuild();
  }

  /// Uncovered cells of `a`.
  double open_area(const Anchor& a) const { return box_sum(area_table_, a); }
  /// Signal summed over the uncovered cells of `a`.
  double open_mass(const Anchor& a) const { return box_sum(mass_table_, a); }

 private:
  static double box_sum(const Eigen::MatrixXd& t, const Anchor& a) {
    return t(a.y + a.h, a.x + a.w) - t(a.y, a.x + a.w) - t(a.y + a.h, a.x) + t(a.y, a.x);
  }

  static void integrate(const Eigen::MatrixXd& m, Eigen::MatrixXd& t) {
    t = Eigen::MatrixXd::Zero(m.rows() + 1, m.cols() + 1);
    for (Eigen::Index y = 0; y < m.rows(); ++y) {
      for (Eigen::Index x = 0; x < m.cols(); ++x) {
        t(y + 1, x + 1) = m(y, x) + t(y, x + 1) + t(y + 1, x) - t(y, x);
      }
    }
  }

  void rebuild() {
    integrate(open_, area_table_);
    integrate(open_.cwiseProduct(signal_), mass_table_);
  }

  const Eigen::MatrixXd& signal_;
  Eigen::MatrixXd open_;
  Eigen::MatrixXd area_table_;
  Eigen::MatrixXd mass_table_;
};

// Sequential box selection: at each step the candidates are the unselected
// anchors plus a stop action.
class BoxChooser {
 public:
  BoxChooser(const PolicyParams& params, const Observation& obs)
      : obs_(obs), anchors_(anchor_grid(obs.grid)), coverage_(obs.signal),
        selected_(anchors_.size(), false), inv_t_(1.0 / params.temperature),
        w_(params.anchor_logits_weights) {
    const auto n = static_cast<Eigen::Index>(anchors_.size());
    logits_.resize(n + 1);
    features_.resize(n, kAnchorFeatures);
    features_.col(2) = obs.anchor_min;
    features_.col(4).setZero();
  }

  std::size_t stop_index() const { return anchors_.size(); }

  // Fills logits for the current step; selected anchors get -inf.
  void compute() {
    const auto n = static_cast<Eigen::Index>(anchors_.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& a = anchors_[static_cast<std::size_t>(i)];
      const double open = coverage_.open_area(a);
      features_(i, 0) = coverage_.open_mass(a) / obs_.largest_area;
      features_(i, 1) = open / obs_.largest_area;
      features_(i, 3) = open / (a.w * a.h);
    }
    const Eigen::VectorXd base = features_ * w_;
    for (Eigen::Index i = 0; i < n; ++i) {
      logits_[i] = selected_[static_cast<std::size_t>(i)]
                       ? -std::numeric_limits<double>::infinity()
                       : inv_t_ * base[i];
    }
    logits_[n] = inv_t_ * w_[4];
    max_logit_ = logits_.maxCoeff();
    lse_ = max_logit_ + std::log((logits_.array() - max_logit_).exp().sum());
  }

  double log_prob(std::size_t choice) const {
    return logits_[static_cast<Eigen::Index>(choice)] - lse_;
  }

  // d log p(choice) / d anchor weights.
  void accumulate_grad(std::size_t choice, Eigen::VectorXd& grad) const {
    const auto n = static_cast<Eigen::Index>(anchors_.size());
    const Eigen::ArrayXd p = (logits_.array() - lse_).exp();
    const Eigen::ArrayXd pa = p.head(n);
    Eigen::Vector<double, kAnchorFeatures> expected = features_.transpose() * pa.matrix();
    expected[4] = p[n];
    Eigen::Vector<double, kAnchorFeatures> chosen = Eigen::Vector<double, kAnchorFeatures>::Zero();
    if (choice == stop_index()) {
      chosen[4] = 1.0;
    } else {
      chosen = features_.row(static_cast<Eigen::Index>(choice)).transpose();
    }
    grad += inv_t_ * (chosen - expected);
  }

  std::size_t sample(Rng& rng) const {
    double u = rng.uniform();
    const auto total = static_cast<std::size_t>(logits_.size());
    std::size_t last_valid = stop_index();
    for (std::size_t i = 0; i < total; ++i) {
      const double p = std::exp(logits_[static_cast<Eigen::Index>(i)] - lse_);
      if (p <= 0.0) continue;
      last_valid = i;
      if (u < p) return i;
      u -= p;
    }
    return last_valid;
  }

  std::size_t argmax() const {
    Eigen::Index best = 0;
    logits_.maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }

  void select(std::size_t choice) {
    selected_[choice] = true;
    coverage_.add(anchors_[choice]);
  }

 private:
  const Observation& obs_;
  std::vector<Anchor> anchors_;
  Coverage coverage_;
  std::vector<bool> selected_;
  double inv_t_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd features_;  ///< per anchor, for the current step
  Eigen::VectorXd logits_;
  double max_logit_ = 0.0;
  double lse_ = 0.0;
};

double verdict_logit(const PolicyParams& params, const Observation& obs) {
  return params.verdict_weights.dot(obs.verdict_features) / params.temperature;
}

}  // namespace

double log_likelihood(const PolicyParams& params, const Observation& obs, const Action& action,
                      int max_boxes, Eigen::VectorXd* grad_verdict, Eigen::VectorXd* grad_anchor) {
  if (grad_verdict) grad_verdict->setZero(kVerdictFeatures);
  if (grad_anchor) grad_anchor->setZero(kAnchorFeatures);

  const double z = verdict_logit(params, obs);
  double logp = 0.0;
  if (action.verdict == Verdict::generated) {
    logp -= softplus(-z);
    if (grad_verdict) *grad_verdict = (1.0 - sigmoid(z)) / params.temperature * obs.verdict_features;
  } else {
    logp -= softplus(z);
    if (grad_verdict) *grad_verdict = -sigmoid(z) / params.temperature * obs.verdict_features;
    return logp;
  }

  BoxChooser chooser(params, obs);
  for (int idx : action.anchors) {
    chooser.compute();
    const auto choice = static_cast<std::size_t>(idx);
    logp += chooser.log_prob(choice);
    if (grad_anchor) chooser.accumulate_grad(choice, *grad_anchor);
    chooser.select(choice);
  }
  if (action.stopped || static_cast<int>(action.anchors.size()) < max_boxes) {
    chooser.compute();
    logp += chooser.log_prob(chooser.stop_index());
    if (grad_anchor) chooser.accumulate_grad(chooser.stop_index(), *grad_anchor);
  }
  return logp;
}

Action sample_action(const PolicyParams& params, const Observation& obs,
                     const PolicyOptions& options, Rng& rng) {
  Action a;
  const double p_fake = sigmoid(verdict_logit(params, obs));
  a.verdict = rng.uniform() < p_fake ? Verdict::generated : Verdict::real;
  if (a.verdict == Verdict::generated) {
    BoxChooser chooser(params, obs);
    while (static_cast<int>(a.anchors.size()) < options.max_boxes) {
      chooser.compute();
      const auto choice = chooser.sample(rng);
      if (choice == chooser.stop_index()) {
        a.stopped = true;
        break;
      }
      a.anchors.push_back(static_cast<int>(choice));
      chooser.select(choice);
    }
    for (std::size_t k = 0; k < a.anchors.size(); ++k) {
      a.captions.push_back(static_cast<int>(rng.uniform_index(kCaptions.size())));
    }
  }
  a.malformed = options.malformed_prob > 0 && rng.bernoulli(options.malformed_prob);
  if (a.malformed) a.corruption = static_cast<int>(rng.uniform_index(3));
  return a;
}

Action greedy_action(const PolicyParams& params, const Observation& obs, int max_boxes) {
  Action a;
  a.verdict = verdict_logit(params, obs) > 0 ? Verdict::generated : Verdict::real;
  if (a.verdict == Verdict::generated) {
    BoxChooser chooser(params, obs);
    while (static_cast<int>(a.anchors.size()) < max_boxes) {
      chooser.compute();
      const auto choice = chooser.argmax();
      if (choice == chooser.stop_index()) {
        a.stopped = true;
        break;
      }
      a.anchors.push_back(static_cast<int>(choice));
      a.captions.push_back(static_cast<int>(a.anchors.size() - 1) %
                           static_cast<int>(kCaptions.size()));
      chooser.select(choice);
    }
  }
  return a;
}

std::string render_action(const Action& action, const Observation& obs) {
  ParsedOutput p;
  p.verdict = action.verdict;
  if (action.verdict == Verdict::real) {
    p.think_prose = "No synthesis artifacts are visible.";
  } else {
    p.think_prose = action.anchors.empty() ? "The image looks synthetic overall."
                                           : "Suspicious regions:";
    const auto anchors = anchor_grid(obs.grid);
    for (std::size_t k = 0; k < action.anchors.size(); ++k) {
      const auto& anchor = anchors[static_cast<std::size_t>(action.anchors[k])];
      p.regions.push_back({to_pixels(anchor, obs.cell_px),
                           std::string(kCaptions[static_cast<std::size_t>(action.captions[k])])});
    }
  }
  std::string text = render_structured(p);
  if (!action.malformed) return text;
  switch (action.corruption) {
    case 0:  // truncated answer
      text.erase(text.rfind("</verdict>"));
      break;
    case 1: {  // unrecognized verdict word
      const auto open = text.rfind("<verdict>") + std::string_view("<verdict>").size();
      const auto close = text.rfind("</verdict>");
      text.replace(open, close - open, "undecided");
      break;
    }
    default:  // repeated tag block
      text += "\n<tag></tag>";
      break;
  }
  return text;
}

std::string oracle_policy(const SyntheticScene& scene) {
  ParsedOutput p;
  if (scene.label == Label::real) {
    p.verdict = Verdict::real;
    p.think_prose = "No synthesis artifacts are visible.";
  } else {
    p.verdict = Verdict::generated;
    p.think_prose = "Suspicious regions:";
    p.regions = scene.planted;
  }
  return render_structured(p);
}

// --- GRPO ---------------------------------------------------------------------

namespace {

int cell_px_of(const SyntheticScene& scene) {
  return scene.signal.cols() > 0 ? scene.width / static_cast<int>(scene.signal.cols()) : 1;
}

}  // namespace

Group sample_group(const PolicyParams& params, const SyntheticScene& scene, int group_size,
                   const StageConfig& stage, Rng& rng, const PolicyOptions& options) {
  if (group_size < 2) throw_group_too_small(static_cast<std::size_t>(std::max(group_size, 0)));
  const Observation obs = observe(scene.signal, cell_px_of(scene));
  const ImageRecord record = scene.record();
  Group g;
  g.scene_id = scene.id;
  g.rewards.resize(group_size);
  g.old_log_probs.resize(group_size);
  for (int i = 0; i < group_size; ++i) {
    Action a = sample_action(params, obs, options, rng);
    std::string text = render_action(a, obs);
    RewardBreakdown b = composite_reward(text, record, stage);
    g.rewards[i] = b.total;
    g.old_log_probs[i] = log_likelihood(params, obs, a, options.max_boxes);
    g.outputs.push_back(std::move(text));
    g.breakdowns.push_back(b);
    g.actions.push_back(std::move(a));
  }
  g.advantages = compute_advantages(g.rewards);
  return g;
}

namespace {

void check_alignment(std::span<const Group> groups, std::span<const SyntheticScene> scenes) {
  if (groups.size() != scenes.size()) {
    throw Error(ErrorKind::invalid_argument, "groups and scenes must have the same length");
  }
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].scene_id != scenes[k].id) {
      throw Error(ErrorKind::invalid_argument, "group " + groups[k].scene_id +
                                                   " is paired with scene " + scenes[k].id);
    }
  }
}

}  // namespace

double clipped_surrogate(const PolicyParams& params, std::span<const Group> groups,
                         std::span<const SyntheticScene> scenes, double clip, int max_boxes) {
  check_alignment(groups, scenes);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const Observation obs = observe(scenes[k].signal, cell_px_of(scenes[k]));
    const Group& g = groups[k];
    for (std::size_t i = 0; i < g.actions.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      const double ratio =
          std::exp(log_likelihood(params, obs, g.actions[i], max_boxes) - g.old_log_probs[idx]);
      const double adv = g.advantages[idx];
      total += std::min(ratio * adv, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv);
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

PolicyParams policy_update(const PolicyParams& params, std::span<const Group> groups,
                           std::span<const SyntheticScene> scenes, double lr, double clip,
                           int max_boxes) {
  if (!(lr > 0)) throw Error(ErrorKind::invalid_argument, "lr must be positive");
  if (!(clip > 0 && clip < 1)) throw Error(ErrorKind::invalid_argument, "clip must be in (0, 1)");
  check_alignment(groups, scenes);

  Eigen::VectorXd grad_v = Eigen::VectorXd::Zero(kVerdictFeatures);
  Eigen::VectorXd grad_a = Eigen::VectorXd::Zero(kAnchorFeatures);
  Eigen::VectorXd gv(kVerdictFeatures);
  Eigen::VectorXd ga(kAnchorFeatures);
  std::size_t count = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const Group& g = groups[k];
    const Observation obs = observe(scenes[k].signal, cell_px_of(scenes[k]));
    Eigen::VectorXd group_v = Eigen::VectorXd::Zero(kVerdictFeatures);
    Eigen::VectorXd group_a = Eigen::VectorXd::Zero(kAnchorFeatures);
    for (std::size_t i = 0; i < g.actions.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      const double adv = g.advantages[idx];
      ++count;
      if (adv == 0.0) continue;
      const double logp = log_likelihood(params, obs, g.actions[i], max_boxes, &gv, &ga);
      const double ratio = std::exp(logp - g.old_log_probs[idx]);
      // The clipped branch is constant in the parameters.
      const bool active = adv > 0 ? ratio <= 1.0 + clip : ratio >= 1.0 - clip;
      if (!active) continue;
      group_v += adv * ratio * gv;
      group_a += adv * ratio * ga;
    }
    if (!group_v.allFinite() || !group_a.allFinite()) {
      throw Error(ErrorKind::non_finite_gradient, "non-finite surrogate gradient in group " +
                                                      g.scene_id);
    }
    grad_v += group_v;
    grad_a += group_a;
  }
  PolicyParams next = params;
  if (count == 0) return next;
  const double scale = lr / static_cast<double>(count);
  next.verdict_weights += scale * grad_v;
  next.anchor_logits_weights += scale * grad_a;
  if (!next.finite()) {
    throw Error(ErrorKind::non_finite_gradient, "update produced non-finite parameters");
  }
  return next;
}

// --- schedule -----------------------------------------------------------------

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& field) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    field = it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::schema, std::string("schedule field '") + key + "' has the wrong type");
  }
}

void check_schedule(const ScheduleConfig& c) {
  const auto fail = [](const std::string& what) {
    throw Error(ErrorKind::invalid_argument, "schedule: " + what);
  };
  if (c.stages.empty()) fail("at least one stage is required");
  for (const auto& s : c.stages) check_stage(s);
  if (c.iterations_per_stage < 0) fail("iterations_per_stage must be >= 0");
  if (c.group_size < 2) fail("group_size must be >= 2");
  if (c.scenes_per_iteration < 1) fail("scenes_per_iteration must be >= 1");
  if (c.update_epochs < 1) fail("update_epochs must be >= 1");
  if (!(c.lr > 0)) fail("lr must be positive");
  if (!(c.clip > 0 && c.clip < 1)) fail("clip must be in (0, 1)");
  if (c.max_boxes < 0) fail("max_boxes must be >= 0");
  if (!(c.malformed_prob >= 0 && c.malformed_prob <= 1)) fail("malformed_prob must be in [0, 1]");
  if (c.heldout_scenes < 1) fail("heldout_scenes must be >= 1");
  check_env(c.env);
}

}  // namespace

ScheduleConfig schedule_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::schema, "schedule config must be a JSON object");
  ScheduleConfig c;
  if (auto it = j.find("stages"); it != j.end()) {
    if (!it->is_array()) throw Error(ErrorKind::schema, "'stages' must be an array");
    c.stages.clear();
    for (const auto& s : *it) {
      if (s.is_string()) {
        auto b = builtin_stage(s.get<std::string>());
        if (!b) throw Error(ErrorKind::schema, "unknown stage '" + s.get<std::string>() + "'");
        c.stages.push_back(*b);
      } else {
        c.stages.push_back(stage_from_json(s));
      }
    }
  }
  read_key(j, "iterations_per_stage", c.iterations_per_stage);
  read_key(j, "group_size", c.group_size);
  read_key(j, "scenes_per_iteration", c.scenes_per_iteration);
  read_key(j, "update_epochs", c.update_epochs);
  read_key(j, "lr", c.lr);
  read_key(j, "clip", c.clip);
  read_key(j, "max_boxes", c.max_boxes);
  read_key(j, "malformed_prob", c.malformed_prob);
  read_key(j, "heldout_scenes", c.heldout_scenes);
  read_key(j, "init_scale", c.init_scale);
  read_key(j, "seed", c.seed);
  if (auto it = j.find("env"); it != j.end()) {
    if (!it->is_object()) throw Error(ErrorKind::schema, "'env' must be an object");
    read_key(*it, "grid", c.env.grid);
    read_key(*it, "cell_px", c.env.cell_px);
    read_key(*it, "fake_prob", c.env.fake_prob);
    read_key(*it, "min_planted", c.env.min_planted);
    read_key(*it, "max_planted", c.env.max_planted);
    read_key(*it, "signal_strength", c.env.signal_strength);
    read_key(*it, "noise", c.env.noise);
  }
  check_schedule(c);
  return c;
}

ScheduleConfig load_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("invalid schedule config: ") + e.what());
  }
  return schedule_from_json(j);
}

json to_json(const ScheduleConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(to_json(s));
  return json{{"stages", std::move(stages)},
              {"iterations_per_stage", c.iterations_per_stage},
              {"group_size", c.group_size},
              {"scenes_per_iteration", c.scenes_per_iteration},
              {"update_epochs", c.update_epochs},
              {"lr", c.lr},
              {"clip", c.clip},
              {"max_boxes", c.max_boxes},
              {"malformed_prob", c.malformed_prob},
              {"heldout_scenes", c.heldout_scenes},
              {"init_scale", c.init_scale},
              {"seed", c.seed},
              {"env",
               {{"grid", c.env.grid},
                {"cell_px", c.env.cell_px},
                {"fake_prob", c.env.fake_prob},
                {"min_planted", c.env.min_planted},
                {"max_planted", c.env.max_planted},
                {"signal_strength", c.env.signal_strength},
                {"noise", c.env.noise}}}};
}

HeldoutMetrics evaluate_policy(const PolicyParams& params, std::span<const SyntheticScene> scenes,
                               const StageConfig& stage, int max_boxes) {
  HeldoutMetrics m;
  if (scenes.empty()) return m;
  std::size_t correct = 0;
  std::size_t fakes = 0;
  double iou_sum = 0.0;
  for (const auto& scene : scenes) {
    const Observation obs = observe(scene.signal, cell_px_of(scene));
    const Action a = greedy_action(params, obs, max_boxes);
    const RewardBreakdown b = composite_reward(render_action(a, obs), scene.record(), stage);
    m.mean_reward += b.total;
    if (matches(a.verdict, scene.label)) ++correct;
    if (scene.label == Label::fake) {
      ++fakes;
      iou_sum += b.raw_iou;
    }
  }
  const auto n = static_cast<double>(scenes.size());
  m.mean_reward /= n;
  m.accuracy = static_cast<double>(correct) / n;
  m.mean_iou = fakes ? iou_sum / static_cast<double>(fakes) : 0.0;
  return m;
}

HeldoutMetrics evaluate_oracle(std::span<const SyntheticScene> scenes, const StageConfig& stage) {
  HeldoutMetrics m;
  if (scenes.empty()) return m;
  std::size_t correct = 0;
  std::size_t fakes = 0;
  double iou_sum = 0.0;
  for (const auto& scene : scenes) {
    const ParseResult parsed = parse_structured(oracle_policy(scene));
    const RewardBreakdown b = composite_reward(parsed, scene.record(), stage);
    m.mean_reward += b.total;
    if (const auto* p = std::get_if<ParsedOutput>(&parsed); p && matches(p->verdict, scene.label)) {
      ++correct;
    }
    if (scene.label == Label::fake) {
      ++fakes;
      iou_sum += b.raw_iou;
    }
  }
  const auto n = static_cast<double>(scenes.size());
  m.mean_reward /= n;
  m.accuracy = static_cast<double>(correct) / n;
  m.mean_iou = fakes ? iou_sum / static_cast<double>(fakes) : 0.0;
  return m;
}

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kHeldoutStream = 2;
constexpr std::uint64_t kTrainStream = 3;

Rng stream(std::uint64_t seed, std::uint64_t id) {
  std::uint64_t s = seed ^ (id * 0x9e3779b97f4a7c15ULL);
  return Rng(splitmix64(s));
}

}  // namespace

std::vector<SyntheticScene> make_heldout(const ScheduleConfig& config) {
  Rng rng = stream(config.seed, kHeldoutStream);
  std::vector<SyntheticScene> out;
  out.reserve(static_cast<std::size_t>(config.heldout_scenes));
  for (int i = 0; i < config.heldout_scenes; ++i) {
    Rng scene_rng = rng.fork(static_cast<std::uint64_t>(i));
    out.push_back(make_scene(scene_rng, config.env, "heldout-" + std::to_string(i)));
  }
  return out;
}

TrainingLog run_training(const ScheduleConfig& config) {
  check_schedule(config);
  TrainingLog log;
  Rng init_rng = stream(config.seed, kInitStream);
  PolicyParams params = initial_params(init_rng, config.init_scale);
  log.heldout = make_heldout(config);
  Rng train_rng = stream(config.seed, kTrainStream);

  const PolicyOptions options{config.max_boxes, config.malformed_prob};
  const auto evaluate_row = [&](int iteration, const StageConfig& stage, double train_reward) {
    const auto m = evaluate_policy(params, log.heldout, stage, config.max_boxes);
    log.rows.push_back({iteration, std::string(to_string(stage.name)), m.mean_reward, m.accuracy,
                        m.mean_iou, train_reward});
  };
  evaluate_row(0, config.stages.front(), 0.0);

  int iteration = 0;
  std::vector<SyntheticScene> scenes;
  std::vector<Group> groups;
  for (const auto& stage : config.stages) {
    for (int it = 0; it < config.iterations_per_stage; ++it) {
      ++iteration;
      Rng iter_rng = train_rng.fork(static_cast<std::uint64_t>(iteration));
      scenes.clear();
      groups.clear();
      double reward_sum = 0.0;
      for (int k = 0; k < config.scenes_per_iteration; ++k) {
        Rng scene_rng = iter_rng.fork(static_cast<std::uint64_t>(k));
        scenes.push_back(make_scene(scene_rng, config.env,
                                    "train-" + std::to_string(iteration) + "-" + std::to_string(k)));
        groups.push_back(
            sample_group(params, scenes.back(), config.group_size, stage, scene_rng, options));
        reward_sum += groups.back().rewards.sum();
      }
      for (int e = 0; e < config.update_epochs; ++e) {
        params = policy_update(params, groups, scenes, config.lr, config.clip, config.max_boxes);
      }
      evaluate_row(iteration, stage,
                   reward_sum / static_cast<double>(config.scenes_per_iteration * config.group_size));
    }
  }
  log.final_params = params;
  return log;
}

void write_log_csv(std::ostream& out, const TrainingLog& log) {
  out << "iteration,stage,mean_reward,accuracy,mean_iou\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (const auto& r : log.rows) {
    line.str("");
    line << r.iteration << ',' << r.stage << ',' << r.mean_reward << ',' << r.accuracy << ','
         << r.mean_iou << '\n';
    out << line.str();
  }
}

double window_mean(std::span<const double> values, std::size_t end, std::size_t window) {
  if (values.empty() || window == 0) return 0.0;
  end = std::min(end, values.size() - 1);
  const std::size_t begin = end + 1 >= window ? end + 1 - window : 0;
  double sum = 0.0;
  for (std::size_t i = begin; i <= end; ++i) sum += values[i];
  return sum / static_cast<double>(end - begin + 1);
}

}  // namespace xdet
