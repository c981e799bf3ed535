#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xdet/annotation.hpp"
#include "xdet/grammar.hpp"

namespace xdet {

enum class StageName { alpha, beta, gamma, custom };

std::string_view to_string(StageName name);

/// Reward weights of one GRPO stage. The label and format values are the
/// final signed contributions, not multipliers of ±1.
struct StageConfig {
  StageName name = StageName::custom;
  double r_base = 0.0;
  double iou_weight = 1.0;  ///< weight of the relaxed-IoU term
  double eta = 1.1;         ///< IoU relaxation factor
  double label_pos = 1.0;
  double label_neg = -1.0;
  double format_pos = 1.0;
  double format_neg = -1.0;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

StageConfig alpha_stage();
StageConfig beta_stage();
StageConfig gamma_stage();

/// Built-in stage by name ("alpha", "beta", "gamma").
std::optional<StageConfig> builtin_stage(std::string_view name);

/// Throws Error(invalid_argument) unless eta >= 1, iou_weight >= 0 and all
/// values are finite.
void check_stage(const StageConfig& stage);

/// Reads a JSON object with StageConfig field names. A `name` of alpha, beta
/// or gamma starts from the built-in values; explicit fields override them.
StageConfig stage_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StageConfig& stage);

/// A built-in name or the path of a JSON stage file.
StageConfig resolve_stage(const std::string& name_or_path);

struct RewardBreakdown {
  double grounding = 0.0;
  double label = 0.0;
  double format = 0.0;
  double base = 0.0;
  double total = 0.0;
  bool parse_ok = false;
  double raw_iou = 0.0;  ///< set IoU before relaxation; 0 when not computed
  bool empty_reference = false;  ///< fake record without reference regions

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

nlohmann::json to_json(const RewardBreakdown& breakdown);

/// min(1, eta * iou)
double relax_iou(double iou, double eta);

/// min(1, eta * set_iou(pred, ref))
double relaxed_iou(std::span<const BoundingBox> pred, std::span<const BoundingBox> ref,
                   double eta);

/// `verdict` is empty when the output did not parse; that counts as wrong.
double label_reward(std::optional<Verdict> verdict, Label truth, const StageConfig& stage);

struct FormatReward {
  double value = 0.0;
  bool parse_ok = false;
};

FormatReward format_reward(std::string_view text, const StageConfig& stage);

RewardBreakdown composite_reward(const ParseResult& parsed, const ImageRecord& record,
                                 const StageConfig& stage);
RewardBreakdown composite_reward(std::string_view text, const ImageRecord& record,
                                 const StageConfig& stage);

struct ModelOutput {
  std::string id;
  std::string text;
};

/// Reads `{id, text}` JSONL. Throws Error(schema) with the line number.
std::vector<ModelOutput> read_outputs(std::istream& in);
std::vector<ModelOutput> load_outputs(const std::filesystem::path& path);

struct ScoredOutput {
  std::string id;
  RewardBreakdown reward;
};

/// Scores each output against the record with the same id, in output order.
/// Throws Error(unknown_record) for ids missing from `records`.
std::vector<ScoredOutput> score_outputs(const std::vector<ModelOutput>& outputs,
                                        const std::vector<ImageRecord>& records,
                                        const StageConfig& stage);

}  // namespace xdet
