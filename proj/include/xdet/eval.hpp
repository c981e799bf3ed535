#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xdet/annotation.hpp"
#include "xdet/grammar.hpp"
#include "xdet/reward.hpp"

namespace xdet {

/// A model answer for one record: raw structured text, or an already
/// parsed verdict and boxes. An absent verdict in the pre-parsed form means
/// the answer was unparsable.
struct Prediction {
  std::string id;
  std::optional<std::string> text;
  std::optional<Verdict> verdict;
  std::vector<BoundingBox> boxes;

  static Prediction from_text(std::string id, std::string text);
  static Prediction from_parsed(std::string id, std::optional<Verdict> verdict,
                                std::vector<BoundingBox> boxes);
};

using FamilyMap = std::map<std::string, std::string>;

/// Generator -> family grouping of the standard generator list.
FamilyMap default_family_map();
FamilyMap load_family_map(const std::filesystem::path& path);

inline constexpr const char* kRealFamily = "Real";

struct EvalRow {
  std::string name;
  std::string family;           ///< family of a generator row; empty for rollups
  std::size_t count = 0;        ///< records in the row
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::size_t fake_count = 0;   ///< records contributing to IoU
  std::optional<double> iou;    ///< absent for rows without fake records

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct EvalReport {
  std::size_t total = 0;
  double accuracy = 0.0;
  double mean_iou = 0.0;  ///< over fake records only
  std::size_t unparsable = 0;
  std::vector<EvalRow> generators;  ///< sorted by name; real records form a "Real" row
  std::vector<EvalRow> families;    ///< count-weighted rollups, sorted by name

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Unparsable answers count as a wrong verdict and IoU 0. Throws
/// Error(missing_prediction) listing ids without a prediction,
/// Error(duplicate_prediction), Error(unknown_record) for predictions of
/// ids not in `records`, and Error(invalid_argument) for generators the
/// family map does not cover.
EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::vector<ImageRecord>& records, const FamilyMap& families);

nlohmann::json to_json(const EvalReport& report);
void write_markdown(std::ostream& out, const EvalReport& report);
void write_csv(std::ostream& out, const EvalReport& report);

std::vector<Prediction> load_predictions(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldAssignment {
  std::map<std::string, int> fold_of;
  std::vector<std::string> warnings;  ///< strata smaller than k
};

/// Stratified by (label, generator): each stratum is shuffled with the seed
/// and dealt round-robin, so fold sizes within a stratum differ by at most
/// one. The dealing position carries over between strata to balance the
/// overall fold sizes.
FoldAssignment make_folds(const std::vector<ImageRecord>& records, int k, std::uint64_t seed);

/// JSONL `{id, fold}` in dataset order.
void write_folds(std::ostream& out, const std::vector<ImageRecord>& records,
                 const FoldAssignment& folds);

// ---------------------------------------------------------------------------
// Geometric perturbations

struct TransformResult {
  ImageRecord record;
  std::vector<std::string> diagnostics;
};

/// Keeps the part of each region inside `crop`, in crop-local coordinates.
/// Regions outside the crop are dropped. Throws Error(invalid_crop) unless
/// the crop has integral coordinates, positive area and lies inside the
/// image.
TransformResult transform_crop(const ImageRecord& record, const BoundingBox& crop);

/// Scales dimensions and boxes by `factor`, rounding half away from zero.
/// Boxes that collapse are dropped with a diagnostic. Throws
/// Error(too_small) when a scaled dimension is below 1.
TransformResult transform_scale(const ImageRecord& record, double factor);

// ---------------------------------------------------------------------------
// Human preference votes

enum class Choice { a, b, neutral };

struct PreferenceVote {
  std::string pair_id;
  Choice choice = Choice::neutral;
};

struct SidePair {
  std::string side_a;
  std::string side_b;
};

struct PreferenceMatrix {
  std::vector<std::string> names;  ///< sorted
  /// entries[r][c] = wins of r over c / non-neutral votes between them.
  std::vector<std::vector<std::optional<double>>> entries;
  std::vector<std::vector<std::size_t>> wins;
  std::size_t valid_votes = 0;
  std::size_t neutral_votes = 0;

  std::optional<double> entry(const std::string& row, const std::string& col) const;
};

/// Votes whose pair id has no side labels throw Error(schema).
PreferenceMatrix aggregate_preferences(const std::vector<PreferenceVote>& votes,
                                       const std::map<std::string, SidePair>& side_labels);

struct VoteFile {
  std::vector<PreferenceVote> votes;
  std::map<std::string, SidePair> side_labels;
};

/// JSONL `{pair_id, side_a, side_b, choice}`; choice is A, B or neutral.
VoteFile read_votes(std::istream& in);
VoteFile load_votes(const std::filesystem::path& path);

nlohmann::json to_json(const PreferenceMatrix& matrix);

}  // namespace xdet
