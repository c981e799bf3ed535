#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xdet/geometry.hpp"

namespace xdet {

/// A flagged image area and the reason it looks synthetic.
struct FakeRegion {
  BoundingBox box;
  std::string caption;

  friend bool operator==(const FakeRegion&, const FakeRegion&) = default;
};

/// Image-level defect category. The order here is the canonical order used
/// when rendering tag lists.
enum class Tag {
  perspective_errors,
  artistic_styles,
  unknown_objects,
  structure_attribute_errors,
  texture_errors,
  other_anomalies,
};

inline constexpr std::size_t kTagCount = 6;
inline constexpr std::array<Tag, kTagCount> kAllTags = {
    Tag::perspective_errors,         Tag::artistic_styles,
    Tag::unknown_objects,            Tag::structure_attribute_errors,
    Tag::texture_errors,             Tag::other_anomalies,
};

std::string_view to_string(Tag tag);
std::optional<Tag> parse_tag(std::string_view name);

using TagSet = std::set<Tag>;

enum class Label { real, fake };

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view name);

struct ImageRecord {
  std::string id;
  int width = 0;
  int height = 0;
  Label label = Label::real;
  std::optional<std::string> generator;
  std::vector<FakeRegion> regions;
  TagSet tags;

  bool is_real() const { return label == Label::real; }
  std::vector<BoundingBox> boxes() const;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

enum class Severity { error, warning };

struct Violation {
  Severity severity = Severity::error;
  std::string field;
  std::string rule;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// All invariant checks for a single record. Errors make the record
/// unloadable; warnings ("unexplained fake") are advisory.
std::vector<Violation> validate_record(const ImageRecord& record);

bool has_errors(const std::vector<Violation>& violations);

struct DatasetStats {
  std::size_t record_count = 0;
  std::size_t fake_count = 0;
  std::size_t real_count = 0;
  /// Absent when the dataset has no fake records.
  std::optional<double> mean_regions_per_fake;
  std::map<std::string, std::size_t> per_generator;
  std::array<std::size_t, kTagCount> tag_histogram{};

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

DatasetStats dataset_stats(const std::vector<ImageRecord>& records);

// JSON (de)serialization. from_json performs schema checks only; use
// validate_record for invariants.
nlohmann::json to_json(const BoundingBox& box);
nlohmann::json to_json(const FakeRegion& region);
nlohmann::json to_json(const ImageRecord& record);
nlohmann::json to_json(const DatasetStats& stats);

/// Throws Error(schema) describing the first malformed field.
ImageRecord record_from_json(const nlohmann::json& j);
BoundingBox box_from_json(const nlohmann::json& j);

/// Reads a JSONL dataset. Blank lines are skipped. Throws Error with kind
/// io, schema (with line number) or invariant (with record id).
std::vector<ImageRecord> load_dataset(const std::filesystem::path& path);
std::vector<ImageRecord> read_dataset(std::istream& in);

void write_dataset(std::ostream& out, const std::vector<ImageRecord>& records);
void save_dataset(const std::filesystem::path& path,
                  const std::vector<ImageRecord>& records);

}  // namespace xdet
