#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xdet/annotation.hpp"

namespace xdet {

struct QcConfig {
  double validation_fraction = 0.05;
  double box_iou_threshold = 0.20;
  double tag_threshold = 0.3333;
  /// When set, an image passes the box check only if every reference box is
  /// matched; otherwise one matched box is enough.
  bool strict_box_pass = false;
  std::uint64_t seed = 0;
  /// Batch-level minimum pass rates for the overall verdict.
  double min_box_pass_rate = 1.0;
  double min_tag_pass_rate = 1.0;
};

void check_qc_config(const QcConfig& config);
QcConfig qc_config_from_json(const nlohmann::json& j);
QcConfig load_qc_config(const std::filesystem::path& path);
nlohmann::json to_json(const QcConfig& config);

/// Uniform sample without replacement of fake record ids, of size
/// max(1, round(fraction * fakes)), returned in dataset order. Throws
/// Error(no_fake_records) when there is nothing to sample and
/// Error(invalid_argument) unless 0 < fraction <= 1.
std::vector<std::string> sample_validation(const std::vector<ImageRecord>& records,
                                           double fraction, std::uint64_t seed);

struct QcScore {
  double score = 0.0;
  bool pass = false;
};

/// Fraction of reference boxes whose best rect_iou against a volunteer box
/// reaches the threshold. Throws Error(empty_reference) for an empty
/// reference list.
QcScore qc_boxes(const std::vector<FakeRegion>& volunteer, const std::vector<FakeRegion>& reference,
                 double iou_threshold, bool strict = false);

/// Jaccard agreement; two empty sets agree fully.
QcScore qc_tags(const TagSet& volunteer, const TagSet& reference, double threshold);

struct QcImageResult {
  std::string id;
  std::optional<QcScore> boxes;  ///< absent when the reference image has no boxes
  QcScore tags;
};

struct QcReport {
  QcConfig config;
  std::vector<std::string> sampled_ids;
  std::vector<QcImageResult> images;
  /// Over images with reference boxes; 1 when there are none.
  double box_pass_rate = 0.0;
  double tag_pass_rate = 0.0;
  bool overall_pass = false;
};

/// Samples from the reference dataset and compares each sampled image with
/// the volunteer annotation of the same id. Throws Error(id_mismatch) when
/// the volunteer dataset lacks a sampled id or labels it differently.
QcReport qc_report(const std::vector<ImageRecord>& volunteer,
                   const std::vector<ImageRecord>& reference, const QcConfig& config);

nlohmann::json to_json(const QcReport& report);

}  // namespace xdet
