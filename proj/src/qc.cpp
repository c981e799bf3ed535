#include "xdet/qc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "xdet/error.hpp"
#include "xdet/rng.hpp"

namespace xdet {

using nlohmann::json;

void check_qc_config(const QcConfig& c) {
  if (!(c.validation_fraction > 0.0 && c.validation_fraction <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "validation_fraction must be in (0, 1]");
  }
  const auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::invalid_argument, std::string(name) + " must be in [0, 1]");
    }
  };
  unit(c.box_iou_threshold, "box_iou_threshold");
  unit(c.tag_threshold, "tag_threshold");
  unit(c.min_box_pass_rate, "min_box_pass_rate");
  unit(c.min_tag_pass_rate, "min_tag_pass_rate");
}

QcConfig qc_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::schema, "QC config must be a JSON object");
  QcConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    const auto& v = it.value();
    const auto number = [&]() {
      if (!v.is_number()) throw Error(ErrorKind::schema, "'" + key + "' must be a number");
      return v.get<double>();
    };
    if (key == "validation_fraction") {
      c.validation_fraction = number();
    } else if (key == "box_iou_threshold") {
      c.box_iou_threshold = number();
    } else if (key == "tag_threshold") {
      c.tag_threshold = number();
    } else if (key == "min_box_pass_rate") {
      c.min_box_pass_rate = number();
    } else if (key == "min_tag_pass_rate") {
      c.min_tag_pass_rate = number();
    } else if (key == "strict_box_pass") {
      if (!v.is_boolean()) throw Error(ErrorKind::schema, "'strict_box_pass' must be a boolean");
      c.strict_box_pass = v.get<bool>();
    } else if (key == "seed") {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw Error(ErrorKind::schema, "'seed' must be a non-negative integer");
      }
      c.seed = v.get<std::uint64_t>();
    } else {
      throw Error(ErrorKind::schema, "unknown QC config key '" + key + "'");
    }
  }
  check_qc_config(c);
  return c;
}

QcConfig load_qc_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return qc_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("invalid QC config: ") + e.what());
  }
}

json to_json(const QcConfig& c) {
  return json{{"validation_fraction", c.validation_fraction},
              {"box_iou_threshold", c.box_iou_threshold},
              {"tag_threshold", c.tag_threshold},
              {"strict_box_pass", c.strict_box_pass},
              {"seed", c.seed},
              {"min_box_pass_rate", c.min_box_pass_rate},
              {"min_tag_pass_rate", c.min_tag_pass_rate}};
}

std::vector<std::string> sample_validation(const std::vector<ImageRecord>& records,
                                           double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "fraction must be in (0, 1]");
  }
  std::vector<std::size_t> fakes;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].is_real()) fakes.push_back(i);
  }
  if (fakes.empty()) throw Error(ErrorKind::no_fake_records, "dataset has no fake records");
  const auto n = fakes.size();
  const auto size = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);

  // Partial Fisher-Yates: the first `size` slots become the sample.
  Rng rng(seed);
  for (std::size_t i = 0; i < size; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(fakes[i], fakes[j]);
  }
  fakes.resize(size);
  std::sort(fakes.begin(), fakes.end());
  std::vector<std::string> ids;
  ids.reserve(size);
  for (auto i : fakes) ids.push_back(records[i].id);
  return ids;
}

QcScore qc_boxes(const std::vector<FakeRegion>& volunteer, const std::vector<FakeRegion>& reference,
                 double iou_threshold, bool strict) {
  if (reference.empty()) throw Error(ErrorKind::empty_reference, "reference has no boxes");
  std::size_t matched = 0;
  for (const auto& ref : reference) {
    double best = 0.0;
    for (const auto& vol : volunteer) best = std::max(best, rect_iou(vol.box, ref.box));
    // With a zero threshold, a box still has to overlap to count as matched.
    if (best >= iou_threshold && (best > 0.0 || iou_threshold > 0.0)) ++matched;
  }
  QcScore s;
  s.score = static_cast<double>(matched) / static_cast<double>(reference.size());
  s.pass = strict ? matched == reference.size() : matched > 0;
  return s;
}

QcScore qc_tags(const TagSet& volunteer, const TagSet& reference, double threshold) {
  QcScore s;
  if (volunteer.empty() && reference.empty()) {
    s.score = 1.0;
  } else {
    std::vector<Tag> common;
    std::set_intersection(volunteer.begin(), volunteer.end(), reference.begin(), reference.end(),
                          std::back_inserter(common));
    const std::size_t uni = volunteer.size() + reference.size() - common.size();
    s.score = static_cast<double>(common.size()) / static_cast<double>(uni);
  }
  s.pass = s.score >= threshold;
  return s;
}

QcReport qc_report(const std::vector<ImageRecord>& volunteer,
                   const std::vector<ImageRecord>& reference, const QcConfig& config) {
  check_qc_config(config);
  std::map<std::string, const ImageRecord*> vol_of;
  for (const auto& r : volunteer) vol_of.emplace(r.id, &r);
  std::map<std::string, const ImageRecord*> ref_of;
  for (const auto& r : reference) ref_of.emplace(r.id, &r);

  QcReport report;
  report.config = config;
  report.sampled_ids = sample_validation(reference, config.validation_fraction, config.seed);
  std::size_t box_images = 0;
  std::size_t box_passes = 0;
  std::size_t tag_passes = 0;
  for (const auto& id : report.sampled_ids) {
    const auto it = vol_of.find(id);
    if (it == vol_of.end()) {
      throw Error(ErrorKind::id_mismatch, "volunteer dataset lacks a sampled image", std::nullopt,
                  id);
    }
    const ImageRecord& vol = *it->second;
    const ImageRecord& ref = *ref_of.at(id);
    if (vol.label != ref.label) {
      throw Error(ErrorKind::id_mismatch, "volunteer and reference labels differ", std::nullopt,
                  id);
    }
    QcImageResult image;
    image.id = id;
    if (!ref.regions.empty()) {
      image.boxes = qc_boxes(vol.regions, ref.regions, config.box_iou_threshold,
                             config.strict_box_pass);
      ++box_images;
      if (image.boxes->pass) ++box_passes;
    }
    image.tags = qc_tags(vol.tags, ref.tags, config.tag_threshold);
    if (image.tags.pass) ++tag_passes;
    report.images.push_back(std::move(image));
  }
  report.box_pass_rate =
      box_images ? static_cast<double>(box_passes) / static_cast<double>(box_images) : 1.0;
  report.tag_pass_rate =
      static_cast<double>(tag_passes) / static_cast<double>(report.sampled_ids.size());
  report.overall_pass = report.box_pass_rate >= config.min_box_pass_rate &&
                        report.tag_pass_rate >= config.min_tag_pass_rate;
  return report;
}

json to_json(const QcReport& report) {
  json images = json::array();
  for (const auto& im : report.images) {
    json j{{"id", im.id},
           {"tag_score", im.tags.score},
           {"tag_pass", im.tags.pass},
           {"box_score", nullptr},
           {"box_pass", nullptr}};
    if (im.boxes) {
      j["box_score"] = im.boxes->score;
      j["box_pass"] = im.boxes->pass;
    }
    images.push_back(std::move(j));
  }
  return json{{"config", to_json(report.config)},
              {"sampled_ids", report.sampled_ids},
              {"images", std::move(images)},
              {"box_pass_rate", report.box_pass_rate},
              {"tag_pass_rate", report.tag_pass_rate},
              {"overall_pass", report.overall_pass}};
}

}  // namespace xdet
