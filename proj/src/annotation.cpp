#include "xdet/annotation.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "xdet/error.hpp"

namespace xdet {

using nlohmann::json;

std::string_view to_string(Tag tag) {
  switch (tag) {
    case Tag::perspective_errors: return "perspective_errors";
    case Tag::artistic_styles: return "artistic_styles";
    case Tag::unknown_objects: return "unknown_objects";
    case Tag::structure_attribute_errors: return "structure_attribute_errors";
    case Tag::texture_errors: return "texture_errors";
    case Tag::other_anomalies: return "other_anomalies";
  }
  return "";
}

std::optional<Tag> parse_tag(std::string_view name) {
  for (Tag t : kAllTags) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

std::string_view to_string(Label label) {
  return label == Label::real ? "real" : "fake";
}

std::optional<Label> parse_label(std::string_view name) {
  if (name == "real") return Label::real;
  if (name == "fake") return Label::fake;
  return std::nullopt;
}

std::vector<BoundingBox> ImageRecord::boxes() const {
  std::vector<BoundingBox> out;
  out.reserve(regions.size());
  for (const auto& r : regions) out.push_back(r.box);
  return out;
}

namespace {

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

}  // namespace

std::vector<Violation> validate_record(const ImageRecord& record) {
  std::vector<Violation> out;
  const auto error = [&](std::string field, std::string rule) {
    out.push_back({Severity::error, std::move(field), std::move(rule)});
  };

  if (record.id.empty()) error("id", "empty id");
  if (record.width <= 0) error("width", "non-positive width");
  if (record.height <= 0) error("height", "non-positive height");

  if (record.is_real()) {
    if (!record.regions.empty()) error("regions", "annotated real image");
    if (!record.tags.empty()) error("tags", "tagged real image");
  } else if (!record.generator || is_blank(*record.generator)) {
    error("generator", "missing generator for fake image");
  }

  for (std::size_t i = 0; i < record.regions.size(); ++i) {
    const auto& region = record.regions[i];
    const auto& b = region.box;
    const std::string field = "regions[" + std::to_string(i) + "]";
    if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) ||
        !std::isfinite(b.y2)) {
      error(field + ".box", "non-finite coordinate");
      continue;
    }
    if (b.x1 < 0 || b.y1 < 0) error(field + ".box", "negative coordinate");
    if (!b.non_degenerate()) {
      error(field + ".box", "degenerate box");
    } else if (b.x2 > record.width || b.y2 > record.height) {
      error(field + ".box", "box out of image bounds");
    }
    if (is_blank(region.caption)) error(field + ".caption", "empty caption");
  }

  if (!record.is_real() && record.regions.empty() && record.tags.empty()) {
    out.push_back({Severity::warning, "regions", "unexplained fake"});
  }
  return out;
}

bool has_errors(const std::vector<Violation>& violations) {
  for (const auto& v : violations) {
    if (v.severity == Severity::error) return true;
  }
  return false;
}

DatasetStats dataset_stats(const std::vector<ImageRecord>& records) {
  if (records.empty()) {
    throw Error(ErrorKind::empty_dataset, "cannot compute statistics of an empty dataset");
  }
  DatasetStats s;
  s.record_count = records.size();
  std::size_t fake_regions = 0;
  for (const auto& r : records) {
    if (r.is_real()) {
      ++s.real_count;
      continue;
    }
    ++s.fake_count;
    fake_regions += r.regions.size();
    if (r.generator) ++s.per_generator[*r.generator];
    for (Tag t : r.tags) ++s.tag_histogram[static_cast<std::size_t>(t)];
  }
  if (s.fake_count > 0) {
    s.mean_regions_per_fake =
        static_cast<double>(fake_regions) / static_cast<double>(s.fake_count);
  }
  return s;
}

json to_json(const BoundingBox& box) {
  return json::array({box.x1, box.y1, box.x2, box.y2});
}

json to_json(const FakeRegion& region) {
  return json{{"box", to_json(region.box)}, {"caption", region.caption}};
}

json to_json(const ImageRecord& record) {
  json regions = json::array();
  for (const auto& r : record.regions) regions.push_back(to_json(r));
  json tags = json::array();
  for (Tag t : record.tags) tags.push_back(std::string(to_string(t)));
  json j{{"id", record.id},
         {"width", record.width},
         {"height", record.height},
         {"label", std::string(to_string(record.label))}};
  if (record.generator) j["generator"] = *record.generator;
  j["regions"] = std::move(regions);
  j["tags"] = std::move(tags);
  return j;
}

json to_json(const DatasetStats& stats) {
  json tags = json::object();
  for (Tag t : kAllTags) {
    tags[std::string(to_string(t))] = stats.tag_histogram[static_cast<std::size_t>(t)];
  }
  json j{{"record_count", stats.record_count},
         {"fake_count", stats.fake_count},
         {"real_count", stats.real_count},
         {"per_generator", stats.per_generator},
         {"tag_histogram", std::move(tags)}};
  j["mean_regions_per_fake"] =
      stats.mean_regions_per_fake ? json(*stats.mean_regions_per_fake) : json(nullptr);
  return j;
}

namespace {

[[noreturn]] void schema_fail(const std::string& what) {
  throw Error(ErrorKind::schema, what);
}

const json& require(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) schema_fail(std::string("missing field '") + field + "'");
  return *it;
}

int require_dimension(const json& j, const char* field) {
  const json& v = require(j, field);
  if (v.is_number_integer()) {
    const auto n = v.get<long long>();
    if (n < 1 || n > 1'000'000'000) {
      schema_fail(std::string("field '") + field + "' out of range");
    }
    return static_cast<int>(n);
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && d >= 1 && d <= 1e9) return static_cast<int>(d);
  }
  schema_fail(std::string("field '") + field + "' must be a positive integer");
}

}  // namespace

BoundingBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) schema_fail("malformed box: expected [x1, y1, x2, y2]");
  double c[4];
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number()) schema_fail("malformed box: non-numeric coordinate");
    c[i] = j[i].get<double>();
  }
  return {c[0], c[1], c[2], c[3]};
}

ImageRecord record_from_json(const json& j) {
  if (!j.is_object()) schema_fail("record must be a JSON object");
  ImageRecord r;

  const json& id = require(j, "id");
  if (!id.is_string()) schema_fail("field 'id' must be a string");
  r.id = id.get<std::string>();

  r.width = require_dimension(j, "width");
  r.height = require_dimension(j, "height");

  const json& label = require(j, "label");
  if (!label.is_string()) schema_fail("field 'label' must be a string");
  auto parsed_label = parse_label(label.get<std::string>());
  if (!parsed_label) schema_fail("unknown label '" + label.get<std::string>() + "'");
  r.label = *parsed_label;

  if (auto it = j.find("generator"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) schema_fail("field 'generator' must be a string or null");
    r.generator = it->get<std::string>();
  }

  const json& regions = require(j, "regions");
  if (!regions.is_array()) schema_fail("field 'regions' must be an array");
  for (const auto& item : regions) {
    if (!item.is_object()) schema_fail("region must be an object");
    FakeRegion region;
    region.box = box_from_json(require(item, "box"));
    const json& caption = require(item, "caption");
    if (!caption.is_string()) schema_fail("region caption must be a string");
    region.caption = caption.get<std::string>();
    r.regions.push_back(std::move(region));
  }

  const json& tags = require(j, "tags");
  if (!tags.is_array()) schema_fail("field 'tags' must be an array");
  for (const auto& item : tags) {
    if (!item.is_string()) schema_fail("tag must be a string");
    auto tag = parse_tag(item.get<std::string>());
    if (!tag) schema_fail("unknown tag '" + item.get<std::string>() + "'");
    r.tags.insert(*tag);
  }
  return r;
}

std::vector<ImageRecord> read_dataset(std::istream& in) {
  std::vector<ImageRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    ImageRecord record;
    try {
      record = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::schema, std::string("invalid JSON: ") + e.what(), line_no);
    } catch (const Error& e) {
      throw Error(ErrorKind::schema, e.message(), line_no);
    }
    auto violations = validate_record(record);
    for (const auto& v : violations) {
      if (v.severity == Severity::error) {
        throw Error(ErrorKind::invariant, v.field + ": " + v.rule, line_no, record.id);
      }
    }
    if (!seen.insert(record.id).second) {
      throw Error(ErrorKind::invariant, "duplicate id", line_no, record.id);
    }
    out.push_back(std::move(record));
  }
  return out;
}

std::vector<ImageRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const std::vector<ImageRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

void save_dataset(const std::filesystem::path& path,
                  const std::vector<ImageRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  write_dataset(out, records);
}

}  // namespace xdet
