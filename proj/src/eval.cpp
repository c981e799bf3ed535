#include "xdet/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "xdet/error.hpp"
#include "xdet/rng.hpp"

namespace xdet {

using nlohmann::json;

Prediction Prediction::from_text(std::string id, std::string text) {
  Prediction p;
  p.id = std::move(id);
  p.text = std::move(text);
  return p;
}

Prediction Prediction::from_parsed(std::string id, std::optional<Verdict> verdict,
                                   std::vector<BoundingBox> boxes) {
  Prediction p;
  p.id = std::move(id);
  p.verdict = verdict;
  p.boxes = std::move(boxes);
  return p;
}

FamilyMap default_family_map() {
  FamilyMap m;
  for (const char* g : {"DALL-E 2", "DALL-E 3", "DDIM", "DDPM", "FLUX.1-dev", "FLUX.1-schnell",
                        "GLIDE", "Midjourney v4", "Midjourney v5", "SD 1.4", "SD 1.5", "SD 2.1",
                        "SD 3.5 Large", "SD 3.5 Large Turbo", "VQDM"}) {
    m[g] = "Diffusion";
  }
  for (const char* g : {"BigGAN", "GALIP", "VQGAN", "StyleGAN-XL"}) m[g] = "GAN";
  for (const char* g : {"PixArtAlpha", "PixArtDelta", "PixArtSigma", "DiT"}) m[g] = "DiT";
  for (const char* g : {"VAR", "Infinity", "MaskGIT", "LlamaGen"}) m[g] = "Others";
  return m;
}

FamilyMap load_family_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("invalid family map: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::schema, "family map must be a JSON object");
  FamilyMap m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) {
      throw Error(ErrorKind::schema, "family of '" + it.key() + "' must be a string");
    }
    m[it.key()] = it.value().get<std::string>();
  }
  return m;
}

namespace {

struct Outcome {
  bool correct = false;
  bool parsed = false;
  std::optional<double> iou;
};

Outcome score_prediction(const Prediction& p, const ImageRecord& r) {
  Outcome o;
  std::optional<Verdict> verdict = p.verdict;
  std::vector<BoundingBox> boxes = p.boxes;
  if (p.text) {
    const auto parsed = parse_structured(*p.text);
    if (const auto* out = std::get_if<ParsedOutput>(&parsed)) {
      verdict = out->verdict;
      boxes = regions_of(*out);
    } else {
      verdict.reset();
      boxes.clear();
    }
  }
  o.parsed = verdict.has_value();
  o.correct = verdict && matches(*verdict, r.label);
  if (!r.is_real() && !r.regions.empty()) {
    o.iou = o.parsed ? set_iou(boxes, r.boxes()) : 0.0;
  }
  return o;
}

struct Accumulator {
  std::size_t count = 0;
  std::size_t correct = 0;
  std::size_t fakes = 0;
  double iou_sum = 0.0;

  void add(const Outcome& o) {
    ++count;
    if (o.correct) ++correct;
    if (o.iou) {
      ++fakes;
      iou_sum += *o.iou;
    }
  }

  EvalRow row(std::string name) const {
    EvalRow r;
    r.name = std::move(name);
    r.count = count;
    r.correct = correct;
    r.accuracy = count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0;
    r.fake_count = fakes;
    if (fakes) r.iou = iou_sum / static_cast<double>(fakes);
    return r;
  }
};

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  const std::size_t shown = std::min<std::size_t>(ids.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  if (ids.size() > shown) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

}  // namespace

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::vector<ImageRecord>& records, const FamilyMap& families) {
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);

  std::unordered_map<std::string, const Prediction*> pred_of;
  for (const auto& p : predictions) {
    if (!by_id.count(p.id)) {
      throw Error(ErrorKind::unknown_record, "prediction for an unknown record", std::nullopt, p.id);
    }
    if (!pred_of.emplace(p.id, &p).second) {
      throw Error(ErrorKind::duplicate_prediction, "more than one prediction", std::nullopt, p.id);
    }
  }
  std::vector<std::string> missing;
  for (const auto& [id, r] : by_id) {
    if (!pred_of.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::missing_prediction, "no prediction for: " + join_ids(missing));
  }
  for (const auto& [id, r] : by_id) {
    if (!r->is_real() && (!r->generator || !families.count(*r->generator))) {
      throw Error(ErrorKind::invalid_argument,
                  "generator '" + r->generator.value_or("") + "' is not in the family map",
                  std::nullopt, id);
    }
  }

  // Records are visited in id order so the report does not depend on input
  // order, down to floating-point summation order.
  EvalReport report;
  Accumulator overall;
  std::map<std::string, Accumulator> per_generator;
  for (const auto& [id, r] : by_id) {
    const Outcome o = score_prediction(*pred_of.at(id), *r);
    if (!o.parsed) ++report.unparsable;
    overall.add(o);
    per_generator[r->is_real() ? std::string(kRealFamily) : *r->generator].add(o);
  }
  report.total = overall.count;
  report.accuracy = overall.row("Overall").accuracy;
  report.mean_iou = overall.row("Overall").iou.value_or(0.0);

  std::map<std::string, std::vector<const EvalRow*>> members;
  for (const auto& [name, acc] : per_generator) report.generators.push_back(acc.row(name));
  for (auto& row : report.generators) {
    const bool real_row = row.name == kRealFamily && !families.count(row.name);
    row.family = real_row ? std::string(kRealFamily) : families.at(row.name);
    members[row.family].push_back(&row);
  }
  for (const auto& [family, rows] : members) {
    EvalRow f;
    f.name = family;
    double acc_weighted = 0.0;
    double iou_weighted = 0.0;
    for (const EvalRow* row : rows) {
      f.count += row->count;
      f.correct += row->correct;
      f.fake_count += row->fake_count;
      acc_weighted += static_cast<double>(row->count) * row->accuracy;
      if (row->iou) iou_weighted += static_cast<double>(row->fake_count) * *row->iou;
    }
    f.accuracy = f.count ? acc_weighted / static_cast<double>(f.count) : 0.0;
    if (f.fake_count) f.iou = iou_weighted / static_cast<double>(f.fake_count);
    report.families.push_back(std::move(f));
  }
  return report;
}

namespace {

json row_json(const EvalRow& r) {
  json j{{"name", r.name},
              {"count", r.count},
              {"correct", r.correct},
              {"accuracy", r.accuracy},
              {"fake_count", r.fake_count},
              {"iou", r.iou ? json(*r.iou) : json(nullptr)}};
  if (!r.family.empty()) j["family"] = r.family;
  return j;
}

std::string fixed3(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << v;
  return s.str();
}

}  // namespace

json to_json(const EvalReport& report) {
  json gens = json::array();
  for (const auto& r : report.generators) gens.push_back(row_json(r));
  json fams = json::array();
  for (const auto& r : report.families) fams.push_back(row_json(r));
  return json{{"total", report.total},
              {"accuracy", report.accuracy},
              {"mean_iou", report.mean_iou},
              {"unparsable", report.unparsable},
              {"generators", std::move(gens)},
              {"families", std::move(fams)}};
}

void write_markdown(std::ostream& out, const EvalReport& report) {
  std::vector<std::vector<std::string>> table;
  table.push_back({"Generators", "Acc.", "IoU", "N"});
  const auto add = [&](const EvalRow& r, bool rollup) {
    table.push_back({rollup ? "*" + r.name + "*" : r.name, fixed3(r.accuracy),
                     r.iou ? fixed3(*r.iou) : "-", std::to_string(r.count)});
  };
  // Member rows grouped under their family rollup.
  for (const auto& f : report.families) {
    for (const auto& g : report.generators) {
      if (g.family == f.name && g.name != f.name) add(g, false);
    }
    add(f, true);
  }
  EvalRow overall;
  overall.name = "Overall";
  overall.accuracy = report.accuracy;
  overall.count = report.total;
  bool any_fake = false;
  for (const auto& g : report.generators) any_fake = any_fake || g.fake_count > 0;
  if (any_fake) overall.iou = report.mean_iou;
  add(overall, false);

  std::vector<std::size_t> width(4, 0);
  for (const auto& row : table) {
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());
  }
  const auto emit = [&](const std::vector<std::string>& row) {
    out << '|';
    for (std::size_t c = 0; c < 4; ++c) {
      out << ' ' << row[c] << std::string(width[c] - row[c].size(), ' ') << " |";
    }
    out << '\n';
  };
  emit(table[0]);
  out << '|';
  for (std::size_t c = 0; c < 4; ++c) out << std::string(width[c] + 2, '-') << '|';
  out << '\n';
  for (std::size_t i = 1; i < table.size(); ++i) emit(table[i]);
}

void write_csv(std::ostream& out, const EvalReport& report) {
  out << "kind,name,count,accuracy,iou\n";
  std::ostringstream line;
  line << std::setprecision(17);
  const auto emit = [&](const char* kind, const EvalRow& r) {
    line.str("");
    line << kind << ',' << r.name << ',' << r.count << ',' << r.accuracy << ',';
    if (r.iou) line << *r.iou;
    line << '\n';
    out << line.str();
  };
  for (const auto& r : report.generators) emit("generator", r);
  for (const auto& r : report.families) emit("family", r);
  line.str("");
  line << "overall,Overall," << report.total << ',' << report.accuracy << ',' << report.mean_iou
       << '\n';
  out << line.str();
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::schema, std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
      throw Error(ErrorKind::schema, "prediction needs a string 'id'", line_no);
    }
    auto id = j["id"].get<std::string>();
    if (auto t = j.find("text"); t != j.end()) {
      if (!t->is_string()) throw Error(ErrorKind::schema, "'text' must be a string", line_no);
      out.push_back(Prediction::from_text(std::move(id), t->get<std::string>()));
      continue;
    }
    std::optional<Verdict> verdict;
    if (auto v = j.find("verdict"); v != j.end() && !v->is_null()) {
      if (!v->is_string()) throw Error(ErrorKind::schema, "'verdict' must be a string", line_no);
      verdict = normalize_verdict(v->get<std::string>());
    }
    std::vector<BoundingBox> boxes;
    if (auto b = j.find("boxes"); b != j.end()) {
      if (!b->is_array()) throw Error(ErrorKind::schema, "'boxes' must be an array", line_no);
      try {
        for (const auto& box : *b) boxes.push_back(box_from_json(box));
      } catch (const Error& e) {
        throw Error(ErrorKind::schema, e.message(), line_no);
      }
    }
    out.push_back(Prediction::from_parsed(std::move(id), verdict, std::move(boxes)));
  }
  return out;
}

// --- folds ------------------------------------------------------------------

FoldAssignment make_folds(const std::vector<ImageRecord>& records, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::invalid_argument, "k must be >= 2");
  std::map<std::pair<int, std::string>, std::vector<std::string>> strata;
  for (const auto& r : records) {
    strata[{static_cast<int>(r.label), r.generator.value_or("")}].push_back(r.id);
  }
  Rng rng(seed);
  FoldAssignment out;
  std::size_t offset = 0;
  const auto kk = static_cast<std::size_t>(k);
  for (auto& [key, ids] : strata) {
    if (ids.size() < kk) {
      out.warnings.push_back("stratum (" + std::string(to_string(static_cast<Label>(key.first))) +
                             ", " + (key.second.empty() ? "-" : key.second) + ") has " +
                             std::to_string(ids.size()) + " records, fewer than k = " +
                             std::to_string(k));
    }
    rng.shuffle(ids);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      out.fold_of[ids[j]] = static_cast<int>((offset + j) % kk);
    }
    offset = (offset + ids.size()) % kk;
  }
  return out;
}

void write_folds(std::ostream& out, const std::vector<ImageRecord>& records,
                 const FoldAssignment& folds) {
  for (const auto& r : records) {
    out << json{{"id", r.id}, {"fold", folds.fold_of.at(r.id)}}.dump() << '\n';
  }
}

// --- perturbations ------------------------------------------------------------

namespace {

std::string box_text(const BoundingBox& b) {
  std::ostringstream s;
  s << '[' << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << ']';
  return s.str();
}

bool integral(double v) { return std::isfinite(v) && v == std::floor(v); }

}  // namespace

TransformResult transform_crop(const ImageRecord& record, const BoundingBox& crop) {
  if (!integral(crop.x1) || !integral(crop.y1) || !integral(crop.x2) || !integral(crop.y2)) {
    throw Error(ErrorKind::invalid_crop, "crop coordinates must be integers", std::nullopt,
                record.id);
  }
  if (!crop.non_degenerate() || crop.x1 < 0 || crop.y1 < 0 || crop.x2 > record.width ||
      crop.y2 > record.height) {
    throw Error(ErrorKind::invalid_crop,
                "crop " + box_text(crop) + " is empty or outside the " +
                    std::to_string(record.width) + "x" + std::to_string(record.height) + " image",
                std::nullopt, record.id);
  }
  TransformResult out;
  out.record = record;
  out.record.width = static_cast<int>(crop.x2 - crop.x1);
  out.record.height = static_cast<int>(crop.y2 - crop.y1);
  out.record.regions.clear();
  for (const auto& region : record.regions) {
    const BoundingBox kept = intersect(region.box, crop);
    if (!kept.non_degenerate()) {
      out.diagnostics.push_back(record.id + ": region " + box_text(region.box) +
                                " lies outside the crop and was dropped");
      continue;
    }
    out.record.regions.push_back(
        {{kept.x1 - crop.x1, kept.y1 - crop.y1, kept.x2 - crop.x1, kept.y2 - crop.y1},
         region.caption});
  }
  return out;
}

TransformResult transform_scale(const ImageRecord& record, double factor) {
  if (!(factor > 0) || !std::isfinite(factor)) {
    throw Error(ErrorKind::invalid_argument, "scale factor must be positive", std::nullopt,
                record.id);
  }
  const double w = std::round(record.width * factor);
  const double h = std::round(record.height * factor);
  if (w < 1 || h < 1) {
    throw Error(ErrorKind::too_small, "scaled image would be smaller than 1 pixel", std::nullopt,
                record.id);
  }
  TransformResult out;
  out.record = record;
  out.record.width = static_cast<int>(w);
  out.record.height = static_cast<int>(h);
  out.record.regions.clear();
  for (const auto& region : record.regions) {
    const BoundingBox b = region.box;
    const BoundingBox s{std::round(b.x1 * factor), std::round(b.y1 * factor),
                        std::round(b.x2 * factor), std::round(b.y2 * factor)};
    if (!s.non_degenerate()) {
      out.diagnostics.push_back(record.id + ": region " + box_text(b) +
                                " collapsed after scaling and was dropped");
      continue;
    }
    out.record.regions.push_back({s, region.caption});
  }
  return out;
}

// --- preferences --------------------------------------------------------------

std::optional<double> PreferenceMatrix::entry(const std::string& row,
                                              const std::string& col) const {
  const auto r = std::lower_bound(names.begin(), names.end(), row);
  const auto c = std::lower_bound(names.begin(), names.end(), col);
  if (r == names.end() || *r != row || c == names.end() || *c != col) return std::nullopt;
  return entries[static_cast<std::size_t>(r - names.begin())]
                [static_cast<std::size_t>(c - names.begin())];
}

PreferenceMatrix aggregate_preferences(const std::vector<PreferenceVote>& votes,
                                       const std::map<std::string, SidePair>& side_labels) {
  std::set<std::string> names;
  for (const auto& v : votes) {
    auto it = side_labels.find(v.pair_id);
    if (it == side_labels.end()) {
      throw Error(ErrorKind::schema, "vote for pair '" + v.pair_id + "' without side labels");
    }
    names.insert(it->second.side_a);
    names.insert(it->second.side_b);
  }
  PreferenceMatrix m;
  m.names.assign(names.begin(), names.end());
  const std::size_t n = m.names.size();
  m.wins.assign(n, std::vector<std::size_t>(n, 0));
  m.entries.assign(n, std::vector<std::optional<double>>(n));
  const auto index = [&](const std::string& name) {
    return static_cast<std::size_t>(std::lower_bound(m.names.begin(), m.names.end(), name) -
                                    m.names.begin());
  };
  for (const auto& v : votes) {
    if (v.choice == Choice::neutral) {
      ++m.neutral_votes;
      continue;
    }
    const auto& sides = side_labels.at(v.pair_id);
    const std::size_t a = index(sides.side_a);
    const std::size_t b = index(sides.side_b);
    if (v.choice == Choice::a) {
      ++m.wins[a][b];
    } else {
      ++m.wins[b][a];
    }
    ++m.valid_votes;
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (r == c) continue;
      const std::size_t total = m.wins[r][c] + m.wins[c][r];
      if (total) m.entries[r][c] = static_cast<double>(m.wins[r][c]) / static_cast<double>(total);
    }
  }
  return m;
}

VoteFile read_votes(std::istream& in) {
  VoteFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::schema, std::string("invalid JSON: ") + e.what(), line_no);
    }
    for (const char* key : {"pair_id", "side_a", "side_b", "choice"}) {
      if (!j.is_object() || !j.contains(key) || !j[key].is_string()) {
        throw Error(ErrorKind::schema, std::string("vote needs a string '") + key + "'", line_no);
      }
    }
    PreferenceVote v;
    v.pair_id = j["pair_id"].get<std::string>();
    std::string choice = j["choice"].get<std::string>();
    for (auto& ch : choice) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (choice == "a") {
      v.choice = Choice::a;
    } else if (choice == "b") {
      v.choice = Choice::b;
    } else if (choice == "neutral") {
      v.choice = Choice::neutral;
    } else {
      throw Error(ErrorKind::schema, "choice must be A, B or neutral", line_no);
    }
    SidePair sides{j["side_a"].get<std::string>(), j["side_b"].get<std::string>()};
    if (sides.side_a == sides.side_b) {
      throw Error(ErrorKind::schema, "a pair must compare two different sides", line_no);
    }
    auto [it, inserted] = out.side_labels.emplace(v.pair_id, sides);
    if (!inserted && (it->second.side_a != sides.side_a || it->second.side_b != sides.side_b)) {
      throw Error(ErrorKind::schema, "pair '" + v.pair_id + "' has inconsistent sides", line_no);
    }
    out.votes.push_back(std::move(v));
  }
  return out;
}

VoteFile load_votes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return read_votes(in);
}

json to_json(const PreferenceMatrix& m) {
  json rows = json::array();
  for (const auto& row : m.entries) {
    json r = json::array();
    for (const auto& e : row) r.push_back(e ? json(*e) : json(nullptr));
    rows.push_back(std::move(r));
  }
  return json{{"names", m.names},
              {"matrix", std::move(rows)},
              {"wins", m.wins},
              {"valid_votes", m.valid_votes},
              {"neutral_votes", m.neutral_votes}};
}

}  // namespace xdet
