#include "xdet/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <unordered_map>

#include "xdet/error.hpp"

namespace xdet {

using nlohmann::json;

std::string_view to_string(StageName name) {
  switch (name) {
    case StageName::alpha: return "alpha";
    case StageName::beta: return "beta";
    case StageName::gamma: return "gamma";
    case StageName::custom: return "custom";
  }
  return "custom";
}

// Alpha favours format, beta label and grounding, gamma grounding; a correct
// label and format with no overlap nets zero in gamma.
StageConfig alpha_stage() { return {StageName::alpha, 0.0, 1.0, 1.1, 1.0, -1.0, 2.0, -1.0}; }
StageConfig beta_stage() { return {StageName::beta, -0.5, 1.5, 1.1, 2.0, -2.0, 1.0, -1.5}; }
StageConfig gamma_stage() { return {StageName::gamma, -1.0, 2.0, 1.1, 0.5, -1.0, 0.5, -1.0}; }

std::optional<StageConfig> builtin_stage(std::string_view name) {
  if (name == "alpha") return alpha_stage();
  if (name == "beta") return beta_stage();
  if (name == "gamma") return gamma_stage();
  return std::nullopt;
}

void check_stage(const StageConfig& s) {
  for (double v : {s.r_base, s.iou_weight, s.eta, s.label_pos, s.label_neg, s.format_pos,
                   s.format_neg}) {
    if (!std::isfinite(v)) throw Error(ErrorKind::invalid_argument, "non-finite stage weight");
  }
  if (s.eta < 1.0) throw Error(ErrorKind::invalid_argument, "eta must be >= 1");
  if (s.iou_weight < 0.0) throw Error(ErrorKind::invalid_argument, "iou_weight must be >= 0");
}

StageConfig stage_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::schema, "stage config must be a JSON object");
  StageConfig s;
  if (auto it = j.find("name"); it != j.end()) {
    if (!it->is_string()) throw Error(ErrorKind::schema, "stage 'name' must be a string");
    const auto name = it->get<std::string>();
    if (auto b = builtin_stage(name)) {
      s = *b;
    } else if (name != "custom") {
      throw Error(ErrorKind::schema, "unknown stage name '" + name + "'");
    }
  }
  bool overridden = false;
  const auto read = [&](const char* key, double& field) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_number()) {
      throw Error(ErrorKind::schema, std::string("stage field '") + key + "' must be a number");
    }
    field = it->get<double>();
    overridden = true;
  };
  read("r_base", s.r_base);
  read("iou_weight", s.iou_weight);
  read("eta", s.eta);
  read("label_pos", s.label_pos);
  read("label_neg", s.label_neg);
  read("format_pos", s.format_pos);
  read("format_neg", s.format_neg);
  if (overridden && s.name != StageName::custom) {
    if (auto b = builtin_stage(to_string(s.name)); b && !(*b == s)) s.name = StageName::custom;
  }
  check_stage(s);
  return s;
}

json to_json(const StageConfig& s) {
  return json{{"name", std::string(to_string(s.name))},
              {"r_base", s.r_base},
              {"iou_weight", s.iou_weight},
              {"eta", s.eta},
              {"label_pos", s.label_pos},
              {"label_neg", s.label_neg},
              {"format_pos", s.format_pos},
              {"format_neg", s.format_neg}};
}

StageConfig resolve_stage(const std::string& name_or_path) {
  if (auto b = builtin_stage(name_or_path)) return *b;
  std::ifstream in(name_or_path);
  if (!in) {
    throw Error(ErrorKind::io, "'" + name_or_path + "' is neither a built-in stage nor a readable file");
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("invalid stage config: ") + e.what());
  }
  return stage_from_json(j);
}

json to_json(const RewardBreakdown& b) {
  return json{{"grounding", b.grounding}, {"label", b.label},
              {"format", b.format},       {"base", b.base},
              {"total", b.total},         {"parse_ok", b.parse_ok},
              {"raw_iou", b.raw_iou},     {"empty_reference", b.empty_reference}};
}

double relax_iou(double iou, double eta) { return std::min(1.0, eta * iou); }

double relaxed_iou(std::span<const BoundingBox> pred, std::span<const BoundingBox> ref,
                   double eta) {
  return relax_iou(set_iou(pred, ref), eta);
}

double label_reward(std::optional<Verdict> verdict, Label truth, const StageConfig& stage) {
  return verdict && matches(*verdict, truth) ? stage.label_pos : stage.label_neg;
}

FormatReward format_reward(std::string_view text, const StageConfig& stage) {
  const bool ok = parse_ok(parse_structured(text));
  return {ok ? stage.format_pos : stage.format_neg, ok};
}

RewardBreakdown composite_reward(const ParseResult& parsed, const ImageRecord& record,
                                 const StageConfig& stage) {
  RewardBreakdown b;
  b.base = stage.r_base;
  const auto* p = std::get_if<ParsedOutput>(&parsed);
  b.parse_ok = p != nullptr;
  b.format = b.parse_ok ? stage.format_pos : stage.format_neg;
  b.label = label_reward(p ? std::optional<Verdict>(p->verdict) : std::nullopt, record.label,
                         stage);
  if (p && !record.is_real()) {
    if (record.regions.empty()) {
      b.empty_reference = true;
    } else {
      const auto pred = regions_of(*p);
      const auto ref = record.boxes();
      b.raw_iou = set_iou(pred, ref);
      b.grounding = stage.iou_weight * relax_iou(b.raw_iou, stage.eta);
    }
  } else if (!record.is_real() && record.regions.empty()) {
    b.empty_reference = true;
  }
  b.total = b.base + b.grounding + b.label + b.format;
  return b;
}

RewardBreakdown composite_reward(std::string_view text, const ImageRecord& record,
                                 const StageConfig& stage) {
  return composite_reward(parse_structured(text), record, stage);
}

std::vector<ModelOutput> read_outputs(std::istream& in) {
  std::vector<ModelOutput> out;
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
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("text") ||
        !j["text"].is_string()) {
      throw Error(ErrorKind::schema, "expected {\"id\": string, \"text\": string}", line_no);
    }
    out.push_back({j["id"].get<std::string>(), j["text"].get<std::string>()});
  }
  return out;
}

std::vector<ModelOutput> load_outputs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return read_outputs(in);
}

std::vector<ScoredOutput> score_outputs(const std::vector<ModelOutput>& outputs,
                                        const std::vector<ImageRecord>& records,
                                        const StageConfig& stage) {
  std::unordered_map<std::string, const ImageRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  std::vector<ScoredOutput> out;
  out.reserve(outputs.size());
  for (const auto& o : outputs) {
    auto it = by_id.find(o.id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::unknown_record, "output references an unknown record", std::nullopt,
                  o.id);
    }
    out.push_back({o.id, composite_reward(o.text, *it->second, stage)});
  }
  return out;
}

}  // namespace xdet
