#include "xdet/grammar.hpp"

#include <array>
#include <cctype>
#include <cmath>

namespace xdet {

using nlohmann::json;

std::string_view to_string(Verdict verdict) {
  return verdict == Verdict::real ? "real" : "generated";
}

std::string_view to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::missing_marker: return "missing_marker";
    case FormatErrorKind::unclosed_marker: return "unclosed_marker";
    case FormatErrorKind::bad_box_syntax: return "bad_box_syntax";
    case FormatErrorKind::unknown_tag: return "unknown_tag";
    case FormatErrorKind::bad_verdict: return "bad_verdict";
    case FormatErrorKind::duplicate_marker: return "duplicate_marker";
  }
  return "";
}

namespace {

constexpr std::string_view kSpace = " \t\r\n\f\v";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(kSpace);
  return s.substr(b, e - b + 1);
}

// Marker tokens in the order they must appear.
constexpr std::array<std::string_view, 6> kMarkers = {
    "<think>", "</think>", "<tag>", "</tag>", "<verdict>", "</verdict>",
};

struct Token {
  std::size_t marker;  // index into kMarkers
  std::size_t pos;
};

std::optional<std::size_t> match_marker(std::string_view text, std::size_t pos) {
  for (std::size_t m = 0; m < kMarkers.size(); ++m) {
    if (text.compare(pos, kMarkers[m].size(), kMarkers[m]) == 0) return m;
  }
  return std::nullopt;
}

class Cursor {
 public:
  Cursor(std::string_view s) : s_(s) {}
  bool done() const { return i_ >= s_.size(); }
  void skip_blanks() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }
  bool eat(char c) {
    if (i_ < s_.size() && s_[i_] == c) {
      ++i_;
      return true;
    }
    return false;
  }
  std::optional<long> integer() {
    std::size_t start = i_;
    long v = 0;
    while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) {
      if (i_ - start >= 9) return std::nullopt;  // keeps coordinates below 1e9
      v = v * 10 + (s_[i_] - '0');
      ++i_;
    }
    if (i_ == start) return std::nullopt;
    return v;
  }
  std::string_view rest() const { return s_.substr(i_); }

 private:
  std::string_view s_;
  std::size_t i_ = 0;
};

bool is_region_line(std::string_view line) {
  const auto b = line.find_first_not_of(" \t");
  return b != std::string_view::npos && line.substr(b).starts_with("- [");
}

// `- [x1, y1, x2, y2]: caption`
std::optional<FakeRegion> parse_region_line(std::string_view line) {
  Cursor c(line);
  c.skip_blanks();
  if (!c.eat('-') || !c.eat(' ') || !c.eat('[')) return std::nullopt;
  long v[4];
  for (int k = 0; k < 4; ++k) {
    c.skip_blanks();
    auto n = c.integer();
    if (!n) return std::nullopt;
    v[k] = *n;
    c.skip_blanks();
    if (!c.eat(k < 3 ? ',' : ']')) return std::nullopt;
  }
  if (!c.eat(':')) return std::nullopt;
  auto caption = trim(c.rest());
  if (caption.empty()) return std::nullopt;
  FakeRegion r;
  r.box = {static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2]),
           static_cast<double>(v[3])};
  if (!r.box.non_degenerate()) return std::nullopt;
  r.caption = std::string(caption);
  return r;
}

std::optional<FormatError> parse_think(std::string_view body, std::size_t offset,
                                       ParsedOutput& out) {
  std::string prose;
  bool first_prose = true;
  std::size_t start = 0;
  while (start <= body.size()) {
    auto end = body.find('\n', start);
    if (end == std::string_view::npos) end = body.size();
    std::string_view line = body.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (is_region_line(line)) {
      auto region = parse_region_line(line);
      if (!region) return FormatError{FormatErrorKind::bad_box_syntax, offset + start};
      out.regions.push_back(std::move(*region));
    } else {
      if (!first_prose) prose += '\n';
      prose.append(line);
      first_prose = false;
    }
    start = end + 1;
  }
  out.think_prose = std::string(trim(prose));
  return std::nullopt;
}

std::optional<FormatError> parse_tags(std::string_view body, std::size_t offset,
                                      ParsedOutput& out) {
  if (trim(body).empty()) return std::nullopt;
  std::size_t start = 0;
  while (start <= body.size()) {
    auto end = body.find(',', start);
    if (end == std::string_view::npos) end = body.size();
    std::string_view item = body.substr(start, end - start);
    auto tag = parse_tag(trim(item));
    if (!tag) {
      const auto lead = item.find_first_not_of(kSpace);
      return FormatError{FormatErrorKind::unknown_tag,
                         offset + start + (lead == std::string_view::npos ? 0 : lead)};
    }
    out.tags.insert(*tag);
    start = end + 1;
  }
  return std::nullopt;
}

std::optional<FormatError> parse_block(std::size_t block, std::string_view body,
                                       std::size_t offset, ParsedOutput& out) {
  switch (block) {
    case 0: return parse_think(body, offset, out);
    case 1: return parse_tags(body, offset, out);
    default: {
      auto v = normalize_verdict(body);
      if (!v) return FormatError{FormatErrorKind::bad_verdict, offset};
      out.verdict = *v;
      return std::nullopt;
    }
  }
}

}  // namespace

std::optional<Verdict> normalize_verdict(std::string_view word) {
  std::string lower(trim(word));
  for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (lower == "real" || lower == "authentic") return Verdict::real;
  if (lower == "fake" || lower == "generated" || lower == "ai-generated" ||
      lower == "synthetic") {
    return Verdict::generated;
  }
  return std::nullopt;
}

ParseResult parse_structured(std::string_view text) {
  ParsedOutput out;
  std::array<bool, kMarkers.size()> seen{};
  std::size_t step = 0;         // index of the next expected marker
  std::size_t body_start = 0;   // first byte after the open marker of the current block
  for (std::size_t i = text.find('<'); i != std::string_view::npos; i = text.find('<', i + 1)) {
    auto m = match_marker(text, i);
    if (!m) continue;
    if (seen[*m]) return FormatError{FormatErrorKind::duplicate_marker, i};
    if (*m != step) {
      const bool inside_block = step % 2 == 1;
      return FormatError{
          inside_block ? FormatErrorKind::unclosed_marker : FormatErrorKind::missing_marker, i};
    }
    seen[*m] = true;
    if (step % 2 == 0) {
      body_start = i + kMarkers[*m].size();
    } else {
      auto err = parse_block(step / 2, text.substr(body_start, i - body_start), body_start, out);
      if (err) return *err;
    }
    ++step;
    i += kMarkers[*m].size() - 1;
  }
  if (step == kMarkers.size()) return out;
  return FormatError{step % 2 == 1 ? FormatErrorKind::unclosed_marker
                                   : FormatErrorKind::missing_marker,
                     text.size()};
}

namespace {

std::string coordinate(double v) { return std::to_string(std::llround(v)); }

std::string single_line(std::string_view caption) {
  std::string out(caption);
  for (auto& ch : out) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return std::string(trim(out));
}

}  // namespace

std::string render_structured(const ParsedOutput& parsed) {
  std::string out = "<think>\n";
  if (!parsed.think_prose.empty()) {
    out += parsed.think_prose;
    out += '\n';
  }
  for (const auto& r : parsed.regions) {
    out += "- [" + coordinate(r.box.x1) + ", " + coordinate(r.box.y1) + ", " +
           coordinate(r.box.x2) + ", " + coordinate(r.box.y2) + "]: " + single_line(r.caption) +
           '\n';
  }
  out += "</think>\n<tag>";
  bool first = true;
  for (Tag t : parsed.tags) {
    if (!first) out += ", ";
    out += to_string(t);
    first = false;
  }
  out += "</tag>\n<verdict>";
  out += parsed.verdict == Verdict::real ? "real" : "fake";
  out += "</verdict>";
  return out;
}

std::vector<BoundingBox> regions_of(const ParsedOutput& p) {
  std::vector<BoundingBox> out;
  out.reserve(p.regions.size());
  for (const auto& r : p.regions) out.push_back(r.box);
  return out;
}

std::vector<std::string> captions_of(const ParsedOutput& p) {
  std::vector<std::string> out;
  out.reserve(p.regions.size());
  for (const auto& r : p.regions) out.push_back(r.caption);
  return out;
}

json to_json(const ParsedOutput& parsed) {
  json regions = json::array();
  for (const auto& r : parsed.regions) regions.push_back(to_json(r));
  json tags = json::array();
  for (Tag t : parsed.tags) tags.push_back(std::string(to_string(t)));
  return json{{"think_prose", parsed.think_prose},
              {"regions", std::move(regions)},
              {"tags", std::move(tags)},
              {"verdict", std::string(to_string(parsed.verdict))}};
}

json to_json(const FormatError& error) {
  return json{{"kind", std::string(to_string(error.kind))}, {"location", error.location}};
}

json to_json(const ParseResult& result) {
  if (const auto* p = std::get_if<ParsedOutput>(&result)) {
    return json{{"ok", true}, {"result", to_json(*p)}};
  }
  return json{{"ok", false}, {"error", to_json(std::get<FormatError>(result))}};
}

}  // namespace xdet
