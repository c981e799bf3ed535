#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "xdet/annotation.hpp"

namespace xdet {

enum class Verdict { real, generated };

std::string_view to_string(Verdict verdict);

/// Maps a verdict word to its class: {real, authentic} and
/// {fake, generated, ai-generated, synthetic}, case-insensitive, outer
/// whitespace ignored.
std::optional<Verdict> normalize_verdict(std::string_view word);

inline bool matches(Verdict verdict, Label label) {
  return (verdict == Verdict::real) == (label == Label::real);
}

/// Structured decomposition of a model answer.
///
/// Text layout:
///
///     <think>
///     free prose lines
///     - [x1, y1, x2, y2]: caption
///     </think>
///     <tag>tag_a, tag_b</tag>
///     <verdict>fake</verdict>
///
/// Region lines may appear anywhere inside the think block; every other line
/// is prose. `think_prose` is the non-region lines joined by '\n' with outer
/// whitespace trimmed.
struct ParsedOutput {
  std::string think_prose;
  std::vector<FakeRegion> regions;
  TagSet tags;
  Verdict verdict = Verdict::real;

  friend bool operator==(const ParsedOutput&, const ParsedOutput&) = default;
};

enum class FormatErrorKind {
  missing_marker,
  unclosed_marker,
  bad_box_syntax,
  unknown_tag,
  bad_verdict,
  duplicate_marker,
};

std::string_view to_string(FormatErrorKind kind);

struct FormatError {
  FormatErrorKind kind;
  std::size_t location;  ///< byte offset into the input text

  friend bool operator==(const FormatError&, const FormatError&) = default;
};

using ParseResult = std::variant<ParsedOutput, FormatError>;

/// Strict parse. Succeeds iff each marker block occurs exactly once in the
/// order think, tag, verdict, every region line is well formed, every tag is
/// in the vocabulary and the verdict normalizes. Text outside the three
/// blocks is ignored. Never throws on malformed input.
ParseResult parse_structured(std::string_view text);

inline bool parse_ok(const ParseResult& r) { return std::holds_alternative<ParsedOutput>(r); }

/// Canonical text for `parsed`. Newlines inside captions are rendered as
/// spaces; captions and prose must not contain marker strings.
std::string render_structured(const ParsedOutput& parsed);

// Extraction projections of a successful parse.
inline Verdict verdict_of(const ParsedOutput& p) { return p.verdict; }
std::vector<BoundingBox> regions_of(const ParsedOutput& p);
std::vector<std::string> captions_of(const ParsedOutput& p);
inline const TagSet& tags_of(const ParsedOutput& p) { return p.tags; }

nlohmann::json to_json(const ParsedOutput& parsed);
nlohmann::json to_json(const FormatError& error);
nlohmann::json to_json(const ParseResult& result);

}  // namespace xdet
