#include <gtest/gtest.h>

#include "support.hpp"
#include "xdet/grammar.hpp"

namespace xdet {
namespace {

ParsedOutput ok(const ParseResult& r) {
  if (!parse_ok(r)) {
    const auto& e = std::get<FormatError>(r);
    ADD_FAILURE() << "parse failed: " << to_string(e.kind) << " at " << e.location;
    return {};
  }
  return std::get<ParsedOutput>(r);
}

FormatError failure(const ParseResult& r) {
  EXPECT_FALSE(parse_ok(r));
  return parse_ok(r) ? FormatError{} : std::get<FormatError>(r);
}

TEST(ParseStructured, SingleRegionAnswer) {
  const auto p = ok(parse_structured(
      "<think>- [0, 0, 10, 10]: extra leg on the dog</think>"
      "<tag>structure_attribute_errors</tag><verdict>fake</verdict>"));
  EXPECT_EQ(p.verdict, Verdict::generated);
  ASSERT_EQ(p.regions.size(), 1u);
  EXPECT_EQ(p.regions[0].box, (BoundingBox{0, 0, 10, 10}));
  EXPECT_EQ(p.regions[0].caption, "extra leg on the dog");
  EXPECT_EQ(p.tags, TagSet{Tag::structure_attribute_errors});
  EXPECT_EQ(p.think_prose, "");
}

TEST(ParseStructured, RealAnswer) {
  const auto p = ok(parse_structured("<think>no visible flaws</think><tag></tag><verdict>real</verdict>"));
  EXPECT_EQ(p.verdict, Verdict::real);
  EXPECT_TRUE(p.regions.empty());
  EXPECT_TRUE(p.tags.empty());
  EXPECT_EQ(p.think_prose, "no visible flaws");
}

TEST(ParseStructured, MissingVerdictCloseIsUnclosed) {
  const std::string text = "<think>x</think><tag></tag><verdict>fake";
  const auto e = failure(parse_structured(text));
  EXPECT_EQ(e.kind, FormatErrorKind::unclosed_marker);
  EXPECT_EQ(e.location, text.size());
}

TEST(ParseStructured, InvertedBoxIsBadSyntax) {
  const std::string text = "<think>ok\n- [10, 0, 5, 5]: text</think><tag></tag><verdict>fake</verdict>";
  const auto e = failure(parse_structured(text));
  EXPECT_EQ(e.kind, FormatErrorKind::bad_box_syntax);
  EXPECT_EQ(e.location, text.find("- ["));
}

TEST(ParseStructured, MarkerErrors) {
  EXPECT_EQ(failure(parse_structured("")).kind, FormatErrorKind::missing_marker);
  EXPECT_EQ(failure(parse_structured("<tag></tag><think></think><verdict>real</verdict>")).kind,
            FormatErrorKind::missing_marker);
  EXPECT_EQ(failure(parse_structured("<think><tag></tag></think>")).kind,
            FormatErrorKind::unclosed_marker);
  const std::string dup = "<think></think><think></think><tag></tag><verdict>real</verdict>";
  const auto e = failure(parse_structured(dup));
  EXPECT_EQ(e.kind, FormatErrorKind::duplicate_marker);
  EXPECT_EQ(e.location, 15u);
  EXPECT_EQ(failure(parse_structured("<think></think><tag></tag><verdict>real</verdict><tag></tag>")).kind,
            FormatErrorKind::duplicate_marker);
}

TEST(ParseStructured, TagAndVerdictErrors) {
  const std::string text = "<think></think><tag>texture_errors, blurry</tag><verdict>real</verdict>";
  const auto e = failure(parse_structured(text));
  EXPECT_EQ(e.kind, FormatErrorKind::unknown_tag);
  EXPECT_EQ(e.location, text.find("blurry"));
  const std::string bad = "<think></think><tag></tag><verdict>undecided</verdict>";
  const auto v = failure(parse_structured(bad));
  EXPECT_EQ(v.kind, FormatErrorKind::bad_verdict);
  EXPECT_EQ(v.location, bad.find("undecided"));
}

TEST(ParseStructured, RegionLineVariants) {
  const auto p = ok(parse_structured(
      "<think>\nprose line\n  - [1,2,3,4]:   caption ] with: colon  \nmore prose\n</think>"
      "<tag>texture_errors,artistic_styles</tag><verdict> AI-Generated </verdict>"));
  ASSERT_EQ(p.regions.size(), 1u);
  EXPECT_EQ(p.regions[0].box, (BoundingBox{1, 2, 3, 4}));
  EXPECT_EQ(p.regions[0].caption, "caption ] with: colon");
  EXPECT_EQ(p.think_prose, "prose line\nmore prose");
  EXPECT_EQ(p.verdict, Verdict::generated);
  EXPECT_EQ(p.tags, (TagSet{Tag::texture_errors, Tag::artistic_styles}));
  // Bullets not opening a box are prose.
  EXPECT_TRUE(parse_ok(parse_structured("<think>- note</think><tag></tag><verdict>real</verdict>")));
  EXPECT_FALSE(parse_ok(parse_structured("<think>- [1, 2, 3]: x</think><tag></tag><verdict>real</verdict>")));
  EXPECT_FALSE(parse_ok(parse_structured("<think>- [1, 2, 3, 4]:   </think><tag></tag><verdict>real</verdict>")));
  EXPECT_FALSE(parse_ok(parse_structured("<think>- [1, 2, 3, 4] x</think><tag></tag><verdict>real</verdict>")));
  EXPECT_FALSE(parse_ok(parse_structured("<think>- [-1, 2, 3, 4]: x</think><tag></tag><verdict>real</verdict>")));
}

TEST(NormalizeVerdict, SynonymMap) {
  EXPECT_EQ(normalize_verdict("real"), Verdict::real);
  EXPECT_EQ(normalize_verdict(" Authentic\n"), Verdict::real);
  for (const char* w : {"fake", "GENERATED", "ai-generated", "Synthetic"}) {
    EXPECT_EQ(normalize_verdict(w), Verdict::generated) << w;
  }
  EXPECT_FALSE(normalize_verdict("ai generated").has_value());
  EXPECT_FALSE(normalize_verdict("").has_value());
}

TEST(RenderStructured, CanonicalLayout) {
  ParsedOutput p;
  p.think_prose = "looks natural";
  EXPECT_EQ(render_structured(p),
            "<think>\nlooks natural\n</think>\n<tag></tag>\n<verdict>real</verdict>");
  p.verdict = Verdict::generated;
  p.regions = {{{1, 2, 30, 40}, "odd hand"}};
  p.tags = {Tag::texture_errors, Tag::perspective_errors};
  EXPECT_EQ(render_structured(p),
            "<think>\nlooks natural\n- [1, 2, 30, 40]: odd hand\n</think>\n"
            "<tag>perspective_errors, texture_errors</tag>\n<verdict>fake</verdict>");
}

TEST(RenderStructured, CaptionWithBracketRoundTrips) {
  ParsedOutput p;
  p.verdict = Verdict::generated;
  p.regions = {{{0, 0, 5, 5}, "sign reads ]: [0, 0, 1, 1]"}};
  EXPECT_EQ(ok(parse_structured(render_structured(p))), p);
}

TEST(GrammarProperty, RoundTrip) {
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const auto p = testing::random_parsed(rng);
    const auto text = render_structured(p);
    const auto r = parse_structured(text);
    ASSERT_TRUE(parse_ok(r)) << text;
    ASSERT_EQ(std::get<ParsedOutput>(r), p) << text;
  }
}

TEST(GrammarProperty, ProjectionsMatchFields) {
  Rng rng(32);
  for (int i = 0; i < 100; ++i) {
    const auto p = testing::random_parsed(rng);
    const auto q = ok(parse_structured(render_structured(p)));
    EXPECT_EQ(verdict_of(q), q.verdict);
    EXPECT_EQ(tags_of(q), q.tags);
    ASSERT_EQ(regions_of(q).size(), q.regions.size());
    ASSERT_EQ(captions_of(q).size(), q.regions.size());
    for (std::size_t k = 0; k < q.regions.size(); ++k) {
      EXPECT_EQ(regions_of(q)[k], q.regions[k].box);
      EXPECT_EQ(captions_of(q)[k], q.regions[k].caption);
    }
  }
}

TEST(GrammarProperty, RandomBytesNeverCrash) {
  Rng rng(33);
  for (int i = 0; i < 2000; ++i) {
    std::string s(rng.uniform_index(300), '\0');
    for (auto& c : s) c = static_cast<char>(rng.uniform_index(256));
    const auto a = parse_structured(s);
    const auto b = parse_structured(s);
    ASSERT_EQ(a, b);
  }
}

TEST(GrammarProperty, MutatedAnswersNeverCrash) {
  Rng rng(34);
  const std::string alphabet = "<>/-[], :0123456789thinkagverdicfl\n";
  for (int i = 0; i < 2000; ++i) {
    std::string s = render_structured(testing::random_parsed(rng));
    const int edits = testing::uniform_int(rng, 1, 5);
    for (int e = 0; e < edits && !s.empty(); ++e) {
      const auto pos = rng.uniform_index(s.size());
      switch (rng.uniform_index(3)) {
        case 0: s.erase(pos, 1); break;
        case 1: s.insert(pos, 1, alphabet[rng.uniform_index(alphabet.size())]); break;
        default: s[pos] = alphabet[rng.uniform_index(alphabet.size())]; break;
      }
    }
    const auto r = parse_structured(s);
    if (!parse_ok(r)) EXPECT_LE(std::get<FormatError>(r).location, s.size());
  }
}

TEST(GrammarProperty, LargeInput) {
  std::string s(1 << 20, 'a');
  for (std::size_t i = 0; i < s.size(); i += 97) s[i] = '<';
  EXPECT_FALSE(parse_ok(parse_structured(s)));
}

TEST(ParseResultJson, Shape) {
  const auto good = to_json(parse_structured("<think></think><tag></tag><verdict>real</verdict>"));
  EXPECT_TRUE(good["ok"].get<bool>());
  EXPECT_EQ(good["result"]["verdict"], "real");
  const auto bad = to_json(parse_structured("nothing"));
  EXPECT_FALSE(bad["ok"].get<bool>());
  EXPECT_EQ(bad["error"]["kind"], "missing_marker");
  EXPECT_EQ(bad["error"]["location"], 7);
}

}  // namespace
}  // namespace xdet
