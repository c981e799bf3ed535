#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "support.hpp"
#include "xdet/annotation.hpp"
#include "xdet/error.hpp"

namespace xdet {
namespace {

std::vector<ImageRecord> read_text(const std::string& text) {
  std::istringstream in(text);
  return read_dataset(in);
}

ErrorKind kind_of(const std::string& text) {
  try {
    read_text(text);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for: " << text;
  return ErrorKind::io;
}

ImageRecord valid_fake() {
  ImageRecord r;
  r.id = "f";
  r.width = 64;
  r.height = 64;
  r.label = Label::fake;
  r.generator = "SD 1.4";
  r.regions = {{{0, 0, 10, 10}, "extra leg"}};
  r.tags = {Tag::structure_attribute_errors};
  return r;
}

TEST(LoadDataset, MinimalRealRecord) {
  const auto records =
      read_text(R"({"id":"a","width":512,"height":512,"label":"real","regions":[],"tags":[]})");
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].id, "a");
  EXPECT_TRUE(records[0].is_real());
  EXPECT_FALSE(records[0].generator.has_value());
}

TEST(LoadDataset, MinimalFakeRecord) {
  const auto records = read_text(
      R"({"id":"b","width":64,"height":64,"label":"fake","generator":"SD 1.4",)"
      R"("regions":[{"box":[0,0,10,10],"caption":"extra leg"}],"tags":["structure_attribute_errors"]})");
  ASSERT_EQ(records.size(), 1u);
  ASSERT_EQ(records[0].regions.size(), 1u);
  EXPECT_EQ(records[0].regions[0].box, (BoundingBox{0, 0, 10, 10}));
  EXPECT_EQ(records[0].regions[0].caption, "extra leg");
  EXPECT_EQ(records[0].tags, TagSet{Tag::structure_attribute_errors});
}

TEST(LoadDataset, AnnotatedRealImageIsInvariantError) {
  const std::string line =
      R"({"id":"r","width":64,"height":64,"label":"real","regions":[{"box":[0,0,10,10],"caption":"x"}],"tags":[]})";
  try {
    read_text(line);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invariant);
    EXPECT_EQ(e.record_id(), "r");
  }
}

TEST(LoadDataset, SchemaErrorsCarryLineNumbers) {
  const std::string text =
      "{\"id\":\"a\",\"width\":8,\"height\":8,\"label\":\"real\",\"regions\":[],\"tags\":[]}\n"
      "\n"
      "{\"id\":\"b\",\"width\":8,\"height\":8,\"label\":\"real\",\"regions\":[],\"tags\":[\"blurry\"]}\n";
  try {
    read_text(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(LoadDataset, RejectsMalformedInput) {
  EXPECT_EQ(kind_of("not json"), ErrorKind::schema);
  EXPECT_EQ(kind_of(R"({"id":"a","width":8,"label":"real","regions":[],"tags":[]})"),
            ErrorKind::schema);
  EXPECT_EQ(kind_of(R"({"id":"a","width":8,"height":8,"label":"maybe","regions":[],"tags":[]})"),
            ErrorKind::schema);
  EXPECT_EQ(kind_of(R"({"id":"a","width":8,"height":8,"label":"fake","generator":"g",)"
                    R"("regions":[{"box":[0,0,1],"caption":"x"}],"tags":[]})"),
            ErrorKind::schema);
  EXPECT_EQ(kind_of(R"({"id":"a","width":8,"height":8,"label":"fake","generator":"g",)"
                    R"("regions":[{"box":[0,0,9,9],"caption":"x"}],"tags":[]})"),
            ErrorKind::invariant);
}

TEST(LoadDataset, RejectsDuplicateIds) {
  const std::string line =
      R"({"id":"a","width":8,"height":8,"label":"real","regions":[],"tags":[]})";
  EXPECT_EQ(kind_of(line + "\n" + line + "\n"), ErrorKind::invariant);
}

TEST(LoadDataset, MissingFileIsIoError) {
  try {
    load_dataset("/nonexistent/dataset.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(ValidateRecord, ValidFakeHasNoViolations) {
  EXPECT_TRUE(validate_record(valid_fake()).empty());
}

TEST(ValidateRecord, DegenerateBox) {
  auto r = valid_fake();
  r.regions[0].box = {5, 0, 5, 10};
  const auto v = validate_record(r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "degenerate box");
  EXPECT_EQ(v[0].severity, Severity::error);
}

TEST(ValidateRecord, UnexplainedFakeIsAWarning) {
  auto r = valid_fake();
  r.regions.clear();
  r.tags.clear();
  const auto v = validate_record(r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "unexplained fake");
  EXPECT_EQ(v[0].severity, Severity::warning);
  EXPECT_FALSE(has_errors(v));
}

TEST(ValidateRecord, OtherRules) {
  auto r = valid_fake();
  r.generator.reset();
  r.regions[0].caption = "   ";
  r.regions.push_back({{60, 60, 70, 70}, "ok"});
  const auto v = validate_record(r);
  std::vector<std::string> rules;
  for (const auto& x : v) rules.push_back(x.rule);
  EXPECT_NE(std::find(rules.begin(), rules.end(), "missing generator for fake image"), rules.end());
  EXPECT_NE(std::find(rules.begin(), rules.end(), "empty caption"), rules.end());
  EXPECT_NE(std::find(rules.begin(), rules.end(), "box out of image bounds"), rules.end());
}

TEST(DatasetStats, MeanRegionsPerFake) {
  auto a = valid_fake();
  a.regions.assign(4, a.regions[0]);
  auto b = valid_fake();
  b.id = "g";
  b.regions.assign(7, b.regions[0]);
  ImageRecord real;
  real.id = "r";
  real.width = real.height = 8;
  const auto s = dataset_stats({a, b, real});
  ASSERT_TRUE(s.mean_regions_per_fake.has_value());
  EXPECT_DOUBLE_EQ(*s.mean_regions_per_fake, 5.5);
  EXPECT_EQ(s.fake_count + s.real_count, s.record_count);
  EXPECT_EQ(s.per_generator.at("SD 1.4"), 2u);
  EXPECT_EQ(s.tag_histogram[static_cast<std::size_t>(Tag::structure_attribute_errors)], 2u);
  EXPECT_EQ(s.tag_histogram[static_cast<std::size_t>(Tag::texture_errors)], 0u);
}

TEST(DatasetStats, AllRealHasNoMean) {
  ImageRecord real;
  real.id = "r";
  real.width = real.height = 8;
  EXPECT_FALSE(dataset_stats({real}).mean_regions_per_fake.has_value());
}

TEST(DatasetStats, EmptyDatasetThrows) {
  try {
    dataset_stats({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_dataset);
  }
}

TEST(AnnotationProperty, JsonlRoundTrip) {
  Rng rng(21);
  std::vector<ImageRecord> records;
  for (int i = 0; i < 500; ++i) records.push_back(testing::random_record(rng, "rec" + std::to_string(i)));
  std::stringstream io;
  write_dataset(io, records);
  EXPECT_EQ(read_dataset(io), records);
}

TEST(AnnotationProperty, ValidateAgreesWithLoader) {
  Rng rng(22);
  for (int i = 0; i < 300; ++i) {
    auto r = testing::random_record(rng, "x");
    switch (rng.uniform_index(5)) {
      case 0:
        if (!r.regions.empty()) r.regions[0].box.x2 = r.width + 1.0;
        break;
      case 1:
        if (r.is_real()) r.tags.insert(Tag::texture_errors);
        break;
      case 2:
        if (!r.is_real()) r.generator.reset();
        break;
      case 3:
        if (!r.regions.empty()) r.regions[0].caption = "";
        break;
      default:
        break;
    }
    std::stringstream io;
    write_dataset(io, {r});
    bool loaded = true;
    try {
      read_dataset(io);
    } catch (const Error&) {
      loaded = false;
    }
    ASSERT_EQ(loaded, !has_errors(validate_record(r))) << to_json(r).dump();
  }
}

TEST(AnnotationProperty, StatsIgnoreOrder) {
  Rng rng(23);
  std::vector<ImageRecord> records;
  for (int i = 0; i < 100; ++i) records.push_back(testing::random_record(rng, std::to_string(i)));
  const auto before = dataset_stats(records);
  rng.shuffle(records);
  EXPECT_EQ(dataset_stats(records), before);
}

}  // namespace
}  // namespace xdet
