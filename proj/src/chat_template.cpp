#include "xdet/chat_template.hpp"

#include <array>
#include <string_view>

#include "xdet/error.hpp"

namespace xdet {

namespace {

struct Template {
  std::string_view system;
  std::string_view user;  // "{image}" is replaced by the image reference
};

// Real-image templates first, then generated-image templates. The answer
// format is fixed; only the framing varies.
constexpr std::array<Template, kTemplateCount> kTemplates = {{
    {"You are an image forensics assistant. Reason about visual evidence before "
     "answering.",
     "{image}\nIs this photograph authentic or AI-generated? Explain your reasoning."},
    {"You inspect images for synthesis artifacts and report your findings in a "
     "structured form.",
     "{image}\nPlease check this image for signs of generation and give a verdict."},
    {"You are a careful visual analyst. Ground every claim in the image content.",
     "Here is an image: {image}\nDoes anything in it suggest it was produced by a "
     "generative model?"},
    {"You are an image forensics assistant. Reason about visual evidence before "
     "answering.",
     "{image}\nDetermine whether this image is real or generated. If generated, "
     "mark the flawed regions with bounding boxes."},
    {"You detect AI-generated images and localize the artifacts that give them away.",
     "{image}\nFind every region that looks synthetic and describe what is wrong "
     "with it."},
    {"You are a careful visual analyst. Ground every claim in the image content.",
     "Look closely at {image}. Which parts break common sense or show generation "
     "artifacts? Conclude with a verdict."},
    {"You review images for authenticity. Cite coordinates for each flaw you report.",
     "{image}\nList the suspicious regions as boxes with short explanations, tag the "
     "overall defects, then decide real or fake."},
    {"You inspect images for synthesis artifacts and report your findings in a "
     "structured form.",
     "Analyze the image {image} for structural, texture and perspective errors and "
     "state whether it is AI-generated."},
    {"You help people understand why an image may be fake.",
     "{image}\nIs this image trustworthy? Point out the exact areas that reveal "
     "whether it was generated."},
}};

std::string substitute(std::string_view pattern, const std::string& image_ref) {
  std::string out(pattern);
  constexpr std::string_view key = "{image}";
  if (auto pos = out.find(key); pos != std::string::npos) {
    out.replace(pos, key.size(), image_ref);
  }
  return out;
}

}  // namespace

int select_template(bool is_real, Rng& rng) {
  if (is_real) return static_cast<int>(rng.uniform_index(kRealTemplateCount));
  return kRealTemplateCount + static_cast<int>(rng.uniform_index(kFakeTemplateCount));
}

ParsedOutput answer_for(const ImageRecord& record) {
  ParsedOutput p;
  if (record.is_real()) {
    p.verdict = Verdict::real;
    p.think_prose =
        "Lighting, textures and object structure are consistent throughout. "
        "No synthesis artifacts are visible.";
    return p;
  }
  p.verdict = Verdict::generated;
  p.regions = record.regions;
  p.tags = record.tags;
  if (record.regions.empty()) {
    p.think_prose =
        "There are no distinct localized flaws, but the image as a whole shows "
        "signs of synthesis.";
  } else {
    p.think_prose = "The following regions show signs of synthesis:";
  }
  return p;
}

Conversation render_conversation(const ImageRecord& record, int template_id,
                                 const std::string& image_ref) {
  if (template_id < 0 || template_id >= kTemplateCount) {
    throw Error(ErrorKind::invalid_argument,
                "template id " + std::to_string(template_id) + " outside [0, 8]",
                std::nullopt, record.id);
  }
  if (is_real_template(template_id) != record.is_real()) {
    throw Error(ErrorKind::template_mismatch,
                "template " + std::to_string(template_id) + " does not apply to a " +
                    std::string(to_string(record.label)) + " image",
                std::nullopt, record.id);
  }
  const Template& t = kTemplates[static_cast<std::size_t>(template_id)];
  Conversation c;
  c.template_id = template_id;
  c.system = std::string(t.system);
  c.user = substitute(t.user, image_ref);
  c.assistant = render_structured(answer_for(record));
  return c;
}

std::vector<Conversation> render_dataset(const std::vector<ImageRecord>& records,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Conversation> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const int id = select_template(r.is_real(), rng);
    out.push_back(render_conversation(r, id, "<image:" + r.id + ">"));
  }
  return out;
}

nlohmann::json to_json(const Conversation& c) {
  return nlohmann::json{{"template_id", c.template_id},
                        {"system", c.system},
                        {"user", c.user},
                        {"assistant", c.assistant}};
}

}  // namespace xdet
