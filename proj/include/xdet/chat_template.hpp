#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xdet/annotation.hpp"
#include "xdet/grammar.hpp"
#include "xdet/rng.hpp"

namespace xdet {

inline constexpr int kRealTemplateCount = 3;
inline constexpr int kFakeTemplateCount = 6;
inline constexpr int kTemplateCount = kRealTemplateCount + kFakeTemplateCount;

/// Ids 0..2 are for real images, 3..8 for generated ones.
inline bool is_real_template(int template_id) { return template_id < kRealTemplateCount; }

struct Conversation {
  int template_id = 0;
  std::string system;
  std::string user;
  std::string assistant;

  friend bool operator==(const Conversation&, const Conversation&) = default;
};

/// Uniform draw from the template band matching the label.
int select_template(bool is_real, Rng& rng);

/// The assistant answer carried by every template for this record.
ParsedOutput answer_for(const ImageRecord& record);

/// Throws Error(template_mismatch) when the template band disagrees with the
/// record label, Error(invalid_argument) for ids outside [0, 8].
Conversation render_conversation(const ImageRecord& record, int template_id,
                                 const std::string& image_ref);

/// One conversation per record, templates drawn once per record from a
/// stream seeded with `seed`. The image reference is `<image:ID>`.
std::vector<Conversation> render_dataset(const std::vector<ImageRecord>& records,
                                         std::uint64_t seed);

nlohmann::json to_json(const Conversation& conversation);

}  // namespace xdet
