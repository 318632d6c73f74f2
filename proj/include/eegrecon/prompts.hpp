#pragma once

#include <string>
#include <string_view>

namespace eegrecon {

// Describer instructions and the refinement template; golden copies live in
// fixtures/prompts and are compared byte-for-byte by the tests.
inline constexpr std::string_view kDescriberSystemPrompt =
    "You are an expert in textual description from a single image. Given an image, you will provide a concise and "
    "accurate description of the content, without saying 'the image shows' or 'the image depicts' at the start.";

inline constexpr std::string_view kDescriberUserPrompt =
    "Write a description for this image in one sentence. You should answer with the prompt only. Do not insert the "
    "first part where you say 'the image shows' or 'the image depicts' in the answer.";

inline constexpr std::string_view kDescriptionSlot = "[d]";

inline constexpr std::string_view kRefinementTemplate =
    "A realistic, high-quality photo of a [d], with clean and correct geometry, natural lighting, consistent "
    "textures, and accurate proportions. No visual glitches, no distorted shapes, no rendering artifacts. The object "
    "appears physically plausible and professionally photographed, with all structures logically and realistically "
    "aligned.";

struct RefinementPrompt {
  std::string description;
  std::string text;
};

// Substitutes d into the template. Throws EmptyDescription for an empty d.
RefinementPrompt compose_prompt(const std::string& description);

}  // namespace eegrecon
