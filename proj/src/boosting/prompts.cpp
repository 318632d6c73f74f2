#include "eegrecon/prompts.hpp"

#include "eegrecon/error.hpp"

namespace eegrecon {

RefinementPrompt compose_prompt(const std::string& description) {
  if (description.empty()) fail(Errc::EmptyDescription, "description is empty");
  if (description.find_first_of("\r\n") != std::string::npos)
    fail(Errc::EmptyDescription, "description must be a single line");
  std::string text(kRefinementTemplate);
  text.replace(text.find(kDescriptionSlot), kDescriptionSlot.size(), description);
  return {description, std::move(text)};
}

}  // namespace eegrecon
