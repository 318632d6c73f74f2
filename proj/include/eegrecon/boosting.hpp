#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "eegrecon/engine.hpp"
#include "eegrecon/image.hpp"
#include "eegrecon/io.hpp"
#include "eegrecon/prompts.hpp"

namespace eegrecon {

// What a describer may know about the reconstruction besides its pixels.
struct DescribeContext {
  std::string trial_id;
  std::string predicted_class;  // decoder prediction for the source trial
};

class Describer {
 public:
  virtual ~Describer() = default;
  virtual std::string kind() const = 0;
  virtual std::string describe(const StimulusImage& image, const DescribeContext& ctx) = 0;
};

// "a <predicted class>", no model involved.
class MockDescriber : public Describer {
 public:
  std::string kind() const override { return "mock"; }
  std::string describe(const StimulusImage& image, const DescribeContext& ctx) override;
};

struct RemoteConfig {
  std::string url;  // http://host:port/path
  double timeout_s = 30.0;
  int retries = 2;
  int max_in_flight = 4;

  Json to_json() const;
};

// POST {system, user, image_base64_png} -> 200 {description}
class RemoteDescriber : public Describer {
 public:
  explicit RemoteDescriber(RemoteConfig config);
  std::string kind() const override { return "remote"; }
  std::string describe(const StimulusImage& image, const DescribeContext& ctx) override;
  const RemoteConfig& config() const { return config_; }

 private:
  RemoteConfig config_;
  std::string scheme_host_port_, path_;
};

std::unique_ptr<Describer> make_describer(const std::string& kind, const RemoteConfig& remote = {});

Json describe_request_body(const StimulusImage& image);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Trims whitespace; rejects empty, multi-paragraph, multi-sentence replies
// and replies opening with "the image shows/depicts".
std::string validate_description(const std::string& raw);

// The template already supplies the article: "a panda." -> "panda".
std::string description_slot_text(const std::string& description);

// Runs describe over a batch with at most max_in_flight concurrent calls;
// results keep input order.
std::vector<std::string> describe_batch(Describer& describer, const std::vector<StimulusImage>& images,
                                        const std::vector<DescribeContext>& contexts, int max_in_flight);

struct BoostConfig {
  double strength = 0.4;
  double gamma = 7.5;
  int steps = 50;
  double min_strength = 0.0;  // exclusive lower bound
  double max_strength = 1.0;

  Json to_json() const;
};

struct BoostResult {
  StimulusImage image;
  std::string description;
  RefinementPrompt prompt;
  double strength = 0.0, gamma = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;

  Json metadata(const std::string& trial_id) const;
};

// Describe, compose the refinement prompt, img2img under it.
BoostResult boost(const Engine& engine, const StimulusImage& image, Describer& describer, const DescribeContext& ctx,
                  const BoostConfig& config, std::uint64_t seed);

// As above with a description already in hand.
BoostResult boost_with_description(const Engine& engine, const StimulusImage& image, const std::string& description,
                                   const BoostConfig& config, std::uint64_t seed);

std::string boosted_filename(const std::string& trial_id, int sample_index);

}  // namespace eegrecon
