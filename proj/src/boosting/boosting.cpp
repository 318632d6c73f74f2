#include "eegrecon/boosting.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "eegrecon/error.hpp"

namespace eegrecon {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool starts_with_ci(const std::string& s, const std::string& prefix) {
  return lower(s.substr(0, prefix.size())) == prefix;
}

// Word ending in '.' that does not end a sentence.
bool is_abbreviation(const std::string& word) {
  static const std::vector<std::string> known{"e.g.", "i.e.", "etc.", "mr.", "mrs.", "ms.", "dr.", "st.",
                                              "vs.", "approx.", "no.", "jr.", "sr.", "inc.", "ltd."};
  const std::string w = lower(word);
  if (std::find(known.begin(), known.end(), w) != known.end()) return true;
  // initials such as "J." or "U.S."
  static const std::regex initials("^([a-z]\\.)+$");
  return std::regex_match(w, initials);
}

int sentence_breaks(const std::string& s) {
  int breaks = 0;
  std::size_t start = 0;
  while (start < s.size()) {
    auto end = s.find_first_of(" \t", start);
    if (end == std::string::npos) end = s.size();
    const std::string word = s.substr(start, end - start);
    if (!word.empty()) {
      const char last = word.back();
      if ((last == '.' && !is_abbreviation(word)) || last == '!' || last == '?') ++breaks;
    }
    start = end + 1;
  }
  return breaks;
}

}  // namespace

std::string validate_description(const std::string& raw) {
  std::string s = trim(raw);
  if (s.empty()) fail(Errc::RemoteMalformedResponse, "empty description");
  static const std::regex paragraph_break("\\n[ \\t\\r]*\\n");
  if (std::regex_search(s, paragraph_break)) fail(Errc::RemoteMalformedResponse, "description has several paragraphs");
  for (auto& c : s)
    if (c == '\n' || c == '\r' || c == '\t') c = ' ';
  for (const char* banned : {"the image shows", "the image depicts"})
    if (starts_with_ci(s, banned)) fail(Errc::RemoteMalformedResponse, std::string("description opens with '") + banned + "'");
  if (sentence_breaks(s) > 1) fail(Errc::RemoteMalformedResponse, "description is more than one sentence: " + s);
  return s;
}

std::string description_slot_text(const std::string& description) {
  std::string s = trim(description);
  while (!s.empty() && (s.back() == '.' || s.back() == '!')) s.pop_back();
  for (const char* article : {"a ", "an "})
    if (starts_with_ci(s, article) && s.size() > std::string(article).size()) {
      s = s.substr(std::string(article).size());
      break;
    }
  return trim(s);
}

std::string MockDescriber::describe(const StimulusImage& image, const DescribeContext& ctx) {
  if (image.empty()) fail(Errc::EmptyInput, "cannot describe an empty image");
  if (ctx.predicted_class.empty())
    fail(Errc::DescriberUnavailable, "mock describer needs the decoder prediction for " + ctx.trial_id);
  return "a " + ctx.predicted_class;
}

Json RemoteConfig::to_json() const {
  return {{"url", url}, {"timeout_s", timeout_s}, {"retries", retries}, {"max_in_flight", max_in_flight}};
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) fail(Errc::RemoteMalformedResponse, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) fail(Errc::RemoteMalformedResponse, "invalid base64");
  std::size_t pad = 0;
  for (auto it = text.rbegin(); it != text.rend() && *it == '='; ++it) ++pad;
  out.resize(n - pad);
  return out;
}

Json describe_request_body(const StimulusImage& image) {
  return {{"system", std::string(kDescriberSystemPrompt)},
          {"user", std::string(kDescriberUserPrompt)},
          {"image_base64_png", base64_encode(encode_png(image))}};
}

RemoteDescriber::RemoteDescriber(RemoteConfig config) : config_(std::move(config)) {
  static const std::regex url_re("^(http://[^/]+)(/.*)?$");
  std::smatch m;
  if (!std::regex_match(config_.url, m, url_re))
    fail(Errc::ConfigValidationError, "describer URL must look like http://host:port/path, got '" + config_.url + "'");
  scheme_host_port_ = m[1];
  path_ = m[2].matched ? std::string(m[2]) : "/";
  if (config_.retries < 0 || config_.timeout_s <= 0 || config_.max_in_flight < 1)
    fail(Errc::ConfigValidationError, "bad remote describer settings");
}

std::string RemoteDescriber::describe(const StimulusImage& image, const DescribeContext& ctx) {
  if (image.empty()) fail(Errc::EmptyInput, "cannot describe an empty image");
  const std::string body = describe_request_body(image).dump();
  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - secs) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  Errc last = Errc::DescriberUnavailable;
  std::string last_msg;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      const auto err = res.error();
      last = (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout)
                 ? Errc::RemoteTimeout
                 : Errc::DescriberUnavailable;
      last_msg = httplib::to_string(err);
      continue;
    }
    if (res->status >= 500) {
      last = Errc::DescriberUnavailable;
      last_msg = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) fail(Errc::DescriberUnavailable, "describer answered HTTP " + std::to_string(res->status));
    Json j;
    try {
      j = Json::parse(res->body);
    } catch (const std::exception&) {
      fail(Errc::RemoteMalformedResponse, "describer reply is not JSON");
    }
    if (!j.is_object() || !j.contains("description") || !j["description"].is_string())
      fail(Errc::RemoteMalformedResponse, "describer reply has no string 'description'");
    return validate_description(j["description"].get<std::string>());
  }
  fail(last, "describer at " + config_.url + " failed for " + (ctx.trial_id.empty() ? "image" : ctx.trial_id) +
                 " after " + std::to_string(config_.retries + 1) + " attempts: " + last_msg);
}

std::unique_ptr<Describer> make_describer(const std::string& kind, const RemoteConfig& remote) {
  if (kind == "mock") return std::make_unique<MockDescriber>();
  if (kind == "remote") return std::make_unique<RemoteDescriber>(remote);
  fail(Errc::ConfigValidationError, "unknown describer kind '" + kind + "' (mock or remote)");
}

std::vector<std::string> describe_batch(Describer& describer, const std::vector<StimulusImage>& images,
                                        const std::vector<DescribeContext>& contexts, int max_in_flight) {
  if (images.size() != contexts.size()) fail(Errc::CountMismatch, "images and contexts differ in count");
  std::vector<std::string> out(images.size());
  std::vector<std::exception_ptr> errors(images.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < images.size();) {
      try {
        out[i] = describer.describe(images[i], contexts[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::clamp<int>(max_in_flight, 1, std::max<int>(1, static_cast<int>(images.size())));
  if (n == 1 || describer.kind() == "mock") {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Json BoostConfig::to_json() const {
  return {{"strength", strength}, {"gamma", gamma}, {"steps", steps}};
}

Json BoostResult::metadata(const std::string& trial_id) const {
  return {{"trial_id", trial_id}, {"description", description}, {"prompt", prompt.text},
          {"strength", strength}, {"gamma", gamma},             {"steps", steps},
          {"seed", seed}};
}

BoostResult boost_with_description(const Engine& engine, const StimulusImage& image, const std::string& description,
                                   const BoostConfig& config, std::uint64_t seed) {
  if (!(config.strength > config.min_strength && config.strength <= config.max_strength))
    fail(Errc::BadStrength, "boost strength " + std::to_string(config.strength) + " outside (" +
                                std::to_string(config.min_strength) + ", " + std::to_string(config.max_strength) + "]");
  BoostResult r;
  r.description = description;
  r.prompt = compose_prompt(description_slot_text(description));
  r.strength = config.strength;
  r.gamma = config.gamma;
  r.steps = config.steps;
  r.seed = seed;
  r.image = img2img(engine, image, r.prompt.text, config.strength, config.gamma, config.steps, seed);
  r.image.image_id = image.image_id;
  return r;
}

BoostResult boost(const Engine& engine, const StimulusImage& image, Describer& describer, const DescribeContext& ctx,
                  const BoostConfig& config, std::uint64_t seed) {
  return boost_with_description(engine, image, describer.describe(image, ctx), config, seed);
}

std::string boosted_filename(const std::string& trial_id, int sample_index) {
  return trial_id + "_" + std::to_string(sample_index) + "_boosted.png";
}

}  // namespace eegrecon
