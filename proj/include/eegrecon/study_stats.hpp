#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "eegrecon/io.hpp"

namespace eegrecon {

struct PreferenceTrial {
  std::string trial_id;
  int channels = 0;  // 24, 32, 64 or 128
  bool chose_boosted = false;
  int confidence = 1;  // Likert 1..5
};

// Columns trial_id,channels,chose_boosted,confidence in any order; others ignored.
std::vector<PreferenceTrial> parse_preference_csv(const std::string& text);
std::vector<PreferenceTrial> read_preference_csv(const std::filesystem::path& path);
void validate_trial(const PreferenceTrial& t);

double preference_rate(const std::vector<PreferenceTrial>& trials);
// sum(confidence * chose) / sum(confidence)
double weighted_preference_rate(const std::vector<PreferenceTrial>& trials);
double mean_confidence(const std::vector<PreferenceTrial>& trials);

struct BinomialResult {
  int n = 0;
  double p_hat = 0.0, p0 = 0.5;
  double z = 0.0, p_value = 1.0;  // two-sided, normal approximation
};

BinomialResult binomial_test(const std::vector<PreferenceTrial>& trials, double p0 = 0.5);
BinomialResult binomial_test(int n, double p_hat, double p0 = 0.5);

struct PreferenceGroup {
  int n = 0;
  double rate = 0.0, weighted_rate = 0.0, mean_confidence = 0.0;
  Json to_json() const;
};

struct StudySummary {
  std::map<int, PreferenceGroup> per_montage;  // keyed by channel count
  PreferenceGroup overall;
  BinomialResult binomial;
  Json to_json() const;
};

PreferenceGroup summarize_group(const std::vector<PreferenceTrial>& trials);
StudySummary summarize_study(const std::vector<PreferenceTrial>& trials, double p0 = 0.5);

}  // namespace eegrecon
