#include "eegrecon/study_stats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "eegrecon/error.hpp"

namespace eegrecon {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

std::string lower_trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t"));
  s.erase(s.find_last_not_of(" \t") + 1);
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool parse_bool(const std::string& raw, int line) {
  const std::string s = lower_trim(raw);
  if (s == "1" || s == "true" || s == "yes" || s == "boosted") return true;
  if (s == "0" || s == "false" || s == "no" || s == "raw") return false;
  fail(Errc::ConfigValidationError, "line " + std::to_string(line) + ": chose_boosted '" + raw + "' is not a boolean");
}

int parse_int(const std::string& raw, const char* what, int line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(raw, &used);
    if (lower_trim(raw.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  fail(Errc::ConfigValidationError, "line " + std::to_string(line) + ": " + what + " '" + raw + "' is not an integer");
}

void require_nonempty(const std::vector<PreferenceTrial>& trials) {
  if (trials.empty()) fail(Errc::EmptyInput, "no preference trials");
}

}  // namespace

void validate_trial(const PreferenceTrial& t) {
  if (t.confidence < 1 || t.confidence > 5)
    fail(Errc::ConfigValidationError, t.trial_id + ": confidence " + std::to_string(t.confidence) + " outside 1..5");
  if (t.channels != 24 && t.channels != 32 && t.channels != 64 && t.channels != 128)
    fail(Errc::ConfigValidationError, t.trial_id + ": channels " + std::to_string(t.channels) + " not in {24,32,64,128}");
}

std::vector<PreferenceTrial> parse_preference_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(Errc::EmptyInput, "preference CSV is empty");
  const auto header = split_csv_line(line);
  auto column = [&](const char* name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (lower_trim(header[i]) == name) return static_cast<int>(i);
    fail(Errc::ConfigValidationError, std::string("preference CSV lacks column '") + name + "'");
  };
  const int c_id = column("trial_id"), c_ch = column("channels"), c_ch_b = column("chose_boosted"),
            c_conf = column("confidence");
  const int need = std::max({c_id, c_ch, c_ch_b, c_conf});

  std::vector<PreferenceTrial> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (lower_trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (static_cast<int>(f.size()) <= need)
      fail(Errc::ConfigValidationError, "line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    PreferenceTrial t;
    t.trial_id = f[c_id];
    t.channels = parse_int(f[c_ch], "channels", lineno);
    t.chose_boosted = parse_bool(f[c_ch_b], lineno);
    t.confidence = parse_int(f[c_conf], "confidence", lineno);
    validate_trial(t);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<PreferenceTrial> read_preference_csv(const std::filesystem::path& path) {
  return parse_preference_csv(read_text(path));
}

double preference_rate(const std::vector<PreferenceTrial>& trials) {
  require_nonempty(trials);
  const auto chosen = std::count_if(trials.begin(), trials.end(), [](const auto& t) { return t.chose_boosted; });
  return static_cast<double>(chosen) / trials.size();
}

double weighted_preference_rate(const std::vector<PreferenceTrial>& trials) {
  require_nonempty(trials);
  long num = 0, den = 0;  // integer sums keep the equal-confidence case exact
  for (const auto& t : trials) {
    validate_trial(t);
    num += t.chose_boosted ? t.confidence : 0;
    den += t.confidence;
  }
  return static_cast<double>(num) / den;
}

double mean_confidence(const std::vector<PreferenceTrial>& trials) {
  require_nonempty(trials);
  double s = 0.0;
  for (const auto& t : trials) s += t.confidence;
  return s / trials.size();
}

BinomialResult binomial_test(int n, double p_hat, double p0) {
  if (n < 10) fail(Errc::TooFewTrials, "binomial test needs n >= 10, got " + std::to_string(n));
  if (!(p0 > 0.0 && p0 < 1.0)) fail(Errc::ConfigValidationError, "p0 must lie in (0, 1)");
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) fail(Errc::ConfigValidationError, "observed rate must lie in [0, 1]");
  BinomialResult r;
  r.n = n;
  r.p_hat = p_hat;
  r.p0 = p0;
  r.z = (p_hat - p0) / std::sqrt(p0 * (1.0 - p0) / n);
  r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  return r;
}

BinomialResult binomial_test(const std::vector<PreferenceTrial>& trials, double p0) {
  if (trials.size() < 10) fail(Errc::TooFewTrials, "binomial test needs n >= 10, got " + std::to_string(trials.size()));
  return binomial_test(static_cast<int>(trials.size()), preference_rate(trials), p0);
}

Json PreferenceGroup::to_json() const {
  return {{"n", n}, {"preference_rate", rate}, {"weighted_preference_rate", weighted_rate}, {"mean_confidence", mean_confidence}};
}

PreferenceGroup summarize_group(const std::vector<PreferenceTrial>& trials) {
  PreferenceGroup g;
  g.n = static_cast<int>(trials.size());
  g.rate = preference_rate(trials);
  g.weighted_rate = weighted_preference_rate(trials);
  g.mean_confidence = mean_confidence(trials);
  return g;
}

StudySummary summarize_study(const std::vector<PreferenceTrial>& trials, double p0) {
  require_nonempty(trials);
  StudySummary s;
  std::map<int, std::vector<PreferenceTrial>> by;
  for (const auto& t : trials) by[t.channels].push_back(t);
  for (const auto& [ch, group] : by) s.per_montage[ch] = summarize_group(group);
  s.overall = summarize_group(trials);
  s.binomial = binomial_test(trials, p0);
  return s;
}

Json StudySummary::to_json() const {
  Json per = Json::object();
  for (const auto& [ch, g] : per_montage) per[std::to_string(ch)] = g.to_json();
  return {{"per_montage", per},
          {"overall", overall.to_json()},
          {"binomial", {{"n", binomial.n}, {"p_hat", binomial.p_hat}, {"p0", binomial.p0}, {"z", binomial.z}, {"p", binomial.p_value}}}};
}

}  // namespace eegrecon
