#include "eegrecon/montage.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <regex>
#include <set>

#include "eegrecon/error.hpp"
#include "eegrecon/io.hpp"

namespace fs = std::filesystem;

namespace eegrecon {

std::string_view region_name(Region r) {
  switch (r) {
    case Region::Frontal: return "frontal";
    case Region::Central: return "central";
    case Region::Parietal: return "parietal";
    case Region::Occipital: return "occipital";
    case Region::Temporal: return "temporal";
  }
  return "?";
}

Region parse_region(std::string_view name) {
  for (Region r : kRegions)
    if (region_name(r) == name) return r;
  fail(Errc::ConfigValidationError, "unknown region '" + std::string(name) + "'");
}

std::string_view hemisphere_name(Hemisphere h) {
  switch (h) {
    case Hemisphere::Left: return "left";
    case Hemisphere::Right: return "right";
    case Hemisphere::Midline: return "midline";
  }
  return "?";
}

namespace {

struct ParsedLabel {
  std::string row;  // upper-cased prefix, e.g. "FC", "CCP"
  Hemisphere hemi;
};

const std::set<std::string>& known_rows() {
  static const std::set<std::string> rows{"FP", "AF", "AFF", "F",   "FFC", "FFT", "FC",  "FT",
                                          "FCC", "FTT", "C",  "T",   "CCP", "TTP", "CP",  "TP",
                                          "CPP", "TPP", "P",  "PPO", "PO",  "POO", "O",   "OI"};
  return rows;
}

ParsedLabel parse_label(std::string_view label) {
  static const std::regex re("([A-Za-z]+?)([zZ]|[0-9]+)(h?)");
  std::cmatch m;
  if (!std::regex_match(label.begin(), label.end(), m, re))
    fail(Errc::UnknownLabel, "'" + std::string(label) + "'");
  std::string row = m[1].str();
  for (auto& ch : row) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (!known_rows().count(row)) fail(Errc::UnknownLabel, "'" + std::string(label) + "'");
  const std::string num = m[2].str();
  Hemisphere h = Hemisphere::Midline;
  if (num != "z" && num != "Z") {
    const int n = std::stoi(num);
    if (n == 0) fail(Errc::UnknownLabel, "'" + std::string(label) + "'");
    h = (n % 2 == 1) ? Hemisphere::Left : Hemisphere::Right;
  } else if (m[3].length() > 0) {
    fail(Errc::UnknownLabel, "'" + std::string(label) + "'");
  }
  return {row, h};
}

}  // namespace

Region region_of(std::string_view label) {
  const std::string row = parse_label(label).row;
  static const std::pair<const char*, Region> table[] = {
      {"FP", Region::Frontal},  {"AF", Region::Frontal},   {"FC", Region::Central},
      {"FT", Region::Temporal}, {"CP", Region::Parietal},  {"TP", Region::Temporal},
      {"PO", Region::Occipital}, {"F", Region::Frontal},   {"C", Region::Central},
      {"P", Region::Parietal},  {"O", Region::Occipital},  {"T", Region::Temporal}};
  // two-letter entries come first, so the first hit is the longest prefix
  for (const auto& [prefix, region] : table)
    if (row.rfind(prefix, 0) == 0) return region;
  fail(Errc::UnknownLabel, "'" + std::string(label) + "'");
}

Hemisphere hemisphere_of(std::string_view label) { return parse_label(label).hemi; }

int Montage::index_of(std::string_view label) const {
  for (int i = 0; i < size(); ++i)
    if (electrodes[i].label == label) return i;
  return -1;
}

std::vector<std::string> Montage::labels() const {
  std::vector<std::string> out;
  for (const auto& e : electrodes) out.push_back(e.label);
  return out;
}

std::vector<int> Montage::indices_in(Region r) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (electrodes[i].region == r) out.push_back(i);
  return out;
}

Montage make_root_montage(std::string name, const std::vector<LabeledPoint>& points) {
  Montage m;
  m.name = std::move(name);
  std::set<std::string> seen;
  for (const auto& p : points) {
    if (!seen.insert(p.label).second) fail(Errc::ConfigValidationError, "duplicate electrode " + p.label);
    if (std::abs(p.x) > 1.0 || std::abs(p.y) > 1.0)
      fail(Errc::ConfigValidationError, p.label + ": coordinates outside [-1,1]");
    m.electrodes.push_back({p.label, p.x, p.y, region_of(p.label), hemisphere_of(p.label)});
  }
  return m;
}

Montage flat_montage(std::string name, const std::vector<std::string>& labels) {
  if (labels.empty()) fail(Errc::EmptyInput, "montage " + name + " has no labels");
  Montage m;
  m.name = std::move(name);
  for (const auto& l : labels) {
    if (m.index_of(l) >= 0) fail(Errc::ConfigValidationError, "duplicate label '" + l + "'");
    Electrode e;
    e.label = l;
    m.electrodes.push_back(std::move(e));
  }
  return m;
}

Montage reduce_by_labels(const Montage& parent, std::string name, const std::vector<std::string>& labels) {
  std::vector<int> idx;
  for (const auto& l : labels) {
    const int i = parent.index_of(l);
    if (i < 0) fail(Errc::UnknownLabel, "'" + l + "' is not in montage " + parent.name);
    idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end());
  if (std::adjacent_find(idx.begin(), idx.end()) != idx.end())
    fail(Errc::ConfigValidationError, "duplicate labels in montage " + name);
  if (static_cast<int>(idx.size()) >= parent.size())
    fail(Errc::IdentityNotAllowed, name + " must be a strict subset of " + parent.name);
  Montage m;
  m.name = std::move(name);
  m.parent = parent.name;
  for (int i : idx) m.electrodes.push_back(parent.electrodes[i]);
  m.source_indices = std::move(idx);
  return m;
}

namespace {

double dist(const Electrode& a, const Electrode& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Greedy farthest-point selection over `pool` (parent indices), starting at `seed`.
// With `balanced`, each pick keeps |left - right| <= 1 whenever some candidate allows it.
std::vector<int> farthest_points(const Montage& parent, const std::vector<int>& pool, int seed, int quota,
                                 bool balanced) {
  std::vector<int> chosen{seed};
  std::vector<int> rest;
  for (int i : pool)
    if (i != seed) rest.push_back(i);
  std::vector<double> mind(parent.size(), std::numeric_limits<double>::infinity());
  auto update = [&](int picked) {
    for (int i : rest) mind[i] = std::min(mind[i], dist(parent.electrodes[i], parent.electrodes[picked]));
  };
  update(seed);
  int left = 0, right = 0;
  auto tally = [&](int i, int& l, int& r) {
    if (parent.electrodes[i].hemisphere == Hemisphere::Left) ++l;
    if (parent.electrodes[i].hemisphere == Hemisphere::Right) ++r;
  };
  tally(seed, left, right);

  while (static_cast<int>(chosen.size()) < quota && !rest.empty()) {
    int best = -1;
    for (int pass = 0; pass < 2 && best < 0; ++pass) {
      for (int i : rest) {
        if (balanced && pass == 0) {
          int l = left, r = right;
          tally(i, l, r);
          if (std::abs(l - r) > 1) continue;
        }
        // ties resolve to the lower parent index because `rest` is ascending
        if (best < 0 || mind[i] > mind[best] + 1e-12) best = i;
      }
    }
    chosen.push_back(best);
    tally(best, left, right);
    rest.erase(std::find(rest.begin(), rest.end(), best));
    update(best);
  }
  return chosen;
}

}  // namespace

CoverageReport coverage_of(const Montage& m) {
  CoverageReport r;
  for (const auto& e : m.electrodes) {
    const auto k = static_cast<std::size_t>(e.region);
    r.count[k]++;
    if (e.hemisphere == Hemisphere::Left) r.left[k]++;
    if (e.hemisphere == Hemisphere::Right) r.right[k]++;
  }
  return r;
}

bool CoverageReport::satisfied() const {
  for (std::size_t k = 0; k < 5; ++k)
    if (count[k] < 2 || std::abs(left[k] - right[k]) > 1) return false;
  return true;
}

Montage subsample(const Montage& parent, int target, SubsamplePolicy policy, std::string name) {
  if (target >= parent.size())
    fail(Errc::IdentityNotAllowed, "target " + std::to_string(target) + " >= parent size " +
                                       std::to_string(parent.size()));
  if (target < 1) fail(Errc::ConfigValidationError, "target must be positive");
  if (name.empty())
    name = parent.name + (policy == SubsamplePolicy::Uniform ? "-uni" : "-cov") + std::to_string(target);

  std::vector<int> picked;
  if (policy == SubsamplePolicy::Uniform) {
    std::vector<int> pool(parent.size());
    for (int i = 0; i < parent.size(); ++i) pool[i] = i;
    int seed = 0;
    for (int i = 1; i < parent.size(); ++i)
      if (std::hypot(parent.electrodes[i].x, parent.electrodes[i].y) <
          std::hypot(parent.electrodes[seed].x, parent.electrodes[seed].y) - 1e-12)
        seed = i;
    picked = farthest_points(parent, pool, seed, target, false);
  } else {
    constexpr int kMinPerRegion = 2;
    if (target < kMinPerRegion * static_cast<int>(kRegions.size()))
      fail(Errc::InfeasibleCoverage, "target " + std::to_string(target) + " cannot hold 2 electrodes in each of 5 regions");
    std::array<std::vector<int>, 5> pools;
    for (Region r : kRegions) {
      pools[static_cast<std::size_t>(r)] = parent.indices_in(r);
      if (pools[static_cast<std::size_t>(r)].size() < kMinPerRegion)
        fail(Errc::InfeasibleCoverage, "parent " + parent.name + " has fewer than 2 " +
                                           std::string(region_name(r)) + " electrodes");
    }
    // 2 per region, the remainder shared in proportion to each region's spare electrodes
    std::array<int, 5> quota{};
    std::array<double, 5> frac{};
    const int extra = target - kMinPerRegion * 5;
    int spare_total = 0;
    for (std::size_t k = 0; k < 5; ++k) spare_total += static_cast<int>(pools[k].size()) - kMinPerRegion;
    int assigned = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      const double ideal =
          spare_total > 0 ? extra * static_cast<double>(pools[k].size() - kMinPerRegion) / spare_total : 0.0;
      const int base = static_cast<int>(std::floor(ideal + 1e-9));
      quota[k] = kMinPerRegion + base;
      frac[k] = ideal - base;
      assigned += base;
    }
    std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t j = 0; assigned < extra; j = (j + 1) % 5) {
      const std::size_t k = order[j];
      if (quota[k] < static_cast<int>(pools[k].size())) {
        ++quota[k];
        ++assigned;
      }
    }
    for (std::size_t k = 0; k < 5; ++k) {
      const auto& pool = pools[k];
      int seed = pool.front();
      for (int i : pool)
        if (std::abs(parent.electrodes[i].x) < std::abs(parent.electrodes[seed].x) - 1e-12) seed = i;
      auto got = farthest_points(parent, pool, seed, quota[k], true);
      picked.insert(picked.end(), got.begin(), got.end());
    }
  }

  std::sort(picked.begin(), picked.end());
  Montage m;
  m.name = std::move(name);
  m.parent = parent.name;
  for (int i : picked) m.electrodes.push_back(parent.electrodes[i]);
  m.source_indices = std::move(picked);
  if (policy == SubsamplePolicy::CoveragePreserving && !coverage_of(m).satisfied())
    fail(Errc::InfeasibleCoverage, "no bilateral-balanced selection of " + std::to_string(target) + " electrodes");
  return m;
}

std::vector<int> compose_indices(const Montage& parent, const Montage& child) {
  if (parent.is_root()) return child.source_indices;
  std::vector<int> out;
  for (int i : child.source_indices) {
    if (i < 0 || i >= static_cast<int>(parent.source_indices.size()))
      fail(Errc::IndexOutOfRange, "index " + std::to_string(i) + " outside " + parent.name);
    out.push_back(parent.source_indices[i]);
  }
  return out;
}

EegTrial project_trial(const EegTrial& trial, const Montage& montage) {
  if (montage.is_root()) {
    if (trial.channels != montage.size())
      fail(Errc::IndexOutOfRange, "root montage " + montage.name + " has " + std::to_string(montage.size()) +
                                      " electrodes, trial has " + std::to_string(trial.channels));
    return trial;
  }
  EegTrial out = trial;
  out.channels = montage.size();
  out.data.assign(static_cast<std::size_t>(out.channels) * trial.samples, 0.0f);
  for (int r = 0; r < out.channels; ++r) {
    const int src = montage.source_indices[r];
    if (src < 0 || src >= trial.channels)
      fail(Errc::IndexOutOfRange, "montage " + montage.name + " references channel " + std::to_string(src) +
                                      " of a " + std::to_string(trial.channels) + "-channel trial");
    const auto row = trial.row(src);
    std::copy(row.begin(), row.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r) * trial.samples);
  }
  return out;
}

fs::path default_montage_dir() {
  if (const char* env = std::getenv("EEGRECON_MONTAGE_DIR")) return env;
  return fs::path(EEGRECON_FIXTURE_DIR) / "montages";
}

Montage load_montage(const fs::path& dir, const std::string& name) {
  const auto path = dir / (name + ".json");
  if (!fs::exists(path)) fail(Errc::MissingPrerequisite, "montage fixture " + path.string());
  const Json j = Json::parse(read_text(path));
  try {
    if (j.is_array()) {
      std::vector<LabeledPoint> pts;
      for (const auto& e : j) pts.push_back({e.at("label").get<std::string>(), e.at("x").get<double>(), e.at("y").get<double>()});
      return make_root_montage(name, pts);
    }
    const std::string parent_name = j.at("parent").get<std::string>();
    if (parent_name == name) fail(Errc::ConfigValidationError, "montage " + name + " is its own parent");
    const Montage parent = load_montage(dir, parent_name);
    return reduce_by_labels(parent, j.value("name", name), j.at("labels").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ConfigValidationError, path.string() + ": " + e.what());
  }
}

}  // namespace eegrecon
