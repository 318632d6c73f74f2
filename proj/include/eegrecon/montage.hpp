#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "eegrecon/dataset.hpp"

namespace eegrecon {

enum class Region { Frontal, Central, Parietal, Occipital, Temporal };
enum class Hemisphere { Left, Right, Midline };

inline constexpr std::array<Region, 5> kRegions{Region::Frontal, Region::Central, Region::Parietal,
                                                Region::Occipital, Region::Temporal};

std::string_view region_name(Region r);
Region parse_region(std::string_view name);
std::string_view hemisphere_name(Hemisphere h);

// Prefix rules: Fp/AF/F frontal, FC/C central, CP/P parietal, PO/O occipital,
// FT/T/TP temporal (longest prefix wins). Throws UnknownLabel.
Region region_of(std::string_view label);
Hemisphere hemisphere_of(std::string_view label);

struct Electrode {
  std::string label;
  double x = 0.0, y = 0.0;  // +x toward the right ear, +y toward the nose
  Region region = Region::Frontal;
  Hemisphere hemisphere = Hemisphere::Midline;
};

struct Montage {
  std::string name;
  std::string parent;
  std::vector<Electrode> electrodes;
  std::vector<int> source_indices;  // into the parent; empty for a root

  int size() const { return static_cast<int>(electrodes.size()); }
  bool is_root() const { return source_indices.empty(); }
  int index_of(std::string_view label) const;  // -1 when absent
  std::vector<std::string> labels() const;
  std::vector<int> indices_in(Region r) const;
};

struct LabeledPoint {
  std::string label;
  double x = 0.0, y = 0.0;
};

Montage make_root_montage(std::string name, const std::vector<LabeledPoint>& points);

// Root montage over bare labels with no scalp positions (region lookups are
// not available on it). Used for datasets whose labels are not 10-10 names.
Montage flat_montage(std::string name, const std::vector<std::string>& labels);

// Picks `labels` out of parent, kept in parent order.
Montage reduce_by_labels(const Montage& parent, std::string name, const std::vector<std::string>& labels);

enum class SubsamplePolicy { CoveragePreserving, Uniform };

Montage subsample(const Montage& parent, int target_count, SubsamplePolicy policy, std::string name = {});

// Indices of `child` expressed against the parent of `parent`.
std::vector<int> compose_indices(const Montage& parent, const Montage& child);

EegTrial project_trial(const EegTrial& trial, const Montage& montage);

// Fixture directory layout: <name>.json, either a root list of {label,x,y}
// or {name, parent, labels}. Parents are resolved recursively.
Montage load_montage(const std::filesystem::path& dir, const std::string& name);
std::filesystem::path default_montage_dir();

struct CoverageReport {
  std::array<int, 5> count{}, left{}, right{};
  bool satisfied() const;
};
CoverageReport coverage_of(const Montage& m);

}  // namespace eegrecon
