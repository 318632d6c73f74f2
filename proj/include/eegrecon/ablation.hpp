#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "eegrecon/dataset.hpp"
#include "eegrecon/decoder.hpp"
#include "eegrecon/image.hpp"
#include "eegrecon/io.hpp"
#include "eegrecon/montage.hpp"

namespace eegrecon {

struct Accuracy {
  double top1 = 0.0, top5 = 0.0;
};

struct ElectrodeKnockoutResult {
  std::string label;
  Region region = Region::Frontal;
  double top1 = 0.0, top5 = 0.0;
};

enum class RegionMode { ZeroFill, Retrain };
std::string_view region_mode_name(RegionMode m);
RegionMode parse_region_mode(std::string_view name);

struct RegionKnockoutResult {
  Region region = Region::Frontal;
  int remaining_channels = 0;
  double top1 = 0.0, top5 = 0.0;
  RegionMode mode = RegionMode::ZeroFill;
};

struct AblationOptions {
  int ways = 0;   // 0 -> every class
  int top_k = 5;  // clamped to ways
  std::uint64_t seed = 0;
  int threads = 1;
};

// Copy of trial with the given rows set to zero.
EegTrial knockout_electrode(const EegTrial& trial, int channel_index);
EegTrial knockout_channels(const EegTrial& trial, const std::vector<int>& channel_indices);

// Trials must already be projected onto the decoder's montage.
Accuracy evaluate_accuracy(const DecoderModel& decoder, const std::vector<EegTrial>& trials,
                           const AblationOptions& opts = {});

std::vector<ElectrodeKnockoutResult> electrode_sweep(const std::vector<EegTrial>& test, const DecoderModel& decoder,
                                                     const Montage& montage, const AblationOptions& opts = {});

// Retrain mode: called with the kept montage rows, returns a decoder for them.
using DecoderFactory = std::function<DecoderModel(const std::vector<int>& kept_rows)>;

std::vector<RegionKnockoutResult> region_sweep(const std::vector<EegTrial>& test, const DecoderModel& decoder,
                                               const Montage& montage, RegionMode mode,
                                               const DecoderFactory& factory = {}, const AblationOptions& opts = {});

// --- topographic maps -----------------------------------------------------------

struct TopoGrid {
  int size = 0;
  double radius = 1.0;         // head radius in montage units
  std::vector<double> values;  // row-major, NaN outside the disc; row 0 is the nose side
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * size + col]; }
  // montage coordinates of a pixel centre
  double x_of(int col) const;
  double y_of(int row) const;
};

// Inverse-distance weighting (power 2) over the disc.
TopoGrid interpolate_topomap(const std::vector<double>& values, const Montage& montage, int size = 128);
StimulusImage render_topomap(const TopoGrid& grid, const Montage& montage, double vmin, double vmax);

// Writes <stem>.csv (label,x,y,value) and <stem>.png.
void topomap_export(const std::vector<double>& values, const Montage& montage, const std::filesystem::path& stem);

// --- reports ------------------------------------------------------------------------

struct AblationReport {
  std::string montage;
  Accuracy baseline;
  std::vector<ElectrodeKnockoutResult> electrodes;
  std::vector<RegionKnockoutResult> regions;
  int ways = 0, top_k = 0;
  std::uint64_t seed = 0;

  Json summary() const;
};

// electrode_knockout.csv, region_knockout.csv, topomaps for accuracy and drop, summary.json.
void write_ablation_outputs(const AblationReport& report, const Montage& montage, const std::filesystem::path& dir);

}  // namespace eegrecon
