#include "eegrecon/ablation.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "eegrecon/error.hpp"

namespace eegrecon {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Runs body(i) for i in [0, n) over up to `threads` workers; first error wins.
void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i; (i = next++) < n;) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int t = std::clamp(threads, 1, std::max(1, n));
  if (t == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < t; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::array<std::uint8_t, 3> colormap(double u) {
  // dark blue -> teal -> yellow
  static const double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  u = std::clamp(u, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(u));
  const double f = u - i;
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] * (1 - f) + stops[i + 1][k] * f));
  return c;
}

}  // namespace

std::string_view region_mode_name(RegionMode m) { return m == RegionMode::ZeroFill ? "zero-fill" : "retrain"; }

RegionMode parse_region_mode(std::string_view name) {
  if (name == "zero-fill") return RegionMode::ZeroFill;
  if (name == "retrain") return RegionMode::Retrain;
  fail(Errc::ConfigValidationError, "region mode must be zero-fill or retrain, got '" + std::string(name) + "'");
}

EegTrial knockout_channels(const EegTrial& trial, const std::vector<int>& channel_indices) {
  EegTrial out = trial;
  for (int c : channel_indices) {
    if (c < 0 || c >= trial.channels)
      fail(Errc::IndexOutOfRange, "channel " + std::to_string(c) + " outside [0, " + std::to_string(trial.channels) + ")");
    std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(c) * trial.samples, trial.samples, 0.0f);
  }
  return out;
}

EegTrial knockout_electrode(const EegTrial& trial, int channel_index) { return knockout_channels(trial, {channel_index}); }

Accuracy evaluate_accuracy(const DecoderModel& decoder, const std::vector<EegTrial>& trials, const AblationOptions& opts) {
  if (trials.empty()) fail(Errc::EmptySplit, "no trials to evaluate");
  const int k_classes = decoder.config().num_classes;
  const int ways = opts.ways > 0 ? opts.ways : k_classes;
  std::vector<int> labels;
  for (const auto& t : trials) labels.push_back(t.class_label);
  const auto scores = decode_batch(decoder, trials);
  return {topk_accuracy(scores, labels, ways, 1, opts.seed),
          topk_accuracy(scores, labels, ways, std::min(opts.top_k, ways), opts.seed)};
}

std::vector<ElectrodeKnockoutResult> electrode_sweep(const std::vector<EegTrial>& test, const DecoderModel& decoder,
                                                     const Montage& montage, const AblationOptions& opts) {
  if (decoder.config().channels != montage.size())
    fail(Errc::ChannelMismatch, "decoder expects " + std::to_string(decoder.config().channels) + " channels, montage " +
                                    montage.name + " has " + std::to_string(montage.size()));
  std::vector<ElectrodeKnockoutResult> out(montage.size());
  parallel_for(montage.size(), opts.threads, [&](int e) {
    std::vector<EegTrial> masked;
    masked.reserve(test.size());
    for (const auto& t : test) masked.push_back(knockout_electrode(t, e));
    const Accuracy a = evaluate_accuracy(decoder, masked, opts);
    out[e] = {montage.electrodes[e].label, montage.electrodes[e].region, a.top1, a.top5};
  });
  return out;
}

std::vector<RegionKnockoutResult> region_sweep(const std::vector<EegTrial>& test, const DecoderModel& decoder,
                                               const Montage& montage, RegionMode mode, const DecoderFactory& factory,
                                               const AblationOptions& opts) {
  constexpr Region kRegions[] = {Region::Frontal, Region::Central, Region::Parietal, Region::Occipital, Region::Temporal};
  for (Region r : kRegions)
    if (montage.indices_in(r).empty())
      fail(Errc::EmptyRegion, "montage " + montage.name + " has no " + std::string(region_name(r)) + " electrodes");
  if (mode == RegionMode::Retrain && !factory)
    fail(Errc::ConfigValidationError, "retrain mode needs a decoder factory");

  std::vector<RegionKnockoutResult> out(5);
  // retraining is itself heavy; keep it sequential
  const int threads = mode == RegionMode::Retrain ? 1 : opts.threads;
  parallel_for(5, threads, [&](int i) {
    const Region r = kRegions[i];
    const auto removed = montage.indices_in(r);
    RegionKnockoutResult res;
    res.region = r;
    res.mode = mode;
    res.remaining_channels = montage.size() - static_cast<int>(removed.size());
    Accuracy a;
    if (mode == RegionMode::ZeroFill) {
      std::vector<EegTrial> masked;
      for (const auto& t : test) masked.push_back(knockout_channels(t, removed));
      a = evaluate_accuracy(decoder, masked, opts);
    } else {
      std::vector<int> kept;
      for (int c = 0; c < montage.size(); ++c)
        if (std::find(removed.begin(), removed.end(), c) == removed.end()) kept.push_back(c);
      const DecoderModel reduced = factory(kept);
      std::vector<EegTrial> sel;
      for (const auto& t : test) sel.push_back(select_channels(t, kept, std::string(region_name(r))));
      a = evaluate_accuracy(reduced, sel, opts);
    }
    res.top1 = a.top1;
    res.top5 = a.top5;
    out[i] = res;
  });
  return out;
}

// --- topomaps ---------------------------------------------------------------------

double TopoGrid::x_of(int col) const { return (-1.0 + (2.0 * col + 1.0) / size) * radius; }
double TopoGrid::y_of(int row) const { return (1.0 - (2.0 * row + 1.0) / size) * radius; }

TopoGrid interpolate_topomap(const std::vector<double>& values, const Montage& montage, int size) {
  if (static_cast<int>(values.size()) != montage.size())
    fail(Errc::CountMismatch, std::to_string(values.size()) + " values for " + std::to_string(montage.size()) + " electrodes");
  if (montage.size() == 0) fail(Errc::EmptyInput, "empty montage");
  if (size < 8) fail(Errc::BadDimensions, "topomap size must be >= 8");
  TopoGrid g;
  g.size = size;
  double max_r = 0.0;
  for (const auto& e : montage.electrodes) max_r = std::max(max_r, std::hypot(e.x, e.y));
  g.radius = std::max(1.0, 1.05 * max_r);
  g.values.assign(static_cast<std::size_t>(size) * size, std::numeric_limits<double>::quiet_NaN());
  for (int row = 0; row < size; ++row)
    for (int col = 0; col < size; ++col) {
      const double x = g.x_of(col), y = g.y_of(row);
      if (x * x + y * y > g.radius * g.radius) continue;
      double num = 0.0, den = 0.0, exact = std::numeric_limits<double>::quiet_NaN();
      for (int e = 0; e < montage.size(); ++e) {
        const double d2 = std::pow(x - montage.electrodes[e].x, 2) + std::pow(y - montage.electrodes[e].y, 2);
        if (d2 < 1e-24) {
          exact = values[e];
          break;
        }
        num += values[e] / d2;  // power 2 on the distance
        den += 1.0 / d2;
      }
      g.values[static_cast<std::size_t>(row) * size + col] = std::isnan(exact) ? num / den : exact;
    }
  return g;
}

StimulusImage render_topomap(const TopoGrid& g, const Montage& montage, double vmin, double vmax) {
  StimulusImage img = make_image("topomap", g.size, g.size);
  std::fill(img.pixels.begin(), img.pixels.end(), 255);
  for (int row = 0; row < g.size; ++row)
    for (int col = 0; col < g.size; ++col) {
      const double v = g.at(row, col);
      if (std::isnan(v)) continue;
      const double u = vmax > vmin ? (v - vmin) / (vmax - vmin) : 0.5;
      const auto c = colormap(u);
      for (int k = 0; k < 3; ++k) img.pixels[img.index(row, col, k)] = c[k];
    }
  auto to_px = [&](double x, double y) {
    return std::pair<int, int>{static_cast<int>(std::floor((1.0 - y / g.radius) * g.size / 2.0)),
                               static_cast<int>(std::floor((x / g.radius + 1.0) * g.size / 2.0))};
  };
  // head outline
  for (int a = 0; a < 8 * g.size; ++a) {
    const double th = 2.0 * M_PI * a / (8 * g.size);
    const auto [r, c] = to_px(0.999 * g.radius * std::cos(th), 0.999 * g.radius * std::sin(th));
    if (r >= 0 && r < g.size && c >= 0 && c < g.size)
      for (int k = 0; k < 3; ++k) img.pixels[img.index(r, c, k)] = 0;
  }
  for (const auto& e : montage.electrodes) {
    const auto [r0, c0] = to_px(e.x, e.y);
    for (int r = r0 - 1; r <= r0 + 1; ++r)
      for (int c = c0 - 1; c <= c0 + 1; ++c)
        if (r >= 0 && r < g.size && c >= 0 && c < g.size)
          for (int k = 0; k < 3; ++k) img.pixels[img.index(r, c, k)] = 0;
  }
  return img;
}

void topomap_export(const std::vector<double>& values, const Montage& montage, const std::filesystem::path& stem) {
  const TopoGrid g = interpolate_topomap(values, montage);
  std::string csv = "label,x,y,value\n";
  for (int e = 0; e < montage.size(); ++e)
    csv += montage.electrodes[e].label + "," + fmt(montage.electrodes[e].x) + "," + fmt(montage.electrodes[e].y) + "," +
           fmt(values[e]) + "\n";
  write_text(stem.string() + ".csv", csv);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  write_png(stem.string() + ".png", render_topomap(g, montage, *lo, *hi));
}

// --- reports --------------------------------------------------------------------------

Json AblationReport::summary() const {
  Json j{{"montage", montage},
         {"ways", ways},
         {"top_k", top_k},
         {"seed", seed},
         {"baseline", {{"top1", baseline.top1}, {"top5", baseline.top5}}},
         {"electrodes", Json::array()},
         {"regions", Json::array()}};
  for (const auto& e : electrodes)
    j["electrodes"].push_back({{"label", e.label},
                               {"region", region_name(e.region)},
                               {"top1", e.top1},
                               {"top5", e.top5},
                               {"top1_drop", baseline.top1 - e.top1},
                               {"top5_drop", baseline.top5 - e.top5}});
  for (const auto& r : regions)
    j["regions"].push_back({{"region", region_name(r.region)},
                            {"mode", region_mode_name(r.mode)},
                            {"remaining_channels", r.remaining_channels},
                            {"top1", r.top1},
                            {"top5", r.top5},
                            {"top1_drop", baseline.top1 - r.top1},
                            {"top5_drop", baseline.top5 - r.top5}});
  if (!electrodes.empty()) {
    const auto worst = std::min_element(electrodes.begin(), electrodes.end(),
                                        [](const auto& a, const auto& b) { return a.top1 < b.top1; });
    j["largest_electrode_drop"] = {{"label", worst->label}, {"top1_drop", baseline.top1 - worst->top1}};
  }
  if (!regions.empty()) {
    const auto worst = std::min_element(regions.begin(), regions.end(),
                                        [](const auto& a, const auto& b) { return a.top1 < b.top1; });
    j["largest_region_drop"] = {{"region", region_name(worst->region)}, {"top1_drop", baseline.top1 - worst->top1}};
  }
  return j;
}

void write_ablation_outputs(const AblationReport& report, const Montage& montage, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (!report.electrodes.empty()) {
    if (static_cast<int>(report.electrodes.size()) != montage.size())
      fail(Errc::CountMismatch, "electrode results do not cover montage " + montage.name);
    std::string csv = "label,region,top1,top5,top1_drop,top5_drop\n";
    std::vector<double> acc, drop;
    for (const auto& e : report.electrodes) {
      csv += e.label + "," + std::string(region_name(e.region)) + "," + fmt(e.top1) + "," + fmt(e.top5) + "," +
             fmt(report.baseline.top1 - e.top1) + "," + fmt(report.baseline.top5 - e.top5) + "\n";
      acc.push_back(e.top1);
      drop.push_back(report.baseline.top1 - e.top1);
    }
    write_text(dir / "electrode_knockout.csv", csv);
    topomap_export(acc, montage, dir / "topomap_top1");
    topomap_export(drop, montage, dir / "topomap_top1_drop");
  }
  if (!report.regions.empty()) {
    std::string csv = "region,mode,remaining_channels,top1,top5,top1_drop,top5_drop\n";
    for (const auto& r : report.regions)
      csv += std::string(region_name(r.region)) + "," + std::string(region_mode_name(r.mode)) + "," +
             std::to_string(r.remaining_channels) + "," + fmt(r.top1) + "," + fmt(r.top5) + "," +
             fmt(report.baseline.top1 - r.top1) + "," + fmt(report.baseline.top5 - r.top5) + "\n";
    write_text(dir / "region_knockout.csv", csv);
  }
  write_text(dir / "summary.json", report.summary().dump(2) + "\n");
}

}  // namespace eegrecon
