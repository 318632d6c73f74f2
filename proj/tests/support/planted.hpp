#pragma once

// Synthetic recordings on a shipped layout (std-128 by default) with a single
// planted occipital channel, chosen outside the coverage-preserving
// 24-channel subsample when there is one.

#include <algorithm>
#include <memory>

#include "eegrecon/dataset.hpp"
#include "eegrecon/decoder.hpp"
#include "eegrecon/montage.hpp"
#include "support/tmpdir.hpp"

namespace testsupport {

struct PlantedOptions {
  int n_per_class = 1200;
  int hidden = 32;
  int epochs = 20;
  std::uint64_t seed = 11;
  std::string root = "std-128";
};

struct PlantedStudy {
  TempDir dir;
  eegrecon::Montage montage;
  eegrecon::Montage reduced;  // coverage-preserving 24
  std::string informative_label;
  int informative_index = -1;
  std::unique_ptr<eegrecon::Dataset> dataset;
  std::vector<eegrecon::EegTrial> train, val, test;
  int num_classes = 4;

  explicit PlantedStudy(const PlantedOptions& o = {}) {
    using namespace eegrecon;
    montage = load_montage(default_montage_dir(), o.root);
    reduced = subsample(montage, 24, SubsamplePolicy::CoveragePreserving);
    for (int i : montage.indices_in(Region::Occipital))
      if (reduced.index_of(montage.electrodes[i].label) < 0) {
        informative_index = i;
        informative_label = montage.electrodes[i].label;
        break;
      }
    if (informative_index < 0) {
      informative_index = montage.indices_in(Region::Occipital).at(0);
      informative_label = montage.electrodes[informative_index].label;
    }

    SyntheticSpec spec;
    spec.channels = montage.size();
    spec.electrode_labels = montage.labels();
    spec.informative_channels = {informative_index};
    spec.n_per_class = o.n_per_class;
    spec.num_classes = num_classes;
    spec.seed = o.seed;
    spec.image_size = 16;
    spec.ratios = {0.75, 0.1, 0.15};
    generate_synthetic(spec, dir.path());
    dataset = std::make_unique<Dataset>(load_dataset(dir.path()));
    train = load("train", montage);
    val = load("val", montage);
    test = load("test", montage);
  }

  std::vector<eegrecon::EegTrial> load(std::string_view split, const eegrecon::Montage& m) const {
    const auto rows = eegrecon::channel_map(dataset->manifest(), m);
    std::vector<eegrecon::EegTrial> out;
    for (const auto& t : dataset->load_split(split)) out.push_back(eegrecon::select_channels(t, rows, m.name));
    return out;
  }

  eegrecon::DecoderModel train_on(const std::vector<eegrecon::EegTrial>& tr, const std::vector<eegrecon::EegTrial>& va,
                                  int channels, const std::string& name, const PlantedOptions& o) const {
    eegrecon::DecoderConfig cfg;
    cfg.channels = channels;
    cfg.num_classes = num_classes;
    cfg.hidden = o.hidden;
    cfg.montage = name;
    cfg.class_names = dataset->manifest().class_names;
    eegrecon::DecoderHyper h;
    h.epochs = o.epochs;
    return eegrecon::train_decoder(tr, va, cfg, h, o.seed + 1);
  }
};

}  // namespace testsupport
