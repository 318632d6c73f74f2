#pragma once

// Independent reference classifiers for planted synthetic data.

#include <cstddef>
#include <vector>

#include "eegrecon/dataset.hpp"

namespace testsupport {

// Nearest-centroid (a linear rule) on the mean over `channels` of each trial.
struct CentroidOracle {
  std::vector<int> channels;
  std::vector<std::vector<double>> centroids;

  static std::vector<double> feature(const eegrecon::EegTrial& t, const std::vector<int>& channels) {
    std::vector<double> f(t.samples, 0.0);
    for (int c : channels)
      for (int s = 0; s < t.samples; ++s) f[s] += t.at(c, s) / channels.size();
    return f;
  }

  void fit(const std::vector<eegrecon::EegTrial>& train, int k) {
    centroids.assign(k, {});
    std::vector<int> n(k, 0);
    for (const auto& t : train) {
      auto f = feature(t, channels);
      auto& c = centroids[t.class_label];
      if (c.empty()) c.assign(f.size(), 0.0);
      for (std::size_t i = 0; i < f.size(); ++i) c[i] += f[i];
      n[t.class_label]++;
    }
    for (int j = 0; j < k; ++j)
      for (auto& v : centroids[j]) v /= n[j];
  }

  int predict(const eegrecon::EegTrial& t) const {
    auto f = feature(t, channels);
    int best = 0;
    double best_d = 1e300;
    for (std::size_t j = 0; j < centroids.size(); ++j) {
      double d = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) d += (f[i] - centroids[j][i]) * (f[i] - centroids[j][i]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    return best;
  }

  double accuracy(const std::vector<eegrecon::EegTrial>& trials) const {
    if (trials.empty()) return 0.0;
    int ok = 0;
    for (const auto& t : trials) ok += predict(t) == t.class_label;
    return static_cast<double>(ok) / trials.size();
  }
};

}  // namespace testsupport
