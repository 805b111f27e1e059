#pragma once

// Small network configs shared by the unit and acceptance suites.

#include "dvkit/ctdnn.hpp"
#include "dvkit/feature.hpp"
#include "dvkit/rng.hpp"

namespace testutil {

// Small enough that exhaustive finite differences stay fast.
inline dvkit::CtDnnConfig tiny_config(int n_speakers = 2) {
  dvkit::CtDnnConfig c;
  c.input_mels = 8;
  c.splice = {4, 4};
  c.conv1 = {2, 3, 3, 2};  // 9x8 -> 7x6 -> pool -> 7x3
  c.conv2 = {3, 3, 2, 2};  // 7x3 -> 5x2 -> pool -> 5x1
  c.bottleneck_dim = 16;
  c.td1_offsets = {-2, 0, 2};
  c.td2_offsets = {-4, 0, 4};
  c.td_affine_dim = 8;
  c.pnorm_group = 4;
  c.feature_dim = 6;
  c.n_speakers = n_speakers;
  return c;
}

// Mid-sized config for forward-oracle and translation checks.
inline dvkit::CtDnnConfig small_config(int n_speakers = 5) {
  dvkit::CtDnnConfig c;
  c.input_mels = 10;
  c.splice = {4, 4};
  c.conv1 = {4, 3, 3, 2};  // 9x10 -> 7x8 -> pool -> 7x4
  c.conv2 = {6, 3, 3, 2};  // 7x4 -> 5x2 -> pool -> 5x1
  c.bottleneck_dim = 24;
  c.td1_offsets = {-2, 0, 2};
  c.td2_offsets = {-4, 0, 4};
  c.td_affine_dim = 16;
  c.pnorm_group = 4;
  c.feature_dim = 12;
  c.n_speakers = n_speakers;
  return c;
}

inline dvkit::FeatureMatrix random_spliced(const dvkit::CtDnnConfig& c, int t,
                                           std::uint64_t seed) {
  dvkit::FeatureMatrix m(t, (c.splice.left + c.splice.right + 1) * c.input_mels);
  dvkit::Rng rng(seed);
  for (double& v : m.values) v = rng.uniform(-1.0, 1.0);
  return m;
}

inline std::vector<int> random_labels(int t, int n_speakers, std::uint64_t seed) {
  std::vector<int> labels(t);
  dvkit::Rng rng(seed);
  for (int& l : labels)
    l = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_speakers)));
  return labels;
}

}  // namespace testutil
