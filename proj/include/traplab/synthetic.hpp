#pragma once

#include "traplab/dataset.hpp"

#include <cstdint>
#include <vector>

namespace traplab {

/// Isotropic Gaussian mixture standing in for pre-extracted base features.
/// Class c has mean (separation * sigma / sqrt(2)) * e_c, so every pair of
/// class means is exactly separation * sigma apart.
struct MixtureConfig {
  int classes = 10;
  Index dim = 32;
  double sigma = 1.0;
  double separation = 2.0;
  Index pool_size = 5000;
  Index holdout_size = 1000;
  // Relative class frequencies; empty means balanced.
  std::vector<double> class_weights;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Pool, holdout, class table and ground truth for both splits. Class names
/// are "c0".."c{K-1}"; ids are "p<i>" (pool) and "h<i>" (holdout).
PoolData make_gaussian_mixture(const MixtureConfig& cfg);

/// Labeled samples from the same mixture (for example to pretrain an
/// embedding on data disjoint from the pool).
LabeledSamples sample_mixture(const MixtureConfig& cfg, Index count, std::uint64_t seed);

}  // namespace traplab
