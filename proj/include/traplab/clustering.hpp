#pragma once

#include "traplab/core.hpp"

#include <span>
#include <vector>

namespace traplab {

/// Average-linkage agglomerative clustering of the columns of `points`
/// (Euclidean dissimilarity), cut at `clusters` clusters. Uses the
/// nearest-neighbour chain algorithm: O(N^2) time and O(N^2) memory.
/// Cluster ids are numbered in order of each cluster's lowest member index.
std::vector<int> agglomerative_average_linkage(const MatrixXd& points, int clusters);

struct KMeansResult {
  MatrixXd centroids;            // D x k
  std::vector<int> assignment;   // per column of `points`
  int iterations = 0;
};

/// Lloyd iterations from a farthest-first seeding whose first center is drawn
/// from `rng`. Empty clusters keep their previous centroid; ties go to the
/// lowest index.
KMeansResult lloyd_kmeans(const MatrixXd& points, int k, Rng& rng, int max_iterations = 100);

/// Splits n slots across groups in proportion to `sizes` by the largest
/// remainder method. Equal remainders favour the lower group index.
std::vector<Index> largest_remainder_quotas(std::span<const Index> sizes, Index n);

}  // namespace traplab
