#include "traplab/clustering.hpp"

#include "traplab/losses.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace traplab {

namespace {

// Condensed upper-triangular storage for a symmetric dissimilarity matrix.
class CondensedMatrix {
 public:
  explicit CondensedMatrix(Index n) : n_(n), data_(static_cast<std::size_t>(n * (n - 1) / 2)) {}

  double& operator()(Index i, Index j) { return data_[offset(i, j)]; }
  double operator()(Index i, Index j) const { return data_[offset(i, j)]; }

 private:
  std::size_t offset(Index i, Index j) const {
    if (i > j) std::swap(i, j);
    return static_cast<std::size_t>(n_ * i - i * (i + 1) / 2 + (j - i - 1));
  }

  Index n_;
  std::vector<double> data_;
};

struct Merge {
  double height;
  Index a;
  Index b;
};

Index find_root(std::vector<Index>& parent, Index i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

}  // namespace

std::vector<int> agglomerative_average_linkage(const MatrixXd& points, int clusters) {
  const Index n = points.cols();
  if (n == 0) return {};
  if (clusters < 1) throw DomainError("agglomerative clustering needs at least one cluster");
  if (clusters >= n) {
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
  }

  CondensedMatrix dist(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) dist(i, j) = (points.col(i) - points.col(j)).norm();

  std::vector<char> active(n, 1);
  std::vector<Index> size(n, 1);
  std::vector<Merge> merges;
  merges.reserve(n - 1);
  std::vector<Index> chain;
  Index remaining = n;
  Index first_active = 0;

  while (remaining > 1) {
    if (chain.empty()) {
      while (!active[first_active]) ++first_active;
      chain.push_back(first_active);
    }
    const Index a = chain.back();
    const Index prev = chain.size() >= 2 ? chain[chain.size() - 2] : -1;
    Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    if (prev >= 0) {
      best = prev;
      best_d = dist(a, prev);
    }
    for (Index c = 0; c < n; ++c) {
      if (!active[c] || c == a) continue;
      const double d = dist(a, c);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best != prev) {
      chain.push_back(best);
      continue;
    }
    chain.pop_back();
    chain.pop_back();
    // The surviving slot keeps the smaller index; each slot's cluster always
    // contains the point with the slot's index.
    const Index keep = std::min(a, best);
    const Index drop = std::max(a, best);
    merges.push_back({best_d, keep, drop});
    const double wk = static_cast<double>(size[keep]);
    const double wd = static_cast<double>(size[drop]);
    for (Index c = 0; c < n; ++c) {
      if (!active[c] || c == keep || c == drop) continue;
      dist(keep, c) = (wk * dist(keep, c) + wd * dist(drop, c)) / (wk + wd);
    }
    size[keep] += size[drop];
    active[drop] = 0;
    --remaining;
  }

  std::stable_sort(merges.begin(), merges.end(),
                   [](const Merge& x, const Merge& y) { return x.height < y.height; });
  std::vector<Index> parent(n);
  std::iota(parent.begin(), parent.end(), Index{0});
  for (Index m = 0; m < n - clusters; ++m) {
    const Index ra = find_root(parent, merges[m].a);
    const Index rb = find_root(parent, merges[m].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> ids(n, -1);
  std::vector<int> root_id(n, -1);
  int next = 0;
  for (Index i = 0; i < n; ++i) {
    const Index r = find_root(parent, i);
    if (root_id[r] < 0) root_id[r] = next++;
    ids[i] = root_id[r];
  }
  return ids;
}

KMeansResult lloyd_kmeans(const MatrixXd& points, int k, Rng& rng, int max_iterations) {
  const Index n = points.cols();
  if (k < 1 || k > n) throw DomainError("lloyd_kmeans: k must be in [1, number of points]");
  KMeansResult out;
  out.centroids.resize(points.rows(), k);

  // Farthest-first seeding.
  VectorXd min_d2 = VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  Index next = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
  for (int c = 0; c < k; ++c) {
    out.centroids.col(c) = points.col(next);
    min_d2 = min_d2.cwiseMin((points.colwise() - points.col(next)).colwise().squaredNorm().transpose());
    if (c + 1 < k) next = argmax(min_d2);
  }

  out.assignment.assign(n, -1);
  for (out.iterations = 0; out.iterations < max_iterations; ++out.iterations) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const Index best = argmin((out.centroids.colwise() - points.col(i)).colwise().squaredNorm());
      if (out.assignment[i] != static_cast<int>(best)) {
        out.assignment[i] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) break;
    MatrixXd sums = MatrixXd::Zero(points.rows(), k);
    std::vector<Index> counts(k, 0);
    for (Index i = 0; i < n; ++i) {
      sums.col(out.assignment[i]) += points.col(i);
      ++counts[out.assignment[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) out.centroids.col(c) = sums.col(c) / static_cast<double>(counts[c]);
  }
  return out;
}

std::vector<Index> largest_remainder_quotas(std::span<const Index> sizes, Index n) {
  const Index total = std::accumulate(sizes.begin(), sizes.end(), Index{0});
  std::vector<Index> quotas(sizes.size(), 0);
  if (total == 0 || n == 0) return quotas;
  std::vector<Index> remainder(sizes.size());
  Index assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    // Exact integer arithmetic: quota = floor(n * size / total).
    quotas[i] = n * sizes[i] / total;
    remainder[i] = n * sizes[i] % total;
    assigned += quotas[i];
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++quotas[order[k % order.size()]];
  return quotas;
}

}  // namespace traplab
