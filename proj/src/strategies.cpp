#include "traplab/strategies.hpp"

#include "traplab/clustering.hpp"
#include "traplab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace traplab {

namespace {

struct NamedStrategy {
  StrategyKind kind;
  std::string_view name;
};

constexpr std::array<NamedStrategy, 7> kNames{{
    {StrategyKind::Random, "random"},
    {StrategyKind::Confidence, "confidence"},
    {StrategyKind::Margin, "margin"},
    {StrategyKind::Entropy, "entropy"},
    {StrategyKind::InformativeDiverse, "informative-diverse"},
    {StrategyKind::MarginClusterMean, "margin-cluster-mean"},
    {StrategyKind::KCenter, "k-center"},
}};

}  // namespace

std::string_view to_string(StrategyKind kind) {
  for (const auto& n : kNames)
    if (n.kind == kind) return n.name;
  return "random";
}

std::string strategy_names() {
  std::string out;
  for (const auto& n : kNames) {
    if (!out.empty()) out += ", ";
    out += n.name;
  }
  return out;
}

StrategyKind parse_strategy(std::string_view name) {
  for (const auto& n : kNames)
    if (n.name == name) return n.kind;
  throw ValidationError("unknown strategy '" + std::string(name) + "'; valid strategies: " + strategy_names());
}

void SelectionContext::validate(Index n) const {
  const Index pool = pool_size();
  if (n < 0) throw ValidationError("selection size must be non-negative");
  if (n > static_cast<Index>(unlabeled.size()))
    throw ValidationError("cannot select " + std::to_string(n) + " items from " +
                          std::to_string(unlabeled.size()) + " unlabeled");
  if (static_cast<Index>(labeled.size() + unlabeled.size()) != pool)
    throw ValidationError("labeled and unlabeled sets do not cover the pool");
  std::vector<char> seen(pool, 0);
  for (const auto* set : {&labeled, &unlabeled})
    for (const Index i : *set) {
      if (i < 0 || i >= pool) throw ValidationError("selection context: index outside the pool");
      if (seen[i]) throw ValidationError("selection context: index " + std::to_string(i) + " appears twice");
      seen[i] = 1;
    }
}

double max_probability(const Eigen::Ref<const VectorXd>& p) { return p.maxCoeff(); }

double top2_margin(const Eigen::Ref<const VectorXd>& p) {
  double first = -std::numeric_limits<double>::infinity();
  double second = 0.0;
  bool have_second = false;
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) > first) {
      if (std::isfinite(first)) {
        second = first;
        have_second = true;
      }
      first = p(i);
    } else if (!have_second || p(i) > second) {
      second = p(i);
      have_second = true;
    }
  }
  return first - second;
}

double shannon_entropy(const Eigen::Ref<const VectorXd>& p) {
  double h = 0;
  for (Index i = 0; i < p.size(); ++i)
    if (p(i) > 0) h -= p(i) * std::log(p(i));
  return h;
}

namespace {

void require_probabilities(const SelectionContext& ctx) {
  if (ctx.probabilities.cols() != ctx.pool_size() || ctx.probabilities.rows() == 0)
    throw ValidationError("strategy needs classifier probabilities for every pool item");
}

void require_embeddings(const SelectionContext& ctx) {
  if (!ctx.embeddings) throw ValidationError("strategy needs pool embeddings");
}

/// The n unlabeled items with the best score; `ascending` picks the smallest.
/// Ties go to the lowest pool index.
std::vector<Selected> rank_unlabeled(const SelectionContext& ctx, Index n,
                                     const std::function<double(const Eigen::Ref<const VectorXd>&)>& score,
                                     bool ascending) {
  std::vector<Selected> scored;
  scored.reserve(ctx.unlabeled.size());
  for (const Index i : ctx.unlabeled) scored.push_back({i, score(ctx.probabilities.col(i))});
  const auto better = [ascending](const Selected& a, const Selected& b) {
    if (a.score != b.score) return ascending ? a.score < b.score : a.score > b.score;
    return a.index < b.index;
  };
  std::partial_sort(scored.begin(), scored.begin() + n, scored.end(), better);
  scored.resize(n);
  return scored;
}

}  // namespace

std::vector<Selected> select_random(const SelectionContext& ctx, Index n, Rng& rng) {
  ctx.validate(n);
  std::vector<Index> items = ctx.unlabeled;
  std::vector<Selected> out;
  out.reserve(n);
  for (Index k = 0; k < n; ++k) {
    const auto j = k + static_cast<Index>(uniform_index(rng, items.size() - k));
    std::swap(items[k], items[j]);
    out.push_back({items[k], static_cast<double>(k)});
  }
  return out;
}

std::vector<Selected> select_confidence(const SelectionContext& ctx, Index n) {
  ctx.validate(n);
  require_probabilities(ctx);
  return rank_unlabeled(ctx, n, max_probability, true);
}

std::vector<Selected> select_margin(const SelectionContext& ctx, Index n) {
  ctx.validate(n);
  require_probabilities(ctx);
  return rank_unlabeled(ctx, n, top2_margin, true);
}

std::vector<Selected> select_entropy(const SelectionContext& ctx, Index n) {
  ctx.validate(n);
  require_probabilities(ctx);
  return rank_unlabeled(ctx, n, shannon_entropy, false);
}

std::vector<Selected> select_kcenter(const SelectionContext& ctx, Index n) {
  ctx.validate(n);
  require_embeddings(ctx);
  const MatrixXd& x = *ctx.embeddings;
  const Index m = static_cast<Index>(ctx.unlabeled.size());
  std::vector<Selected> out;
  if (n == 0) return out;

  MatrixXd candidates(x.rows(), m);
  for (Index k = 0; k < m; ++k) candidates.col(k) = x.col(ctx.unlabeled[k]);
  // Squared distances: the argmax matches the Euclidean one.
  VectorXd min_d2 = VectorXd::Constant(m, std::numeric_limits<double>::infinity());
  const auto absorb = [&](const auto& center) {
    min_d2 = min_d2.cwiseMin((candidates.colwise() - center).colwise().squaredNorm().transpose());
  };
  for (const Index c : ctx.labeled) absorb(x.col(c));

  std::vector<char> taken(m, 0);
  for (Index step = 0; step < n; ++step) {
    Index best = -1;
    if (ctx.labeled.empty() && step == 0) {
      best = 0;
    } else {
      for (Index k = 0; k < m; ++k)
        if (!taken[k] && (best < 0 || min_d2(k) > min_d2(best))) best = k;
    }
    const double score = std::isfinite(min_d2(best)) ? std::sqrt(min_d2(best)) : 0.0;
    out.push_back({ctx.unlabeled[best], score});
    taken[best] = 1;
    absorb(candidates.col(best));
  }
  return out;
}

int default_cluster_count(Index pool_size) {
  return static_cast<int>(std::min<Index>(20, static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(pool_size))))));
}

std::vector<int> cluster_pool(const MatrixXd& embeddings, int clusters, Index agglomerative_limit,
                              std::uint64_t seed) {
  const Index n = embeddings.cols();
  if (n <= agglomerative_limit) return agglomerative_average_linkage(embeddings, clusters);

  // Cluster a seeded subsample, then attach every point to the cluster of
  // its nearest subsample point.
  Rng rng(seed);
  std::vector<Index> all(n);
  std::iota(all.begin(), all.end(), Index{0});
  for (Index k = 0; k < agglomerative_limit; ++k)
    std::swap(all[k], all[k + static_cast<Index>(uniform_index(rng, n - k))]);
  all.resize(agglomerative_limit);
  std::sort(all.begin(), all.end());
  MatrixXd sample(embeddings.rows(), agglomerative_limit);
  for (Index k = 0; k < agglomerative_limit; ++k) sample.col(k) = embeddings.col(all[k]);
  const auto sample_ids = agglomerative_average_linkage(sample, clusters);
  std::vector<int> ids(n);
  for (Index i = 0; i < n; ++i)
    ids[i] = sample_ids[argmin((sample.colwise() - embeddings.col(i)).colwise().squaredNorm())];
  return ids;
}

std::vector<Selected> select_informative_diverse(const SelectionContext& ctx, Index n) {
  ctx.validate(n);
  require_probabilities(ctx);
  require_embeddings(ctx);
  const Index pool = ctx.pool_size();
  const int clusters = ctx.params.clusters > 0 ? ctx.params.clusters : default_cluster_count(pool);

  std::vector<int> local_assignment;
  const std::vector<int>* assignment = nullptr;
  if (ctx.cache && ctx.cache->embeddings == ctx.embeddings && ctx.cache->clusters == clusters) {
    assignment = &ctx.cache->assignment;
  } else {
    local_assignment = cluster_pool(*ctx.embeddings, clusters, ctx.params.agglomerative_limit, 0);
    if (ctx.cache) {
      *ctx.cache = {ctx.embeddings, clusters, std::move(local_assignment)};
      assignment = &ctx.cache->assignment;
    } else {
      assignment = &local_assignment;
    }
  }

  const int found = *std::max_element(assignment->begin(), assignment->end()) + 1;
  std::vector<Index> sizes(found, 0);
  for (const int c : *assignment) ++sizes[c];
  const auto quotas = largest_remainder_quotas(sizes, n);

  // Unlabeled members per cluster, most uncertain (smallest margin) first.
  std::vector<std::vector<Selected>> members(found);
  std::vector<Selected> everyone;
  for (const Index i : ctx.unlabeled) {
    const Selected s{i, top2_margin(ctx.probabilities.col(i))};
    members[(*assignment)[i]].push_back(s);
    everyone.push_back(s);
  }
  const auto by_uncertainty = [](const Selected& a, const Selected& b) {
    return a.score != b.score ? a.score < b.score : a.index < b.index;
  };
  std::vector<Selected> out;
  std::vector<char> taken(pool, 0);
  for (int c = 0; c < found; ++c) {
    auto& list = members[c];
    std::sort(list.begin(), list.end(), by_uncertainty);
    for (Index k = 0; k < std::min<Index>(quotas[c], static_cast<Index>(list.size())); ++k) {
      out.push_back(list[k]);
      taken[list[k].index] = 1;
    }
  }
  if (static_cast<Index>(out.size()) < n) {
    std::sort(everyone.begin(), everyone.end(), by_uncertainty);
    for (const auto& s : everyone) {
      if (static_cast<Index>(out.size()) == n) break;
      if (!taken[s.index]) {
        out.push_back(s);
        taken[s.index] = 1;
      }
    }
  }
  return out;
}

std::vector<Selected> select_margin_cluster_mean(const SelectionContext& ctx, Index n, Rng& rng) {
  ctx.validate(n);
  require_probabilities(ctx);
  require_embeddings(ctx);
  if (n == 0) return {};
  std::vector<Selected> region;
  for (const Index i : ctx.unlabeled) {
    const double m = top2_margin(ctx.probabilities.col(i));
    if (m < ctx.params.margin_tau) region.push_back({i, m});
  }
  if (region.empty()) return select_margin(ctx, n);

  std::vector<Selected> out;
  if (static_cast<Index>(region.size()) <= n) {
    std::sort(region.begin(), region.end(), [](const Selected& a, const Selected& b) {
      return a.score != b.score ? a.score < b.score : a.index < b.index;
    });
    out = region;
    if (static_cast<Index>(out.size()) < n) {
      SelectionContext rest = ctx;
      rest.unlabeled.clear();
      std::vector<char> in_region(ctx.pool_size(), 0);
      for (const auto& s : region) in_region[s.index] = 1;
      for (const Index i : ctx.unlabeled)
        if (!in_region[i]) rest.unlabeled.push_back(i);
      const auto fill = rank_unlabeled(rest, n - static_cast<Index>(out.size()), top2_margin, true);
      out.insert(out.end(), fill.begin(), fill.end());
    }
    return out;
  }

  const MatrixXd& x = *ctx.embeddings;
  MatrixXd points(x.rows(), static_cast<Index>(region.size()));
  for (std::size_t k = 0; k < region.size(); ++k) points.col(k) = x.col(region[k].index);
  const auto km = lloyd_kmeans(points, static_cast<int>(n), rng, ctx.params.kmeans_max_iterations);
  std::vector<char> taken(region.size(), 0);
  for (Index c = 0; c < km.centroids.cols(); ++c) {
    const VectorXd d2 = (points.colwise() - km.centroids.col(c)).colwise().squaredNorm().transpose();
    Index best = -1;
    for (Index k = 0; k < d2.size(); ++k)
      if (!taken[k] && (best < 0 || d2(k) < d2(best))) best = k;
    taken[best] = 1;
    out.push_back(region[best]);
  }
  return out;
}

std::vector<Selected> select(StrategyKind kind, const SelectionContext& ctx, Index n, Rng& rng) {
  switch (kind) {
    case StrategyKind::Random: return select_random(ctx, n, rng);
    case StrategyKind::Confidence: return select_confidence(ctx, n);
    case StrategyKind::Margin: return select_margin(ctx, n);
    case StrategyKind::Entropy: return select_entropy(ctx, n);
    case StrategyKind::InformativeDiverse: return select_informative_diverse(ctx, n);
    case StrategyKind::MarginClusterMean: return select_margin_cluster_mean(ctx, n, rng);
    case StrategyKind::KCenter: return select_kcenter(ctx, n);
  }
  throw ValidationError("unknown strategy");
}

}  // namespace traplab
