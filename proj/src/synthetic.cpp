#include "traplab/synthetic.hpp"

#include <algorithm>
#include <numeric>

namespace traplab {

void MixtureConfig::validate() const {
  if (classes < 2) throw ValidationError("mixture needs at least two classes");
  if (dim < classes) throw ValidationError("mixture dimension must be at least the class count");
  if (!(sigma > 0)) throw ValidationError("mixture sigma must be positive");
  if (!(separation >= 0)) throw ValidationError("mixture separation must be non-negative");
  if (pool_size < 1 || holdout_size < 0) throw ValidationError("mixture split sizes are invalid");
  if (!class_weights.empty()) {
    if (static_cast<int>(class_weights.size()) != classes)
      throw ValidationError("class_weights must have one entry per class");
    for (const double w : class_weights)
      if (!(w > 0)) throw ValidationError("class weights must be positive");
  }
}

namespace {

int draw_class(const std::vector<double>& cumulative, Rng& rng) {
  const double u = uniform01(rng) * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(), cumulative.size() - 1));
}

LabeledSamples draw(const MixtureConfig& cfg, Index count, Rng& rng) {
  std::vector<double> weights = cfg.class_weights;
  if (weights.empty()) weights.assign(cfg.classes, 1.0);
  std::vector<double> cumulative(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cumulative.begin());
  const double offset = cfg.separation * cfg.sigma / std::sqrt(2.0);

  LabeledSamples out;
  out.features.resize(cfg.dim, count);
  out.labels.resize(count);
  for (Index i = 0; i < count; ++i) {
    const int c = draw_class(cumulative, rng);
    out.labels[i] = c;
    for (Index d = 0; d < cfg.dim; ++d) out.features(d, i) = cfg.sigma * standard_normal(rng);
    out.features(c, i) += offset;
  }
  return out;
}

std::string class_name(int c) { return "c" + std::to_string(c); }

}  // namespace

LabeledSamples sample_mixture(const MixtureConfig& cfg, Index count, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  return draw(cfg, count, rng);
}

PoolData make_gaussian_mixture(const MixtureConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const LabeledSamples pool = draw(cfg, cfg.pool_size, rng);
  const LabeledSamples holdout = draw(cfg, cfg.holdout_size, rng);

  PoolData out;
  std::vector<std::string> names;
  for (int c = 0; c < cfg.classes; ++c) names.push_back(class_name(c));
  out.classes = ClassTable(names);
  out.truth.emplace();
  out.pool.features = pool.features;
  for (Index i = 0; i < pool.size(); ++i) {
    out.pool.ids.push_back("p" + std::to_string(i));
    (*out.truth)[out.pool.ids.back()] = class_name(pool.labels[i]);
  }
  if (cfg.holdout_size > 0) {
    out.holdout.emplace();
    out.holdout->features = holdout.features;
    for (Index i = 0; i < holdout.size(); ++i) {
      out.holdout->ids.push_back("h" + std::to_string(i));
      (*out.truth)[out.holdout->ids.back()] = class_name(holdout.labels[i]);
    }
  }
  return out;
}

}  // namespace traplab
