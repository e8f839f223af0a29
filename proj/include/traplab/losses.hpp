#pragma once

#include "traplab/core.hpp"

#include <algorithm>
#include <string_view>

namespace traplab {

/// Euclidean distance between two vectors of equal length.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar distance(const Eigen::MatrixBase<DerivedA>& a,
                                   const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size())
    throw DimensionError("distance: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  return (a - b).norm();
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar squared_distance(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw DimensionError("squared_distance: dimension mismatch");
  return (a - b).squaredNorm();
}

/// Hinge on the anchor-positive vs anchor-negative gap:
/// max(d_ap - d_an + margin, 0). Written as (d_ap + margin) - d_an so that
/// the zero region coincides exactly with TripletKind::Easy.
template <typename Scalar>
Scalar triplet_loss(Scalar d_ap, Scalar d_an, Scalar margin) {
  return std::max((d_ap + margin) - d_an, Scalar(0));
}

enum class TripletKind { Easy, SemiHard, Hard };

inline std::string_view to_string(TripletKind k) {
  switch (k) {
    case TripletKind::Easy: return "easy";
    case TripletKind::SemiHard: return "semi-hard";
    case TripletKind::Hard: return "hard";
  }
  return "easy";
}

template <typename Scalar>
TripletKind classify_triplet(Scalar d_ap, Scalar d_an, Scalar margin) {
  if (d_an <= d_ap) return TripletKind::Hard;
  if (d_an >= d_ap + margin) return TripletKind::Easy;
  return TripletKind::SemiHard;
}

/// Column-wise numerically stable softmax.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const Scalar top = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - top).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -log(p[label]) with p floored at 1e-12.
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& probs, Index label) {
  using Scalar = typename Derived::Scalar;
  if (label < 0 || label >= probs.size()) throw DomainError("cross_entropy: label out of range");
  return -std::log(std::max(probs(label), static_cast<Scalar>(kProbabilityFloor)));
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived>& v) {
  const auto& values = v.eval();
  Index best = 0;
  for (Index i = 1; i < values.size(); ++i)
    if (values(i) > values(best)) best = i;
  return best;
}

/// Index of the smallest entry; ties go to the lowest index.
template <typename Derived>
Index argmin(const Eigen::DenseBase<Derived>& v) {
  const auto& values = v.eval();
  Index best = 0;
  for (Index i = 1; i < values.size(); ++i)
    if (values(i) < values(best)) best = i;
  return best;
}

}  // namespace traplab
