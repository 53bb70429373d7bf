#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dag::train {

/// Fraction of exact matches.
double accuracy(std::span<const std::uint32_t> preds, std::span<const std::uint32_t> labels);

/// Per-class F1 (0 when precision+recall is 0) weighted by true-class
/// support; classes absent from the truth contribute weight 0.
double weighted_f1(std::span<const std::uint32_t> preds, std::span<const std::uint32_t> labels,
                   std::uint32_t classes);

/// Support-weighted one-vs-rest ROC AUC over the classes that have at least
/// one positive and one negative sample; tied scores earn 0.5 credit
/// (Mann-Whitney). `scores` is row-major [n x classes].
double auc_ovr(std::span<const double> scores, std::span<const std::uint32_t> labels,
               std::uint32_t classes);

}  // namespace dag::train
