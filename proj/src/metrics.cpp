#include "dag/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "dag/errors.hpp"

namespace dag::train {

namespace {

void require_nonempty_match(std::span<const std::uint32_t> preds,
                            std::span<const std::uint32_t> labels) {
    if (labels.empty()) throw InputError("metric: empty label set");
    if (preds.size() != labels.size())
        throw InputError("metric: prediction/label count mismatch");
}

/// Binary Mann-Whitney AUC via average ranks (equals pair counting with 0.5
/// tie credit).
double binary_auc(const std::vector<double>& score, const std::vector<bool>& positive) {
    const std::size_t n = score.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return score[a] < score[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;  // 1-based average rank of the tie block
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (positive[s]) {
            pos_rank_sum += rank[s];
            ++pos;
        }
    }
    const std::size_t neg = n - pos;
    return (pos_rank_sum - 0.5 * double(pos) * double(pos + 1)) / (double(pos) * double(neg));
}

}  // namespace

double accuracy(std::span<const std::uint32_t> preds, std::span<const std::uint32_t> labels) {
    require_nonempty_match(preds, labels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (preds[i] == labels[i]) ++hits;
    return double(hits) / double(labels.size());
}

double weighted_f1(std::span<const std::uint32_t> preds, std::span<const std::uint32_t> labels,
                   std::uint32_t classes) {
    require_nonempty_match(preds, labels);
    for (std::uint32_t l : labels)
        if (l >= classes) throw InputError("weighted_f1: label out of range");
    double weighted = 0.0;
    for (std::uint32_t c = 0; c < classes; ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const bool is_true = labels[i] == c;
            const bool is_pred = preds[i] == c;
            if (is_true && is_pred) ++tp;
            else if (!is_true && is_pred) ++fp;
            else if (is_true && !is_pred) ++fn;
        }
        const std::size_t support = tp + fn;
        if (support == 0) continue;
        const double precision = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
        const double recall = double(tp) / double(support);
        const double f1 =
            precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        weighted += f1 * double(support);
    }
    return weighted / double(labels.size());
}

double auc_ovr(std::span<const double> scores, std::span<const std::uint32_t> labels,
               std::uint32_t classes) {
    if (labels.empty()) throw InputError("auc_ovr: empty label set");
    if (scores.size() != labels.size() * classes)
        throw InputError("auc_ovr: score matrix does not match n x classes");
    const std::size_t n = labels.size();
    double weighted = 0.0;
    std::size_t total_support = 0;
    for (std::uint32_t c = 0; c < classes; ++c) {
        std::vector<double> col(n);
        std::vector<bool> pos(n);
        std::size_t support = 0;
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = scores[i * classes + c];
            pos[i] = labels[i] == c;
            if (pos[i]) ++support;
        }
        if (support == 0 || support == n) continue;  // not evaluable, weight 0
        weighted += binary_auc(col, pos) * double(support);
        total_support += support;
    }
    if (total_support == 0)
        throw InputError("auc_ovr: no class has both positive and negative samples");
    return weighted / double(total_support);
}

}  // namespace dag::train
