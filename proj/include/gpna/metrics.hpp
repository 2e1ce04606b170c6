#pragma once
// Evaluation metrics. Labels are class indices; for binary tasks class 1 is the
// positive class (F1, DICE).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gpna/error.hpp"

namespace gpna::metrics {

struct EvalResult {
    std::string head;
    std::string metric;
    double value = 0.0;
    std::size_t n_samples = 0;
};

namespace detail {

template <class A, class B>
void check_pair(std::span<A> pred, std::span<B> target, const char* name)
{
    if (pred.size() != target.size())
        throw InputError(std::string(name) + ": prediction has " + std::to_string(pred.size()) + " entries, target " +
                         std::to_string(target.size()));
    if (pred.empty())
        throw InputError(std::string(name) + ": empty input");
}

inline void check_labels(std::span<const int> v, const char* name)
{
    for (int x : v)
        if (x < 0)
            throw InputError(std::string(name) + ": negative label");
}

}  // namespace detail

inline double r_squared(std::span<const double> pred, std::span<const double> target)
{
    detail::check_pair(pred, target, "r_squared");
    double mean = 0.0;
    for (double t : target)
        mean += t;
    mean /= static_cast<double>(target.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        ss_res += (pred[i] - target[i]) * (pred[i] - target[i]);
        ss_tot += (target[i] - mean) * (target[i] - mean);
    }
    if (ss_tot == 0.0)
        throw UndefinedMetricError("r_squared: target has zero variance");
    return 1.0 - ss_res / ss_tot;
}

inline double rmse(std::span<const double> pred, std::span<const double> target)
{
    detail::check_pair(pred, target, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double accuracy(std::span<const int> pred, std::span<const int> target)
{
    detail::check_pair(pred, target, "accuracy");
    detail::check_labels(pred, "accuracy");
    detail::check_labels(target, "accuracy");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        hit += pred[i] == target[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Binary F1 for `positive`. With no positives in either input the score is 1.
inline double f1(std::span<const int> pred, std::span<const int> target, int positive = 1)
{
    detail::check_pair(pred, target, "f1");
    detail::check_labels(pred, "f1");
    detail::check_labels(target, "f1");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == positive, t = target[i] == positive;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    if (tp + fp + fn == 0)
        return 1.0;
    const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// 2|A n B| / (|A| + |B|) where A, B are the pixels labelled `positive`.
/// Two empty masks agree perfectly and score 1.
inline double dice(std::span<const int> pred, std::span<const int> target, int positive = 1)
{
    detail::check_pair(pred, target, "dice");
    detail::check_labels(pred, "dice");
    detail::check_labels(target, "dice");
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == positive, t = target[i] == positive;
        inter += p && t;
        a += p;
        b += t;
    }
    if (a + b == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

/// Mean of the per-class DICE over classes 1..n_classes-1 (background excluded).
inline double dice_multiclass(std::span<const int> pred, std::span<const int> target, int n_classes)
{
    if (n_classes < 2)
        throw InputError("dice_multiclass: need at least two classes");
    double s = 0.0;
    for (int c = 1; c < n_classes; ++c)
        s += dice(pred, target, c);
    return s / static_cast<double>(n_classes - 1);
}

}  // namespace gpna::metrics
