#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "gpna/error.hpp"

namespace gpna::num {

/// Central-difference gradient (f(θ + h e_i) - f(θ - h e_i)) / 2h for every coordinate.
inline std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                                std::span<const double> theta, double h)
{
    if (!(h > 0.0))
        throw InputError("finite_diff_gradient: step must be positive");
    std::vector<double> x(theta.begin(), theta.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-8)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace gpna::num
