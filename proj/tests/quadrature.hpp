#pragma once
// Adaptive Simpson quadrature, the independent oracle for interval encodings.

#include <cmath>
#include <functional>

namespace gpna::testing_support {

inline double simpson(double a, double b, double fa, double fm, double fb)
{
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                               double whole, double tol, int depth)
{
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson(a, m, fa, flm, fm);
    const double right = simpson(m, b, fm, frm, fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

// Mean of f over [a, b] by adaptive Simpson quadrature.
inline double quad_mean(const std::function<double(double)>& f, double a, double b)
{
    // Seed with 64 panels so fast oscillations cannot fool the first estimate.
    const int panels = 64;
    double total = 0.0;
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        const double pa = a + p * h, pb = pa + h;
        const double qa = f(pa), qb = f(pb), qm = f(0.5 * (pa + pb));
        total += adaptive_simpson(f, pa, pb, qa, qm, qb, simpson(pa, pb, qa, qm, qb), 1e-14, 40);
    }
    return total / (b - a);
}

}  // namespace gpna::testing_support
