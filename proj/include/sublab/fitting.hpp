#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sublab/errors.hpp"

namespace sublab {

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw InvalidArgument("fit_line: need two or more aligned samples");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw InvalidArgument("fit_line: degenerate abscissae");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = (syy == 0.0) ? 1.0 : (sxy * sxy) / (sxx * syy);
    return f;
}

/// Fit log m = log C + rate * t over the samples with m > 0.
inline LinearFit fit_exponential_rate(std::span<const double> t, std::span<const double> m) {
    std::vector<double> xs, ys;
    for (size_t i = 0; i < t.size(); ++i)
        if (m[i] > 0.0) {
            xs.push_back(t[i]);
            ys.push_back(std::log(m[i]));
        }
    return fit_line(xs, ys);
}

} // namespace sublab
