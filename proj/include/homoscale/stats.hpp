#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "homoscale/errors.hpp"
#include "homoscale/grid.hpp"

namespace homoscale::stats {

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double variance = 0.0;  ///< unbiased
    [[nodiscard]] double sd() const { return std::sqrt(variance); }
    [[nodiscard]] double se() const { return n > 0 ? std::sqrt(variance / static_cast<double>(n)) : 0.0; }
};

[[nodiscard]] inline Summary summarize(std::span<const double> x) {
    Summary s;
    s.n = x.size();
    if (s.n == 0) return s;
    CompensatedSum m;
    for (double v : x) m.add(v);
    s.mean = m.value() / static_cast<double>(s.n);
    if (s.n < 2) return s;
    CompensatedSum q;
    for (double v : x) q.add((v - s.mean) * (v - s.mean));
    s.variance = q.value() / static_cast<double>(s.n - 1);
    return s;
}

struct Interval {
    double lo = 0.0, hi = 0.0;
    [[nodiscard]] bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Student-t interval for the mean.
[[nodiscard]] inline Interval mean_ci(const Summary& s, double level = 0.95) {
    if (s.n < 2) throw InvalidArgument("mean interval needs at least two samples");
    boost::math::students_t t(static_cast<double>(s.n - 1));
    const double q = boost::math::quantile(t, 0.5 + level / 2.0);
    return {s.mean - q * s.se(), s.mean + q * s.se()};
}

/// Chi-square interval for the variance of a normal sample.
[[nodiscard]] inline Interval variance_ci(const Summary& s, double level = 0.95) {
    if (s.n < 2) throw InvalidArgument("variance interval needs at least two samples");
    const double k = static_cast<double>(s.n - 1);
    boost::math::chi_squared c(k);
    const double a = (1.0 - level) / 2.0;
    return {k * s.variance / boost::math::quantile(c, 1.0 - a), k * s.variance / boost::math::quantile(c, a)};
}

struct LinearFit {
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

[[nodiscard]] inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("linear fit needs two equal-length series");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw InvalidArgument("linear fit with constant abscissa");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
    return f;
}

/// Slope of log y against log x.
[[nodiscard]] inline LinearFit loglog_fit(std::span<const double> x, std::span<const double> y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidArgument("log-log fit needs positive data");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    return linear_fit(lx, ly);
}

/// Survival function of the Kolmogorov distribution, Q(l) = 2 sum (-1)^{k-1} e^{-2 k^2 l^2}.
[[nodiscard]] inline double kolmogorov_q(double l) {
    if (l < 1e-3) return 1.0;
    if (l < 1.18) {
        // Small-argument form converges faster here.
        const double y = std::exp(-std::numbers::pi * std::numbers::pi / (8.0 * l * l));
        double s = 0.0;
        for (int k = 1; k < 40; k += 2) s += std::pow(y, k * k);
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / l * s, 0.0, 1.0);
    }
    double s = 0.0, sign = 1.0;
    for (int k = 1; k < 100; ++k) {
        const double term = std::exp(-2.0 * k * k * l * l);
        s += sign * term;
        if (term < 1e-16) break;
        sign = -sign;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

struct KSResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against N(mu, sigma^2), with the
/// Stephens finite-n correction of the asymptotic p-value.
[[nodiscard]] inline KSResult ks_normal(std::span<const double> sample, double mu, double sigma) {
    if (sample.empty()) throw InvalidArgument("KS test needs samples");
    if (!(sigma > 0.0)) throw InvalidArgument("KS reference sigma must be positive");
    std::vector<double> x(sample.begin(), sample.end());
    std::sort(x.begin(), x.end());
    boost::math::normal nd(mu, sigma);
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double F = boost::math::cdf(nd, x[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
    }
    const double sn = std::sqrt(n);
    return {d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)};
}

/// Histogram over [lo, hi] with `bins` equal bins; values outside are clamped.
[[nodiscard]] inline std::vector<std::size_t> histogram(std::span<const double> x, double lo, double hi,
                                                        std::size_t bins) {
    std::vector<std::size_t> h(bins, 0);
    if (!(hi > lo) || bins == 0) return h;
    for (double v : x) {
        auto b = static_cast<long>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
        b = std::clamp<long>(b, 0, static_cast<long>(bins) - 1);
        ++h[static_cast<std::size_t>(b)];
    }
    return h;
}

}  // namespace homoscale::stats
