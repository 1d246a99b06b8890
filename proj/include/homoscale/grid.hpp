#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "homoscale/errors.hpp"
#include "homoscale/fft.hpp"

namespace homoscale {

using Profile = std::vector<double>;  ///< values on the nodes of a YGrid

/// Neumaier compensated summation.
struct CompensatedSum {
    double sum = 0.0, c = 0.0;
    void add(double x) noexcept {
        const double t = sum + x;
        c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    [[nodiscard]] double value() const noexcept { return sum + c; }
};

// ---------------------------------------------------------------- torus ---

/// Uniform grid z_i = i/N on the unit torus.
class TorusGrid {
public:
    explicit TorusGrid(std::size_t n) : n_(n) {
        if (n < 8 || n % 2 != 0)
            throw InvalidArgument("torus grid needs an even number of nodes >= 8, got " +
                                  std::to_string(n));
    }
    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    [[nodiscard]] double node(std::size_t i) const noexcept {
        return static_cast<double>(i) / static_cast<double>(n_);
    }
    friend bool operator==(const TorusGrid&, const TorusGrid&) = default;

private:
    std::size_t n_;
};

class TorusField {
public:
    TorusField(TorusGrid grid, std::vector<double> values) : grid_(grid), v_(std::move(values)) {
        if (v_.size() != grid_.size()) throw GridMismatch("torus field size differs from its grid");
        for (double x : v_)
            if (!std::isfinite(x)) throw InvalidArgument("torus field has a non-finite value");
    }
    explicit TorusField(TorusGrid grid, double c = 0.0) : grid_(grid), v_(grid.size(), c) {}

    template <class F>
    static TorusField sample(TorusGrid grid, F&& f) {
        std::vector<double> v(grid.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(grid.node(i));
        return {grid, std::move(v)};
    }

    [[nodiscard]] const TorusGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t size() const noexcept { return v_.size(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return v_; }
    [[nodiscard]] std::span<double> values() noexcept { return v_; }
    double operator[](std::size_t i) const noexcept { return v_[i]; }
    double& operator[](std::size_t i) noexcept { return v_[i]; }

    TorusField& operator+=(const TorusField& o) { return zip(o, std::plus<>{}); }
    TorusField& operator-=(const TorusField& o) { return zip(o, std::minus<>{}); }
    TorusField& operator*=(const TorusField& o) { return zip(o, std::multiplies<>{}); }
    TorusField& operator/=(const TorusField& o) { return zip(o, std::divides<>{}); }
    TorusField& operator+=(double c) {
        for (auto& x : v_) x += c;
        return *this;
    }
    TorusField& operator*=(double c) {
        for (auto& x : v_) x *= c;
        return *this;
    }

    friend TorusField operator+(TorusField a, const TorusField& b) { return a += b; }
    friend TorusField operator-(TorusField a, const TorusField& b) { return a -= b; }
    friend TorusField operator*(TorusField a, const TorusField& b) { return a *= b; }
    friend TorusField operator/(TorusField a, const TorusField& b) { return a /= b; }
    friend TorusField operator+(TorusField a, double c) { return a += c; }
    friend TorusField operator-(TorusField a, double c) { return a += -c; }
    friend TorusField operator*(TorusField a, double c) { return a *= c; }
    friend TorusField operator*(double c, TorusField a) { return a *= c; }
    friend TorusField operator-(TorusField a) { return a *= -1.0; }
    friend TorusField operator+(double c, TorusField a) { return a += c; }
    friend TorusField operator-(double c, TorusField a) { return (a *= -1.0) += c; }
    friend TorusField operator/(double c, TorusField a) {
        for (auto& v : a.v_) v = c / v;
        return a;
    }

private:
    template <class Op>
    TorusField& zip(const TorusField& o, Op op) {
        if (!(o.grid_ == grid_)) throw GridMismatch("torus grids differ");
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] = op(v_[i], o.v_[i]);
        return *this;
    }

    TorusGrid grid_;
    std::vector<double> v_;
};

[[nodiscard]] inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}
[[nodiscard]] inline double max_abs(const TorusField& f) { return max_abs(f.values()); }

/// Period average by the uniform trapezoid rule.
[[nodiscard]] inline double z_mean(std::span<const double> v) {
    CompensatedSum s;
    for (double x : v) s.add(x);
    return s.value() / static_cast<double>(v.size());
}
[[nodiscard]] inline double z_mean(const TorusField& f) { return z_mean(f.values()); }

[[nodiscard]] inline TorusField z_derivative(const TorusField& f, int order = 1) {
    std::vector<double> out(f.size());
    fft::derivative(f.values(), out, 1.0, order);
    return {f.grid(), std::move(out)};
}

/// Tolerance for "zero mean" on the torus, relative to the field scale.
inline constexpr double kZeroMeanTol = 1e-10;

[[nodiscard]] inline TorusField z_antiderivative(const TorusField& f) {
    const double m = z_mean(f);
    if (std::abs(m) > kZeroMeanTol * std::max(1.0, max_abs(f)))
        throw NonZeroMean("z_antiderivative of a field with mean " + std::to_string(m));
    std::vector<double> out(f.size());
    fft::antiderivative(f.values(), out, 1.0);
    return {f.grid(), std::move(out)};
}

/// Keeps Fourier modes 0..kmax.
[[nodiscard]] inline TorusField z_lowpass(const TorusField& f, std::size_t kmax) {
    std::vector<double> out(f.size());
    fft::lowpass(f.values(), out, kmax);
    return {f.grid(), std::move(out)};
}

[[nodiscard]] inline TorusField remove_mean(TorusField f) { return f - z_mean(f); }

// ------------------------------------------------------------ y window ---

/// Uniform nodes on [-Y, Y] carrying quadrature weights for the invariant
/// measure: w_i proportional to p(y_i) times the trapezoid factor, summing to 1.
class YGrid {
public:
    YGrid() = default;

    static std::vector<double> uniform_nodes(double half_width, std::size_t n) {
        if (n < 8) throw InvalidArgument("y grid needs at least 8 nodes");
        if (!(half_width > 0)) throw InvalidArgument("y window half-width must be positive");
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = -half_width + 2.0 * half_width * static_cast<double>(i) / static_cast<double>(n - 1);
        return y;
    }

    /// `density` holds p at the nodes (any positive normalization).
    YGrid(double half_width, std::size_t n, std::span<const double> density)
        : nodes_(uniform_nodes(half_width, n)), weights_(n), half_width_(half_width) {
        if (density.size() != n) throw GridMismatch("density size differs from y grid");
        h_ = nodes_[1] - nodes_[0];
        CompensatedSum total;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(density[i] >= 0.0) || !std::isfinite(density[i]))
                throw InvalidArgument("density must be finite and nonnegative");
            const double trap = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
            weights_[i] = trap * density[i];
            total.add(weights_[i]);
        }
        if (!(total.value() > 0.0)) throw InvalidArgument("density vanishes on the y window");
        for (auto& w : weights_) w /= total.value();
        // Push the rounding defect of the normalization into the largest weight.
        CompensatedSum check;
        for (double w : weights_) check.add(w);
        *std::max_element(weights_.begin(), weights_.end()) += 1.0 - check.value();
    }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] std::span<const double> nodes() const noexcept { return nodes_; }
    [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }
    [[nodiscard]] double node(std::size_t i) const noexcept { return nodes_[i]; }
    [[nodiscard]] double spacing() const noexcept { return h_; }
    [[nodiscard]] double half_width() const noexcept { return half_width_; }

    friend bool operator==(const YGrid& a, const YGrid& b) {
        return a.nodes_.size() == b.nodes_.size() && a.half_width_ == b.half_width_;
    }

private:
    std::vector<double> nodes_;
    std::vector<double> weights_;
    double half_width_ = 0.0;
    double h_ = 0.0;
};

/// Weighted average against the invariant measure.
[[nodiscard]] inline double y_average(const YGrid& g, std::span<const double> profile) {
    if (profile.size() != g.size()) throw GridMismatch("profile size differs from y grid");
    CompensatedSum s;
    for (std::size_t i = 0; i < profile.size(); ++i) s.add(g.weights()[i] * profile[i]);
    return s.value();
}

namespace fd {

/// Fourth-order first derivative with one-sided fourth-order closures.
inline void d1(std::span<const double> f, double h, std::span<double> out) {
    const std::size_t n = f.size();
    if (n < 6) throw InvalidArgument("finite differences need at least 6 nodes");
    const double c = 1.0 / (12.0 * h);
    for (std::size_t i = 2; i + 2 < n; ++i)
        out[i] = c * (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]);
    out[0] = c * (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]);
    out[1] = c * (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]);
    const std::size_t a = n - 1, b = n - 2;
    out[a] = -c * (-25.0 * f[a] + 48.0 * f[a - 1] - 36.0 * f[a - 2] + 16.0 * f[a - 3] - 3.0 * f[a - 4]);
    out[b] = -c * (-3.0 * f[a] - 10.0 * f[a - 1] + 18.0 * f[a - 2] - 6.0 * f[a - 3] + f[a - 4]);
}

/// Fourth-order second derivative with one-sided closures.
inline void d2(std::span<const double> f, double h, std::span<double> out) {
    const std::size_t n = f.size();
    if (n < 6) throw InvalidArgument("finite differences need at least 6 nodes");
    const double c = 1.0 / (12.0 * h * h);
    for (std::size_t i = 2; i + 2 < n; ++i)
        out[i] = c * (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]);
    auto left = [&](std::size_t s, int dir, std::size_t i0, std::size_t i1) {
        auto at = [&](int k) { return f[static_cast<std::size_t>(static_cast<long>(s) + dir * k)]; };
        out[i0] = c * (45.0 * at(0) - 154.0 * at(1) + 214.0 * at(2) - 156.0 * at(3) + 61.0 * at(4) -
                       10.0 * at(5));
        out[i1] = c * (10.0 * at(0) - 15.0 * at(1) - 4.0 * at(2) + 14.0 * at(3) - 6.0 * at(4) + at(5));
    };
    left(0, +1, 0, 1);
    left(n - 1, -1, n - 1, n - 2);
}

/// Eighth-order centered stencils; only nodes 4 .. n-5 are written.
inline void d1_interior8(std::span<const double> f, double h, std::span<double> out) {
    static constexpr double c[4] = {4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0};
    for (std::size_t i = 4; i + 4 < f.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += c[k] * (f[i + k + 1] - f[i - k - 1]);
        out[i] = s / h;
    }
}
inline void d2_interior8(std::span<const double> f, double h, std::span<double> out) {
    static constexpr double c[4] = {8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0};
    for (std::size_t i = 4; i + 4 < f.size(); ++i) {
        double s = -205.0 / 72.0 * f[i];
        for (std::size_t k = 0; k < 4; ++k) s += c[k] * (f[i + k + 1] + f[i - k - 1]);
        out[i] = s / (h * h);
    }
}

}  // namespace fd

// ------------------------------------------------------------ product ---

/// Samples on T x Y, stored y-major so every z-slice is contiguous.
class ZYField {
public:
    ZYField(TorusGrid tg, YGrid yg, double c = 0.0)
        : tg_(tg), yg_(std::move(yg)), v_(tg_.size() * yg_.size(), c) {}
    ZYField(TorusGrid tg, YGrid yg, std::vector<double> values)
        : tg_(tg), yg_(std::move(yg)), v_(std::move(values)) {
        if (v_.size() != tg_.size() * yg_.size()) throw GridMismatch("ZY field size differs from grids");
    }

    template <class F>
    static ZYField sample(TorusGrid tg, const YGrid& yg, F&& f) {
        ZYField out(tg, yg);
        for (std::size_t j = 0; j < yg.size(); ++j)
            for (std::size_t i = 0; i < tg.size(); ++i) out.at(i, j) = f(tg.node(i), yg.node(j));
        return out;
    }

    /// Constant-in-y extension of a torus field.
    static ZYField from_z(const TorusField& f, const YGrid& yg) {
        ZYField out(f.grid(), yg);
        for (std::size_t j = 0; j < yg.size(); ++j) out.set_row(j, f);
        return out;
    }
    /// Constant-in-z extension of a y-profile.
    static ZYField from_y(TorusGrid tg, const YGrid& yg, std::span<const double> p) {
        ZYField out(tg, yg);
        for (std::size_t j = 0; j < yg.size(); ++j)
            for (std::size_t i = 0; i < tg.size(); ++i) out.at(i, j) = p[j];
        return out;
    }

    [[nodiscard]] const TorusGrid& torus_grid() const noexcept { return tg_; }
    [[nodiscard]] const YGrid& y_grid() const noexcept { return yg_; }
    [[nodiscard]] std::size_t nz() const noexcept { return tg_.size(); }
    [[nodiscard]] std::size_t ny() const noexcept { return yg_.size(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return v_; }
    [[nodiscard]] std::span<double> values() noexcept { return v_; }

    double at(std::size_t iz, std::size_t iy) const noexcept { return v_[iy * nz() + iz]; }
    double& at(std::size_t iz, std::size_t iy) noexcept { return v_[iy * nz() + iz]; }

    [[nodiscard]] std::span<const double> row_span(std::size_t iy) const {
        return {v_.data() + iy * nz(), nz()};
    }
    [[nodiscard]] TorusField row(std::size_t iy) const {
        auto s = row_span(iy);
        return {tg_, std::vector<double>(s.begin(), s.end())};
    }
    void set_row(std::size_t iy, const TorusField& f) {
        std::copy(f.values().begin(), f.values().end(), v_.begin() + static_cast<long>(iy * nz()));
    }
    [[nodiscard]] Profile column(std::size_t iz) const {
        Profile p(ny());
        for (std::size_t j = 0; j < ny(); ++j) p[j] = at(iz, j);
        return p;
    }
    void set_column(std::size_t iz, std::span<const double> p) {
        for (std::size_t j = 0; j < ny(); ++j) at(iz, j) = p[j];
    }

    ZYField& operator+=(const ZYField& o) { return zip(o, std::plus<>{}); }
    ZYField& operator-=(const ZYField& o) { return zip(o, std::minus<>{}); }
    ZYField& operator*=(const ZYField& o) { return zip(o, std::multiplies<>{}); }
    ZYField& operator/=(const ZYField& o) { return zip(o, std::divides<>{}); }
    ZYField& operator+=(double c) {
        for (auto& x : v_) x += c;
        return *this;
    }
    ZYField& operator*=(double c) {
        for (auto& x : v_) x *= c;
        return *this;
    }
    /// Multiply every y-row by a torus field.
    ZYField& operator*=(const TorusField& f) {
        for (std::size_t j = 0; j < ny(); ++j)
            for (std::size_t i = 0; i < nz(); ++i) at(i, j) *= f[i];
        return *this;
    }
    ZYField& operator+=(const TorusField& f) {
        for (std::size_t j = 0; j < ny(); ++j)
            for (std::size_t i = 0; i < nz(); ++i) at(i, j) += f[i];
        return *this;
    }
    ZYField& operator-=(const TorusField& f) {
        for (std::size_t j = 0; j < ny(); ++j)
            for (std::size_t i = 0; i < nz(); ++i) at(i, j) -= f[i];
        return *this;
    }
    /// Multiply every z-column by a y-profile.
    ZYField& scale_y(std::span<const double> p) {
        for (std::size_t j = 0; j < ny(); ++j)
            for (std::size_t i = 0; i < nz(); ++i) at(i, j) *= p[j];
        return *this;
    }

    friend ZYField operator+(ZYField a, const ZYField& b) { return a += b; }
    friend ZYField operator-(ZYField a, const ZYField& b) { return a -= b; }
    friend ZYField operator*(ZYField a, const ZYField& b) { return a *= b; }
    friend ZYField operator/(ZYField a, const ZYField& b) { return a /= b; }
    friend ZYField operator*(ZYField a, double c) { return a *= c; }
    friend ZYField operator*(double c, ZYField a) { return a *= c; }
    friend ZYField operator+(ZYField a, double c) { return a += c; }
    friend ZYField operator-(ZYField a, double c) { return a += -c; }
    friend ZYField operator-(ZYField a) { return a *= -1.0; }
    friend ZYField operator+(double c, ZYField a) { return a += c; }
    friend ZYField operator-(double c, ZYField a) { return (a *= -1.0) += c; }
    friend ZYField operator/(double c, ZYField a) {
        for (auto& v : a.v_) v = c / v;
        return a;
    }
    friend ZYField operator*(ZYField a, const TorusField& f) { return a *= f; }
    friend ZYField operator*(const TorusField& f, ZYField a) { return a *= f; }
    friend ZYField operator+(ZYField a, const TorusField& f) { return a += f; }
    friend ZYField operator-(ZYField a, const TorusField& f) { return a -= f; }

private:
    template <class Op>
    ZYField& zip(const ZYField& o, Op op) {
        if (!(o.tg_ == tg_) || !(o.yg_ == yg_)) throw GridMismatch("ZY grids differ");
        for (std::size_t k = 0; k < v_.size(); ++k) v_[k] = op(v_[k], o.v_[k]);
        return *this;
    }

    TorusGrid tg_;
    YGrid yg_;
    std::vector<double> v_;
};

[[nodiscard]] inline double max_abs(const ZYField& f) { return max_abs(f.values()); }

/// Per-y z-means.
[[nodiscard]] inline Profile z_mean(const ZYField& f) {
    Profile m(f.ny());
    for (std::size_t j = 0; j < f.ny(); ++j) m[j] = z_mean(f.row_span(j));
    return m;
}

[[nodiscard]] inline ZYField z_derivative(const ZYField& f, int order = 1) {
    ZYField out(f.torus_grid(), f.y_grid());
    for (std::size_t j = 0; j < f.ny(); ++j) {
        std::span<double> dst(out.values().data() + j * f.nz(), f.nz());
        fft::derivative(f.row_span(j), dst, 1.0, order);
    }
    return out;
}

[[nodiscard]] inline ZYField z_antiderivative(const ZYField& f) {
    ZYField out(f.torus_grid(), f.y_grid());
    for (std::size_t j = 0; j < f.ny(); ++j) out.set_row(j, z_antiderivative(f.row(j)));
    return out;
}

[[nodiscard]] inline ZYField z_lowpass(const ZYField& f, std::size_t kmax) {
    ZYField out(f.torus_grid(), f.y_grid());
    for (std::size_t j = 0; j < f.ny(); ++j) out.set_row(j, z_lowpass(f.row(j), kmax));
    return out;
}

[[nodiscard]] inline ZYField remove_z_mean(ZYField f) {
    for (std::size_t j = 0; j < f.ny(); ++j) {
        const double m = z_mean(f.row_span(j));
        for (std::size_t i = 0; i < f.nz(); ++i) f.at(i, j) -= m;
    }
    return f;
}

/// Per-z average against the invariant measure.
[[nodiscard]] inline TorusField y_average(const ZYField& f) {
    std::vector<CompensatedSum> acc(f.nz());
    const auto w = f.y_grid().weights();
    for (std::size_t j = 0; j < f.ny(); ++j)
        for (std::size_t i = 0; i < f.nz(); ++i) acc[i].add(w[j] * f.at(i, j));
    TorusField out(f.torus_grid());
    for (std::size_t i = 0; i < f.nz(); ++i) out[i] = acc[i].value();
    return out;
}

/// Double average: z first, then y.
[[nodiscard]] inline double zy_mean(const ZYField& f) { return y_average(f.y_grid(), z_mean(f)); }

/// y-derivative (order 1 or 2) by fourth-order finite differences per z-node.
[[nodiscard]] inline ZYField y_derivative(const ZYField& f, int order = 1) {
    if (order != 1 && order != 2) throw InvalidArgument("y_derivative supports orders 1 and 2");
    ZYField out(f.torus_grid(), f.y_grid());
    Profile col(f.ny()), d(f.ny());
    const double h = f.y_grid().spacing();
    for (std::size_t i = 0; i < f.nz(); ++i) {
        for (std::size_t j = 0; j < f.ny(); ++j) col[j] = f.at(i, j);
        if (order == 1)
            fd::d1(col, h, d);
        else
            fd::d2(col, h, d);
        out.set_column(i, d);
    }
    return out;
}

}  // namespace homoscale
