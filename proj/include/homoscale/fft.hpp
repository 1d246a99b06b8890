#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "homoscale/errors.hpp"

namespace homoscale::fft {

using cplx = std::complex<double>;

/// Owns a pair of FFTW r2c/c2r plans for one transform length.
/// Plans are created with FFTW_UNALIGNED so they can be executed on any
/// buffer through the thread-safe new-array interface.
class RealPlan {
public:
    explicit RealPlan(std::size_t n) : n_(n) {
        std::vector<double> r(n);
        std::vector<cplx> c(n / 2 + 1);
        auto* cc = reinterpret_cast<fftw_complex*>(c.data());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), r.data(), cc, flags);
        bwd_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), cc, r.data(), flags);
        if (fwd_ == nullptr || bwd_ == nullptr) throw InvalidArgument("FFTW plan creation failed");
    }
    RealPlan(const RealPlan&) = delete;
    RealPlan& operator=(const RealPlan&) = delete;
    ~RealPlan() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
    }

    [[nodiscard]] std::size_t size() const noexcept { return n_; }

    /// Unnormalized forward transform: n real values -> n/2+1 coefficients.
    void forward(std::span<const double> in, std::span<cplx> out) const {
        thread_local std::vector<double> buf;
        buf.assign(in.begin(), in.end());
        fftw_execute_dft_r2c(fwd_, buf.data(), reinterpret_cast<fftw_complex*>(out.data()));
    }

    /// Unnormalized inverse transform (result is n times the samples).
    void backward(std::span<const cplx> in, std::span<double> out) const {
        thread_local std::vector<cplx> buf;
        buf.assign(in.begin(), in.end());
        fftw_execute_dft_c2r(bwd_, reinterpret_cast<fftw_complex*>(buf.data()), out.data());
    }

private:
    std::size_t n_;
    fftw_plan fwd_{};
    fftw_plan bwd_{};
};

/// Process-wide plan cache; creation is serialized, execution is not.
inline const RealPlan& plan_for(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, std::unique_ptr<RealPlan>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealPlan>(n);
    return *slot;
}

inline std::vector<cplx> coefficients(std::span<const double> f) {
    std::vector<cplx> c(f.size() / 2 + 1);
    plan_for(f.size()).forward(f, c);
    return c;
}

/// m-th derivative of the trigonometric interpolant of periodic samples
/// (period `period`). The Nyquist mode is dropped for odd m.
inline void derivative(std::span<const double> f, std::span<double> out, double period, int m) {
    const std::size_t n = f.size();
    auto c = coefficients(f);
    const double w = 2.0 * std::numbers::pi / period;
    const cplx im{0.0, 1.0};
    for (std::size_t k = 0; k < c.size(); ++k) {
        if (k == 0 && m > 0) {
            c[k] = 0.0;
            continue;
        }
        if (2 * k == n && m % 2 == 1) {
            c[k] = 0.0;
            continue;
        }
        c[k] *= std::pow(im * (w * static_cast<double>(k)), m);
    }
    plan_for(n).backward(c, out);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= scale;
}

/// Zero-mean periodic antiderivative; the caller guarantees zero mean.
inline void antiderivative(std::span<const double> f, std::span<double> out, double period) {
    const std::size_t n = f.size();
    auto c = coefficients(f);
    const double w = 2.0 * std::numbers::pi / period;
    const cplx im{0.0, 1.0};
    c[0] = 0.0;
    for (std::size_t k = 1; k < c.size(); ++k) {
        if (2 * k == n) {
            c[k] = 0.0;
            continue;
        }
        c[k] /= im * (w * static_cast<double>(k));
    }
    plan_for(n).backward(c, out);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= scale;
}

/// Zeroes every Fourier mode above kmax (Nyquist included when kmax < n/2).
inline void lowpass(std::span<const double> f, std::span<double> out, std::size_t kmax) {
    const std::size_t n = f.size();
    auto c = coefficients(f);
    for (std::size_t k = kmax + 1; k < c.size(); ++k) c[k] = 0.0;
    plan_for(n).backward(c, out);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= scale;
}

/// Trigonometric interpolant of n periodic samples resampled at n*r points.
inline std::vector<double> upsample(std::span<const double> f, std::size_t r) {
    const std::size_t n = f.size(), m = n * r;
    if (r == 1) return {f.begin(), f.end()};
    auto c = coefficients(f);
    std::vector<cplx> big(m / 2 + 1, cplx{});
    for (std::size_t k = 0; k < c.size(); ++k) big[k] = c[k];
    if (n % 2 == 0) big[n / 2] *= 0.5;  // split the Nyquist mode symmetrically
    std::vector<double> out(m);
    plan_for(m).backward(big, out);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= scale;
    return out;
}

/// Evaluator of the trigonometric interpolant at arbitrary points.
class Interpolant {
public:
    Interpolant(std::span<const double> f, double period)
        : n_(f.size()), w_(2.0 * std::numbers::pi / period), c_(coefficients(f)) {
        for (auto& v : c_) v /= static_cast<double>(n_);
    }

    [[nodiscard]] double operator()(double z) const {
        double s = c_[0].real();
        const std::size_t kmax = (n_ % 2 == 0) ? n_ / 2 : c_.size();
        const cplx step = std::polar(1.0, w_ * z);
        cplx e = step;
        for (std::size_t k = 1; k < kmax; ++k) {
            s += 2.0 * (c_[k] * e).real();
            e *= step;
        }
        if (n_ % 2 == 0) s += c_[n_ / 2].real() * std::cos(w_ * static_cast<double>(n_ / 2) * z);
        return s;
    }

private:
    std::size_t n_;
    double w_;
    std::vector<cplx> c_;
};

}  // namespace homoscale::fft
