#pragma once

#include <cmath>
#include <limits>
#include <span>

namespace gbpse {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// One-dimensional Gaussian over the extended reals.
///
/// A variance of +inf is the uninformative message; its mean is kept at 0 by
/// convention and carries no information.
struct Gaussian1D {
    double mean = 0.0;
    double variance = kInf;

    static constexpr Gaussian1D uninformative() { return {0.0, kInf}; }

    bool informative() const { return variance < kInf; }
    double precision() const { return informative() ? 1.0 / variance : 0.0; }

    friend bool operator==(const Gaussian1D&, const Gaussian1D&) = default;
};

/// Normalized product of Gaussian densities (precisions add).
/// An empty range yields the uninformative message.
inline Gaussian1D gaussian_product(std::span<const Gaussian1D> msgs) {
    double precision = 0.0;
    double weighted = 0.0;
    for (const auto& m : msgs) {
        if (!m.informative()) continue;
        precision += 1.0 / m.variance;
        weighted += m.mean / m.variance;
    }
    if (precision == 0.0) return Gaussian1D::uninformative();
    const double v = 1.0 / precision;
    return {v * weighted, v};
}

inline Gaussian1D gaussian_product(const Gaussian1D& a, const Gaussian1D& b) {
    const Gaussian1D both[] = {a, b};
    return gaussian_product(std::span<const Gaussian1D>(both));
}

}  // namespace gbpse
