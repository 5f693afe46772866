#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace lcf {

// Overflow-safe ln(1 + e^x).
inline double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Round to nearest integer, ties to even (matches the default FP rounding mode).
inline long round_half_even(double x) {
    return static_cast<long>(std::nearbyint(x));
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

class io_error : public std::runtime_error {
  public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace lcf
