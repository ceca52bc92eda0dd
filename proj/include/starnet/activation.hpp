#pragma once

#include "starnet/matrix.hpp"

namespace starnet {

// Leaky rectifier with an exactly invertible inverse. The negative slope must
// sit in (0, 1]: zero (or below) would destroy the negative half-line and
// make the latent solves impossible, above one the "leak" would dominate.
class Activation {
public:
    explicit Activation(double negative_slope);

    double negative_slope() const { return negative_slope_; }

    double apply(double x) const { return x >= 0.0 ? x : negative_slope_ * x; }
    double invert(double y) const { return y >= 0.0 ? y : y / negative_slope_; }

    Matrix apply(const Matrix& m) const;
    Matrix invert(const Matrix& m) const;

private:
    double negative_slope_;
};

inline constexpr double kDefaultSlope = 0.5;

} // namespace starnet
