#include "starnet/activation.hpp"

#include <string>

#include "starnet/errors.hpp"

namespace starnet {

Activation::Activation(double negative_slope) : negative_slope_(negative_slope) {
    if (!(negative_slope > 0.0)) {
        throw NonInvertibleActivation("negative slope " + std::to_string(negative_slope) +
                                      " is not invertible; it must lie in (0, 1]");
    }
    if (negative_slope > 1.0) {
        throw InvalidArgument("negative slope " + std::to_string(negative_slope) +
                              " exceeds 1; the leak may not dominate the pass-through");
    }
}

Matrix Activation::apply(const Matrix& m) const {
    Matrix out = m;
    for (double& v : out.data()) v = apply(v);
    return out;
}

Matrix Activation::invert(const Matrix& m) const {
    Matrix out = m;
    for (double& v : out.data()) v = invert(v);
    return out;
}

} // namespace starnet
