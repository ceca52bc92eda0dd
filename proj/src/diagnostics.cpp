#include "starnet/diagnostics.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "starnet/activation.hpp"
#include "starnet/conv_layer.hpp"
#include "starnet/errors.hpp"
#include "starnet/ff_layer.hpp"

namespace starnet {
namespace {

// Shared core: per-row norms of op·latent − rhs, where rhs is the
// inverse-activated target minus the constant offset.
std::vector<double> system_residuals(const Matrix& op, const std::vector<double>& offset,
                                     const Activation& act, const Matrix& latents,
                                     const Matrix& targets) {
    std::vector<double> norms(latents.rows(), 0.0);
    std::vector<double> rhs(op.rows());
    for (std::size_t i = 0; i < latents.rows(); ++i) {
        const double* t = targets.row_ptr(i);
        for (std::size_t r = 0; r < op.rows(); ++r) rhs[r] = act.invert(t[r]) - offset[r];
        const double* h = latents.row_ptr(i);
        double s = 0.0;
        for (std::size_t r = 0; r < op.rows(); ++r) {
            const double* arow = op.row_ptr(r);
            double acc = -rhs[r];
            for (std::size_t c = 0; c < op.cols(); ++c) acc += arow[c] * h[c];
            s += acc * acc;
        }
        norms[i] = std::sqrt(s);
    }
    return norms;
}

} // namespace

ResidualReport residual_report(const FeedforwardLayer& layer, const Activation& act,
                               const Matrix& latents, const Matrix& targets) {
    if (latents.rows() != targets.rows()) {
        throw ShapeMismatch("latent and target batches differ in datapoint count");
    }
    if (latents.cols() != layer.in_dim || targets.cols() != layer.out_dim) {
        throw ShapeMismatch("latent/target widths do not match the layer");
    }
    std::vector<double> bias(layer.out_dim);
    for (std::size_t j = 0; j < layer.out_dim; ++j) bias[j] = layer.weights(j, layer.in_dim);

    ResidualReport report;
    report.residual_norms =
        system_residuals(layer.weight_submatrix(), bias, act, latents, targets);
    report.equation_counts.assign(latents.rows(), layer.out_dim);
    return report;
}

ResidualReport residual_report(const ConvUnpoolLayer& layer, const Activation& act,
                               const Matrix& latents, const Matrix& targets) {
    if (latents.rows() != targets.rows()) {
        throw ShapeMismatch("latent and target batches differ in datapoint count");
    }
    if (latents.cols() != layer.in_size() || targets.cols() != layer.out_size()) {
        throw ShapeMismatch("latent/target widths do not match the layer");
    }
    const Matrix op = build_conv_operator(layer);
    const std::size_t rows = op.rows();

    // The conv system's right-hand side is the pooled inverse-activated
    // target; pooling is a permutation, so feed the operator's row order by
    // permuting target columns into pre-shuffle order once.
    const std::size_t u = layer.unpool_factor;
    const std::size_t oh = layer.conv_height();
    const std::size_t ow = layer.conv_width();
    const std::size_t hy = layer.out_height();
    const std::size_t wy = layer.out_width();
    Matrix pre_targets(targets.rows(), rows);
    for (std::size_t i = 0; i < targets.rows(); ++i) {
        const double* y = targets.row_ptr(i);
        double* dst = pre_targets.row_ptr(i);
        for (std::size_t j = 0; j < layer.pre_shuffle_channels; ++j) {
            const std::size_t p = j / (u * u);
            const std::size_t dy = (j % (u * u)) / u;
            const std::size_t dx = j % u;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    dst[(j * oh + oy) * ow + ox] = y[(p * hy + oy * u + dy) * wy + ox * u + dx];
                }
            }
        }
    }

    ResidualReport report;
    report.residual_norms =
        system_residuals(op, std::vector<double>(rows, 0.0), act, latents, pre_targets);
    report.equation_counts.assign(latents.rows(), rows);
    return report;
}

std::vector<std::size_t> flag_outliers(const ResidualReport& report, double z) {
    const std::size_t n = report.residual_norms.size();
    std::vector<std::size_t> flagged;
    if (n < 2) return flagged;
    double mean = 0.0;
    for (double v : report.residual_norms) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : report.residual_norms) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double threshold = mean + z * std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) {
        if (report.residual_norms[i] > threshold) flagged.push_back(i);
    }
    return flagged;
}

} // namespace starnet
