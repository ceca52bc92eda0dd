#pragma once

#include <cstddef>
#include <vector>

#include "starnet/matrix.hpp"

namespace starnet {

class Activation;
struct FeedforwardLayer;
struct ConvUnpoolLayer;
struct ResponseMap;

// Per-datapoint residuals of a layer's latent system. The norms measure how
// well each datapoint fits the layer — large values mark likely outliers.
struct ResidualReport {
    std::size_t layer_index = 0;              // 1-based, layer K is data-adjacent
    std::vector<double> residual_norms;       // one per datapoint
    std::vector<std::size_t> equation_counts; // rows of each datapoint's system
};

// Recomputes ||W·h* − (act_invert(target) − b)|| per datapoint for given
// latents, without solving anything.
ResidualReport residual_report(const FeedforwardLayer& layer, const Activation& act,
                               const Matrix& latents, const Matrix& targets);

// Conv flavour: latents and targets are flattened response maps, one row per
// datapoint (channel-major raster order).
ResidualReport residual_report(const ConvUnpoolLayer& layer, const Activation& act,
                               const Matrix& latents, const Matrix& targets);

// Indices whose residual norm exceeds mean + z · stddev (population stddev).
// Fewer than two datapoints yield no flags — there is no spread to measure.
std::vector<std::size_t> flag_outliers(const ResidualReport& report, double z = 3.0);

} // namespace starnet
