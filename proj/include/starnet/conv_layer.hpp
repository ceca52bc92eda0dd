#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "starnet/activation.hpp"
#include "starnet/diagnostics.hpp"
#include "starnet/matrix.hpp"

namespace starnet {

// A stack of 2-D feature planes, channel-major then row-major. The flat
// layout doubles as the row format for batched matrices.
struct ResponseMap {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data; // channels * height * width values

    ResponseMap() = default;
    ResponseMap(std::size_t channels, std::size_t height, std::size_t width);

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
    std::size_t size() const { return channels * height * width; }
};

// Full (border-covering) stride-1 convolution followed by pixel-shuffle
// unpooling: each group of u*u pre-shuffle channels becomes a u x u spatial
// block. Output spatial size is therefore (H+k-1)*u x (W+k-1)*u with
// m / u^2 channels. Kernels carry no bias.
struct ConvUnpoolLayer {
    std::size_t in_channels = 0;
    std::size_t in_height = 0;
    std::size_t in_width = 0;
    std::size_t kernel_size = 0;          // k, square
    std::size_t pre_shuffle_channels = 0; // m, conv output channels before unpooling
    std::size_t unpool_factor = 0;        // u, square
    Matrix kernels;                       // m x (in_channels * k * k)

    ConvUnpoolLayer() = default;
    // Validates geometry: positive dims, m divisible by u^2, kernel shape.
    ConvUnpoolLayer(std::size_t in_channels, std::size_t in_height, std::size_t in_width,
                    std::size_t kernel_size, std::size_t pre_shuffle_channels,
                    std::size_t unpool_factor, Matrix kernels);

    std::size_t out_channels() const { return pre_shuffle_channels / (unpool_factor * unpool_factor); }
    std::size_t conv_height() const { return in_height + kernel_size - 1; }
    std::size_t conv_width() const { return in_width + kernel_size - 1; }
    std::size_t out_height() const { return conv_height() * unpool_factor; }
    std::size_t out_width() const { return conv_width() * unpool_factor; }
    std::size_t in_size() const { return in_channels * in_height * in_width; }
    std::size_t out_size() const { return out_channels() * out_height() * out_width(); }
};

// Pixel shuffle: channel p*u^2 + dy*u + dx at (y, x) moves to channel p at
// (y*u + dy, x*u + dx). pool is the exact (bit-identical) inverse.
ResponseMap unpool(const ResponseMap& x, std::size_t u);
ResponseMap pool(const ResponseMap& x, std::size_t u);

// Patch matrix for full convolution: one row per output position in raster
// order, P = (H+k-1)*(W+k-1) rows, c*k*k columns ordered (channel, ky, kx);
// taps outside the input read as zero.
Matrix extract_patches(const ResponseMap& x, std::size_t k);

// The explicit matrix A with flatten(conv_full(X)) = A * flatten(X); rows
// ordered like the flattened pre-shuffle output, columns like the flattened
// input (channel-major raster on both sides).
Matrix build_conv_operator(const ConvUnpoolLayer& layer);

// act(unpool(conv_full(X))).
ResponseMap conv_forward(const ConvUnpoolLayer& layer, const Activation& act,
                         const ResponseMap& x);

// Batched conv_forward over flattened rows (one map per row).
Matrix conv_forward_batch(const ConvUnpoolLayer& layer, const Activation& act,
                          const Matrix& x_rows, std::size_t workers = 1);

// Least-squares solution of A * flatten(X) = flatten(pool(act_invert(Y))).
// Returns the solved input map and the linear-system residual norm.
std::pair<ResponseMap, double> conv_solve_latents(const ConvUnpoolLayer& layer,
                                                  const Activation& act,
                                                  const ResponseMap& y_target);

// Batched latent solve: the operator is assembled and factorized once and
// shared across all datapoints (rows of y_rows). Numerically dependent
// operator columns get zero coefficients rather than failing the solve.
std::pair<Matrix, ResidualReport> conv_solve_latents_batch(const ConvUnpoolLayer& layer,
                                                           const Activation& act,
                                                           const Matrix& y_rows,
                                                           std::size_t workers = 1);

// Solves for kernels over sampled datapoints: rows are convolution patches,
// targets the pooled inverse-activated responses. sample_size = 0 uses every
// datapoint; otherwise that many are drawn without replacement from the seed.
// With chunks > 1 the sampled set is split into contiguous chunks, each
// solved independently, and the chunk solutions are averaged elementwise.
// Patch batches that do not span all taps still solve, with zeros on the
// dependent tap directions.
Matrix conv_solve_weights(const ConvUnpoolLayer& geometry, const Activation& act,
                          const Matrix& x_rows, const Matrix& y_rows,
                          std::size_t sample_size, std::size_t chunks, std::uint64_t seed,
                          std::size_t workers = 1);

// Gaussian kernel init scaled by 1/sqrt(c*k*k), re-drawn until the assembled
// operator has full column rank (so the first latent solve is well-posed).
ConvUnpoolLayer init_conv_layer(std::size_t in_channels, std::size_t in_height,
                                std::size_t in_width, std::size_t kernel_size,
                                std::size_t pre_shuffle_channels, std::size_t unpool_factor,
                                std::uint64_t seed);

} // namespace starnet
