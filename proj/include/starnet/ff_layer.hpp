#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

#include "starnet/activation.hpp"
#include "starnet/diagnostics.hpp"
#include "starnet/matrix.hpp"

namespace starnet {

// Fully connected layer mapping d_in latents to d_out responses. The weight
// matrix carries an extra final column: the bias, applied as a constant input
// coordinate fixed at 1. Widths may only grow toward the data (in <= out) so
// the latent systems stay determined.
struct FeedforwardLayer {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Matrix weights; // out_dim x (in_dim + 1), last column is the bias

    FeedforwardLayer() = default;
    // Validates shapes and the funnel direction. Rank is deliberately not
    // checked here: degenerate weights (e.g. a bias-only layer) are legal
    // values; operations that need full column rank enforce it themselves.
    FeedforwardLayer(std::size_t in_dim, std::size_t out_dim, Matrix weights);

    // The weight block without the bias column (out_dim x in_dim).
    Matrix weight_submatrix() const;
};

// Row n of the result is act(W·h_n + b).
Matrix ff_forward(const FeedforwardLayer& layer, const Activation& act, const Matrix& h_prev);

// Solves W·h = act_invert(target) − b independently per datapoint (least
// squares; the system is determined because in <= out). Returns the optimal
// latents and the per-datapoint residual norms of the linear system. When W
// has numerically dependent columns, the dependent directions get zero
// coefficients rather than failing the solve.
std::pair<Matrix, ResidualReport> ff_solve_latents(const FeedforwardLayer& layer,
                                                   const Activation& act,
                                                   const Matrix& h_target,
                                                   std::size_t workers = 1);

// Solves [H_prev | 1] · w_j = act_invert(target column j) independently per
// output row j. Needs N >= in_dim + 1 datapoints to determine each row.
// Latent batches spanning fewer than in_dim + 1 directions still solve; the
// dependent weight coordinates come back as zero.
FeedforwardLayer ff_solve_weights(const Matrix& h_prev, const Activation& act,
                                  const Matrix& h_target, std::size_t workers = 1);

// Gaussian init scaled by 1/sqrt(in_dim), re-drawn from successive seed
// streams until the weight block has full column rank. With orthogonal set,
// the block's columns are orthonormalized (the "orthogonal projection" of the
// random draw) before the rank check.
FeedforwardLayer init_feedforward_layer(std::size_t in_dim, std::size_t out_dim,
                                        std::uint64_t seed, bool orthogonal = false);

} // namespace starnet
