#include "starnet/ff_layer.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "starnet/errors.hpp"
#include "starnet/linalg.hpp"
#include "starnet/parallel.hpp"
#include "starnet/rng.hpp"

namespace starnet {

FeedforwardLayer::FeedforwardLayer(std::size_t in, std::size_t out, Matrix w)
    : in_dim(in), out_dim(out), weights(std::move(w)) {
    if (in_dim > out_dim) {
        throw ArchitectureInvalid("layer narrows from " + std::to_string(in_dim) + " to " +
                                  std::to_string(out_dim) +
                                  "; widths may only grow toward the data");
    }
    if (weights.rows() != out_dim || weights.cols() != in_dim + 1) {
        throw ShapeMismatch("weight matrix is " + std::to_string(weights.rows()) + "x" +
                            std::to_string(weights.cols()) + ", expected " +
                            std::to_string(out_dim) + "x" + std::to_string(in_dim + 1));
    }
    if (!weights.all_finite()) throw InvalidArgument("layer weights must be finite");
}

Matrix FeedforwardLayer::weight_submatrix() const {
    Matrix sub(out_dim, in_dim);
    for (std::size_t r = 0; r < out_dim; ++r) {
        const double* src = weights.row_ptr(r);
        double* dst = sub.row_ptr(r);
        for (std::size_t c = 0; c < in_dim; ++c) dst[c] = src[c];
    }
    return sub;
}

Matrix ff_forward(const FeedforwardLayer& layer, const Activation& act, const Matrix& h_prev) {
    if (h_prev.cols() != layer.in_dim) {
        throw ShapeMismatch("input has " + std::to_string(h_prev.cols()) +
                            " features, layer expects " + std::to_string(layer.in_dim));
    }
    const std::size_t n = h_prev.rows();
    Matrix out(n, layer.out_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double* h = h_prev.row_ptr(i);
        double* o = out.row_ptr(i);
        for (std::size_t j = 0; j < layer.out_dim; ++j) {
            const double* w = layer.weights.row_ptr(j);
            double acc = w[layer.in_dim]; // bias coordinate
            for (std::size_t c = 0; c < layer.in_dim; ++c) acc += w[c] * h[c];
            o[j] = act.apply(acc);
        }
    }
    return out;
}

std::pair<Matrix, ResidualReport> ff_solve_latents(const FeedforwardLayer& layer,
                                                   const Activation& act,
                                                   const Matrix& h_target,
                                                   std::size_t workers) {
    if (h_target.cols() != layer.out_dim) {
        throw ShapeMismatch("targets have " + std::to_string(h_target.cols()) +
                            " features, layer produces " + std::to_string(layer.out_dim));
    }
    const std::size_t n = h_target.rows();
    const Matrix w_sub = layer.weight_submatrix();
    const QrFactorization qr = qr_factorize(w_sub);

    Matrix latents(n, layer.in_dim);
    ResidualReport report;
    report.residual_norms.assign(n, 0.0);
    report.equation_counts.assign(n, layer.out_dim);

    // Every datapoint is an independent solve against the shared
    // factorization, so any partitioning yields identical results.
    parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> rhs(layer.out_dim);
        std::vector<double> r(layer.out_dim);
        for (std::size_t i = begin; i < end; ++i) {
            const double* t = h_target.row_ptr(i);
            for (std::size_t j = 0; j < layer.out_dim; ++j) {
                rhs[j] = act.invert(t[j]) - layer.weights(j, layer.in_dim);
            }
            const std::vector<double> x = qr_solve_truncated(qr, rhs);
            double* h = latents.row_ptr(i);
            for (std::size_t c = 0; c < layer.in_dim; ++c) h[c] = x[c];
            // Explicit residual of the linear system for this datapoint.
            double s = 0.0;
            for (std::size_t j = 0; j < layer.out_dim; ++j) {
                const double* w = w_sub.row_ptr(j);
                double acc = -rhs[j];
                for (std::size_t c = 0; c < layer.in_dim; ++c) acc += w[c] * x[c];
                r[j] = acc;
                s += acc * acc;
            }
            report.residual_norms[i] = std::sqrt(s);
        }
    });
    return {std::move(latents), std::move(report)};
}

FeedforwardLayer ff_solve_weights(const Matrix& h_prev, const Activation& act,
                                  const Matrix& h_target, std::size_t workers) {
    if (h_prev.rows() != h_target.rows()) {
        throw ShapeMismatch("latent and target batches differ in datapoint count");
    }
    const std::size_t n = h_prev.rows();
    const std::size_t in_dim = h_prev.cols();
    const std::size_t out_dim = h_target.cols();
    if (n < in_dim + 1) {
        throw InsufficientData("solving " + std::to_string(in_dim + 1) +
                               " weights per row needs at least that many datapoints, got " +
                               std::to_string(n));
    }

    // Augmented system [H | 1]: the bias is just one more input coordinate.
    Matrix a(n, in_dim + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* h = h_prev.row_ptr(i);
        double* dst = a.row_ptr(i);
        for (std::size_t c = 0; c < in_dim; ++c) dst[c] = h[c];
        dst[in_dim] = 1.0;
    }
    const QrFactorization qr = qr_factorize(a);

    Matrix weights(out_dim, in_dim + 1);
    parallel_for(out_dim, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> rhs(n);
        for (std::size_t j = begin; j < end; ++j) {
            for (std::size_t i = 0; i < n; ++i) rhs[i] = act.invert(h_target(i, j));
            const std::vector<double> w = qr_solve_truncated(qr, rhs);
            double* dst = weights.row_ptr(j);
            for (std::size_t c = 0; c <= in_dim; ++c) dst[c] = w[c];
        }
    });
    return FeedforwardLayer(in_dim, out_dim, std::move(weights));
}

FeedforwardLayer init_feedforward_layer(std::size_t in_dim, std::size_t out_dim,
                                        std::uint64_t seed, bool orthogonal) {
    if (in_dim == 0 || out_dim == 0) throw InvalidArgument("layer dimensions must be positive");
    if (in_dim > out_dim) {
        throw ArchitectureInvalid("layer narrows from " + std::to_string(in_dim) + " to " +
                                  std::to_string(out_dim) +
                                  "; widths may only grow toward the data");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    constexpr std::uint64_t kInitTag = 0x11;
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        rng::Stream stream(rng::mix_seed(seed, kInitTag, attempt));
        Matrix w(out_dim, in_dim + 1);
        for (double& v : w.data()) v = scale * stream.next_gaussian();

        if (orthogonal) {
            // Modified Gram-Schmidt over the weight block's columns: the
            // orthogonal projection of the random draw. Bias column is kept.
            bool degenerate = false;
            for (std::size_t c = 0; c < in_dim && !degenerate; ++c) {
                for (std::size_t p = 0; p < c; ++p) {
                    double dot = 0.0;
                    for (std::size_t r = 0; r < out_dim; ++r) dot += w(r, c) * w(r, p);
                    for (std::size_t r = 0; r < out_dim; ++r) w(r, c) -= dot * w(r, p);
                }
                double norm = 0.0;
                for (std::size_t r = 0; r < out_dim; ++r) norm += w(r, c) * w(r, c);
                norm = std::sqrt(norm);
                if (norm < 1e-12) {
                    degenerate = true;
                    break;
                }
                for (std::size_t r = 0; r < out_dim; ++r) w(r, c) /= norm;
            }
            if (degenerate) continue;
        }

        FeedforwardLayer layer(in_dim, out_dim, std::move(w));
        if (column_rank_ok(layer.weight_submatrix())) return layer;
    }
    throw RankDeficient("could not draw a full-rank " + std::to_string(out_dim) + "x" +
                        std::to_string(in_dim) + " weight initialization");
}

} // namespace starnet
