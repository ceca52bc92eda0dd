#include "starnet/conv_layer.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "starnet/errors.hpp"
#include "starnet/linalg.hpp"
#include "starnet/parallel.hpp"
#include "starnet/rng.hpp"

namespace starnet {
namespace {

// Fills one column block of the transposed patch matrix: columns
// [col0, col0 + P) get the patches of map `x`, feature rows stay contiguous.
void fill_patches_transposed(Matrix& at, std::size_t col0, const double* x, std::size_t c,
                             std::size_t h, std::size_t w, std::size_t k) {
    const std::size_t oh = h + k - 1;
    const std::size_t ow = w + k - 1;
    for (std::size_t cc = 0; cc < c; ++cc) {
        const double* plane = x + cc * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) -
                                      static_cast<std::ptrdiff_t>(k - 1);
            for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) -
                                          static_cast<std::ptrdiff_t>(k - 1);
                double* row = at.row_ptr((cc * k + ky) * k + kx) + col0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) + dy;
                    double* dst = row + oy * ow;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue; // stays zero
                    const double* src = plane + static_cast<std::size_t>(y) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox) + dx;
                        if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                        dst[ox] = src[static_cast<std::size_t>(xx)];
                    }
                }
            }
        }
    }
}

// Pools one flattened post-shuffle map into the flattened pre-shuffle layout,
// applying act_invert on the way: the right-hand side of every conv system.
void pooled_inverse_target(const ConvUnpoolLayer& layer, const Activation& act,
                           const double* y, double* pre) {
    const std::size_t u = layer.unpool_factor;
    const std::size_t oh = layer.conv_height();
    const std::size_t ow = layer.conv_width();
    const std::size_t hy = layer.out_height();
    const std::size_t wy = layer.out_width();
    for (std::size_t j = 0; j < layer.pre_shuffle_channels; ++j) {
        const std::size_t p = j / (u * u);
        const std::size_t dy = (j % (u * u)) / u;
        const std::size_t dx = j % u;
        double* dst = pre + j * oh * ow;
        const double* plane = y + p * hy * wy;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            const double* src = plane + (oy * u + dy) * wy + dx;
            for (std::size_t ox = 0; ox < ow; ++ox) {
                dst[oy * ow + ox] = act.invert(src[ox * u]);
            }
        }
    }
}

} // namespace

ResponseMap::ResponseMap(std::size_t c, std::size_t h, std::size_t w)
    : channels(c), height(h), width(w), data(c * h * w, 0.0) {}

ConvUnpoolLayer::ConvUnpoolLayer(std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                                 std::size_t m, std::size_t u, Matrix kern)
    : in_channels(c), in_height(h), in_width(w), kernel_size(k), pre_shuffle_channels(m),
      unpool_factor(u), kernels(std::move(kern)) {
    if (c == 0 || h == 0 || w == 0 || k == 0 || m == 0 || u == 0) {
        throw InvalidArgument("conv layer dimensions must be positive");
    }
    if (m % (u * u) != 0) {
        throw ArchitectureInvalid("pre-shuffle channel count " + std::to_string(m) +
                                  " is not divisible by unpool factor squared " +
                                  std::to_string(u * u));
    }
    if (kernels.rows() != m || kernels.cols() != c * k * k) {
        throw ShapeMismatch("kernel matrix is " + std::to_string(kernels.rows()) + "x" +
                            std::to_string(kernels.cols()) + ", expected " + std::to_string(m) +
                            "x" + std::to_string(c * k * k));
    }
    if (!kernels.all_finite()) throw InvalidArgument("kernels must be finite");
}

ResponseMap unpool(const ResponseMap& x, std::size_t u) {
    if (u == 0) throw InvalidArgument("unpool factor must be positive");
    if (x.channels % (u * u) != 0) {
        throw ShapeMismatch("cannot unpool " + std::to_string(x.channels) +
                            " channels by factor " + std::to_string(u));
    }
    ResponseMap out(x.channels / (u * u), x.height * u, x.width * u);
    for (std::size_t j = 0; j < x.channels; ++j) {
        const std::size_t p = j / (u * u);
        const std::size_t dy = (j % (u * u)) / u;
        const std::size_t dx = j % u;
        for (std::size_t y = 0; y < x.height; ++y) {
            for (std::size_t xx = 0; xx < x.width; ++xx) {
                out.at(p, y * u + dy, xx * u + dx) = x.at(j, y, xx);
            }
        }
    }
    return out;
}

ResponseMap pool(const ResponseMap& x, std::size_t u) {
    if (u == 0) throw InvalidArgument("unpool factor must be positive");
    if (x.height % u != 0 || x.width % u != 0) {
        throw ShapeMismatch("cannot pool " + std::to_string(x.height) + "x" +
                            std::to_string(x.width) + " maps by factor " + std::to_string(u));
    }
    ResponseMap out(x.channels * u * u, x.height / u, x.width / u);
    for (std::size_t j = 0; j < out.channels; ++j) {
        const std::size_t p = j / (u * u);
        const std::size_t dy = (j % (u * u)) / u;
        const std::size_t dx = j % u;
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t xx = 0; xx < out.width; ++xx) {
                out.at(j, y, xx) = x.at(p, y * u + dy, xx * u + dx);
            }
        }
    }
    return out;
}

Matrix extract_patches(const ResponseMap& x, std::size_t k) {
    if (k == 0) throw InvalidArgument("kernel size must be positive");
    const std::size_t oh = x.height + k - 1;
    const std::size_t ow = x.width + k - 1;
    Matrix at(x.channels * k * k, oh * ow);
    fill_patches_transposed(at, 0, x.data.data(), x.channels, x.height, x.width, k);
    return at.transposed();
}

Matrix build_conv_operator(const ConvUnpoolLayer& layer) {
    const std::size_t k = layer.kernel_size;
    const std::size_t h = layer.in_height;
    const std::size_t w = layer.in_width;
    const std::size_t oh = layer.conv_height();
    const std::size_t ow = layer.conv_width();
    Matrix a(layer.pre_shuffle_channels * oh * ow, layer.in_size());
    for (std::size_t j = 0; j < layer.pre_shuffle_channels; ++j) {
        const double* kern = layer.kernels.row_ptr(j);
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double* row = a.row_ptr((j * oh + oy) * ow + ox);
                for (std::size_t cc = 0; cc < layer.in_channels; ++cc) {
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy + ky) -
                                                 static_cast<std::ptrdiff_t>(k - 1);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox + kx) -
                                                      static_cast<std::ptrdiff_t>(k - 1);
                            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                            row[(cc * h + static_cast<std::size_t>(y)) * w +
                                static_cast<std::size_t>(xx)] += kern[(cc * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    return a;
}

ResponseMap conv_forward(const ConvUnpoolLayer& layer, const Activation& act,
                         const ResponseMap& x) {
    if (x.channels != layer.in_channels || x.height != layer.in_height ||
        x.width != layer.in_width) {
        throw ShapeMismatch("input map is " + std::to_string(x.channels) + "x" +
                            std::to_string(x.height) + "x" + std::to_string(x.width) +
                            ", layer expects " + std::to_string(layer.in_channels) + "x" +
                            std::to_string(layer.in_height) + "x" +
                            std::to_string(layer.in_width));
    }
    const Matrix patches = extract_patches(x, layer.kernel_size);
    const Matrix responses = multiply_abt(patches, layer.kernels); // P x m
    ResponseMap pre(layer.pre_shuffle_channels, layer.conv_height(), layer.conv_width());
    const std::size_t p_count = responses.rows();
    for (std::size_t p = 0; p < p_count; ++p) {
        for (std::size_t j = 0; j < layer.pre_shuffle_channels; ++j) {
            pre.data[j * p_count + p] = responses(p, j);
        }
    }
    ResponseMap out = unpool(pre, layer.unpool_factor);
    for (double& v : out.data) v = act.apply(v);
    return out;
}

Matrix conv_forward_batch(const ConvUnpoolLayer& layer, const Activation& act,
                          const Matrix& x_rows, std::size_t workers) {
    if (x_rows.cols() != layer.in_size()) {
        throw ShapeMismatch("row length " + std::to_string(x_rows.cols()) +
                            " does not match layer input size " +
                            std::to_string(layer.in_size()));
    }
    Matrix out(x_rows.rows(), layer.out_size());
    parallel_for(x_rows.rows(), workers, [&](std::size_t begin, std::size_t end) {
        ResponseMap x(layer.in_channels, layer.in_height, layer.in_width);
        for (std::size_t i = begin; i < end; ++i) {
            const double* src = x_rows.row_ptr(i);
            std::copy(src, src + layer.in_size(), x.data.begin());
            const ResponseMap y = conv_forward(layer, act, x);
            std::copy(y.data.begin(), y.data.end(), out.row_ptr(i));
        }
    });
    return out;
}

std::pair<Matrix, ResidualReport> conv_solve_latents_batch(const ConvUnpoolLayer& layer,
                                                           const Activation& act,
                                                           const Matrix& y_rows,
                                                           std::size_t workers) {
    if (y_rows.cols() != layer.out_size()) {
        throw ShapeMismatch("target row length " + std::to_string(y_rows.cols()) +
                            " does not match layer output size " +
                            std::to_string(layer.out_size()));
    }
    const std::size_t rows = layer.pre_shuffle_channels * layer.conv_height() * layer.conv_width();
    const std::size_t cols = layer.in_size();
    if (rows < cols) {
        throw DeterminednessViolation(
            "conv latent system has " + std::to_string(rows) + " equations for " +
            std::to_string(cols) + " unknowns; needs pre-shuffle channels >= input channels");
    }
    const Matrix a = build_conv_operator(layer);
    const QrFactorization qr = qr_factorize(a);

    const std::size_t n = y_rows.rows();
    Matrix latents(n, cols);
    ResidualReport report;
    report.residual_norms.assign(n, 0.0);
    report.equation_counts.assign(n, rows);

    parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> rhs(rows);
        for (std::size_t i = begin; i < end; ++i) {
            pooled_inverse_target(layer, act, y_rows.row_ptr(i), rhs.data());
            const std::vector<double> x = qr_solve_truncated(qr, rhs);
            std::copy(x.begin(), x.end(), latents.row_ptr(i));
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* arow = a.row_ptr(r);
                double acc = -rhs[r];
                for (std::size_t c = 0; c < cols; ++c) acc += arow[c] * x[c];
                s += acc * acc;
            }
            report.residual_norms[i] = std::sqrt(s);
        }
    });
    return {std::move(latents), std::move(report)};
}

std::pair<ResponseMap, double> conv_solve_latents(const ConvUnpoolLayer& layer,
                                                  const Activation& act,
                                                  const ResponseMap& y_target) {
    if (y_target.channels != layer.out_channels() || y_target.height != layer.out_height() ||
        y_target.width != layer.out_width()) {
        throw ShapeMismatch("target map does not match layer output shape");
    }
    Matrix y_rows(1, layer.out_size(), std::vector<double>(y_target.data));
    auto [latents, report] = conv_solve_latents_batch(layer, act, y_rows);
    ResponseMap x(layer.in_channels, layer.in_height, layer.in_width);
    const double* src = latents.row_ptr(0);
    std::copy(src, src + layer.in_size(), x.data.begin());
    return {std::move(x), report.residual_norms[0]};
}

Matrix conv_solve_weights(const ConvUnpoolLayer& geometry, const Activation& act,
                          const Matrix& x_rows, const Matrix& y_rows, std::size_t sample_size,
                          std::size_t chunks, std::uint64_t seed, std::size_t workers) {
    if (x_rows.rows() != y_rows.rows()) {
        throw ShapeMismatch("input and target batches differ in datapoint count");
    }
    if (x_rows.cols() != geometry.in_size() || y_rows.cols() != geometry.out_size()) {
        throw ShapeMismatch("batch row lengths do not match layer geometry");
    }
    if (chunks == 0) throw InvalidArgument("chunk count must be at least 1");
    const std::size_t n = x_rows.rows();
    if (n == 0) throw InsufficientData("cannot solve kernels from an empty batch");

    // Choose the datapoints: everything, or a seeded draw without
    // replacement. Sorted order keeps chunk contents independent of the
    // draw's internal permutation.
    std::vector<std::size_t> picked;
    if (sample_size == 0 || sample_size >= n) {
        picked.resize(n);
        for (std::size_t i = 0; i < n; ++i) picked[i] = i;
    } else {
        constexpr std::uint64_t kSampleTag = 0x21;
        rng::Stream stream(rng::mix_seed(seed, kSampleTag));
        picked = rng::sample_without_replacement(n, sample_size, stream);
    }

    const std::size_t k = geometry.kernel_size;
    const std::size_t taps = geometry.in_channels * k * k;
    const std::size_t p_count = geometry.conv_height() * geometry.conv_width();
    const std::size_t m = geometry.pre_shuffle_channels;

    Matrix kernel_sum(m, taps);
    const std::size_t base = picked.size() / chunks;
    const std::size_t extra = picked.size() % chunks;
    std::size_t offset = 0;
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
        const std::size_t count = base + (chunk < extra ? 1 : 0);
        const std::size_t chunk_rows = count * p_count;
        if (chunk_rows < taps) {
            throw InsufficientData("chunk " + std::to_string(chunk + 1) + " has " +
                                   std::to_string(chunk_rows) + " equations for " +
                                   std::to_string(taps) + " kernel taps");
        }

        // Assemble the patch system directly in transposed (feature-major)
        // storage, and every channel's pooled inverse-activated targets.
        Matrix at(taps, chunk_rows);
        Matrix bt(m, chunk_rows);
        std::vector<double> pre(m * p_count);
        for (std::size_t t = 0; t < count; ++t) {
            const std::size_t idx = picked[offset + t];
            fill_patches_transposed(at, t * p_count, x_rows.row_ptr(idx), geometry.in_channels,
                                    geometry.in_height, geometry.in_width, k);
            pooled_inverse_target(geometry, act, y_rows.row_ptr(idx), pre.data());
            for (std::size_t j = 0; j < m; ++j) {
                std::copy(pre.begin() + j * p_count, pre.begin() + (j + 1) * p_count,
                          bt.row_ptr(j) + t * p_count);
            }
        }
        offset += count;

        const QrFactorization qr = qr_factorize_transposed(std::move(at));
        Matrix chunk_kernels(m, taps);
        parallel_for(m, workers, [&](std::size_t begin, std::size_t end) {
            for (std::size_t j = begin; j < end; ++j) {
                const double* b = bt.row_ptr(j);
                const std::vector<double> w =
                    qr_solve_truncated(qr, std::vector<double>(b, b + chunk_rows));
                std::copy(w.begin(), w.end(), chunk_kernels.row_ptr(j));
            }
        });
        for (std::size_t i = 0; i < kernel_sum.size(); ++i) {
            kernel_sum.data()[i] += chunk_kernels.data()[i];
        }
    }
    for (double& v : kernel_sum.data()) v /= static_cast<double>(chunks);
    return kernel_sum;
}

ConvUnpoolLayer init_conv_layer(std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                                std::size_t m, std::size_t u, std::uint64_t seed) {
    const std::size_t taps = c * k * k;
    const double scale = 1.0 / std::sqrt(static_cast<double>(taps));
    constexpr std::uint64_t kInitTag = 0x12;
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        rng::Stream stream(rng::mix_seed(seed, kInitTag, attempt));
        Matrix kern(m, taps);
        for (double& v : kern.data()) v = scale * stream.next_gaussian();
        ConvUnpoolLayer layer(c, h, w, k, m, u, std::move(kern));
        const std::size_t rows = m * layer.conv_height() * layer.conv_width();
        if (rows < layer.in_size()) {
            throw DeterminednessViolation(
                "conv layer yields " + std::to_string(rows) + " equations for " +
                std::to_string(layer.in_size()) +
                " latent unknowns; raise pre-shuffle channels or kernel size");
        }
        if (column_rank_ok(build_conv_operator(layer))) return layer;
    }
    throw RankDeficient("could not draw full-rank conv kernels");
}

} // namespace starnet
