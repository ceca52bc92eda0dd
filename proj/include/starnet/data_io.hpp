#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "starnet/diagnostics.hpp"
#include "starnet/matrix.hpp"
#include "starnet/trainer.hpp"

namespace starnet {

// A loaded dataset: pixel values normalized to [0,1], laid out
// [image][channel][row][column].
struct ImageBatch {
    std::size_t count = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    std::size_t image_size() const { return channels * height * width; }
    double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return pixels[((n * channels + c) * height + y) * width + x];
    }
    double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[((n * channels + c) * height + y) * width + x];
    }
};

struct DatasetHeader {
    std::size_t count = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

// IDX image tensor (big-endian, magic 0x00000803): N x H x W bytes scaled by
// 1/255 into a single-channel batch.
ImageBatch load_idx(const std::string& path);
// IDX label vector (magic 0x00000801).
std::vector<std::uint8_t> load_idx_labels(const std::string& path);
// Header-only read: N and shape without touching the pixel payload.
DatasetHeader peek_idx(const std::string& path);

// CIFAR-10 binary: 3073-byte records (label + 3x32x32 channel-major pixels).
struct Cifar10Data {
    ImageBatch images;
    std::vector<std::uint8_t> labels;
};
Cifar10Data load_cifar10(const std::string& path);
DatasetHeader peek_cifar10(const std::string& path);

// One image per row, channel-major raster order — the layout every solver
// expects. unflatten is the exact inverse.
Matrix flatten(const ImageBatch& batch);
ImageBatch unflatten(const Matrix& rows, std::size_t channels, std::size_t height,
                     std::size_t width);

// Tiles the batch into a grid (image n lands at row n/cols, column n%cols)
// and writes binary PGM (1 channel) or PPM (3 channels). Values are clamped
// to [0,1] before the 0-255 scale; the clamp count is returned.
std::size_t write_image_grid(const ImageBatch& batch, std::size_t cols, const std::string& path);

// Versioned little-endian binary model format:
//   "STAR" | u32 version | f64 slope | u32 layer count | layers...
//   layer tag u8: 0 = feedforward (u32 in, u32 out, out x (in+1) f64)
//                 1 = conv-unpool (u32 c,h,w,k,m,u, m x (c*k*k) f64)
// load(save(m)) is bit-identical.
inline constexpr std::uint32_t kModelFormatVersion = 1;
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

// CSV schema: epoch,layer,phase,linear_residual,elastic_loss — one row per
// solve phase, in the order the histories are given.
void write_metrics_csv(const std::vector<LayerHistory>& histories, const std::string& path);

// CSV schema: index,residual_norm,flagged.
void write_residuals_csv(const ResidualReport& report, const std::vector<std::size_t>& flagged,
                         const std::string& path);

// Raw matrix dump, one datapoint per row, full double precision.
void write_matrix_csv(const Matrix& m, const std::string& path);

} // namespace starnet
