#pragma once

// Deterministic synthetic handwriting-like images: ten fixed glyph classes,
// each a few quadratic curve strokes stamped with a Gaussian brush, plus
// per-image jitter (control-point noise, shift, brush width). Images of one
// class are strongly correlated, the way digits of one class are, which gives
// the corpus the steep spectrum real handwriting has. Written through the
// real IDX byte format so loaders get exercised end to end.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "starnet/data_io.hpp"
#include "starnet/rng.hpp"

namespace testsupport {

inline starnet::ImageBatch synth_strokes(std::size_t count, std::uint64_t seed,
                                         std::size_t side = 28) {
    starnet::ImageBatch batch;
    batch.count = count;
    batch.channels = 1;
    batch.height = side;
    batch.width = side;
    batch.pixels.assign(count * side * side, 0.0);

    starnet::rng::Stream stream(starnet::rng::mix_seed(seed, 0x57, 0));
    const double margin = 4.0;
    const double span = static_cast<double>(side) - 2.0 * margin;

    for (std::size_t n = 0; n < count; ++n) {
        double* img = batch.pixels.data() + n * side * side;
        // Prototype strokes depend on the class alone; the per-image stream
        // only supplies jitter, so images of one class stay close.
        const std::uint64_t glyph = n % 10;
        starnet::rng::Stream proto(starnet::rng::mix_seed(0xD161, glyph));
        const std::size_t strokes = 3 + static_cast<std::size_t>(proto.next_below(2));
        // Jitter is a smooth low-dimensional warp (shift, rotation, scale,
        // shear, brush width), the way real handwriting varies; the corpus
        // this imitates is centered by mass, so the shift stays small.
        const double dx = 1.0 * (stream.next_unit() - 0.5);
        const double dy = 1.0 * (stream.next_unit() - 0.5);
        const double width = 0.95 + 0.3 * stream.next_unit();
        const double inv2s2 = 1.0 / (2.0 * width * width);
        const double rot = 0.1 * stream.next_gaussian();
        const double sx = 1.0 + 0.06 * stream.next_gaussian();
        const double sy = 1.0 + 0.06 * stream.next_gaussian();
        const double shear = 0.08 * stream.next_gaussian();
        const double half = static_cast<double>(side) / 2.0;
        for (std::size_t s = 0; s < strokes; ++s) {
            double px[3];
            double py[3];
            for (int p = 0; p < 3; ++p) {
                const double ux = margin + span * proto.next_unit() - half;
                const double uy = margin + span * proto.next_unit() - half;
                px[p] = half + dx + sx * (std::cos(rot) * ux - std::sin(rot) * uy) + shear * uy;
                py[p] = half + dy + sy * (std::sin(rot) * ux + std::cos(rot) * uy);
            }
            const int steps = 40;
            for (int t = 0; t <= steps; ++t) {
                const double tt = static_cast<double>(t) / steps;
                const double a = (1.0 - tt) * (1.0 - tt);
                const double b = 2.0 * tt * (1.0 - tt);
                const double c = tt * tt;
                const double cx = a * px[0] + b * px[1] + c * px[2];
                const double cy = a * py[0] + b * py[1] + c * py[2];
                const int y0 = std::max(0, static_cast<int>(cy) - 3);
                const int y1 = std::min(static_cast<int>(side) - 1, static_cast<int>(cy) + 3);
                const int x0 = std::max(0, static_cast<int>(cx) - 3);
                const int x1 = std::min(static_cast<int>(side) - 1, static_cast<int>(cx) + 3);
                for (int y = y0; y <= y1; ++y) {
                    for (int x = x0; x <= x1; ++x) {
                        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                        img[y * side + x] += std::exp(-d2 * inv2s2);
                    }
                }
            }
        }
        double peak = 0.0;
        for (std::size_t i = 0; i < side * side; ++i) peak = std::max(peak, img[i]);
        if (peak > 0.0) {
            for (std::size_t i = 0; i < side * side; ++i) img[i] /= peak;
        }
    }
    return batch;
}

// Serializes a single-channel batch as IDX image bytes (big-endian header,
// one byte per pixel).
inline void write_idx(const starnet::ImageBatch& batch, const std::string& path) {
    if (batch.channels != 1) throw std::invalid_argument("IDX fixtures are single-channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    const auto put_u32 = [&](std::uint32_t v) {
        const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                           static_cast<char>(v >> 8), static_cast<char>(v)};
        out.write(b, 4);
    };
    put_u32(0x00000803);
    put_u32(static_cast<std::uint32_t>(batch.count));
    put_u32(static_cast<std::uint32_t>(batch.height));
    put_u32(static_cast<std::uint32_t>(batch.width));
    for (double v : batch.pixels) {
        const long byte = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        out.put(static_cast<char>(static_cast<unsigned char>(byte)));
    }
    if (!out) throw std::runtime_error("failed to write " + path);
}

inline void write_idx_labels(const std::vector<std::uint8_t>& labels, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    const auto put_u32 = [&](std::uint32_t v) {
        const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                           static_cast<char>(v >> 8), static_cast<char>(v)};
        out.write(b, 4);
    };
    put_u32(0x00000801);
    put_u32(static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw std::runtime_error("failed to write " + path);
}

// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& hint) {
        static std::atomic<unsigned> counter{0};
        std::random_device rd;
        const auto base = std::filesystem::temp_directory_path();
        path_ = base / (hint + "-" + std::to_string(rd()) + "-" +
                        std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// Round-trips a generated batch through real IDX bytes so every consumer of
// the fixture also exercises the loader.
inline starnet::ImageBatch synth_strokes_via_idx(std::size_t count, std::uint64_t seed,
                                                 const TempDir& dir,
                                                 const std::string& name = "strokes.idx") {
    const std::string path = dir.file(name);
    write_idx(synth_strokes(count, seed), path);
    return starnet::load_idx(path);
}

} // namespace testsupport
