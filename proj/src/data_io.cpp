#include "starnet/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "starnet/errors.hpp"

namespace starnet {
namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803; // u8 tensor, 3 dims
constexpr std::uint32_t kIdxLabelMagic = 0x00000801; // u8 tensor, 1 dim

class FileReader {
public:
    explicit FileReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open " + path + " for reading");
    }

    void read(void* dst, std::size_t bytes) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
        if (static_cast<std::size_t>(in_.gcount()) != bytes) {
            throw TruncatedFile(path_ + " ends early");
        }
    }

    std::uint8_t read_u8() {
        std::uint8_t v = 0;
        read(&v, 1);
        return v;
    }

    std::uint32_t read_u32_be() {
        std::uint8_t b[4];
        read(b, 4);
        return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
               (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
    }

    std::uint32_t read_u32_le() {
        std::uint8_t b[4];
        read(b, 4);
        return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
               (std::uint32_t{b[3]} << 24);
    }

    double read_f64_le() {
        std::uint8_t b[8];
        read(b, 8);
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
        return std::bit_cast<double>(bits);
    }

private:
    std::string path_;
    std::ifstream in_;
};

class FileWriter {
public:
    explicit FileWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open " + path + " for writing");
    }

    void write(const void* src, std::size_t bytes) {
        out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(bytes));
    }

    void write_u8(std::uint8_t v) { write(&v, 1); }

    void write_u32_le(std::uint32_t v) {
        std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v >> 16),
                             static_cast<std::uint8_t>(v >> 24)};
        write(b, 4);
    }

    void write_f64_le(double v) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(bits >> (8 * i));
        write(b, 8);
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("failed to write " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
};

std::size_t file_size(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path + " for reading");
    return static_cast<std::size_t>(in.tellg());
}

void require_all_finite(const Matrix& m, const std::string& what) {
    if (!m.all_finite()) throw InvalidArgument(what + " contains non-finite values");
}

} // namespace

ImageBatch load_idx(const std::string& path) {
    FileReader in(path);
    const std::uint32_t magic = in.read_u32_be();
    if (magic != kIdxImageMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "0x%08x", magic);
        throw BadMagic(path + " has magic " + buf + ", expected an image tensor");
    }
    ImageBatch batch;
    batch.count = in.read_u32_be();
    batch.channels = 1;
    batch.height = in.read_u32_be();
    batch.width = in.read_u32_be();
    const std::size_t total = batch.count * batch.image_size();
    std::vector<std::uint8_t> raw(total);
    if (total > 0) in.read(raw.data(), total);
    batch.pixels.resize(total);
    for (std::size_t i = 0; i < total; ++i) batch.pixels[i] = raw[i] / 255.0;
    return batch;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
    FileReader in(path);
    const std::uint32_t magic = in.read_u32_be();
    if (magic != kIdxLabelMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "0x%08x", magic);
        throw BadMagic(path + " has magic " + buf + ", expected a label vector");
    }
    const std::size_t count = in.read_u32_be();
    std::vector<std::uint8_t> labels(count);
    if (count > 0) in.read(labels.data(), count);
    return labels;
}

DatasetHeader peek_idx(const std::string& path) {
    FileReader in(path);
    const std::uint32_t magic = in.read_u32_be();
    if (magic != kIdxImageMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "0x%08x", magic);
        throw BadMagic(path + " has magic " + buf + ", expected an image tensor");
    }
    DatasetHeader header;
    header.count = in.read_u32_be();
    header.channels = 1;
    header.height = in.read_u32_be();
    header.width = in.read_u32_be();
    return header;
}

Cifar10Data load_cifar10(const std::string& path) {
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    const std::size_t bytes = file_size(path);
    if (bytes == 0 || bytes % kRecord != 0) {
        throw TruncatedFile(path + " is " + std::to_string(bytes) +
                            " bytes, not a whole number of 3073-byte records");
    }
    FileReader in(path);
    Cifar10Data data;
    data.images.count = bytes / kRecord;
    data.images.channels = 3;
    data.images.height = 32;
    data.images.width = 32;
    data.images.pixels.resize(data.images.count * data.images.image_size());
    data.labels.resize(data.images.count);
    std::vector<std::uint8_t> record(kRecord);
    for (std::size_t n = 0; n < data.images.count; ++n) {
        in.read(record.data(), kRecord);
        data.labels[n] = record[0];
        double* dst = data.images.pixels.data() + n * data.images.image_size();
        for (std::size_t i = 0; i < kRecord - 1; ++i) dst[i] = record[1 + i] / 255.0;
    }
    return data;
}

DatasetHeader peek_cifar10(const std::string& path) {
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    const std::size_t bytes = file_size(path);
    if (bytes == 0 || bytes % kRecord != 0) {
        throw TruncatedFile(path + " is " + std::to_string(bytes) +
                            " bytes, not a whole number of 3073-byte records");
    }
    return DatasetHeader{bytes / kRecord, 3, 32, 32};
}

Matrix flatten(const ImageBatch& batch) {
    Matrix rows(batch.count, batch.image_size(),
                std::vector<double>(batch.pixels.begin(), batch.pixels.end()));
    return rows;
}

ImageBatch unflatten(const Matrix& rows, std::size_t channels, std::size_t height,
                     std::size_t width) {
    if (rows.cols() != channels * height * width) {
        throw ShapeMismatch("row length " + std::to_string(rows.cols()) +
                            " does not match " + std::to_string(channels) + "x" +
                            std::to_string(height) + "x" + std::to_string(width));
    }
    ImageBatch batch;
    batch.count = rows.rows();
    batch.channels = channels;
    batch.height = height;
    batch.width = width;
    batch.pixels.assign(rows.data().begin(), rows.data().end());
    return batch;
}

std::size_t write_image_grid(const ImageBatch& batch, std::size_t cols, const std::string& path) {
    if (batch.count == 0) throw InvalidArgument("cannot write an empty image grid");
    if (cols == 0) cols = 1;
    if (batch.channels != 1 && batch.channels != 3) {
        throw InvalidArgument("image grids support 1 or 3 channels, got " +
                              std::to_string(batch.channels));
    }
    if (cols > batch.count) cols = batch.count;
    const std::size_t grid_rows = (batch.count + cols - 1) / cols;
    const std::size_t out_h = grid_rows * batch.height;
    const std::size_t out_w = cols * batch.width;

    std::size_t clamped = 0;
    std::vector<std::uint8_t> canvas(out_h * out_w * batch.channels, 0);
    for (std::size_t n = 0; n < batch.count; ++n) {
        const std::size_t ty = (n / cols) * batch.height;
        const std::size_t tx = (n % cols) * batch.width;
        for (std::size_t y = 0; y < batch.height; ++y) {
            for (std::size_t x = 0; x < batch.width; ++x) {
                for (std::size_t c = 0; c < batch.channels; ++c) {
                    double v = batch.at(n, c, y, x);
                    if (v < 0.0) {
                        v = 0.0;
                        ++clamped;
                    } else if (v > 1.0) {
                        v = 1.0;
                        ++clamped;
                    }
                    // Pixels interleave channels within a row (PPM order).
                    canvas[((ty + y) * out_w + tx + x) * batch.channels + c] =
                        static_cast<std::uint8_t>(std::lround(v * 255.0));
                }
            }
        }
    }

    FileWriter out(path);
    const std::string header = std::string(batch.channels == 1 ? "P5" : "P6") + "\n" +
                               std::to_string(out_w) + " " + std::to_string(out_h) + "\n255\n";
    out.write(header.data(), header.size());
    out.write(canvas.data(), canvas.size());
    out.close();
    return clamped;
}

void save_model(const Model& model, const std::string& path) {
    if (model.layers.empty()) throw InvalidArgument("refusing to save a model with no layers");
    FileWriter out(path);
    out.write("STAR", 4);
    out.write_u32_le(kModelFormatVersion);
    out.write_f64_le(model.slope);
    out.write_u32_le(static_cast<std::uint32_t>(model.layers.size()));
    for (const AnyLayer& any : model.layers) {
        if (const auto* ff = std::get_if<FeedforwardLayer>(&any)) {
            require_all_finite(ff->weights, "feedforward weights");
            out.write_u8(0);
            out.write_u32_le(static_cast<std::uint32_t>(ff->in_dim));
            out.write_u32_le(static_cast<std::uint32_t>(ff->out_dim));
            for (double v : ff->weights.data()) out.write_f64_le(v);
        } else {
            const auto& cv = std::get<ConvUnpoolLayer>(any);
            require_all_finite(cv.kernels, "conv kernels");
            out.write_u8(1);
            out.write_u32_le(static_cast<std::uint32_t>(cv.in_channels));
            out.write_u32_le(static_cast<std::uint32_t>(cv.in_height));
            out.write_u32_le(static_cast<std::uint32_t>(cv.in_width));
            out.write_u32_le(static_cast<std::uint32_t>(cv.kernel_size));
            out.write_u32_le(static_cast<std::uint32_t>(cv.pre_shuffle_channels));
            out.write_u32_le(static_cast<std::uint32_t>(cv.unpool_factor));
            for (double v : cv.kernels.data()) out.write_f64_le(v);
        }
    }
    out.close();
}

Model load_model(const std::string& path) {
    FileReader in(path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "STAR", 4) != 0) {
        throw BadMagic(path + " is not a model file");
    }
    const std::uint32_t version = in.read_u32_le();
    if (version != kModelFormatVersion) {
        throw VersionMismatch(path + " uses format version " + std::to_string(version) +
                              ", this build reads version " +
                              std::to_string(kModelFormatVersion));
    }
    Model model;
    model.slope = in.read_f64_le();
    const std::uint32_t layer_count = in.read_u32_le();
    model.layers.reserve(layer_count);
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        const std::uint8_t tag = in.read_u8();
        if (tag == 0) {
            const std::size_t in_dim = in.read_u32_le();
            const std::size_t out_dim = in.read_u32_le();
            Matrix w(out_dim, in_dim + 1);
            for (double& v : w.data()) v = in.read_f64_le();
            model.layers.emplace_back(FeedforwardLayer(in_dim, out_dim, std::move(w)));
        } else if (tag == 1) {
            const std::size_t c = in.read_u32_le();
            const std::size_t h = in.read_u32_le();
            const std::size_t w = in.read_u32_le();
            const std::size_t k = in.read_u32_le();
            const std::size_t m = in.read_u32_le();
            const std::size_t u = in.read_u32_le();
            Matrix kern(m, c * k * k);
            for (double& v : kern.data()) v = in.read_f64_le();
            model.layers.emplace_back(ConvUnpoolLayer(c, h, w, k, m, u, std::move(kern)));
        } else {
            throw InvalidArgument(path + " contains unknown layer tag " + std::to_string(tag));
        }
    }
    return model;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void write_metrics_csv(const std::vector<LayerHistory>& histories, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "epoch,layer,phase,linear_residual,elastic_loss\n";
    for (const LayerHistory& history : histories) {
        for (const StepRecord& step : history.steps) {
            out << step.epoch << ',' << step.layer_index << ',' << phase_name(step.phase) << ','
                << format_double(step.linear_residual) << ',' << format_double(step.elastic_loss)
                << '\n';
        }
    }
    out.close();
    if (!out) throw IoError("failed to write " + path);
}

void write_residuals_csv(const ResidualReport& report, const std::vector<std::size_t>& flagged,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "index,residual_norm,flagged\n";
    std::size_t next_flag = 0;
    for (std::size_t i = 0; i < report.residual_norms.size(); ++i) {
        const bool is_flagged = next_flag < flagged.size() && flagged[next_flag] == i;
        if (is_flagged) ++next_flag;
        out << i << ',' << format_double(report.residual_norms[i]) << ',' << (is_flagged ? 1 : 0)
            << '\n';
    }
    out.close();
    if (!out) throw IoError("failed to write " + path);
}

void write_matrix_csv(const Matrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (c > 0) out << ',';
            out << format_double(m(r, c));
        }
        out << '\n';
    }
    out.close();
    if (!out) throw IoError("failed to write " + path);
}

} // namespace starnet
