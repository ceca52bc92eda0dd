#include "starnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "starnet/data_io.hpp"
#include "starnet/diagnostics.hpp"
#include "starnet/errors.hpp"

namespace starnet {
namespace {

const char* error_kind(const Error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
    if (dynamic_cast<const ArchitectureInvalid*>(&e)) return "ArchitectureInvalid";
    if (dynamic_cast<const BadMagic*>(&e)) return "BadMagic";
    if (dynamic_cast<const VersionMismatch*>(&e)) return "VersionMismatch";
    if (dynamic_cast<const TruncatedFile*>(&e)) return "TruncatedFile";
    if (dynamic_cast<const IoError*>(&e)) return "IoError";
    if (dynamic_cast<const RankDeficient*>(&e)) return "RankDeficient";
    if (dynamic_cast<const InsufficientData*>(&e)) return "InsufficientData";
    if (dynamic_cast<const DeterminednessViolation*>(&e)) return "DeterminednessViolation";
    if (dynamic_cast<const NonInvertibleActivation*>(&e)) return "NonInvertibleActivation";
    if (dynamic_cast<const ShapeMismatch*>(&e)) return "ShapeMismatch";
    if (dynamic_cast<const InvalidArgument*>(&e)) return "InvalidArgument";
    return "Error";
}

int exit_code_for(const Error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const ArchitectureInvalid*>(&e)) return 3;
    if (dynamic_cast<const BadMagic*>(&e) || dynamic_cast<const VersionMismatch*>(&e) ||
        dynamic_cast<const TruncatedFile*>(&e) || dynamic_cast<const IoError*>(&e)) {
        return 4;
    }
    if (dynamic_cast<const RankDeficient*>(&e) || dynamic_cast<const InsufficientData*>(&e) ||
        dynamic_cast<const DeterminednessViolation*>(&e) ||
        dynamic_cast<const NonInvertibleActivation*>(&e) ||
        dynamic_cast<const ShapeMismatch*>(&e)) {
        return 5;
    }
    return 6;
}

std::size_t parse_count(const std::string& text, const char* what) {
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(std::string(what) + " expects an unsigned integer, got '" + text + "'");
    }
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (errno != 0 || end != text.c_str() + text.size()) {
        throw ConfigError(std::string(what) + " value '" + text + "' is out of range");
    }
    return static_cast<std::size_t>(v);
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = text.find(sep, start);
        if (pos == std::string::npos) {
            parts.push_back(text.substr(start));
            return parts;
        }
        parts.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

// "k7m4u2" -> (7, 4, 2)
ConvUnpoolSpec parse_conv_chunk(const std::string& text, std::size_t c, std::size_t h,
                                std::size_t w) {
    const std::size_t mp = text.find('m');
    const std::size_t up = text.find('u');
    if (text.empty() || text[0] != 'k' || mp == std::string::npos || up == std::string::npos ||
        mp < 1 || up < mp) {
        throw ConfigError("conv layer spec '" + text + "' is not of the form k<k>m<m>u<u>");
    }
    ConvUnpoolSpec spec;
    spec.in_channels = c;
    spec.in_height = h;
    spec.in_width = w;
    spec.kernel_size = parse_count(text.substr(1, mp - 1), "kernel size");
    spec.pre_shuffle_channels = parse_count(text.substr(mp + 1, up - mp - 1), "channel count");
    spec.unpool_factor = parse_count(text.substr(up + 1), "unpool factor");
    return spec;
}

} // namespace

Architecture parse_architecture(const std::string& description, double slope) {
    Architecture arch;
    arch.slope = slope;
    if (description.rfind("ff:", 0) == 0) {
        const std::vector<std::string> widths = split(description.substr(3), '-');
        if (widths.size() < 2) {
            throw ConfigError("feedforward architecture needs at least two widths, e.g. ff:128-784");
        }
        for (std::size_t i = 1; i < widths.size(); ++i) {
            arch.layers.push_back(FeedforwardSpec{parse_count(widths[i - 1], "layer width"),
                                                  parse_count(widths[i], "layer width")});
        }
        return arch;
    }
    if (description.rfind("conv:", 0) == 0) {
        const std::vector<std::string> parts = split(description.substr(5), ':');
        if (parts.size() != 2) {
            throw ConfigError("conv architecture is conv:<c>x<h>x<w>:k<k>m<m>u<u>[-...]");
        }
        const std::vector<std::string> dims = split(parts[0], 'x');
        if (dims.size() != 3) {
            throw ConfigError("conv input shape '" + parts[0] + "' is not of the form <c>x<h>x<w>");
        }
        std::size_t c = parse_count(dims[0], "channel count");
        std::size_t h = parse_count(dims[1], "height");
        std::size_t w = parse_count(dims[2], "width");
        for (const std::string& chunk : split(parts[1], '-')) {
            const ConvUnpoolSpec spec = parse_conv_chunk(chunk, c, h, w);
            const std::size_t u2 = spec.unpool_factor * spec.unpool_factor;
            if (u2 == 0 || spec.pre_shuffle_channels % u2 != 0) {
                throw ConfigError("conv layer '" + chunk + "': channel count " +
                                  std::to_string(spec.pre_shuffle_channels) +
                                  " is not divisible by " + std::to_string(u2));
            }
            arch.layers.push_back(spec);
            c = spec.pre_shuffle_channels / u2;
            h = (h + spec.kernel_size - 1) * spec.unpool_factor;
            w = (w + spec.kernel_size - 1) * spec.unpool_factor;
        }
        return arch;
    }
    throw ConfigError("architecture '" + description + "' must start with 'ff:' or 'conv:'");
}

namespace {

namespace fs = std::filesystem;

struct DatasetOpts {
    std::string path;
    std::string kind = "idx";
    std::size_t limit = 0; // 0 = everything
};

ImageBatch load_dataset(const DatasetOpts& opts) {
    ImageBatch batch;
    if (opts.kind == "cifar10") {
        batch = load_cifar10(opts.path).images;
    } else {
        batch = load_idx(opts.path);
    }
    if (opts.limit > 0 && opts.limit < batch.count) {
        batch.count = opts.limit;
        batch.pixels.resize(batch.count * batch.image_size());
    }
    return batch;
}

DatasetHeader peek_dataset(const DatasetOpts& opts) {
    return opts.kind == "cifar10" ? peek_cifar10(opts.path) : peek_idx(opts.path);
}

std::string layer_summary(const LayerSpec& spec) {
    char buf[160];
    if (const auto* ff = std::get_if<FeedforwardSpec>(&spec)) {
        std::snprintf(buf, sizeof buf, "ff %zu -> %zu", ff->in_dim, ff->out_dim);
    } else {
        const auto& cv = std::get<ConvUnpoolSpec>(spec);
        const std::size_t u2 = cv.unpool_factor * cv.unpool_factor;
        const std::size_t oc = u2 != 0 && cv.pre_shuffle_channels % u2 == 0
                                   ? cv.pre_shuffle_channels / u2
                                   : 0;
        std::snprintf(buf, sizeof buf, "conv %zux%zux%zu -k%zu m%zu u%zu-> %zux%zux%zu",
                      cv.in_channels, cv.in_height, cv.in_width, cv.kernel_size,
                      cv.pre_shuffle_channels, cv.unpool_factor, oc,
                      (cv.in_height + cv.kernel_size - 1) * cv.unpool_factor,
                      (cv.in_width + cv.kernel_size - 1) * cv.unpool_factor);
    }
    return buf;
}

// Writes the first few rows of a flattened batch as a tiled image file.
constexpr std::size_t kGridMaxImages = 64;
constexpr std::size_t kGridCols = 8;

void write_grid_rows(const Matrix& rows, const DatasetHeader& shape, const std::string& path) {
    const std::size_t n = std::min(kGridMaxImages, rows.rows());
    if (n == 0) return;
    ImageBatch batch;
    batch.count = n;
    batch.channels = shape.channels;
    batch.height = shape.height;
    batch.width = shape.width;
    batch.pixels.assign(rows.data().begin(),
                        rows.data().begin() + static_cast<std::ptrdiff_t>(n * rows.cols()));
    write_image_grid(batch, kGridCols, path);
}

const char* grid_extension(const DatasetHeader& shape) {
    return shape.channels == 3 ? ".ppm" : ".pgm";
}

struct TrainOpts {
    DatasetOpts dataset;
    std::string arch;
    double slope = kDefaultSlope;
    std::size_t epochs = 10;
    double plateau_tol = 1e-3;
    std::size_t sample_size = 500;
    std::size_t chunks = 1;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string out = "starnet_out";
    bool progress_images = false;
    std::string first_step = "sl";
};

int cmd_train(const TrainOpts& opts) {
    const ImageBatch batch = load_dataset(opts.dataset);
    const DatasetHeader shape{batch.count, batch.channels, batch.height, batch.width};
    const Matrix data = flatten(batch);

    const Architecture arch = parse_architecture(opts.arch, opts.slope);
    const std::vector<Violation> violations = validate_architecture(arch, data.rows());
    if (!violations.empty()) {
        std::string msg = violations.front().message;
        if (violations.size() > 1) {
            msg += " (+" + std::to_string(violations.size() - 1) + " more violations)";
        }
        throw ArchitectureInvalid(msg);
    }
    if (data.cols() != spec_output_size(arch.layers.back())) {
        throw ShapeMismatch("dataset images have " + std::to_string(data.cols()) +
                            " values but the architecture produces " +
                            std::to_string(spec_output_size(arch.layers.back())));
    }

    fs::create_directories(opts.out);

    TrainConfig cfg;
    cfg.max_epochs = opts.epochs;
    cfg.plateau_rel_tol = opts.plateau_tol;
    cfg.sample_size = opts.sample_size;
    cfg.chunks = opts.chunks;
    cfg.seed = opts.seed;
    cfg.workers = opts.workers;
    cfg.first_step = opts.first_step == "sw" ? Phase::SolveWeights : Phase::SolveLatents;
    std::map<std::size_t, std::size_t> steps_seen;
    if (opts.progress_images) {
        cfg.on_step = [&](const StepRecord& rec, const Matrix& recon) {
            const std::size_t step = ++steps_seen[rec.layer_index];
            char name[128];
            std::snprintf(name, sizeof name, "progress_layer%zu_step%02zu_%s%s",
                          rec.layer_index, step, phase_name(rec.phase), grid_extension(shape));
            write_grid_rows(recon, shape, opts.out + "/" + name);
        };
    }

    const TrainResult result = train(arch, data, cfg);

    const std::string model_path = opts.out + "/model.star";
    save_model(result.model, model_path);

    // Chronological order: layer K was trained first.
    std::vector<LayerHistory> ordered;
    ordered.reserve(result.histories.size());
    for (std::size_t j = result.histories.size(); j-- > 0;) ordered.push_back(result.histories[j]);
    const std::string metrics_path = opts.out + "/metrics.csv";
    write_metrics_csv(ordered, metrics_path);

    const Matrix recon = reconstruct(result.model, result.latents.levels.front(), 0, opts.workers);
    write_grid_rows(recon, shape, opts.out + "/recon_final" + grid_extension(shape));

    for (const LayerHistory& history : ordered) {
        const StepRecord& last = history.steps.back();
        if (history.plateaued) {
            std::printf("layer %zu: plateaued at epoch %zu (linear residual %.6g, elastic %.6g)\n",
                        history.layer_index, history.plateau_epoch, last.linear_residual,
                        last.elastic_loss);
        } else {
            std::printf("layer %zu: stopped at the epoch cap %zu (linear residual %.6g, elastic %.6g)\n",
                        history.layer_index, last.epoch, last.linear_residual, last.elastic_loss);
        }
    }
    std::printf("final reconstruction elastic loss %.6g over %zu datapoints\n",
                elastic_loss(recon, data), data.rows());
    std::printf("model written to %s\n", model_path.c_str());
    std::printf("metrics written to %s\n", metrics_path.c_str());
    return 0;
}

struct InferOpts {
    DatasetOpts dataset;
    std::string model;
    std::size_t level = 0;
    std::size_t workers = 1;
    std::string out = "starnet_out";
};

int cmd_infer(const InferOpts& opts) {
    const Model model = load_model(opts.model);
    if (opts.level >= model.layers.size()) {
        throw ConfigError("level " + std::to_string(opts.level) + " is out of range; model has " +
                          std::to_string(model.layers.size()) + " layers (levels 0.." +
                          std::to_string(model.layers.size() - 1) + ")");
    }
    const Matrix data = flatten(load_dataset(opts.dataset));
    const LatentTable table = infer_latents(model, data, opts.workers);
    fs::create_directories(opts.out);
    const std::string path = opts.out + "/latents_level" + std::to_string(opts.level) + ".csv";
    write_matrix_csv(table.levels[opts.level], path);
    std::printf("latents for %zu datapoints written to %s\n", data.rows(), path.c_str());
    return 0;
}

Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::vector<double> values;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split(line, ',');
        if (cols == 0) {
            cols = cells.size();
        } else if (cells.size() != cols) {
            throw ConfigError(path + " row " + std::to_string(rows + 1) + " has " +
                              std::to_string(cells.size()) + " values, expected " +
                              std::to_string(cols));
        }
        for (const std::string& cell : cells) {
            errno = 0;
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (errno != 0 || end != cell.c_str() + cell.size() || cell.empty()) {
                throw ConfigError(path + " contains a non-numeric cell '" + cell + "'");
            }
            values.push_back(v);
        }
        ++rows;
    }
    if (rows == 0) throw ConfigError(path + " contains no data rows");
    return Matrix(rows, cols, std::move(values));
}

struct ReconstructOpts {
    DatasetOpts dataset; // optional: path empty = latents mode
    std::string model;
    std::string latents_csv;
    std::size_t level = 0;
    std::size_t channels = 0; // optional output-shape override (ff models)
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t workers = 1;
    std::string out = "starnet_out";
};

DatasetHeader model_output_shape(const Model& model, const ReconstructOpts& opts) {
    if (const auto* cv = std::get_if<ConvUnpoolLayer>(&model.layers.back())) {
        return DatasetHeader{0, cv->out_channels(), cv->out_height(), cv->out_width()};
    }
    const std::size_t d = layer_output_size(model.layers.back());
    if (opts.height != 0 && opts.width != 0) {
        const std::size_t c = opts.channels == 0 ? 1 : opts.channels;
        if (c * opts.height * opts.width != d) {
            throw ConfigError("--channels/--height/--width describe " +
                              std::to_string(c * opts.height * opts.width) +
                              " values but the model produces " + std::to_string(d));
        }
        return DatasetHeader{0, c, opts.height, opts.width};
    }
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
    if (side * side == d) return DatasetHeader{0, 1, side, side};
    throw ConfigError("cannot infer an image shape from " + std::to_string(d) +
                      " values; pass --height and --width");
}

int cmd_reconstruct(const ReconstructOpts& opts) {
    const Model model = load_model(opts.model);
    if (opts.level >= model.layers.size() + 1) {
        throw ConfigError("level " + std::to_string(opts.level) + " is out of range; model has " +
                          std::to_string(model.layers.size()) + " layers");
    }
    fs::create_directories(opts.out);

    Matrix latents;
    DatasetHeader shape;
    bool have_reference = false;
    Matrix reference;
    if (!opts.latents_csv.empty()) {
        latents = read_matrix_csv(opts.latents_csv);
        shape = model_output_shape(model, opts);
    } else if (!opts.dataset.path.empty()) {
        const ImageBatch batch = load_dataset(opts.dataset);
        shape = DatasetHeader{batch.count, batch.channels, batch.height, batch.width};
        reference = flatten(batch);
        have_reference = true;
        const LatentTable table = infer_latents(model, reference, opts.workers);
        latents = opts.level == model.layers.size() ? reference : table.levels[opts.level];
    } else {
        throw ConfigError("reconstruct needs either --dataset or --latents");
    }

    const Matrix recon = reconstruct(model, latents, opts.level, opts.workers);
    const std::string path = opts.out + "/recon" + grid_extension(shape);
    write_grid_rows(recon, shape, path);
    if (have_reference) {
        std::printf("reconstruction elastic loss %.6g over %zu datapoints\n",
                    elastic_loss(recon, reference), recon.rows());
    }
    std::printf("reconstruction grid written to %s\n", path.c_str());
    return 0;
}

struct ValidateOpts {
    DatasetOpts dataset; // optional when count given
    std::string arch;
    double slope = kDefaultSlope;
    std::size_t count = 0;
};

int cmd_validate(const ValidateOpts& opts) {
    const Architecture arch = parse_architecture(opts.arch, opts.slope);
    std::size_t n = opts.count;
    if (n == 0) {
        if (opts.dataset.path.empty()) {
            throw ConfigError("validate needs --dataset (header is read for N) or --count");
        }
        n = peek_dataset(opts.dataset).count;
    }
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        std::printf("layer %zu: %s\n", i + 1, layer_summary(arch.layers[i]).c_str());
    }
    const std::vector<Violation> violations = validate_architecture(arch, n);
    if (violations.empty()) {
        std::printf("ok: architecture is valid for %zu datapoints\n", n);
        return 0;
    }
    for (const Violation& v : violations) {
        std::printf("violation: layer %zu: %s: %s\n", v.layer_index, violation_name(v.code),
                    v.message.c_str());
    }
    return 3;
}

struct DiagnoseOpts {
    DatasetOpts dataset;
    std::string model;
    std::size_t layer = 0; // 0 = data-adjacent layer K
    double z = 3.0;
    std::size_t workers = 1;
    std::string out = "starnet_out";
};

int cmd_diagnose(const DiagnoseOpts& opts) {
    const Model model = load_model(opts.model);
    const std::size_t k = model.layers.size();
    const std::size_t layer_index = opts.layer == 0 ? k : opts.layer;
    if (layer_index < 1 || layer_index > k) {
        throw ConfigError("layer " + std::to_string(opts.layer) + " is out of range; model has " +
                          std::to_string(k) + " layers");
    }
    const Matrix data = flatten(load_dataset(opts.dataset));
    const Activation act(model.slope);
    const LatentTable table = infer_latents(model, data, opts.workers);
    const Matrix& inputs = table.levels[layer_index - 1];
    const Matrix& targets = layer_index == k ? data : table.levels[layer_index];

    ResidualReport report;
    if (const auto* ff = std::get_if<FeedforwardLayer>(&model.layers[layer_index - 1])) {
        report = residual_report(*ff, act, inputs, targets);
    } else {
        report = residual_report(std::get<ConvUnpoolLayer>(model.layers[layer_index - 1]), act,
                                 inputs, targets);
    }
    report.layer_index = layer_index;
    const std::vector<std::size_t> flagged = flag_outliers(report, opts.z);

    fs::create_directories(opts.out);
    const std::string path = opts.out + "/residuals.csv";
    write_residuals_csv(report, flagged, path);
    std::printf("layer %zu: flagged %zu of %zu datapoints (z=%g)\n", layer_index, flagged.size(),
                report.residual_norms.size(), opts.z);
    std::printf("residuals written to %s\n", path.c_str());
    return 0;
}

// CLI11 reads config files only for the top-level command, so the per-command
// --config option is expanded into ordinary arguments before parsing. A key
// already present on the command line is skipped: that is what lets flags win.
std::vector<std::string> expand_config_args(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            break;
        }
    }
    if (path.empty()) return args;

    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    const auto strip = [](const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string line;
    while (std::getline(in, line)) {
        line = strip(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? "" : strip(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line is not key=value: " + line);
        const std::string flag = "--" + key;
        const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
        // One token per pair so values keep their '=' signs and spaces.
        if (!given) args.push_back(flag + "=" + strip(line.substr(eq + 1)));
    }
    return args;
}

void add_dataset_options(CLI::App* cmd, DatasetOpts& opts, bool required) {
    auto* dataset = cmd->add_option("--dataset", opts.path, "dataset file to load");
    if (required) dataset->required();
    cmd->add_option("--dataset-kind", opts.kind, "dataset format")
        ->check(CLI::IsMember({"idx", "cifar10"}))
        ->capture_default_str();
    cmd->add_option("--limit", opts.limit, "use only the first N datapoints (0 = all)")
        ->capture_default_str();
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"inverse-funnel generative decoders trained by alternating linear solves"};
    app.require_subcommand(1);
    std::string config_path;  // consumed by expand_config_args before parsing

    TrainOpts train_opts;
    CLI::App* train_cmd = app.add_subcommand("train", "train a decoder on a dataset");
    train_cmd->add_option("--config", config_path, "flat key=value config file; flags win");
    add_dataset_options(train_cmd, train_opts.dataset, true);
    train_cmd->add_option("--arch", train_opts.arch, "architecture description")->required();
    train_cmd->add_option("--slope", train_opts.slope, "leaky rectifier negative slope")
        ->capture_default_str();
    train_cmd->add_option("--epochs", train_opts.epochs, "epoch cap per layer")
        ->capture_default_str();
    train_cmd->add_option("--plateau-tol", train_opts.plateau_tol,
                          "relative residual improvement that still counts as progress")
        ->capture_default_str();
    train_cmd->add_option("--sample-size", train_opts.sample_size,
                          "datapoints per conv weight solve (0 = all)")
        ->capture_default_str();
    train_cmd->add_option("--chunks", train_opts.chunks, "conv weight solve partitions")
        ->capture_default_str();
    train_cmd->add_option("--seed", train_opts.seed, "seed for every random draw")
        ->capture_default_str();
    train_cmd->add_option("--workers", train_opts.workers, "solver threads")
        ->capture_default_str();
    train_cmd->add_option("--out", train_opts.out, "output directory")->capture_default_str();
    train_cmd->add_flag("--progress-images", train_opts.progress_images,
                        "write a reconstruction grid after every solve phase");
    train_cmd->add_option("--first-step", train_opts.first_step, "phase that opens every epoch")
        ->check(CLI::IsMember({"sl", "sw"}))
        ->capture_default_str();

    InferOpts infer_opts;
    CLI::App* infer_cmd = app.add_subcommand("infer", "solve latents for new data");
    infer_cmd->add_option("--config", config_path, "flat key=value config file; flags win");
    add_dataset_options(infer_cmd, infer_opts.dataset, true);
    infer_cmd->add_option("--model", infer_opts.model, "trained model file")->required();
    infer_cmd->add_option("--level", infer_opts.level, "latent level to export (0 = deepest)")
        ->capture_default_str();
    infer_cmd->add_option("--workers", infer_opts.workers, "solver threads")
        ->capture_default_str();
    infer_cmd->add_option("--out", infer_opts.out, "output directory")->capture_default_str();

    ReconstructOpts recon_opts;
    CLI::App* recon_cmd =
        app.add_subcommand("reconstruct", "forward latents (or re-encoded data) to images");
    recon_cmd->add_option("--config", config_path, "flat key=value config file; flags win");
    add_dataset_options(recon_cmd, recon_opts.dataset, false);
    recon_cmd->add_option("--model", recon_opts.model, "trained model file")->required();
    recon_cmd->add_option("--latents", recon_opts.latents_csv,
                          "CSV of latent rows (alternative to --dataset)");
    recon_cmd->add_option("--level", recon_opts.level, "level the latents live at")
        ->capture_default_str();
    recon_cmd->add_option("--channels", recon_opts.channels, "output image channels (ff models)");
    recon_cmd->add_option("--height", recon_opts.height, "output image height (ff models)");
    recon_cmd->add_option("--width", recon_opts.width, "output image width (ff models)");
    recon_cmd->add_option("--workers", recon_opts.workers, "solver threads")
        ->capture_default_str();
    recon_cmd->add_option("--out", recon_opts.out, "output directory")->capture_default_str();

    ValidateOpts validate_opts;
    CLI::App* validate_cmd =
        app.add_subcommand("validate", "check an architecture against the solvability rules");
    validate_cmd->add_option("--config", config_path, "flat key=value config file; flags win");
    add_dataset_options(validate_cmd, validate_opts.dataset, false);
    validate_cmd->add_option("--arch", validate_opts.arch, "architecture description")->required();
    validate_cmd->add_option("--slope", validate_opts.slope, "leaky rectifier negative slope")
        ->capture_default_str();
    validate_cmd->add_option("--count", validate_opts.count,
                             "dataset size to validate against (skips reading any file)");

    DiagnoseOpts diagnose_opts;
    CLI::App* diagnose_cmd =
        app.add_subcommand("diagnose", "per-datapoint residual report and outlier flags");
    diagnose_cmd->add_option("--config", config_path, "flat key=value config file; flags win");
    add_dataset_options(diagnose_cmd, diagnose_opts.dataset, true);
    diagnose_cmd->add_option("--model", diagnose_opts.model, "trained model file")->required();
    diagnose_cmd->add_option("--layer", diagnose_opts.layer,
                             "layer whose latent systems to inspect (default: data-adjacent)");
    diagnose_cmd->add_option("--z", diagnose_opts.z, "outlier threshold in standard deviations")
        ->capture_default_str();
    diagnose_cmd->add_option("--workers", diagnose_opts.workers, "solver threads")
        ->capture_default_str();
    diagnose_cmd->add_option("--out", diagnose_opts.out, "output directory")
        ->capture_default_str();

    std::vector<std::string> args;
    try {
        args = expand_config_args(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const Error& e) {
        std::cerr << "error: " << error_kind(e) << ": " << e.what() << '\n';
        return exit_code_for(e);
    }
    std::reverse(args.begin(), args.end());  // the vector overload parses back to front
    try {
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_opts);
        if (infer_cmd->parsed()) return cmd_infer(infer_opts);
        if (recon_cmd->parsed()) return cmd_reconstruct(recon_opts);
        if (validate_cmd->parsed()) return cmd_validate(validate_opts);
        if (diagnose_cmd->parsed()) return cmd_diagnose(diagnose_opts);
    } catch (const Error& e) {
        std::cerr << "error: " << error_kind(e) << ": " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: Unexpected: " << e.what() << '\n';
        return 6;
    }
    return 2;
}

} // namespace starnet
