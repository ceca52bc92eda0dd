#include "starnet/trainer.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "starnet/diagnostics.hpp"
#include "starnet/errors.hpp"
#include "starnet/rng.hpp"

namespace starnet {
namespace {

constexpr std::uint64_t kWeightInitTag = 0x31;
constexpr std::uint64_t kSwFirstLatentTag = 0x32;
constexpr std::uint64_t kConvEpochTag = 0x33;

// Reductions over per-datapoint values always run in index order so the
// result is independent of how the solves were partitioned.
double total_squared(const std::vector<double>& norms) {
    double s = 0.0;
    for (double v : norms) s += v * v;
    return s;
}

AnyLayer init_layer(const LayerSpec& spec, const TrainConfig& cfg, std::size_t layer_index) {
    const std::uint64_t seed = rng::mix_seed(cfg.seed, kWeightInitTag, layer_index);
    if (const auto* ff = std::get_if<FeedforwardSpec>(&spec)) {
        return init_feedforward_layer(ff->in_dim, ff->out_dim, seed, cfg.orthogonal_init);
    }
    const auto& cv = std::get<ConvUnpoolSpec>(spec);
    return init_conv_layer(cv.in_channels, cv.in_height, cv.in_width, cv.kernel_size,
                           cv.pre_shuffle_channels, cv.unpool_factor, seed);
}

std::pair<Matrix, ResidualReport> solve_latents_any(const AnyLayer& layer, const Activation& act,
                                                    const Matrix& targets, std::size_t workers) {
    if (const auto* ff = std::get_if<FeedforwardLayer>(&layer)) {
        return ff_solve_latents(*ff, act, targets, workers);
    }
    return conv_solve_latents_batch(std::get<ConvUnpoolLayer>(layer), act, targets, workers);
}

void solve_weights_any(AnyLayer& layer, const Activation& act, const Matrix& latents,
                       const Matrix& targets, const TrainConfig& cfg, std::size_t layer_index,
                       std::size_t epoch) {
    if (std::holds_alternative<FeedforwardLayer>(layer)) {
        layer = ff_solve_weights(latents, act, targets, cfg.workers);
        return;
    }
    auto& cv = std::get<ConvUnpoolLayer>(layer);
    const std::uint64_t layer_seed = rng::mix_seed(cfg.seed, kConvEpochTag, layer_index);
    const std::uint64_t epoch_seed = rng::mix_seed(layer_seed, kConvEpochTag, epoch);
    cv.kernels = conv_solve_weights(cv, act, latents, targets, cfg.sample_size, cfg.chunks,
                                    epoch_seed, cfg.workers);
}

std::vector<double> post_weight_residuals(const AnyLayer& layer, const Activation& act,
                                          const Matrix& latents, const Matrix& targets) {
    if (const auto* ff = std::get_if<FeedforwardLayer>(&layer)) {
        return residual_report(*ff, act, latents, targets).residual_norms;
    }
    return residual_report(std::get<ConvUnpoolLayer>(layer), act, latents, targets).residual_norms;
}

Matrix report_reconstruction(const AnyLayer& layer, const Activation& act, const Matrix& latents,
                             const ReportContext* ctx, std::size_t workers) {
    Matrix recon = forward_layer(layer, act, latents, workers);
    if (ctx != nullptr && ctx->layers != nullptr) {
        for (std::size_t j = ctx->output_level; j < ctx->layers->size(); ++j) {
            recon = forward_layer((*ctx->layers)[j], act, recon, workers);
        }
    }
    return recon;
}

} // namespace

const char* phase_name(Phase p) { return p == Phase::SolveLatents ? "sl" : "sw"; }

std::size_t spec_input_size(const LayerSpec& spec) {
    if (const auto* ff = std::get_if<FeedforwardSpec>(&spec)) return ff->in_dim;
    const auto& cv = std::get<ConvUnpoolSpec>(spec);
    return cv.in_channels * cv.in_height * cv.in_width;
}

std::size_t spec_output_size(const LayerSpec& spec) {
    if (const auto* ff = std::get_if<FeedforwardSpec>(&spec)) return ff->out_dim;
    const auto& cv = std::get<ConvUnpoolSpec>(spec);
    const std::size_t u2 = cv.unpool_factor * cv.unpool_factor;
    if (u2 == 0 || cv.pre_shuffle_channels % u2 != 0) return 0;
    const std::size_t oh = (cv.in_height + cv.kernel_size - 1) * cv.unpool_factor;
    const std::size_t ow = (cv.in_width + cv.kernel_size - 1) * cv.unpool_factor;
    return (cv.pre_shuffle_channels / u2) * oh * ow;
}

const char* violation_name(ViolationCode code) {
    switch (code) {
        case ViolationCode::EmptyArchitecture: return "EmptyArchitecture";
        case ViolationCode::InvalidSlope: return "InvalidSlope";
        case ViolationCode::InverseFunnelViolation: return "InverseFunnelViolation";
        case ViolationCode::DegenerateSquareLayer: return "DegenerateSquareLayer";
        case ViolationCode::UnpoolDivisibilityViolation: return "UnpoolDivisibilityViolation";
        case ViolationCode::ConvChannelViolation: return "ConvChannelViolation";
        case ViolationCode::ShapeChainViolation: return "ShapeChainViolation";
        case ViolationCode::DatasetTooSmall: return "DatasetTooSmall";
        case ViolationCode::InsufficientConvData: return "InsufficientConvData";
    }
    return "UnknownViolation";
}

std::vector<Violation> validate_architecture(const Architecture& arch, std::size_t dataset_size) {
    std::vector<Violation> out;
    if (arch.layers.empty()) {
        out.push_back({ViolationCode::EmptyArchitecture, 0, "architecture has no layers"});
        return out;
    }
    if (!(arch.slope > 0.0) || arch.slope > 1.0) {
        out.push_back({ViolationCode::InvalidSlope, 0,
                       "activation slope " + std::to_string(arch.slope) + " must lie in (0, 1]"});
    }
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const std::size_t index = i + 1;
        const LayerSpec& spec = arch.layers[i];
        if (const auto* ff = std::get_if<FeedforwardSpec>(&spec)) {
            if (ff->in_dim == 0 || ff->out_dim == 0) {
                out.push_back({ViolationCode::ShapeChainViolation, index,
                               "layer " + std::to_string(index) + " has a zero width"});
                continue;
            }
            if (ff->in_dim > ff->out_dim) {
                out.push_back({ViolationCode::InverseFunnelViolation, index,
                               "layer " + std::to_string(index) + " narrows from " +
                                   std::to_string(ff->in_dim) + " to " +
                                   std::to_string(ff->out_dim)});
            } else if (ff->in_dim == ff->out_dim) {
                out.push_back({ViolationCode::DegenerateSquareLayer, index,
                               "layer " + std::to_string(index) + " keeps width " +
                                   std::to_string(ff->in_dim) +
                                   "; its latent solve is an identity"});
            }
            if (dataset_size < ff->in_dim + 1) {
                out.push_back({ViolationCode::DatasetTooSmall, index,
                               "layer " + std::to_string(index) + " needs at least " +
                                   std::to_string(ff->in_dim + 1) + " datapoints, got " +
                                   std::to_string(dataset_size)});
            }
        } else {
            const auto& cv = std::get<ConvUnpoolSpec>(spec);
            if (cv.in_channels == 0 || cv.in_height == 0 || cv.in_width == 0 ||
                cv.kernel_size == 0 || cv.pre_shuffle_channels == 0 || cv.unpool_factor == 0) {
                out.push_back({ViolationCode::ShapeChainViolation, index,
                               "layer " + std::to_string(index) + " has a zero dimension"});
                continue;
            }
            const std::size_t u2 = cv.unpool_factor * cv.unpool_factor;
            if (cv.pre_shuffle_channels % u2 != 0) {
                out.push_back({ViolationCode::UnpoolDivisibilityViolation, index,
                               "layer " + std::to_string(index) + " has " +
                                   std::to_string(cv.pre_shuffle_channels) +
                                   " pre-shuffle channels, not divisible by " +
                                   std::to_string(u2)});
            }
            if (cv.pre_shuffle_channels < cv.in_channels) {
                out.push_back(
                    {ViolationCode::ConvChannelViolation, index,
                     "layer " + std::to_string(index) + " has fewer pre-shuffle channels (" +
                         std::to_string(cv.pre_shuffle_channels) + ") than input channels (" +
                         std::to_string(cv.in_channels) + "); its latent systems lose equations"});
            }
            const std::size_t taps = cv.in_channels * cv.kernel_size * cv.kernel_size;
            const std::size_t per_image = (cv.in_height + cv.kernel_size - 1) *
                                          (cv.in_width + cv.kernel_size - 1);
            if (dataset_size * per_image < taps) {
                out.push_back({ViolationCode::InsufficientConvData, index,
                               "layer " + std::to_string(index) + " yields " +
                                   std::to_string(dataset_size * per_image) +
                                   " patch equations for " + std::to_string(taps) +
                                   " kernel taps"});
            }
        }
        if (i > 0) {
            const LayerSpec& prev = arch.layers[i - 1];
            bool chain_ok;
            const auto* prev_cv = std::get_if<ConvUnpoolSpec>(&prev);
            const auto* cur_cv = std::get_if<ConvUnpoolSpec>(&spec);
            if (prev_cv != nullptr && cur_cv != nullptr) {
                const std::size_t u2 = prev_cv->unpool_factor * prev_cv->unpool_factor;
                chain_ok = u2 != 0 && prev_cv->pre_shuffle_channels % u2 == 0 &&
                           cur_cv->in_channels == prev_cv->pre_shuffle_channels / u2 &&
                           cur_cv->in_height ==
                               (prev_cv->in_height + prev_cv->kernel_size - 1) *
                                   prev_cv->unpool_factor &&
                           cur_cv->in_width == (prev_cv->in_width + prev_cv->kernel_size - 1) *
                                                   prev_cv->unpool_factor;
            } else {
                chain_ok = spec_output_size(prev) == spec_input_size(spec);
            }
            if (!chain_ok) {
                out.push_back({ViolationCode::ShapeChainViolation, index,
                               "layer " + std::to_string(index) + " expects input size " +
                                   std::to_string(spec_input_size(spec)) + " but layer " +
                                   std::to_string(index - 1) + " produces " +
                                   std::to_string(spec_output_size(prev))});
            }
        }
    }
    return out;
}

std::size_t layer_input_size(const AnyLayer& layer) {
    if (const auto* ff = std::get_if<FeedforwardLayer>(&layer)) return ff->in_dim;
    return std::get<ConvUnpoolLayer>(layer).in_size();
}

std::size_t layer_output_size(const AnyLayer& layer) {
    if (const auto* ff = std::get_if<FeedforwardLayer>(&layer)) return ff->out_dim;
    return std::get<ConvUnpoolLayer>(layer).out_size();
}

LayerSpec spec_of(const AnyLayer& layer) {
    if (const auto* ff = std::get_if<FeedforwardLayer>(&layer)) {
        return FeedforwardSpec{ff->in_dim, ff->out_dim};
    }
    const auto& cv = std::get<ConvUnpoolLayer>(layer);
    return ConvUnpoolSpec{cv.in_channels,        cv.in_height,    cv.in_width,
                          cv.kernel_size,        cv.pre_shuffle_channels,
                          cv.unpool_factor};
}

Matrix forward_layer(const AnyLayer& layer, const Activation& act, const Matrix& input,
                     std::size_t workers) {
    if (const auto* ff = std::get_if<FeedforwardLayer>(&layer)) {
        return ff_forward(*ff, act, input);
    }
    return conv_forward_batch(std::get<ConvUnpoolLayer>(layer), act, input, workers);
}

TrainLayerResult train_layer(const LayerSpec& spec, const Activation& act, const Matrix& targets,
                             const TrainConfig& cfg, std::size_t layer_index,
                             const ReportContext* context) {
    if (cfg.max_epochs == 0) throw InvalidArgument("max_epochs must be at least 1");
    if (!(cfg.plateau_rel_tol > 0.0)) throw InvalidArgument("plateau tolerance must be positive");
    if (targets.cols() != spec_output_size(spec)) {
        throw ShapeMismatch("targets have " + std::to_string(targets.cols()) +
                            " values per datapoint, layer produces " +
                            std::to_string(spec_output_size(spec)));
    }

    AnyLayer layer = init_layer(spec, cfg, layer_index);
    Matrix latents;
    if (cfg.first_step == Phase::SolveWeights) {
        // Solving weights before any latent solve needs latents from
        // somewhere: a seeded standard-normal draw fills in.
        rng::Stream stream(rng::mix_seed(cfg.seed, kSwFirstLatentTag, layer_index));
        latents = Matrix(targets.rows(), spec_input_size(spec));
        for (double& v : latents.data()) v = stream.next_gaussian();
    }

    LayerHistory history;
    history.layer_index = layer_index;

    const auto run_phase = [&](Phase phase, std::size_t epoch) {
        double f = 0.0;
        if (phase == Phase::SolveLatents) {
            auto [solved, report] = solve_latents_any(layer, act, targets, cfg.workers);
            latents = std::move(solved);
            f = total_squared(report.residual_norms);
        } else {
            solve_weights_any(layer, act, latents, targets, cfg, layer_index, epoch);
            f = total_squared(post_weight_residuals(layer, act, latents, targets));
        }
        StepRecord rec{layer_index, epoch, phase, f, 0.0};
        const Matrix recon = report_reconstruction(layer, act, latents, context, cfg.workers);
        const Matrix& reference =
            (context != nullptr && context->data != nullptr) ? *context->data : targets;
        rec.elastic_loss = elastic_loss(recon, reference);
        history.steps.push_back(rec);
        if (cfg.on_step) cfg.on_step(rec, recon);
    };

    const Phase second =
        cfg.first_step == Phase::SolveLatents ? Phase::SolveWeights : Phase::SolveLatents;
    double prev_epoch_f = 0.0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        run_phase(cfg.first_step, epoch);
        run_phase(second, epoch);
        const double f = history.steps.back().linear_residual;
        if (epoch >= 2) {
            const double rel = prev_epoch_f > 0.0 ? (prev_epoch_f - f) / prev_epoch_f : 0.0;
            if (rel < cfg.plateau_rel_tol) {
                history.plateaued = true;
                history.plateau_epoch = epoch;
                break;
            }
        }
        prev_epoch_f = f;
    }

    // If a weight solve came last, one more latent solve keeps the returned
    // latents exactly consistent with the returned weights.
    if (!history.steps.empty() && history.steps.back().phase == Phase::SolveWeights) {
        run_phase(Phase::SolveLatents, history.steps.back().epoch);
    }

    return {std::move(layer), std::move(latents), std::move(history)};
}

TrainResult train(const Architecture& arch, const Matrix& data, const TrainConfig& cfg) {
    const std::vector<Violation> violations = validate_architecture(arch, data.rows());
    if (!violations.empty()) {
        std::string msg = "architecture is invalid:";
        for (const Violation& v : violations) {
            msg += " [";
            msg += violation_name(v.code);
            msg += "] ";
            msg += v.message;
            msg += ";";
        }
        throw ArchitectureInvalid(msg);
    }
    if (data.cols() != spec_output_size(arch.layers.back())) {
        throw ShapeMismatch("data has " + std::to_string(data.cols()) +
                            " values per datapoint, the last layer produces " +
                            std::to_string(spec_output_size(arch.layers.back())));
    }

    const Activation act(arch.slope);
    const std::size_t k = arch.layers.size();
    TrainResult result;
    result.model.slope = arch.slope;
    result.model.layers.resize(k);
    result.latents.levels.resize(k);
    result.histories.resize(k);

    // Layer K (data-adjacent) first; each solved latent batch becomes the
    // next deeper layer's targets unchanged — the solver has already undone
    // this layer's activation.
    Matrix targets = data;
    for (std::size_t j = k; j-- > 0;) {
        ReportContext ctx;
        ctx.data = &data;
        ctx.layers = &result.model.layers;
        ctx.output_level = j + 1;
        TrainLayerResult r = train_layer(arch.layers[j], act, targets, cfg, j + 1, &ctx);
        result.model.layers[j] = std::move(r.layer);
        result.histories[j] = std::move(r.history);
        targets = std::move(r.latents);
        result.latents.levels[j] = targets;
    }
    return result;
}

LatentTable infer_latents(const Model& model, const Matrix& data, std::size_t workers) {
    if (model.layers.empty()) throw InvalidArgument("model has no layers");
    if (data.cols() != layer_output_size(model.layers.back())) {
        throw ShapeMismatch("data has " + std::to_string(data.cols()) +
                            " values per datapoint, the last layer produces " +
                            std::to_string(layer_output_size(model.layers.back())));
    }
    const Activation act(model.slope);
    LatentTable table;
    table.levels.resize(model.layers.size());
    Matrix h = data;
    for (std::size_t j = model.layers.size(); j-- > 0;) {
        auto [latents, report] = solve_latents_any(model.layers[j], act, h, workers);
        h = std::move(latents);
        table.levels[j] = h;
    }
    return table;
}

Matrix reconstruct(const Model& model, const Matrix& latents, std::size_t from_level,
                   std::size_t workers) {
    if (from_level > model.layers.size()) {
        throw InvalidArgument("level " + std::to_string(from_level) + " is out of range; model has " +
                              std::to_string(model.layers.size()) + " layers");
    }
    const Activation act(model.slope);
    Matrix h = latents;
    for (std::size_t j = from_level; j < model.layers.size(); ++j) {
        h = forward_layer(model.layers[j], act, h, workers);
    }
    return h;
}

double elastic_loss(const Matrix& reconstruction, const Matrix& reference) {
    if (!reconstruction.same_shape(reference)) {
        throw ShapeMismatch("reconstruction and reference shapes differ");
    }
    if (reconstruction.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < reconstruction.rows(); ++i) {
        const double* a = reconstruction.row_ptr(i);
        const double* b = reference.row_ptr(i);
        double l1 = 0.0;
        double l2 = 0.0;
        for (std::size_t c = 0; c < reconstruction.cols(); ++c) {
            const double e = a[c] - b[c];
            l1 += std::fabs(e);
            l2 += e * e;
        }
        total += l1 + std::sqrt(l2);
    }
    return total / static_cast<double>(reconstruction.rows());
}

} // namespace starnet
