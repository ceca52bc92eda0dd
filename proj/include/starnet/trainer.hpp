#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "starnet/activation.hpp"
#include "starnet/conv_layer.hpp"
#include "starnet/ff_layer.hpp"
#include "starnet/matrix.hpp"

namespace starnet {

// The two coordinate-descent phases: solve latents under fixed weights, or
// weights under fixed latents.
enum class Phase { SolveLatents, SolveWeights };

const char* phase_name(Phase p); // "sl" / "sw"

// Shape descriptors. Layers are indexed 1..K with layer K adjacent to the
// data; an Architecture lists them in that order (index 0 = layer 1, the
// deepest).
struct FeedforwardSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
};
struct ConvUnpoolSpec {
    std::size_t in_channels = 0;
    std::size_t in_height = 0;
    std::size_t in_width = 0;
    std::size_t kernel_size = 0;
    std::size_t pre_shuffle_channels = 0;
    std::size_t unpool_factor = 0;
};
using LayerSpec = std::variant<FeedforwardSpec, ConvUnpoolSpec>;

std::size_t spec_input_size(const LayerSpec& spec);
std::size_t spec_output_size(const LayerSpec& spec);

struct Architecture {
    std::vector<LayerSpec> layers;
    double slope = kDefaultSlope;
};

// Structural problems found by validate_architecture. Violations are data,
// not exceptions: the caller decides whether to proceed.
enum class ViolationCode {
    EmptyArchitecture,
    InvalidSlope,
    InverseFunnelViolation,      // a layer narrows toward the data
    DegenerateSquareLayer,       // equal widths: latent solve is an identity
    UnpoolDivisibilityViolation, // pre-shuffle channels not divisible by u^2
    ConvChannelViolation,        // fewer conv equations than latent unknowns
    ShapeChainViolation,         // adjacent layers disagree on a shape
    DatasetTooSmall,             // weight rows underdetermined: N < d_in + 1
    InsufficientConvData,        // patch equations < kernel taps
};

const char* violation_name(ViolationCode code);

struct Violation {
    ViolationCode code;
    std::size_t layer_index = 0; // 1-based; 0 = whole-architecture problem
    std::string message;
};

std::vector<Violation> validate_architecture(const Architecture& arch, std::size_t dataset_size);

// A trained layer of either kind.
using AnyLayer = std::variant<FeedforwardLayer, ConvUnpoolLayer>;

std::size_t layer_input_size(const AnyLayer& layer);
std::size_t layer_output_size(const AnyLayer& layer);
LayerSpec spec_of(const AnyLayer& layer);

struct Model {
    double slope = kDefaultSlope;
    std::vector<AnyLayer> layers; // index 0 = deepest, back() = data-adjacent
};

// Solved latents per level: levels[l] is the input of layer l+1 (N x size of
// level l). Level K — the data itself — is not stored.
struct LatentTable {
    std::vector<Matrix> levels;
};

// One solve phase's outcome. linear_residual is the total squared residual of
// the layer's linear systems after the step; elastic_loss is the reported
// reconstruction loss (L1 + L2, averaged over datapoints).
struct StepRecord {
    std::size_t layer_index = 0; // 1-based
    std::size_t epoch = 0;       // 1-based
    Phase phase = Phase::SolveLatents;
    double linear_residual = 0.0;
    double elastic_loss = 0.0;
};

struct LayerHistory {
    std::size_t layer_index = 0;
    std::vector<StepRecord> steps;
    bool plateaued = false;
    std::size_t plateau_epoch = 0; // 0 when the epoch cap stopped training first
};

struct TrainConfig {
    std::size_t max_epochs = 10;
    double plateau_rel_tol = 1e-3; // relative residual improvement that still counts as progress
    std::size_t sample_size = 500; // conv weight solves; 0 = use every datapoint
    std::size_t chunks = 1;        // conv weight solve partitions (averaged)
    std::uint64_t seed = 0;
    Phase first_step = Phase::SolveLatents;
    std::size_t workers = 1;
    bool orthogonal_init = false;
    // Observer called after every phase with the step record and the current
    // reconstruction (at the data level when training a full model, at this
    // layer's output when training a single layer).
    std::function<void(const StepRecord&, const Matrix& reconstruction)> on_step;
};

// Extra context so a single layer's progress can be reported at the data
// level: the reference batch and the already-trained layers above.
struct ReportContext {
    const Matrix* data = nullptr;
    const std::vector<AnyLayer>* layers = nullptr;
    std::size_t output_level = 0; // this layer's output feeds layers[output_level..]
};

struct TrainLayerResult {
    AnyLayer layer;
    Matrix latents; // N x input size, consistent with the final weights
    LayerHistory history;
};

// Coordinate descent on one layer: alternates SL and SW from freshly
// initialized weights until the total squared linear residual plateaus or
// max_epochs is reached. When the last executed phase changed the weights, a
// final latent solve re-synchronizes the returned latents with them.
TrainLayerResult train_layer(const LayerSpec& spec, const Activation& act, const Matrix& targets,
                             const TrainConfig& cfg, std::size_t layer_index = 1,
                             const ReportContext* context = nullptr);

struct TrainResult {
    Model model;
    LatentTable latents;
    std::vector<LayerHistory> histories; // index = layer - 1
};

// Full training: layer K (data-adjacent) first, each solved latent batch
// becoming the next layer's targets, down to layer 1.
TrainResult train(const Architecture& arch, const Matrix& data, const TrainConfig& cfg);

// Forward one layer (batched rows).
Matrix forward_layer(const AnyLayer& layer, const Activation& act, const Matrix& input,
                     std::size_t workers = 1);

// SL-only recursion through a trained model: data -> level K-1 -> ... -> 0.
LatentTable infer_latents(const Model& model, const Matrix& data, std::size_t workers = 1);

// Forward pass from latents at from_level through layers from_level+1..K.
// from_level = K returns the input unchanged.
Matrix reconstruct(const Model& model, const Matrix& latents, std::size_t from_level,
                   std::size_t workers = 1);

// Mean over datapoints of ||error||_1 + ||error||_2. Reporting only; no solve
// ever minimizes this.
double elastic_loss(const Matrix& reconstruction, const Matrix& reference);

} // namespace starnet
