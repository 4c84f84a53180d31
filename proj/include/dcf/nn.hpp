#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dcf/common.hpp"

namespace dcf::nn {

enum class Activation { Identity, ReLU, Sigmoid };

std::string to_string(Activation a);
Activation parse_activation(std::string_view s);

/// Feed-forward regressor. The default shape consumes a flattened
/// 10-step x 3-channel window and emits one normalized speed.
struct MlpSpec {
    int input_dim = 30;
    std::vector<int> hidden = {60, 60};
    Activation hidden_activation = Activation::ReLU;
    int output_dim = 1;
    Activation output_activation = Activation::Sigmoid;

    void validate() const;
    std::vector<int> dims() const;  // input, hidden..., output
};

/// Stacked LSTM regressor over the 10x3 window. Dropout applies between
/// stacked layers at train time only (inverted scaling). `projection`
/// optionally inserts a ReLU dense layer between the top LSTM output and
/// the sigmoid head; 0 disables it.
struct LstmSpec {
    int input_channels = 3;
    std::vector<int> layers = {475, 61};
    double dropout = 0.3;
    int projection = 0;

    void validate() const;
};

struct WeightEntry {
    std::string name;
    int rows = 0;
    int cols = 0;  // 1 for bias vectors
    std::size_t offset = 0;

    bool operator==(const WeightEntry&) const = default;
};

/// Flat 64-bit parameter storage plus a (name, shape, offset) table.
struct Weights {
    std::vector<double> data;
    std::vector<WeightEntry> layout;

    std::span<double> slice(std::string_view name);
    std::span<const double> slice(std::string_view name) const;
    const WeightEntry& entry(std::string_view name) const;
};

std::vector<WeightEntry> mlp_layout(const MlpSpec& spec);
std::vector<WeightEntry> lstm_layout(const LstmSpec& spec);

/// Glorot-uniform kernels, uniform hidden-hidden kernels, zero biases with
/// the LSTM forget-gate bias at 1. Deterministic under seed.
Weights init_weights(const MlpSpec& spec, std::uint64_t seed);
Weights init_weights(const LstmSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct MlpCache {
    std::size_t n = 0;
    std::vector<int> dims;
    std::size_t param_count = 0;
    std::vector<std::vector<double>> acts;  // layer activations, acts[0] = input
    std::vector<std::vector<double>> pre;   // pre-activations per non-input layer
};

/// batch is row-major (n, input_dim). Returns (n, output_dim) predictions
/// flattened; with the sigmoid head every value lies in (0,1).
std::vector<double> mlp_forward(const MlpSpec& spec, const Weights& w,
                                std::span<const double> batch, std::size_t n,
                                MlpCache* cache = nullptr);

/// Gradient of the scalar loss w.r.t. every parameter, given d loss / d pred.
std::vector<double> mlp_backward(const MlpSpec& spec, const Weights& w, const MlpCache& cache,
                                 std::span<const double> dpred);

/// Dropout behaviour for one forward call. Masks are derived from the seed,
/// so a repeated call with the same plan sees identical masks.
struct DropoutPlan {
    bool training = false;
    std::uint64_t seed = 0;
};

struct LstmLayerCache {
    int in = 0, units = 0;
    std::vector<std::vector<double>> x;       // per t: (n, in), post-dropout input
    std::vector<std::vector<double>> h;       // per t 0..T: (n, units), h[0] = 0
    std::vector<std::vector<double>> c;       // per t 0..T
    std::vector<std::vector<double>> gates;   // per t: (n, 4u) activated [i f g o]
    std::vector<std::vector<double>> tanh_c;  // per t: (n, units)
    std::vector<std::vector<double>> mask;    // per t: (n, units) scaled dropout mask on output; empty = keep all
};

struct LstmCache {
    std::size_t n = 0;
    int steps = 0;
    std::size_t param_count = 0;
    std::vector<LstmLayerCache> layers;
    std::vector<double> proj_pre;  // (n, projection) when projection > 0
    std::vector<double> proj_act;
    std::vector<double> head_in;   // (n, head input dim)
    std::vector<double> pred;      // (n)
};

/// batch is row-major (n, steps, input_channels); initial hidden and cell
/// states are zero; the sigmoid head reads the final timestep of the top
/// layer.
std::vector<double> lstm_forward(const LstmSpec& spec, const Weights& w,
                                 std::span<const double> batch, std::size_t n, int steps,
                                 const DropoutPlan& dropout = {}, LstmCache* cache = nullptr);

std::vector<double> lstm_backward(const LstmSpec& spec, const Weights& w, const LstmCache& cache,
                                  std::span<const double> dpred);

// ---------------------------------------------------------------------------
// Loss and optimizer
// ---------------------------------------------------------------------------

struct LossResult {
    double value = 0.0;
    std::vector<double> grad;  // d loss / d pred
};

/// Mean over the batch of squared error.
LossResult mse_loss(std::span<const double> pred, std::span<const double> target);

enum class OptimizerKind { SGD, Adam };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 0.01;
    int batch_size = 100;
    int epochs = 5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

struct OptimizerState {
    OptimizerSpec spec;
    std::vector<double> m;  // Adam first moment
    std::vector<double> v;  // Adam second moment
    long step = 0;
};

OptimizerState make_optimizer(const OptimizerSpec& spec, std::size_t n_params);

/// In-place parameter update. Throws DivergenceError on non-finite
/// gradients.
void optimizer_step(OptimizerState& state, Weights& w, std::span<const double> grads);

// ---------------------------------------------------------------------------
// Serialization and cost model
// ---------------------------------------------------------------------------

using NetworkSpec = std::variant<MlpSpec, LstmSpec>;

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& json);

/// Weight files: magic "DCFN1", JSON spec descriptor, little-endian 64-bit
/// parameter block. Round-trips bit-exactly.
void save_weights(const std::string& path, const NetworkSpec& spec, const Weights& w);

struct LoadedNetwork {
    NetworkSpec spec;
    Weights weights;
};

LoadedNetwork load_network(const std::string& path);

/// Throws ConfigError unless the loaded spec equals `expected`.
void require_compatible(const NetworkSpec& loaded, const NetworkSpec& expected,
                        const std::string& context);

/// Exact multiply-add counts per sample (dense: in*out per layer; LSTM cell:
/// 4*u*(in+u) per step).
std::uint64_t mlp_macs(const MlpSpec& spec);
std::uint64_t lstm_macs(const LstmSpec& spec, int steps);

}  // namespace dcf::nn
